"""Run configuration files: TOML with explicit unit strings.

Every physical quantity is written as ``"<number> <unit>"`` and only the
listed spellings are accepted, e.g. ``span_length = "80 km"`` or
``dispersion = "16 ps/(nm km)"``.  Unknown keys are errors.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .channel import MANAKOV_FACTOR, DcmParams, FiberParams, LinkConfig
from .detectors import DEFAULT_STATE_BUDGET
from .experiment import DetectorSpec, ExperimentSpec
from .stats import Regularization

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_quantity",
    "format_quantity",
    "load_config",
    "loads_config",
    "dumps_config",
    "default_config",
]


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted name of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


# accepted unit spellings -> factor to the internal unit
UNITS: dict[str, dict[str, float]] = {
    "length": {"km": 1.0, "m": 1e-3},
    "dispersion": {"ps/(nm km)": 1.0},
    "gamma": {"1/(W km)": 1.0},
    "attenuation": {"dB/km": 1.0},
    "wavelength": {"nm": 1.0},
    "rate": {"Bd": 1.0, "kBd": 1e3, "MBd": 1e6, "GBd": 1e9},
    "db": {"dB": 1.0},
    "dbm": {"dBm": 1.0},
}
# unit used when writing a file
CANONICAL = {
    "length": "km",
    "dispersion": "ps/(nm km)",
    "gamma": "1/(W km)",
    "attenuation": "dB/km",
    "wavelength": "nm",
    "rate": "GBd",
    "db": "dB",
    "dbm": "dBm",
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s+(\S.*?)\s*$")


def parse_quantity(text: Any, kind: str, key: str) -> float:
    if not isinstance(text, str):
        unit = CANONICAL[kind]
        raise ConfigError(key, f'expected a string with units such as "{1} {unit}", got {text!r}')
    m = _QUANTITY.match(text)
    if not m:
        raise ConfigError(key, f"cannot parse {text!r} as '<number> <unit>'")
    value, unit = float(m.group(1)), m.group(2)
    table = UNITS[kind]
    if unit not in table:
        raise ConfigError(key, f"unit {unit!r} not accepted; use one of {sorted(table)}")
    if not math.isfinite(value):
        raise ConfigError(key, f"value must be finite, got {text!r}")
    return value * table[unit]


def format_quantity(value: float, kind: str) -> str:
    unit = CANONICAL[kind]
    scaled = value / UNITS[kind][unit]
    if scaled * UNITS[kind][unit] != value:
        # keep the round trip exact
        unit = next(u for u, f in UNITS[kind].items() if f == 1.0)
        scaled = value
    return f"{scaled!r} {unit}"


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentSpec
    workers: int = 1
    output_dir: str = "results"

    @property
    def link(self) -> LinkConfig:
        return self.experiment.link

    def with_overrides(
        self,
        seed: int | None = None,
        workers: int | None = None,
        output_dir: str | None = None,
    ) -> "RunConfig":
        cfg = self
        if seed is not None:
            if seed < 0 or seed >= 2**64:
                raise ConfigError("--seed", "must be an unsigned 64-bit integer")
            cfg = replace(cfg, experiment=replace(cfg.experiment, master_seed=seed))
        if workers is not None:
            if workers < 1:
                raise ConfigError("--workers", "must be >= 1")
            cfg = replace(cfg, workers=workers)
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        return cfg


# schema: section -> key -> (kind, default); kind is a unit kind or a python type
_LINK = {
    "spans": (int, 50),
    "span_length": ("length", 80.0),
    "dispersion": ("dispersion", 16.0),
    "gamma": ("gamma", 1.3),
    "attenuation": ("attenuation", 0.2),
    "wavelength": ("wavelength", 1550.0),
    "dcm": (bool, True),
    "dcm_insertion_loss": ("db", 3.0),
    "dcm_power_backoff": ("db", 4.0),
    "noise_figure": ("db", 5.0),
    "symbol_rate": ("rate", 14e9),
    "step_epsilon": (float, 1e-4),
    "noise": (bool, True),
}
_EXPERIMENT = {
    "constellation": (str, "qpsk"),
    "symbols_per_block": (int, 4096),
    "blocks": (int, 1),
    "powers": ("dbm_list", (0.0,)),
    "detectors": ("detector_list", ("dbp", "sbs", "dd:1", "va:1")),
    "particles": (int, 500),
    "master_seed": (int, 0),
}
_PULSE = {
    "rolloff": (float, 0.25),
    "span_symbols": (int, 16),
    "samples_per_symbol": (int, 4),
}
_ENGINE = {
    "workers": (int, 1),
    "state_budget": (int, DEFAULT_STATE_BUDGET),
    "regularization_floor": (float, 1e-12),
    "regularization_relative": (float, 1e-6),
    "regularization_max_retries": (int, 12),
    "manakov_factor": (float, MANAKOV_FACTOR),
    "include_logdet": (bool, True),
    "chunk_size": (int, 0),
    "output_dir": (str, "results"),
}
SCHEMA = {"link": _LINK, "experiment": _EXPERIMENT, "pulse": _PULSE, "engine": _ENGINE}


def _parse_detector(text: Any, key: str) -> DetectorSpec:
    if not isinstance(text, str):
        raise ConfigError(key, f"detector entries are strings like 'va:1', got {text!r}")
    name, _, mem = text.partition(":")
    try:
        return DetectorSpec(name.strip(), int(mem) if mem else 0)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _format_detector(d: DetectorSpec) -> str:
    return d.name if d.name in ("dbp", "sbs") else f"{d.name}:{d.L}"


def _value(kind, raw: Any, key: str):
    if kind is bool:
        if not isinstance(raw, bool):
            raise ConfigError(key, f"expected true/false, got {raw!r}")
        return raw
    if kind is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(key, f"expected an integer, got {raw!r}")
        return raw
    if kind is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(key, f"expected a number, got {raw!r}")
        return float(raw)
    if kind is str:
        if not isinstance(raw, str):
            raise ConfigError(key, f"expected a string, got {raw!r}")
        return raw
    if kind == "dbm_list":
        if not isinstance(raw, list) or not raw:
            raise ConfigError(key, 'expected a non-empty list such as ["0 dBm", "2 dBm"]')
        return tuple(parse_quantity(p, "dbm", f"{key}[{i}]") for i, p in enumerate(raw))
    if kind == "detector_list":
        if not isinstance(raw, list) or not raw:
            raise ConfigError(key, 'expected a non-empty list such as ["dbp", "va:1"]')
        return tuple(_parse_detector(d, f"{key}[{i}]") for i, d in enumerate(raw))
    return parse_quantity(raw, kind, key)


def _resolve(doc: dict) -> dict[str, dict[str, Any]]:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a table")
    for section in doc:
        if section not in SCHEMA:
            raise ConfigError(section, f"unknown section; expected one of {sorted(SCHEMA)}")
    out = {}
    for section, fields in SCHEMA.items():
        table = doc.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError(section, "expected a table")
        for key in table:
            if key not in fields:
                raise ConfigError(f"{section}.{key}", "unknown key")
        vals = {}
        for key, (kind, default) in fields.items():
            if key in table:
                vals[key] = _value(kind, table[key], f"{section}.{key}")
            elif kind == "detector_list":
                vals[key] = tuple(_parse_detector(d, f"{section}.{key}") for d in default)
            else:
                vals[key] = default
        out[section] = vals
    return out


def _positive(vals: dict, section: str, keys: tuple[str, ...], minimum=0, strict=True):
    for k in keys:
        v = vals[k]
        if (v <= minimum) if strict else (v < minimum):
            rel = ">" if strict else ">="
            raise ConfigError(f"{section}.{k}", f"must be {rel} {minimum}, got {v}")


def _build(r: dict[str, dict[str, Any]]) -> RunConfig:
    lk, ex, pu, en = r["link"], r["experiment"], r["pulse"], r["engine"]
    _positive(lk, "link", ("spans",), 1, strict=False)
    _positive(lk, "link", ("span_length", "wavelength", "symbol_rate", "step_epsilon"))
    _positive(lk, "link", ("attenuation", "gamma", "dcm_insertion_loss", "dcm_power_backoff"), 0, False)
    _positive(ex, "experiment", ("blocks", "symbols_per_block"), 1, strict=False)
    _positive(ex, "experiment", ("particles",), 1, strict=False)
    _positive(ex, "experiment", ("master_seed",), 0, strict=False)
    _positive(pu, "pulse", ("samples_per_symbol", "span_symbols"), 1, strict=False)
    _positive(en, "engine", ("workers", "state_budget", "regularization_max_retries"), 1, False)
    _positive(en, "engine", ("chunk_size",), 0, strict=False)
    _positive(en, "engine", ("regularization_floor", "regularization_relative"))
    _positive(en, "engine", ("manakov_factor",), 0, strict=False)
    if not 0 <= pu["rolloff"] <= 1:
        raise ConfigError("pulse.rolloff", f"must lie in [0, 1], got {pu['rolloff']}")
    if ex["master_seed"] >= 2**64:
        raise ConfigError("experiment.master_seed", "must fit in 64 bits")

    def build(key: str, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except ConfigError:
            raise
        except (ValueError, KeyError) as exc:
            raise ConfigError(key, str(exc)) from None

    smf = build(
        "link",
        FiberParams,
        dispersion=lk["dispersion"],
        gamma=lk["gamma"],
        attenuation=lk["attenuation"],
        length=lk["span_length"],
        wavelength=lk["wavelength"],
    )
    link = build(
        "link",
        LinkConfig,
        spans=lk["spans"],
        smf=smf,
        dcm=DcmParams(lk["dcm_insertion_loss"]) if lk["dcm"] else None,
        dcm_power_backoff=lk["dcm_power_backoff"],
        noise_figure=lk["noise_figure"],
        symbol_rate=lk["symbol_rate"],
        step_epsilon=lk["step_epsilon"],
        manakov_factor=en["manakov_factor"],
        noise=lk["noise"],
    )
    spec = build(
        "experiment",
        ExperimentSpec,
        link=link,
        powers=ex["powers"],
        detectors=ex["detectors"],
        constellation=ex["constellation"],
        num_symbols=ex["symbols_per_block"],
        blocks=ex["blocks"],
        n_particles=ex["particles"],
        master_seed=ex["master_seed"],
        samples_per_symbol=pu["samples_per_symbol"],
        rolloff=pu["rolloff"],
        span_symbols=pu["span_symbols"],
        include_logdet=en["include_logdet"],
        regularization=Regularization(
            en["regularization_floor"],
            en["regularization_relative"],
            en["regularization_max_retries"],
        ),
        state_budget=en["state_budget"],
        chunk_size=en["chunk_size"] or None,
    )
    return RunConfig(spec, workers=en["workers"], output_dir=en["output_dir"])


def loads_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    return _build(_resolve(doc))


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return loads_config(text)


def default_config() -> RunConfig:
    return loads_config("")


def to_document(cfg: RunConfig) -> dict[str, dict[str, Any]]:
    """Fully expanded document, every default written out."""
    spec = cfg.experiment
    link = spec.link
    reg = spec.regularization
    return {
        "link": {
            "spans": link.spans,
            "span_length": format_quantity(link.smf.length, "length"),
            "dispersion": format_quantity(link.smf.dispersion, "dispersion"),
            "gamma": format_quantity(link.smf.gamma, "gamma"),
            "attenuation": format_quantity(link.smf.attenuation, "attenuation"),
            "wavelength": format_quantity(link.smf.wavelength, "wavelength"),
            "dcm": link.dcm is not None,
            "dcm_insertion_loss": format_quantity(
                (link.dcm or DcmParams()).insertion_loss, "db"
            ),
            "dcm_power_backoff": format_quantity(link.dcm_power_backoff, "db"),
            "noise_figure": format_quantity(link.noise_figure, "db"),
            "symbol_rate": format_quantity(link.symbol_rate, "rate"),
            "step_epsilon": link.step_epsilon,
            "noise": link.noise,
        },
        "experiment": {
            "constellation": spec.constellation,
            "symbols_per_block": spec.num_symbols,
            "blocks": spec.blocks,
            "powers": [format_quantity(p, "dbm") for p in spec.powers],
            "detectors": [_format_detector(d) for d in spec.detectors],
            "particles": spec.n_particles,
            "master_seed": spec.master_seed,
        },
        "pulse": {
            "rolloff": spec.rolloff,
            "span_symbols": spec.span_symbols,
            "samples_per_symbol": spec.samples_per_symbol,
        },
        "engine": {
            "workers": cfg.workers,
            "state_budget": spec.state_budget,
            "regularization_floor": reg.floor,
            "regularization_relative": reg.relative,
            "regularization_max_retries": reg.max_retries,
            "manakov_factor": link.manakov_factor,
            "include_logdet": spec.include_logdet,
            "chunk_size": spec.chunk_size or 0,
            "output_dir": cfg.output_dir,
        },
    }


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_document(cfg))
