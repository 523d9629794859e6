"""Monte Carlo SER harness over a (block, launch power) grid.

Every (block, power) task draws its symbols, channel noise and particle noise
from substreams keyed by (master_seed, block, power, role), so the results do
not depend on execution order or on the number of worker processes.  All
particle detectors at the same (block, power) share one particle cloud.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .channel import LinkConfig, simulate_link
from .detectors import DEFAULT_STATE_BUDGET, dbp_detect, dd_detect, sbs_detect, va_detect
from .modem import get_constellation, random_symbols, symbol_indices
from .sdbp import backpropagate, to_symbol_cloud
from .signal import make_rrc_pulse
from .stats import Regularization

__all__ = [
    "DetectorSpec",
    "ExperimentSpec",
    "BlockResult",
    "CellResult",
    "SweepResult",
    "SweepError",
    "CSV_COLUMNS",
    "run_block",
    "sweep",
    "task_seed",
    "wilson_interval",
    "normal_interval",
    "ser_interval",
]

CSV_COLUMNS = ("detector", "L", "power_dBm", "symbols", "errors", "ser", "ci_lo", "ci_hi")
DETECTORS = ("dbp", "sbs", "dd", "va")
SMALL_COUNT = 10
Z95 = 1.959963984540054

# substream roles
ROLE_SYMBOLS = 0
ROLE_CHANNEL = 1
ROLE_PARTICLES = 2


class SweepError(RuntimeError):
    """One or more grid cells failed; completed cells are kept on disk."""

    def __init__(self, failures: list[tuple[int, float, str]]):
        self.failures = failures
        lines = [f"block {b} at {p:g} dBm: {msg}" for b, p, msg in failures]
        super().__init__(f"{len(failures)} block(s) failed:\n  " + "\n  ".join(lines))


@dataclass(frozen=True, order=True)
class DetectorSpec:
    name: str
    L: int = 0

    def __post_init__(self):
        if self.name not in DETECTORS:
            raise ValueError(f"unknown detector {self.name!r}; choose from {DETECTORS}")
        if self.L < 0:
            raise ValueError(f"detector memory must be >= 0, got {self.L}")
        if self.name in ("dbp", "sbs") and self.L != 0:
            raise ValueError(f"{self.name} has no memory parameter; use L=0")

    @property
    def label(self) -> str:
        return self.name if self.name in ("dbp", "sbs") else f"{self.name}(L={self.L})"


@dataclass(frozen=True)
class ExperimentSpec:
    link: LinkConfig
    powers: tuple[float, ...]
    detectors: tuple[DetectorSpec, ...] = (
        DetectorSpec("dbp"),
        DetectorSpec("sbs"),
        DetectorSpec("dd", 1),
        DetectorSpec("va", 1),
    )
    constellation: str = "qpsk"
    num_symbols: int = 4096
    blocks: int = 1
    n_particles: int = 500
    master_seed: int = 0
    samples_per_symbol: int = 4
    rolloff: float = 0.25
    span_symbols: int = 16
    include_logdet: bool = True
    regularization: Regularization = field(default_factory=Regularization)
    state_budget: int = DEFAULT_STATE_BUDGET
    chunk_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        object.__setattr__(
            self,
            "detectors",
            tuple(d if isinstance(d, DetectorSpec) else DetectorSpec(*d) for d in self.detectors),
        )
        if self.blocks < 1:
            raise ValueError(f"experiment.blocks must be >= 1, got {self.blocks}")
        if not self.powers:
            raise ValueError("experiment.powers must not be empty")
        if len(set(self.powers)) != len(self.powers):
            raise ValueError("experiment.powers contains duplicates")
        if not self.detectors:
            raise ValueError("experiment.detectors must not be empty")
        if len(set(self.detectors)) != len(self.detectors):
            raise ValueError("experiment.detectors contains duplicates")
        if self.num_symbols < 2:
            raise ValueError("experiment.num_symbols must be >= 2")
        if self.n_particles < 2 and self.uses_particles:
            raise ValueError("experiment.particles must be >= 2 for particle detectors")
        get_constellation(self.constellation)
        for d in self.detectors:
            if d.L >= self.num_symbols:
                raise ValueError(f"detector {d.label} memory exceeds the block length")

    @property
    def uses_particles(self) -> bool:
        return any(d.name != "dbp" for d in self.detectors)

    def fingerprint(self) -> str:
        """Stable hash of everything that affects the numbers."""
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _power_key(power_dbm: float) -> int:
    # milli-dBm, shifted non-negative as SeedSequence requires
    return int(round(power_dbm * 1000)) + 1_000_000


def task_seed(master_seed: int, block: int, power_dbm: float, role: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(block, _power_key(power_dbm), role))


@dataclass(frozen=True)
class BlockResult:
    block: int
    power: float
    symbols: int
    errors: dict[DetectorSpec, int]
    cloud_hash: str | None = None
    # DBP soft-output energies, for the effective SNR
    signal_energy: float = 0.0
    error_energy: float = 0.0
    consumers: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "block": self.block,
            "power": self.power,
            "symbols": self.symbols,
            "errors": [[d.name, d.L, n] for d, n in sorted(self.errors.items())],
            "cloud_hash": self.cloud_hash,
            "signal_energy": self.signal_energy,
            "error_energy": self.error_energy,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BlockResult":
        return cls(
            block=int(obj["block"]),
            power=float(obj["power"]),
            symbols=int(obj["symbols"]),
            errors={DetectorSpec(n, int(L)): int(e) for n, L, e in obj["errors"]},
            cloud_hash=obj.get("cloud_hash"),
            signal_energy=float(obj.get("signal_energy", 0.0)),
            error_energy=float(obj.get("error_energy", 0.0)),
        )


def _cloud_hash(data: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(data).tobytes()).hexdigest()


def run_block(
    spec: ExperimentSpec,
    power: float,
    block_index: int,
    detectors: Sequence[DetectorSpec] | None = None,
) -> BlockResult:
    """Transmit one block at ``power`` dBm and count errors for each detector.

    The particle cloud is computed once and handed to every particle detector.
    ``consumers`` in the result lists the hash of the cloud each detector saw.
    """
    detectors = spec.detectors if detectors is None else tuple(detectors)
    const = get_constellation(spec.constellation)
    pulse = make_rrc_pulse(spec.rolloff, spec.span_symbols, spec.samples_per_symbol)
    cfg = spec.link.with_power(power)
    k = spec.num_symbols

    sym_rng = np.random.default_rng(task_seed(spec.master_seed, block_index, power, ROLE_SYMBOLS))
    ch_rng = np.random.default_rng(task_seed(spec.master_seed, block_index, power, ROLE_CHANNEL))
    symbols = random_symbols(const, k, sym_rng)
    truth = symbol_indices(symbols, const)
    out = simulate_link(symbols, cfg, pulse, ch_rng)

    errors: dict[DetectorSpec, int] = {}
    consumers = []
    cloud = None
    cloud_hash = None
    sig_e = err_e = 0.0
    for det in detectors:
        if det.name == "dbp":
            rep = dbp_detect(out.r, cfg, pulse, out.timing_offset, k, const)
            soft = rep.extra["soft"]
            sig_e = float(np.sum(symbols**2))
            err_e = float(np.sum((soft - symbols) ** 2))
        else:
            if cloud is None:
                particles = backpropagate(
                    out.r,
                    cfg,
                    spec.n_particles,
                    seed=task_seed(spec.master_seed, block_index, power, ROLE_PARTICLES),
                    chunk_size=spec.chunk_size,
                )
                cloud = to_symbol_cloud(
                    particles, pulse, out.timing_offset, k, cfg.launch_power_w
                )
                del particles
                cloud_hash = _cloud_hash(cloud.data)
            kw = dict(include_logdet=spec.include_logdet, regularization=spec.regularization)
            if det.name == "sbs":
                rep = sbs_detect(cloud, const, **kw)
            elif det.name == "dd":
                rep = dd_detect(cloud, det.L, const, **kw)
            else:
                rep = va_detect(cloud, det.L, const, state_budget=spec.state_budget, **kw)
            consumers.append(_cloud_hash(cloud.data))
        errors[det] = int(np.count_nonzero(rep.indices != truth))
    return BlockResult(
        block=block_index,
        power=float(power),
        symbols=k,
        errors=errors,
        cloud_hash=cloud_hash,
        signal_energy=sig_e,
        error_energy=err_e,
        consumers=tuple(consumers),
    )


def wilson_interval(errors: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        return (0.0, 1.0)
    p = errors / n
    den = 1 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the bounds are exact at the extremes; avoid rounding residue there
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == n else min(1.0, center + half)
    return (lo, hi)


def normal_interval(errors: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        return (0.0, 1.0)
    p = errors / n
    half = z * math.sqrt(p * (1 - p) / n)
    return (max(0.0, p - half), min(1.0, p + half))


def ser_interval(errors: int, n: int) -> tuple[float, float, bool]:
    """95% interval; Wilson (flagged) below ten errors, normal approximation above."""
    if errors < SMALL_COUNT:
        return (*wilson_interval(errors, n), True)
    return (*normal_interval(errors, n), False)


@dataclass(frozen=True)
class CellResult:
    detector: DetectorSpec
    power: float
    symbols: int
    errors: int

    @property
    def ser(self) -> float:
        return self.errors / self.symbols if self.symbols else float("nan")

    @property
    def ci95(self) -> tuple[float, float]:
        lo, hi, _ = ser_interval(self.errors, self.symbols)
        return (lo, hi)

    @property
    def low_count(self) -> bool:
        return self.errors < SMALL_COUNT


def _fmt(x: float) -> str:
    return format(x, ".12g")


def _gain(dbp_ser: float, x_ser: float) -> float:
    if x_ser == 0:
        return math.nan if dbp_ser == 0 else math.inf
    return dbp_ser / x_ser


@dataclass
class SweepResult:
    spec: ExperimentSpec
    cells: dict[tuple[DetectorSpec, float], CellResult]
    blocks: list[BlockResult] = field(default_factory=list)

    @classmethod
    def from_blocks(cls, spec: ExperimentSpec, blocks: Iterable[BlockResult]) -> "SweepResult":
        blocks = sorted(blocks, key=lambda b: (b.power, b.block))
        counts = {(d, p): [0, 0] for d in spec.detectors for p in spec.powers}
        for b in blocks:
            for d, e in b.errors.items():
                c = counts[(d, b.power)]
                c[0] += b.symbols
                c[1] += e
        cells = {
            key: CellResult(key[0], key[1], n, e) for key, (n, e) in counts.items() if n > 0
        }
        return cls(spec, cells, list(blocks))

    def cell(self, detector: DetectorSpec | str, power: float, L: int = 0) -> CellResult:
        if isinstance(detector, str):
            detector = DetectorSpec(detector, L)
        return self.cells[(detector, float(power))]

    def best(self, detector: DetectorSpec) -> CellResult:
        """Lowest-SER cell for ``detector``; ties go to the lower power."""
        cands = sorted(
            (c for (d, _), c in self.cells.items() if d == detector), key=lambda c: c.power
        )
        if not cands:
            raise KeyError(f"no results for {detector.label}")
        return min(cands, key=lambda c: c.ser)

    def gains(self) -> dict[DetectorSpec, float]:
        """G_X = best DBP SER / best SER of X, each at its own optimal power."""
        dbp = DetectorSpec("dbp")
        if not any(d == dbp for d, _ in self.cells):
            return {}
        ref = self.best(dbp).ser
        return {d: _gain(ref, self.best(d).ser) for d in self.spec.detectors if d != dbp}

    def dbp_snr_db(self) -> dict[float, float]:
        """Effective SNR of DBP soft decisions per power, in dB."""
        out = {}
        for p in self.spec.powers:
            sig = sum(b.signal_energy for b in self.blocks if b.power == p)
            err = sum(b.error_energy for b in self.blocks if b.power == p)
            if sig > 0 and err > 0:
                out[p] = 10 * math.log10(sig / err)
        return out

    def rows(self) -> list[list[str]]:
        out = []
        for (d, p), c in sorted(self.cells.items()):
            lo, hi = c.ci95
            out.append(
                [d.name, str(d.L), _fmt(p), str(c.symbols), str(c.errors), _fmt(c.ser), _fmt(lo), _fmt(hi)]
            )
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(self.rows())
        return buf.getvalue()

    def summary(self) -> dict:
        def num(x: float):
            if math.isnan(x):
                return None
            if math.isinf(x):
                return "inf"
            return x

        detectors = {}
        for d in self.spec.detectors:
            try:
                b = self.best(d)
            except KeyError:
                continue
            detectors[d.label] = {
                "name": d.name,
                "L": d.L,
                "best_ser": b.ser,
                "best_power_dBm": b.power,
                "errors_at_best": b.errors,
                "low_count": b.low_count,
            }
        return {
            "fingerprint": self.spec.fingerprint(),
            "master_seed": self.spec.master_seed,
            "blocks": self.spec.blocks,
            "symbols_per_block": self.spec.num_symbols,
            "particles": self.spec.n_particles,
            "powers_dBm": list(self.spec.powers),
            "detectors": detectors,
            "gains": {d.label: num(g) for d, g in self.gains().items()},
            "dbp_snr_dB": {_fmt(p): v for p, v in self.dbp_snr_db().items()},
        }

    def write(self, output_dir: str | os.PathLike) -> dict[str, Path]:
        """Write ser.csv, summary.json and one plot-data file per detector."""
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "ser.csv", "summary": out / "summary.json"}
        paths["csv"].write_text(self.to_csv())
        paths["summary"].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        for d in self.spec.detectors:
            cells = sorted((c for (dd, _), c in self.cells.items() if dd == d), key=lambda c: c.power)
            if not cells:
                continue
            path = out / f"plot_{d.name}_L{d.L}.dat"
            lines = ["# power_dBm ser ci_lo ci_hi errors symbols"]
            for c in cells:
                lo, hi = c.ci95
                lines.append(
                    f"{_fmt(c.power)} {_fmt(c.ser)} {_fmt(lo)} {_fmt(hi)} {c.errors} {c.symbols}"
                )
            path.write_text("\n".join(lines) + "\n")
            paths[f"plot_{d.name}_L{d.L}"] = path
        return paths


def _task(spec: ExperimentSpec, power: float, block: int) -> BlockResult:
    return run_block(spec, power, block)


def _load_journal(path: Path, spec: ExperimentSpec) -> dict[tuple[int, float], BlockResult]:
    done = {}
    if not path.exists():
        return done
    with path.open() as fh:
        header = fh.readline()
        if not header.strip():
            return done
        meta = json.loads(header)
        if meta.get("fingerprint") != spec.fingerprint():
            raise ValueError(
                f"{path} was written by a different experiment "
                f"(fingerprint {meta.get('fingerprint')} != {spec.fingerprint()}); "
                "choose another output directory"
            )
        for line in fh:
            if not line.strip():
                continue
            try:
                b = BlockResult.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError):
                # a torn final line from an interrupted run
                continue
            done[(b.block, b.power)] = b
    return done


def sweep(
    spec: ExperimentSpec,
    workers: int = 1,
    journal: str | os.PathLike | None = None,
    progress=None,
) -> SweepResult:
    """Run every (block, power) task and aggregate.

    ``journal`` names a JSONL file that receives one line per finished task;
    tasks already present there are not recomputed.  ``progress`` is called
    with each BlockResult as it completes.
    """
    tasks = [(p, b) for p in spec.powers for b in range(spec.blocks)]
    done: dict[tuple[int, float], BlockResult] = {}
    fh = None
    if journal is not None:
        jpath = Path(journal)
        done = _load_journal(jpath, spec)
        new = not jpath.exists() or jpath.stat().st_size == 0
        jpath.parent.mkdir(parents=True, exist_ok=True)
        fh = jpath.open("a")
        if new:
            fh.write(json.dumps({"fingerprint": spec.fingerprint()}) + "\n")
            fh.flush()
    todo = [(p, b) for p, b in tasks if (b, p) not in done]
    failures = []

    def record(res: BlockResult):
        done[(res.block, res.power)] = res
        if fh is not None:
            fh.write(json.dumps(res.to_json(), sort_keys=True) + "\n")
            fh.flush()
        if progress is not None:
            progress(res)

    try:
        if workers <= 1 or len(todo) <= 1:
            for p, b in todo:
                try:
                    record(_task(spec, p, b))
                except Exception as exc:  # reported below, never dropped
                    failures.append((b, p, f"{type(exc).__name__}: {exc}"))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {pool.submit(_task, spec, p, b): (p, b) for p, b in todo}
                for fut, (p, b) in futs.items():
                    try:
                        record(fut.result())
                    except Exception as exc:
                        failures.append((b, p, f"{type(exc).__name__}: {exc}"))
    finally:
        if fh is not None:
            fh.close()
    if failures:
        raise SweepError(sorted(failures))
    return SweepResult.from_blocks(spec, done.values())


def linear_optimum_power(result: SweepResult) -> float:
    """Launch power with the highest DBP effective SNR (ties to lower power)."""
    snr = result.dbp_snr_db()
    if not snr:
        raise ValueError("sweep has no DBP soft-output statistics")
    return max(sorted(snr), key=lambda p: snr[p])
