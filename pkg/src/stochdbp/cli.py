"""Command-line front end: ``stochdbp {simulate,sweep,validate,bench}``."""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import link_step_plan
from .config import ConfigError, RunConfig, dumps_config, load_config
from .experiment import DetectorSpec, SweepError, sweep

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def bundled_config(name: str = "qpsk_dm_14g.cfg") -> Path:
    return Path(str(resources.files("stochdbp") / "configs" / name))


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, workers=args.workers, output_dir=args.output)


def describe(cfg: RunConfig) -> str:
    """Resolved configuration plus derived quantities (step plans, gains)."""
    lines = ["# resolved configuration", dumps_config(cfg).rstrip(), "", "# derived"]
    link = cfg.link
    lines.append(f"# EDFA1 gain: {10 * math.log10(link.edfa1.gain):.4f} dB")
    if link.edfa2 is not None:
        lines.append(f"# EDFA2 gain: {10 * math.log10(link.edfa2.gain):.4f} dB")
    for p in cfg.experiment.powers:
        plan = link_step_plan(link.with_power(p))
        seg = plan.segment_lengths
        lines.append(
            f"# {p:g} dBm: {len(seg)} SSFM segments of {seg[0]:.6g} km "
            f"(span {plan.total_length:g} km)"
        )
    return "\n".join(lines)


def _restrict(cfg: RunConfig, args) -> RunConfig:
    spec = cfg.experiment
    if args.power is not None:
        spec = replace(spec, powers=(args.power,))
    if args.detector is not None:
        name, _, mem = args.detector.partition(":")
        spec = replace(spec, detectors=(DetectorSpec(name, int(mem) if mem else 0),))
    if args.blocks is not None:
        spec = replace(spec, blocks=args.blocks)
    return replace(cfg, experiment=spec)


def _run(cfg: RunConfig, resume: bool, quiet: bool) -> int:
    out = Path(cfg.output_dir)
    journal = out / "blocks.jsonl" if resume else None
    total = len(cfg.experiment.powers) * cfg.experiment.blocks
    count = [0]

    def progress(res):
        count[0] += 1
        if not quiet:
            errs = " ".join(f"{d.label}={n}" for d, n in sorted(res.errors.items()))
            print(
                f"[{count[0]}/{total}] block {res.block} @ {res.power:g} dBm: {errs}",
                file=sys.stderr,
            )

    t0 = time.perf_counter()
    result = sweep(cfg.experiment, workers=cfg.workers, journal=journal, progress=progress)
    paths = result.write(out)
    if not quiet:
        print(f"done in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    print(paths["csv"].read_text(), end="")
    for d, g in result.gains().items():
        print(f"G_{d.label} = {g:.4g}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _restrict(_load(args), args)
    if args.dry_run:
        print(describe(cfg))
        return EXIT_OK
    return _run(cfg, resume=False, quiet=args.quiet)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.dry_run:
        print(describe(cfg))
        return EXIT_OK
    return _run(cfg, resume=not args.no_resume, quiet=args.quiet)


def cmd_validate(args) -> int:
    from .validation import format_table, run_checks

    results = run_checks(args.check or None)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def _timeit(fn, repeat: int) -> float:
    fn()
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args) -> int:
    from .channel import LinkModel
    from .detectors import va_detect
    from .modem import get_constellation, random_symbols
    from .signal import make_rrc_pulse, shape

    cfg = _load(args)
    spec = cfg.experiment
    link = cfg.link.with_power(spec.powers[0])
    const = get_constellation(spec.constellation)
    rng = np.random.default_rng(spec.master_seed)
    pulse = make_rrc_pulse(spec.rolloff, spec.span_symbols, spec.samples_per_symbol)
    k = args.symbols or spec.num_symbols
    wave = shape(random_symbols(const, k, rng), pulse, link.symbol_rate, link.launch_power_w)
    model = LinkModel(link, wave.length_samples, wave.sample_rate)
    batch = np.broadcast_to(wave.samples, (args.particles, 2, wave.length_samples)).copy()

    t_fwd = _timeit(lambda: model.smf.forward(wave.samples), args.repeat)
    t_inv = _timeit(lambda: model.smf.inverse(batch), args.repeat)
    truth = random_symbols(const, k, rng)
    cloud = truth[None] + 0.3 * rng.standard_normal((args.particles, k, 4))
    print(f"samples per block: {wave.length_samples}, segments per span: {len(model.plan)}")
    print(f"ssfm forward, one span:                 {t_fwd * 1e3:9.2f} ms")
    print(f"ssfm inverse, one span x {args.particles} particles: {t_inv * 1e3:9.2f} ms")
    for L in sorted({d.L for d in spec.detectors if d.name == "va"} or {1}):
        t_va = _timeit(lambda: va_detect(cloud, L, const, state_budget=spec.state_budget), 1)
        print(f"va_detect L={L}, K={k}, Np={args.particles}:      {t_va * 1e3:9.2f} ms")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    default = None if config_required else str(bundled_config())
    p.add_argument(
        "--config",
        required=config_required,
        default=default,
        metavar="PATH",
        help="TOML run configuration",
    )
    p.add_argument("--seed", type=int, metavar="U64", help="override experiment.master_seed")
    p.add_argument("--workers", type=int, metavar="N", help="override engine.workers")
    p.add_argument("--output", metavar="DIR", help="override engine.output_dir")
    p.add_argument(
        "--dry-run",
        action="store_true",
        help="print the resolved configuration, step plans and EDFA gains, then exit",
    )
    p.add_argument("-q", "--quiet", action="store_true", help="no progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochdbp",
        description="Stochastic digital backpropagation simulator and SER harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one cell or the configured sweep once")
    _add_common(p)
    p.add_argument("--power", type=float, metavar="DBM", help="run only this launch power")
    p.add_argument("--detector", metavar="NAME[:L]", help="run only this detector, e.g. va:1")
    p.add_argument("--blocks", type=int, metavar="N", help="override experiment.blocks")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="full power sweep with resumable progress journal")
    _add_common(p)
    p.add_argument("--no-resume", action="store_true", help="do not read or write the journal")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="fast invariant checks")
    p.add_argument("--check", action="append", metavar="NAME", help="run only this check")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="time the SSFM and Viterbi kernels")
    _add_common(p, config_required=False)
    p.add_argument("--particles", type=int, default=50)
    p.add_argument("--symbols", type=int, default=512)
    p.add_argument("--repeat", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
