"""Fast invariant suite run by ``stochdbp validate``.

Each check is small enough that the whole table finishes in a few seconds.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import channel
from .channel import FiberParams, LinkConfig, make_step_plan, simulate_link, ssfm
from .detectors import brute_force_map, dbp_detect, dd_detect, sbs_detect, va_detect
from .modem import get_constellation, random_symbols, symbol_indices
from .sdbp import backpropagate, dbp_backpropagate, to_symbol_cloud
from .signal import (
    DualPolWaveform,
    angular_frequency,
    from_spectrum,
    make_rrc_pulse,
    shape,
    to_spectrum,
)
from .stats import BranchMetrics, estimate_moments

__all__ = ["CheckResult", "CHECKS", "run_checks", "format_table"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _random_wave(rng, n=1024, fs=56e9, power=1e-3) -> DualPolWaveform:
    s = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
    s *= np.sqrt(power / np.mean(np.sum(np.abs(s) ** 2, axis=0)))
    return DualPolWaveform(s, fs)


def check_cd_unitarity():
    rng = np.random.default_rng(1)
    w = _random_wave(rng)
    omega = angular_frequency(w.length_samples, w.sample_rate)
    h = channel._linear_operator(omega, FiberParams().beta2, 0.0, 80.0)
    out = from_spectrum(to_spectrum(w.samples) * h)
    err = abs(np.sum(np.abs(out) ** 2) / np.sum(np.abs(w.samples) ** 2) - 1)
    return err < 1e-10, f"energy change {err:.1e}"


def check_kerr_power():
    rng = np.random.default_rng(2)
    w = _random_wave(rng)
    out = channel._kerr(w.samples, 50.0)
    p0 = np.sum(np.abs(w.samples) ** 2, axis=0)
    p1 = np.sum(np.abs(out) ** 2, axis=0)
    err = float(np.max(np.abs(p1 - p0) / p0))
    return err < 1e-13, f"max relative power change {err:.1e}"


def check_ssfm_round_trip():
    rng = np.random.default_rng(3)
    c = get_constellation("qpsk")
    pulse = make_rrc_pulse(0.25, 16, 4)
    w = shape(random_symbols(c, 128, rng), pulse, 14e9, 1e-2)
    fiber = FiberParams()
    plan = make_step_plan(fiber.length, 5.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", channel.AliasingWarning)
        back = ssfm(ssfm(w, fiber, plan, "forward"), fiber, plan, "inverse")
    err = np.linalg.norm(back.samples - w.samples) / np.linalg.norm(w.samples)
    return err < 1e-6, f"relative error {err:.1e}"


def check_dcm_round_trip():
    rng = np.random.default_rng(4)
    w = _random_wave(rng)
    fiber = FiberParams()
    back = channel.fbg_dcm(channel.fbg_dcm(w, fiber, 3.0, "forward"), fiber, 3.0, "inverse")
    err = np.linalg.norm(back.samples - w.samples) / np.linalg.norm(w.samples)
    return err < 1e-12, f"relative error {err:.1e}"


def _tiny_link(noise: bool):
    c = get_constellation("qpsk")
    pulse = make_rrc_pulse(0.25, 16, 4)
    cfg = LinkConfig(spans=2, launch_power=0.0, noise=noise)
    s = random_symbols(c, 64, np.random.default_rng(5))
    out = simulate_link(s, cfg, pulse, np.random.default_rng(6), rx_filter=False)
    return c, pulse, cfg, s, out


def check_noiseless_link_inversion():
    c, pulse, cfg, s, out = _tiny_link(noise=False)
    back = dbp_backpropagate(out.r, cfg)
    err = np.linalg.norm(back.samples - out.transmitted.samples) / np.linalg.norm(
        out.transmitted.samples
    )
    rep = dbp_detect(out.r, cfg, pulse, out.timing_offset, 64, c)
    n_err = int(np.count_nonzero(rep.indices != symbol_indices(s, c)))
    return err < 1e-6 and n_err == 0, f"relative error {err:.1e}, {n_err} symbol errors"


def check_sdbp_single_particle():
    c, pulse, cfg, s, out = _tiny_link(noise=True)
    cloud = backpropagate(out.r, cfg, 1, noiseless=True)
    same = np.array_equal(cloud.data[0], dbp_backpropagate(out.r, cfg).samples)
    return bool(same), "bit-identical" if same else "waveforms differ"


def _random_clouds(n, n_sym, n_p, seed):
    c = get_constellation("qpsk")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        truth = random_symbols(c, n_sym, rng)
        yield c, truth[None] + 0.4 * rng.standard_normal((n_p, n_sym, 4))


def check_reversion_identities():
    bad = 0
    for c, cloud in _random_clouds(20, 16, 40, 7):
        a = sbs_detect(cloud, c).indices
        b = dd_detect(cloud, 0, c).indices
        v = va_detect(cloud, 0, c).indices
        bad += not (np.array_equal(a, b) and np.array_equal(a, v))
    return bad == 0, f"{bad}/20 clouds disagree"


def check_viterbi_oracle():
    bad = 0
    worst = 0.0
    for c, cloud in _random_clouds(10, 4, 30, 8):
        bm = BranchMetrics(estimate_moments(cloud, 1), c)
        tables = np.stack([bm.table(i) for i in range(len(bm))])
        ref = brute_force_map(tables, 4, c.cardinality, 1)
        rep = va_detect(cloud, 1, c)
        worst = max(worst, abs(rep.path_metric - ref.metric))
        bad += not np.array_equal(rep.extra["path"], ref.indices)
    return bad == 0 and worst < 1e-9, f"{bad}/10 paths differ, max metric gap {worst:.1e}"


def check_edfa_noise_power():
    amp = LinkConfig().edfa1
    n, fs, reps = 256, 56e9, 2000
    rng = np.random.default_rng(9)
    w = channel.ase_noise((reps, 2, n), amp.psd, fs, amp.noise_bandwidth, rng)
    per_pol = np.mean(np.abs(w) ** 2, axis=-1)  # (reps, 2)
    est = per_pol.mean()
    sigma = per_pol.std(ddof=1) / np.sqrt(per_pol.size)
    z = abs(est - amp.noise_power) / sigma
    return z < 3, f"{z:.2f} sigma from (G-1) F h nu B"


def check_step_size_scaling():
    d1 = channel.step_size(1e-4, 1.3, 1e-3, 16.0, 1550.0, 1 / 28e9)
    d2 = channel.step_size(1e-4, 1.3, 8e-3, 16.0, 1550.0, 1 / 28e9)
    d3 = channel.step_size(1e-4, 1.3, 1e-3, 16.0, 1550.0, 8 / 28e9)
    e1 = abs(d2 / d1 - 0.5)
    e2 = abs(d3 / d1 - 16.0) / 16.0
    ok = e1 < 1e-12 and e2 < 1e-12
    return ok, f"P^-1/3 error {e1:.1e}, T^4/3 error {e2:.1e}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "cd_unitarity": check_cd_unitarity,
    "kerr_power": check_kerr_power,
    "ssfm_round_trip": check_ssfm_round_trip,
    "dcm_round_trip": check_dcm_round_trip,
    "noiseless_link_inversion": check_noiseless_link_inversion,
    "sdbp_single_particle": check_sdbp_single_particle,
    "reversion_identities": check_reversion_identities,
    "viterbi_oracle": check_viterbi_oracle,
    "edfa_noise_power": check_edfa_noise_power,
    "step_size_scaling": check_step_size_scaling,
}


def run_checks(names=None) -> list[CheckResult]:
    unknown = [n for n in names or () if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check(s) {unknown}; choose from {sorted(CHECKS)}")
    out = []
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time    detail"]
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {tag:<6}  {r.seconds:5.2f}s  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} passed")
    return "\n".join(lines)
