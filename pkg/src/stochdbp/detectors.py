"""Decision back ends over a particle symbol cloud, plus DBP slicing.

All detectors break ties toward the lexicographically smallest sequence of
constellation indices, so results are exactly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from numpy.typing import NDArray

from .channel import LinkConfig
from .modem import Constellation, symbol_indices
from .sdbp import ParticleCloud, dbp_backpropagate
from .signal import DualPolWaveform, PulseShape, matched_filter_sample
from .stats import BranchMetrics, Regularization, estimate_moments, next_state_table

__all__ = [
    "DetectorReport",
    "SequenceEstimate",
    "StateBudgetExceeded",
    "InstanceTooLarge",
    "viterbi",
    "brute_force_map",
    "dbp_detect",
    "sbs_detect",
    "dd_detect",
    "va_detect",
    "DEFAULT_STATE_BUDGET",
]

DEFAULT_STATE_BUDGET = 1_000_000
BRUTE_FORCE_LIMIT = 10_000_000


class StateBudgetExceeded(ValueError):
    pass


class InstanceTooLarge(ValueError):
    pass


@dataclass
class DetectorReport:
    decided: NDArray[np.float64]
    indices: NDArray[np.intp]
    detector: str
    L: int = 0
    per_slot_metrics: NDArray[np.float64] | None = None
    regularization_events: int = 0
    path_metric: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decided.shape[0] != self.indices.shape[0]:
            raise ValueError("decided and indices lengths differ")


class SequenceEstimate(NamedTuple):
    indices: NDArray[np.intp]  # s_1..s_K as constellation indices
    metric: float


def viterbi(
    psi: Callable[[int], NDArray], n_symbols: int, m: int, L: int
) -> SequenceEstimate:
    """Minimize sum_{k=L+1}^{K} psi_k(s_k, x_k) over all index sequences.

    ``psi(j)`` returns the (M^L, M) metric table for slot k = L+1+j.  The
    recursion runs backwards in time (cost-to-go), which lets the decision
    pass run forwards and pick, at every step, the smallest index consistent
    with optimality.  The result is the lexicographically smallest optimal
    sequence.  Start and end states are free (uniform prior, no termination).
    """
    n_slots = n_symbols - L
    if n_slots < 1:
        raise ValueError(f"need K > L, got K={n_symbols}, L={L}")
    nxt = next_state_table(m, L)
    n_states = nxt.shape[0]
    rows = np.arange(n_states)
    cost = np.zeros(n_states)
    offset = 0.0
    ptr = np.empty((n_slots, n_states), dtype=np.min_scalar_type(m - 1))
    for j in range(n_slots - 1, -1, -1):
        total = psi(j) + cost[nxt]
        best = np.argmin(total, axis=1)
        ptr[j] = best
        cost = total[rows, best]
        # keep the cost-to-go anchored at zero; with one state this makes the
        # comparison identical to a per-slot argmin
        c = cost.min()
        cost = cost - c
        offset += c
    state = int(np.argmin(cost))
    metric = float(cost[state] + offset)
    seq = np.empty(n_symbols, dtype=np.intp)
    for i in range(L):
        # least significant digit is the most recent symbol s_L
        seq[L - 1 - i] = (state // m**i) % m
    for j in range(n_slots):
        s = int(ptr[j, state])
        seq[L + j] = s
        state = int(nxt[state, s])
    return SequenceEstimate(seq, metric)


def brute_force_map(psi_table: NDArray, n_symbols: int, m: int, L: int) -> SequenceEstimate:
    """Exhaustive minimization of the summed branch metrics.

    ``psi_table`` has shape (K-L, M^L, M) with the same state encoding as
    :func:`viterbi`.  Sequences are enumerated in lexicographic order and the
    first minimizer wins.
    """
    psi_table = np.asarray(psi_table, dtype=np.float64)
    if psi_table.shape != (n_symbols - L, m**L, m):
        raise ValueError(f"psi_table shape {psi_table.shape} inconsistent with K, M, L")
    if m**n_symbols > BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(f"{m}^{n_symbols} sequences exceed the enumeration guard")
    # dense cost over the full grid Omega^K; axis i is s_{i+1}, so the C-order
    # flat index is the lexicographic rank of the sequence
    total = np.zeros((m,) * n_symbols)
    for j in range(n_symbols - L):
        # table axes after reshape: (s_{k-L}, ..., s_{k-1}, s_k)
        term = psi_table[j].reshape((m,) * (L + 1))
        shape = [1] * n_symbols
        shape[j : j + L + 1] = [m] * (L + 1)
        total = total + term.reshape(shape)
    flat = total.ravel()
    best = int(np.argmin(flat))
    seq = np.array(np.unravel_index(best, total.shape), dtype=np.intp)
    return SequenceEstimate(seq, float(flat[best]))


def _report(name, idx, constellation, L, **kw) -> DetectorReport:
    return DetectorReport(constellation.points[idx], np.asarray(idx), name, L, **kw)


def _symbols(cloud) -> NDArray:
    return cloud.data if isinstance(cloud, ParticleCloud) else np.asarray(cloud)


def _sbs_indices(
    cloud, constellation: Constellation, include_logdet: bool, reg: Regularization | None
) -> tuple[NDArray[np.intp], NDArray[np.float64], int]:
    bm = BranchMetrics(estimate_moments(cloud, 0), constellation, include_logdet, reg)
    idx = np.empty(len(bm), dtype=np.intp)
    metric = np.empty(len(bm))
    for i in range(len(bm)):
        row = bm.table(i)[0]
        idx[i] = np.argmin(row)
        metric[i] = row[idx[i]]
    return idx, metric, bm.regularization_events


def sbs_detect(
    cloud,
    constellation: Constellation,
    include_logdet: bool = True,
    regularization: Regularization | None = None,
) -> DetectorReport:
    """Per-slot minimum Mahalanobis decision under a 4D Gaussian fit."""
    idx, metric, events = _sbs_indices(cloud, constellation, include_logdet, regularization)
    return _report(
        "sbs", idx, constellation, 0, per_slot_metrics=metric, regularization_events=events
    )


def dd_detect(
    cloud,
    L: int,
    constellation: Constellation,
    include_logdet: bool = True,
    regularization: Regularization | None = None,
) -> DetectorReport:
    """Decision-directed detection: condition slot k on the previous L decisions.

    Slots 1..L are decided symbol by symbol.
    """
    if L < 0:
        raise ValueError("L must be >= 0")
    if L == 0:
        rep = sbs_detect(cloud, constellation, include_logdet, regularization)
        rep.detector = "dd"
        return rep
    s = _symbols(cloud)
    n_sym = s.shape[1]
    head, head_metric, events = _sbs_indices(s[:, :L], constellation, include_logdet, regularization)
    bm = BranchMetrics(estimate_moments(s, L), constellation, include_logdet, regularization)
    pts = constellation.points
    idx = np.empty(n_sym, dtype=np.intp)
    metric = np.empty(n_sym)
    idx[:L] = head
    metric[:L] = head_metric
    for j in range(n_sym - L):
        k0 = L + j
        x_hat = pts[idx[k0 - L : k0][::-1]].reshape(1, -1)
        row = bm.for_states(j, x_hat)[0]
        idx[k0] = np.argmin(row)
        metric[k0] = row[idx[k0]]
    return _report(
        "dd",
        idx,
        constellation,
        L,
        per_slot_metrics=metric,
        regularization_events=events + bm.regularization_events,
    )


def va_detect(
    cloud,
    L: int,
    constellation: Constellation,
    include_logdet: bool = True,
    regularization: Regularization | None = None,
    state_budget: int = DEFAULT_STATE_BUDGET,
) -> DetectorReport:
    """Viterbi sequence detection over states of the L previous symbols.

    The trellis covers slots L+1..K; slots 1..L are reported from
    symbol-by-symbol decisions.  The full optimal path, including the start
    state, is kept in ``extra["path"]``.
    """
    if L < 0:
        raise ValueError("L must be >= 0")
    m = constellation.cardinality
    if m**L > state_budget:
        raise StateBudgetExceeded(f"{m}^{L} states exceed the budget of {state_budget}")
    s = _symbols(cloud)
    n_sym = s.shape[1]
    bm = BranchMetrics(estimate_moments(s, L), constellation, include_logdet, regularization)
    est = viterbi(bm.table, n_sym, m, L)
    idx = est.indices.copy()
    events = bm.regularization_events
    metric = np.empty(n_sym)
    pts = constellation.points
    for j in range(n_sym - L):
        x = pts[idx[j : L + j][::-1]].reshape(1, -1)
        metric[L + j] = bm.for_states(j, x)[0, idx[L + j]]
    if L:
        head, head_metric, head_events = _sbs_indices(
            s[:, :L], constellation, include_logdet, regularization
        )
        idx[:L] = head
        metric[:L] = head_metric
        events += head_events
    return _report(
        "va",
        idx,
        constellation,
        L,
        per_slot_metrics=metric,
        regularization_events=events,
        path_metric=est.metric,
        extra={"path": est.indices},
    )


def dbp_detect(
    r: DualPolWaveform,
    cfg: LinkConfig,
    pulse: PulseShape,
    timing_offset: int,
    num_symbols: int,
    constellation: Constellation,
) -> DetectorReport:
    """Deterministic backpropagation, matched filter and minimum-distance slicing."""
    e = dbp_backpropagate(r, cfg)
    sym = matched_filter_sample(e, pulse, timing_offset, num_symbols, cfg.launch_power_w)
    idx = symbol_indices(sym, constellation)
    return _report("dbp", idx, constellation, 0, extra={"soft": sym, "waveform": e})
