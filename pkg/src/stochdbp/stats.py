"""Gaussian moments of particle symbol windows and the trellis branch metric.

For memory ``L`` the window at slot k (1-based) stacks
``y_k = [s_k, s_{k-1}, ..., s_{k-L}]`` (length 4(L+1)) and the state part
``x_k = [s_{k-1}, ..., s_{k-L}]`` is its trailing 4L entries.  The branch
metric is

    psi_k(s, x) = (y-mu_y)' Sy^-1 (y-mu_y) - (x-mu_x)' Sx^-1 (x-mu_x)
                  [+ ln det Sy - ln det Sx]

which is evaluated here in its equivalent conditional form: the Mahalanobis
distance of ``s`` from the conditional mean ``E[s | x]`` under the
conditional covariance (the Schur complement), plus its log-determinant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .modem import Constellation

__all__ = [
    "WindowStats",
    "Regularization",
    "InsufficientParticlesError",
    "windows",
    "estimate_moments",
    "BranchMetrics",
    "branch_metric",
    "state_vectors",
    "next_state_table",
]


class InsufficientParticlesError(ValueError):
    pass


@dataclass(frozen=True)
class Regularization:
    """Diagonal loading used when a window covariance is not positive definite."""

    floor: float = 1e-12
    relative: float = 1e-6
    max_retries: int = 12

    def load(self, sigma: NDArray) -> float:
        d = sigma.shape[-1]
        return max(self.floor, self.relative * float(np.trace(sigma)) / d)


@dataclass(frozen=True)
class WindowStats:
    """Sample moments of the windows y_k for a run of slots.

    ``k`` holds 1-based slot indices; ``mu_y`` is (S, d) and ``sigma_y`` is
    (S, d, d) with d = 4(L+1).  The x moments are the trailing blocks.
    """

    k: NDArray[np.intp]
    L: int
    mu_y: NDArray[np.float64]
    sigma_y: NDArray[np.float64]

    @property
    def mu_x(self) -> NDArray[np.float64]:
        return self.mu_y[:, 4:]

    @property
    def sigma_x(self) -> NDArray[np.float64]:
        return self.sigma_y[:, 4:, 4:]

    def __len__(self) -> int:
        return self.k.size

    def slot(self, i: int) -> "WindowStats":
        return WindowStats(self.k[i : i + 1], self.L, self.mu_y[i : i + 1], self.sigma_y[i : i + 1])


def _symbols_array(cloud) -> NDArray[np.float64]:
    data = getattr(cloud, "data", cloud)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 4:
        raise ValueError(f"expected a (Np, K, 4) symbol cloud, got shape {data.shape}")
    return data


def windows(symbols: NDArray, L: int) -> NDArray[np.float64]:
    """Stack y_k for k = L+1..K: (Np, K, 4) -> (Np, K-L, 4(L+1))."""
    s = _symbols_array(symbols)
    k = s.shape[1]
    if L < 0 or L >= k:
        raise ValueError(f"memory L={L} invalid for K={k}")
    return np.concatenate([s[:, L - j : k - j] for j in range(L + 1)], axis=-1)


def estimate_moments(cloud, L: int, k: int | None = None) -> WindowStats:
    """Sample mean and unbiased (N_p - 1) covariance of the windows.

    Args:
        cloud: ParticleCloud at the symbol stage, or a (Np, K, 4) array.
        L: Memory.
        k: Single 1-based slot (L+1 <= k <= K); all slots L+1..K when None.
    """
    s = _symbols_array(cloud)
    n_p, n_sym = s.shape[:2]
    if n_p < 2:
        raise InsufficientParticlesError(f"need at least 2 particles, got {n_p}")
    if k is not None:
        if not L + 1 <= k <= n_sym:
            raise IndexError(f"slot k={k} outside [{L + 1}, {n_sym}] for L={L}")
        s = s[:, k - 1 - L : k]
        ks = np.array([k])
    else:
        ks = np.arange(L + 1, n_sym + 1)
    y = windows(s, L)
    # shift by one particle first: stabler, and exact for a degenerate cloud
    ref = y[0]
    d = y - ref
    dmu = d.mean(axis=0)
    mu = ref + dmu
    c = d - dmu
    sigma = np.einsum("nsi,nsj->sij", c, c) / (n_p - 1)
    # exact symmetry
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    return WindowStats(ks, L, mu, sigma)


def state_vectors(constellation: Constellation, L: int) -> NDArray[np.float64]:
    """x vectors for every trellis state, shape (M^L, 4L).

    State index encodes ``[s_{k-1}, ..., s_{k-L}]`` with s_{k-1} as the least
    significant base-M digit, so at the first trellis slot the index order is
    the lexicographic order of (s_1, ..., s_L).
    """
    m = constellation.cardinality
    idx = np.arange(m**L)
    out = np.empty((m**L, 4 * L))
    for j in range(L):
        digit = (idx // m**j) % m
        out[:, 4 * j : 4 * j + 4] = constellation.points[digit]
    return out


def next_state_table(m: int, L: int) -> NDArray[np.intp]:
    """next[x, s]: state after emitting symbol index s from state x."""
    if L == 0:
        return np.zeros((1, m), dtype=np.intp)
    x = np.arange(m**L)[:, None]
    return (x % m ** (L - 1)) * m + np.arange(m)[None, :]


def _cholesky_with_loading(
    sigma: NDArray, reg: Regularization
) -> tuple[NDArray, NDArray, NDArray[np.bool_]]:
    """Cholesky factors of a stack, loading the diagonal of any failing matrix.

    Returns (factors, possibly-loaded covariances, loaded mask).
    """
    sigma = np.array(sigma, dtype=np.float64, copy=True)
    loaded = np.zeros(sigma.shape[0], dtype=bool)
    try:
        return np.linalg.cholesky(sigma), sigma, loaded
    except np.linalg.LinAlgError:
        pass
    chol = np.empty_like(sigma)
    eye = np.eye(sigma.shape[-1])
    for i in range(sigma.shape[0]):
        try:
            chol[i] = np.linalg.cholesky(sigma[i])
            continue
        except np.linalg.LinAlgError:
            loaded[i] = True
        lam = reg.load(sigma[i])
        for _ in range(reg.max_retries):
            try:
                sigma[i] = sigma[i] + lam * eye
                chol[i] = np.linalg.cholesky(sigma[i])
                break
            except np.linalg.LinAlgError:
                lam *= 10
        else:
            raise np.linalg.LinAlgError(f"covariance at slot index {i} could not be regularized")
    return chol, sigma, loaded


class BranchMetrics:
    """Per-slot branch metric tables built from WindowStats.

    ``table(i)`` returns psi for every (state, symbol) pair at the i-th slot of
    ``stats`` as an (M^L, M) array; ``for_states(i, x)`` evaluates psi for all
    symbols given explicit state vectors (used by decision feedback).
    """

    def __init__(
        self,
        stats: WindowStats,
        constellation: Constellation,
        include_logdet: bool = True,
        regularization: Regularization | None = None,
    ):
        reg = regularization or Regularization()
        self.stats = stats
        self.constellation = constellation
        self.L = stats.L
        _, sigma, loaded = _cholesky_with_loading(stats.sigma_y, reg)

        if self.L == 0:
            cond_cov = sigma
            self._gain = None
        else:
            sxx = sigma[:, 4:, 4:]
            sxs = sigma[:, 4:, :4]
            # gain A with E[s|x] = mu_s + A (x - mu_x); A' = Sxx^-1 Sxs
            a_t = np.linalg.solve(sxx, sxs)
            self._gain = np.swapaxes(a_t, -1, -2)
            cond_cov = sigma[:, :4, :4] - sigma[:, :4, 4:] @ a_t
            cond_cov = 0.5 * (cond_cov + np.swapaxes(cond_cov, -1, -2))
        chol_c, _, loaded_c = _cholesky_with_loading(cond_cov, reg)
        # one event per slot whose joint or conditional covariance needed loading
        self.loaded = loaded | loaded_c
        self.regularization_events = int(self.loaded.sum())
        # inverse triangular factor: psi = || W (s - m) ||^2
        eye = np.broadcast_to(np.eye(4), chol_c.shape)
        self._whiten = np.linalg.solve(chol_c, eye)
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol_c, axis1=-2, axis2=-1)), axis=-1)
        self._logdet = logdet if include_logdet else np.zeros_like(logdet)
        self._mu_s = stats.mu_y[:, :4]
        self._mu_x = stats.mu_y[:, 4:]
        self._ws = np.einsum("sij,mj->smi", self._whiten, constellation.points)
        self._states = state_vectors(constellation, self.L) if self.L else None

    def __len__(self) -> int:
        return len(self.stats)

    def _cond_means(self, i: int, x: NDArray) -> NDArray:
        if self.L == 0:
            return np.broadcast_to(self._mu_s[i], (x.shape[0], 4))
        return self._mu_s[i] + (x - self._mu_x[i]) @ self._gain[i].T

    def for_states(self, i: int, x: NDArray) -> NDArray[np.float64]:
        """psi at slot i for state vectors ``x`` (B, 4L) and every symbol: (B, M)."""
        m_w = self._cond_means(i, x) @ self._whiten[i].T
        d = self._ws[i][None, :, :] - m_w[:, None, :]
        return np.einsum("bmi,bmi->bm", d, d) + self._logdet[i]

    def table(self, i: int) -> NDArray[np.float64]:
        if self.L == 0:
            return self.for_states(i, np.zeros((1, 0)))
        return self.for_states(i, self._states)


def branch_metric(
    s: NDArray,
    x: NDArray,
    stats: WindowStats,
    constellation: Constellation,
    include_logdet: bool = True,
    regularization: Regularization | None = None,
) -> float:
    """psi(s, x) for one hypothesis at a single-slot ``stats``.

    ``s`` is a 4-vector, ``x`` the stacked previous symbols (4L,).  Hypotheses
    need not be constellation points.
    """
    if len(stats) != 1:
        raise ValueError("branch_metric expects single-slot stats")
    bm = BranchMetrics(stats, constellation, include_logdet, regularization)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    m_w = bm._cond_means(0, x) @ bm._whiten[0].T
    d = bm._whiten[0] @ np.asarray(s, dtype=np.float64) - m_w[0]
    return float(d @ d + bm._logdet[0])
