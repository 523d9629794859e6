"""Dual-polarization constellations, symbol generation, slicing and SER."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "Constellation",
    "get_constellation",
    "random_symbols",
    "hard_decide",
    "ser",
    "symbol_indices",
]


@dataclass(frozen=True)
class Constellation:
    """Four-dimensional alphabet built as the product of a per-polarization alphabet.

    ``points[i]`` is ordered lexicographically by ``(index_x, index_y)`` where the
    per-polarization points are themselves sorted by (real, imag).  That order is
    the tie-break order used by every detector.
    """

    name: str
    per_pol_points: NDArray[np.complex128]
    points: NDArray[np.float64]

    @property
    def cardinality(self) -> int:
        return self.points.shape[0]

    @property
    def per_pol_size(self) -> int:
        return self.per_pol_points.size

    @property
    def min_distance(self) -> float:
        d = np.abs(self.per_pol_points[:, None] - self.per_pol_points[None, :])
        return float(d[d > 0].min())


def _build(name: str, alphabet: NDArray[np.complex128]) -> Constellation:
    alphabet = alphabet / np.sqrt(np.mean(np.abs(alphabet) ** 2))
    order = np.lexsort((alphabet.imag, alphabet.real))
    alphabet = alphabet[order]
    m = alphabet.size
    ix, iy = np.divmod(np.arange(m * m), m)
    pts = np.column_stack(
        [alphabet[ix].real, alphabet[ix].imag, alphabet[iy].real, alphabet[iy].imag]
    )
    alphabet.setflags(write=False)
    pts.setflags(write=False)
    return Constellation(name, alphabet, pts)


@lru_cache(maxsize=None)
def get_constellation(name: str) -> Constellation:
    """Look up a constellation by config name: ``"qpsk"`` or ``"16qam"``."""
    key = name.lower()
    if key == "qpsk":
        levels = np.array([-1.0, 1.0])
    elif key == "16qam":
        levels = np.array([-3.0, -1.0, 1.0, 3.0])
    else:
        raise ValueError(f"unknown constellation {name!r}; expected 'qpsk' or '16qam'")
    re, im = np.meshgrid(levels, levels, indexing="ij")
    return _build(key, (re + 1j * im).ravel())


def random_symbols(
    constellation: Constellation, num_symbols: int, rng: np.random.Generator | int | None
) -> NDArray[np.float64]:
    """Draw K i.i.d. uniform 4D symbols; returns shape (K, 4)."""
    if num_symbols < 1:
        raise ValueError(f"num_symbols must be >= 1, got {num_symbols}")
    rng = np.random.default_rng(rng)
    idx = rng.integers(0, constellation.cardinality, size=num_symbols)
    return constellation.points[idx].copy()


def symbol_indices(points: NDArray, constellation: Constellation) -> NDArray[np.intp]:
    """Index of the nearest constellation point for each row of ``points`` (..., 4).

    Ties resolve to the lowest index.
    """
    p = np.asarray(points, dtype=np.float64)
    flat = p.reshape(-1, 4)
    omega = constellation.points
    # ||p - w||^2 up to the common ||p||^2 term; exact arithmetic on the
    # difference keeps midpoint ties exact
    d = np.empty((flat.shape[0], omega.shape[0]))
    for start in range(0, flat.shape[0], 4096):
        chunk = flat[start : start + 4096]
        d[start : start + 4096] = np.sum((chunk[:, None, :] - omega[None, :, :]) ** 2, axis=-1)
    return np.argmin(d, axis=1).reshape(p.shape[:-1])


def hard_decide(points: NDArray, constellation: Constellation) -> NDArray[np.float64]:
    """Minimum-Euclidean-distance slicing onto the 4D constellation."""
    return constellation.points[symbol_indices(points, constellation)]


def ser(truth: NDArray, decided: NDArray) -> float:
    """Symbol error rate over joint 4D symbols.

    A slot is an error when any of its four components differ, so a single
    wrong polarization counts as one symbol error.
    """
    t = np.asarray(truth)
    d = np.asarray(decided)
    if t.shape != d.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {d.shape}")
    if t.shape[0] == 0:
        raise ValueError("empty sequences")
    return float(np.mean(np.any(t != d, axis=-1)))
