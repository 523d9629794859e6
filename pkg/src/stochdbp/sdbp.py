"""Particle backpropagation of the received waveform.

Each particle is a replica of the received waveform that is propagated
backwards through the link, span by span, with an independent amplifier
noise realization injected at every inverse amplifier.  After the last span
the particles are matched-filtered and sampled, which yields a cloud of
candidate symbol sequences.  With one particle and no noise the procedure is
ordinary digital backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from numpy.typing import NDArray

from .channel import LinkConfig, LinkModel, edfa_inverse_particle, fbg_dcm, link_step_plan, ssfm
from .signal import DualPolWaveform, PulseShape, matched_filter_sample

__all__ = [
    "ParticleCloud",
    "particle_generators",
    "backpropagate",
    "dbp_backpropagate",
    "to_symbol_cloud",
]

SeedLike = int | np.random.SeedSequence | np.random.Generator | None


@dataclass(frozen=True)
class ParticleCloud:
    """Equally weighted particles.

    ``data`` has shape (Np, 2, n) complex at the waveform stage and
    (Np, K, 4) real at the symbol stage.
    """

    data: NDArray
    stage: Literal["waveform", "symbols"]
    sample_rate: float | None = None

    def __post_init__(self):
        if self.data.shape[0] < 1:
            raise ValueError("a particle cloud needs at least one particle")
        if self.stage == "waveform" and (self.data.ndim != 3 or self.data.shape[1] != 2):
            raise ValueError(f"waveform cloud must be (Np, 2, n), got {self.data.shape}")
        if self.stage == "symbols" and (self.data.ndim != 3 or self.data.shape[2] != 4):
            raise ValueError(f"symbol cloud must be (Np, K, 4), got {self.data.shape}")

    @property
    def n_particles(self) -> int:
        return self.data.shape[0]

    @property
    def num_symbols(self) -> int:
        if self.stage != "symbols":
            raise AttributeError("num_symbols is defined for symbol clouds only")
        return self.data.shape[1]

    def particle(self, i: int) -> DualPolWaveform | NDArray:
        if self.stage == "waveform":
            return DualPolWaveform(self.data[i], self.sample_rate)
        return self.data[i]


def particle_generators(seed: SeedLike, n_particles: int) -> list[np.random.Generator]:
    """One independent generator per particle, derived deterministically from ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed.spawn(n_particles)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seed.spawn(n_particles)]


def backpropagate(
    r: DualPolWaveform,
    cfg: LinkConfig,
    n_particles: int = 500,
    seed: SeedLike = None,
    noiseless: bool = False,
    chunk_size: int | None = None,
    model: LinkModel | None = None,
) -> ParticleCloud:
    """Backpropagate ``n_particles`` noisy replicas of ``r`` through all spans.

    Particles are advanced span-synchronously in chunks of ``chunk_size``
    (default: all at once).  Every particle owns its generator, so the result
    does not depend on the chunking.
    """
    if n_particles < 1:
        raise ValueError(f"n_particles must be >= 1, got {n_particles}")
    if model is None:
        model = LinkModel(cfg, r.length_samples, r.sample_rate)
    gens = None if noiseless else particle_generators(seed, n_particles)
    chunk = n_particles if chunk_size is None else max(1, int(chunk_size))

    out = np.empty((n_particles, 2, r.length_samples), dtype=np.complex128)
    for start in range(0, n_particles, chunk):
        stop = min(start + chunk, n_particles)
        e = np.broadcast_to(r.samples, (stop - start,) + r.samples.shape).copy()
        sub = None if gens is None else gens[start:stop]
        for _ in range(cfg.spans):
            e = model.inverse_span(e, sub)
        out[start:stop] = e
    return ParticleCloud(out, "waveform", r.sample_rate)


def dbp_backpropagate(r: DualPolWaveform, cfg: LinkConfig) -> DualPolWaveform:
    """Deterministic backpropagation assembled from the per-block inverse operators."""
    plan = link_step_plan(cfg)
    e = r
    for _ in range(cfg.spans):
        if cfg.dcm is not None:
            e = edfa_inverse_particle(e, cfg.edfa2, None)
            e = fbg_dcm(e, cfg.smf, cfg.dcm.insertion_loss, direction="inverse")
        e = edfa_inverse_particle(e, cfg.edfa1, None)
        e = ssfm(e, cfg.smf, plan, direction="inverse", manakov_factor=cfg.manakov_factor)
    return e


def to_symbol_cloud(
    cloud: ParticleCloud,
    pulse: PulseShape,
    timing_offset: int,
    num_symbols: int,
    power: float,
) -> ParticleCloud:
    """Matched-filter every particle and sample at the symbol rate."""
    if cloud.stage != "waveform":
        raise ValueError("to_symbol_cloud expects a waveform-stage cloud")
    sym = matched_filter_sample(cloud.data, pulse, timing_offset, num_symbols, power)
    return ParticleCloud(sym, "symbols")


def stack_symbol_clouds(clouds: Sequence[ParticleCloud]) -> ParticleCloud:
    return ParticleCloud(np.concatenate([c.data for c in clouds]), "symbols")
