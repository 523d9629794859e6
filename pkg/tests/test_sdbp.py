import warnings

import numpy as np
import pytest

from stochdbp.channel import AliasingWarning, LinkConfig, simulate_link
from stochdbp.modem import random_symbols
from stochdbp.sdbp import (
    ParticleCloud,
    backpropagate,
    dbp_backpropagate,
    particle_generators,
    stack_symbol_clouds,
    to_symbol_cloud,
)
from stochdbp.signal import DualPolWaveform


@pytest.fixture(scope="module")
def link(pulse, qpsk):
    cfg = LinkConfig(spans=3, launch_power=2.0)
    s = random_symbols(qpsk, 64, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AliasingWarning)
        out = simulate_link(s, cfg, pulse, 2)
    return cfg, s, out


class TestParticleCloud:
    def test_shapes(self):
        ParticleCloud(np.zeros((3, 2, 8), complex), "waveform", 1.0)
        ParticleCloud(np.zeros((3, 8, 4)), "symbols")
        with pytest.raises(ValueError):
            ParticleCloud(np.zeros((3, 8, 3)), "symbols")
        with pytest.raises(ValueError):
            ParticleCloud(np.zeros((0, 2, 8), complex), "waveform", 1.0)

    def test_accessors(self):
        c = ParticleCloud(np.arange(24.0).reshape(2, 3, 4), "symbols")
        assert c.n_particles == 2
        assert c.num_symbols == 3
        np.testing.assert_array_equal(c.particle(1), np.arange(12.0, 24.0).reshape(3, 4))
        w = ParticleCloud(np.ones((2, 2, 5), complex), "waveform", 7.0)
        assert isinstance(w.particle(0), DualPolWaveform)
        with pytest.raises(AttributeError):
            w.num_symbols

    def test_stack(self):
        a = ParticleCloud(np.zeros((2, 3, 4)), "symbols")
        b = ParticleCloud(np.ones((3, 3, 4)), "symbols")
        assert stack_symbol_clouds([a, b]).n_particles == 5


class TestGenerators:
    def test_independent_and_reproducible(self):
        a = [g.standard_normal() for g in particle_generators(7, 4)]
        b = [g.standard_normal() for g in particle_generators(7, 4)]
        assert a == b
        assert len(set(a)) == 4

    def test_prefix_stable(self):
        # particle i's stream does not depend on how many particles exist
        a = [g.standard_normal() for g in particle_generators(7, 3)]
        b = [g.standard_normal() for g in particle_generators(7, 6)]
        assert a == b[:3]


class TestBackpropagate:
    def test_single_noiseless_particle_is_dbp(self, link):
        cfg, _, out = link
        cloud = backpropagate(out.r, cfg, 1, noiseless=True)
        np.testing.assert_array_equal(cloud.data[0], dbp_backpropagate(out.r, cfg).samples)

    def test_noiseless_channel_recovers_waveform(self, pulse, qpsk):
        cfg = LinkConfig(spans=2, noise=False)
        out = simulate_link(random_symbols(qpsk, 64, 3), cfg, pulse, None, rx_filter=False)
        e = backpropagate(out.r, cfg, 1, noiseless=True).data[0]
        tx = out.transmitted.samples
        assert np.linalg.norm(e - tx) / np.linalg.norm(tx) < 1e-6

    def test_chunking_invariant(self, link):
        cfg, _, out = link
        a = backpropagate(out.r, cfg, 6, seed=11).data
        b = backpropagate(out.r, cfg, 6, seed=11, chunk_size=4).data
        c = backpropagate(out.r, cfg, 6, seed=11, chunk_size=1).data
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_particles_distinct(self, link):
        cfg, _, out = link
        d = backpropagate(out.r, cfg, 5, seed=1).data
        flat = d.reshape(5, -1)
        for i in range(5):
            for j in range(i):
                assert not np.allclose(flat[i], flat[j])

    def test_mean_near_dbp(self, pulse, qpsk):
        # low power keeps the backward propagation close to linear, so the
        # particle mean is the deterministic path up to Monte Carlo error
        cfg = LinkConfig(spans=2, launch_power=-8.0)
        out = simulate_link(random_symbols(qpsk, 32, 4), cfg, pulse, 5)
        n_p = 500
        cloud = backpropagate(out.r, cfg, n_p, seed=6)
        ref = dbp_backpropagate(out.r, cfg).samples
        mean = cloud.data.mean(axis=0)
        sd = cloud.data.real.std(axis=0, ddof=1)
        z = np.abs(mean.real - ref.real) / (sd / np.sqrt(n_p))
        # per-sample 3 sigma, allowing the expected 0.27% exceedances
        assert np.mean(z > 3) < 0.01
        assert np.abs(np.mean((mean.real - ref.real) / (sd / np.sqrt(n_p)))) < 3 / np.sqrt(z.size)

    def test_rejects_zero_particles(self, link):
        cfg, _, out = link
        with pytest.raises(ValueError):
            backpropagate(out.r, cfg, 0)


class TestSymbolCloud:
    def test_identical_particles(self, link, pulse):
        cfg, _, out = link
        data = np.broadcast_to(out.r.samples, (3,) + out.r.samples.shape).copy()
        sc = to_symbol_cloud(ParticleCloud(data, "waveform", out.r.sample_rate), pulse, 32, 64, 1e-3)
        assert sc.data.shape == (3, 64, 4)
        np.testing.assert_array_equal(sc.data[0], sc.data[2])

    def test_back_to_back_particle(self, pulse, qpsk):
        cfg = LinkConfig(spans=1, noise=False)
        s = random_symbols(qpsk, 40, 8)
        out = simulate_link(s, cfg, pulse, None)
        cloud = backpropagate(out.r, cfg, 1, noiseless=True)
        sc = to_symbol_cloud(cloud, pulse, out.timing_offset, 40, cfg.launch_power_w)
        np.testing.assert_allclose(sc.data[0], s, atol=1e-2)

    def test_shape_contract(self, link, pulse):
        cfg, _, out = link
        cloud = backpropagate(out.r, cfg, 7, seed=0)
        sc = to_symbol_cloud(cloud, pulse, out.timing_offset, 64, cfg.launch_power_w)
        assert (sc.n_particles, sc.num_symbols) == (7, 64)
        with pytest.raises(ValueError):
            to_symbol_cloud(sc, pulse, 32, 64, 1e-3)
