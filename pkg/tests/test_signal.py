import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochdbp.signal import (
    DualPolWaveform,
    complex_to_symbols,
    from_spectrum,
    ideal_lowpass,
    make_rrc_pulse,
    matched_filter_sample,
    shape,
    symbols_to_complex,
    to_spectrum,
)

# closed-form RRC (0.25, 16, 4) evaluated independently, unit energy
RRC_CENTER = [
    0.3109079073746249,
    0.47159661848840434,
    0.5341707532507458,
    0.47159661848840434,
    0.3109079073746249,
]
RRC_EDGE = -0.002526343711613686
# tap at t = 1/(4 beta) = 1 symbol, where the general formula is 0/0
RRC_SINGULAR = -0.03211952854864955
# largest |ISI| of RRC*RRC at nonzero symbol lags, truncation-limited
RRC_MAX_ISI = 0.0005408238772847421
RRC_SUM_ABS_ISI = 0.004508876884153003


class TestRrcPulse:
    def test_tap_count_and_symmetry(self, pulse):
        assert pulse.num_taps == 65
        assert pulse.delay == 32
        np.testing.assert_array_equal(pulse.taps, pulse.taps[::-1])
        np.testing.assert_allclose(np.sum(pulse.taps**2), 1.0, rtol=1e-14)

    def test_oracle_values(self, pulse):
        np.testing.assert_allclose(pulse.taps[30:35], RRC_CENTER, rtol=1e-13)
        np.testing.assert_allclose(pulse.taps[[0, 64]], RRC_EDGE, rtol=1e-12)
        np.testing.assert_allclose(pulse.taps[[28, 36]], RRC_SINGULAR, rtol=1e-12)

    def test_rolloff_zero_is_sinc(self):
        p = make_rrc_pulse(0.0, 16, 4)
        t = (np.arange(65) - 32) / 4
        ref = np.sinc(t)
        np.testing.assert_allclose(p.taps, ref / np.linalg.norm(ref), atol=1e-15)
        assert np.argmax(p.taps) == 32

    def test_symbol_spaced_autocorrelation(self, pulse):
        ac = np.convolve(pulse.taps, pulse.taps[::-1])[64::4]
        assert ac[0] == pytest.approx(1.0, abs=1e-14)
        isi = np.abs(ac[1:])
        assert isi.max() < 1e-3
        assert isi.max() == pytest.approx(RRC_MAX_ISI, rel=1e-9)

    @pytest.mark.parametrize(
        "args", [(-0.1, 16, 4), (1.5, 16, 4), (0.25, 0, 4), (0.25, 15, 4), (0.25, 16, 1)]
    )
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            make_rrc_pulse(*args)


class TestWaveform:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            DualPolWaveform(np.zeros((3, 8), complex), 1.0)
        with pytest.raises(ValueError):
            DualPolWaveform(np.zeros((2, 0), complex), 1.0)
        with pytest.raises(ValueError):
            DualPolWaveform(np.zeros((2, 8), complex), 0.0)
        with pytest.raises(ValueError):
            DualPolWaveform(np.full((2, 8), np.nan, complex), 1.0)

    def test_read_only(self):
        w = DualPolWaveform(np.ones((2, 4), complex), 1.0)
        with pytest.raises(ValueError):
            w.samples[0, 0] = 2.0

    def test_layout_round_trip(self, rng):
        s = rng.standard_normal((10, 4))
        c = symbols_to_complex(s)
        assert c.shape == (2, 10)
        np.testing.assert_array_equal(c[0], s[:, 0] + 1j * s[:, 1])
        np.testing.assert_array_equal(c[1], s[:, 2] + 1j * s[:, 3])
        np.testing.assert_array_equal(complex_to_symbols(c), s)


class TestShape:
    def test_impulse_response(self, pulse):
        s = np.zeros((8, 4))
        s[0, 0] = 1.0
        w = shape(s, pulse, 14e9, power=2 / 4)  # amplitude scale sqrt(P sps / 2) = 1
        np.testing.assert_allclose(w.x[:65].real, pulse.taps, atol=1e-15)
        np.testing.assert_allclose(w.y, 0.0)

    def test_two_impulses_superpose(self, pulse):
        s = np.zeros((8, 4))
        s[0, 0] = 1.0
        s[3, 3] = -2.0
        w = shape(s, pulse, 14e9, power=0.5)
        ref_x = np.zeros(w.length_samples)
        ref_x[:65] = pulse.taps
        ref_y = np.zeros(w.length_samples, complex)
        ref_y[12:77] = -2j * pulse.taps
        np.testing.assert_allclose(w.x, ref_x, atol=1e-15)
        np.testing.assert_allclose(w.y, ref_y, atol=1e-15)

    def test_length_and_rate(self, pulse, qpsk, rng):
        from stochdbp.modem import random_symbols

        w = shape(random_symbols(qpsk, 4096, rng), pulse, 56e9)
        assert w.length_samples == 4096 * 4 + 64
        assert w.sample_rate == 224e9

    def test_launch_power(self, pulse, qpsk, rng):
        from stochdbp.modem import random_symbols

        k = 4096
        w = shape(random_symbols(qpsk, k, rng), pulse, 14e9, power=2e-3)
        data = w.samples[:, pulse.delay : pulse.delay + 4 * k]
        p = np.mean(np.sum(np.abs(data) ** 2, axis=0))
        assert p == pytest.approx(2e-3, rel=0.02)

    @settings(max_examples=25, deadline=None)
    @given(
        a=st.floats(-3, 3),
        b=st.floats(-3, 3),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_linearity(self, pulse, a, b, seed):
        r = np.random.default_rng(seed)
        s1, s2 = r.standard_normal((2, 12, 4))
        lhs = shape(a * s1 + b * s2, pulse, 1.0).samples
        rhs = a * shape(s1, pulse, 1.0).samples + b * shape(s2, pulse, 1.0).samples
        scale = max(np.abs(rhs).max(), 1e-300)
        assert np.abs(lhs - rhs).max() <= 1e-12 * scale + 1e-300


class TestMatchedFilter:
    def test_isolated_symbol(self, pulse, qpsk):
        for i in range(qpsk.cardinality):
            s = np.zeros((33, 4))
            s[16] = qpsk.points[i]
            out = matched_filter_sample(shape(s, pulse, 14e9), pulse, pulse.delay, 33)
            np.testing.assert_allclose(out, s, atol=1e-3)

    def test_zero_waveform(self, pulse):
        w = DualPolWaveform(np.zeros((2, 200), complex), 56e9)
        np.testing.assert_array_equal(matched_filter_sample(w, pulse, 32, 10), 0.0)

    def test_back_to_back_sequence(self, pulse, qpsk):
        from stochdbp.modem import hard_decide, random_symbols

        s = random_symbols(qpsk, 64, np.random.default_rng(3))
        out = matched_filter_sample(shape(s, pulse, 14e9), pulse, pulse.delay, 64)
        # truncation ISI bound: sum of |ISI| times the largest component
        bound = RRC_SUM_ABS_ISI * np.abs(qpsk.points).max()
        assert np.abs(out - s).max() <= bound
        np.testing.assert_array_equal(hard_decide(out, qpsk), s)

    def test_batched(self, pulse, rng):
        s = rng.standard_normal((3, 20, 4))
        waves = np.stack([shape(x, pulse, 1.0).samples for x in s])
        out = matched_filter_sample(waves, pulse, 32, 20)
        assert out.shape == (3, 20, 4)
        single = matched_filter_sample(waves[1], pulse, 32, 20)
        np.testing.assert_allclose(out[1], single, rtol=0, atol=1e-14)

    def test_out_of_range(self, pulse):
        w = DualPolWaveform(np.zeros((2, 100), complex), 56e9)
        with pytest.raises(IndexError):
            matched_filter_sample(w, pulse, 32, 30)
        with pytest.raises(IndexError):
            matched_filter_sample(w, pulse, -1, 2)


class TestSpectrum:
    def test_delta_is_flat(self):
        x = np.zeros((2, 64), complex)
        x[:, 0] = 1.0
        X = to_spectrum(x)
        np.testing.assert_allclose(np.abs(X), 1 / 8, rtol=1e-14)

    def test_round_trip_and_parseval(self, rng):
        x = rng.standard_normal((2, 1000)) + 1j * rng.standard_normal((2, 1000))
        X = to_spectrum(x)
        back = from_spectrum(X)
        assert np.linalg.norm(back - x) / np.linalg.norm(x) < 1e-12
        e_t = np.sum(np.abs(x) ** 2)
        e_f = np.sum(np.abs(X) ** 2)
        assert abs(e_t - e_f) / e_t < 1e-10


class TestLowpass:
    fs = 56e9

    def tone(self, f, n=560):
        t = np.arange(n) / self.fs
        s = np.exp(2j * np.pi * f * t)
        return DualPolWaveform(np.stack([s, 0.5 * s]), self.fs)

    def test_in_band_tone(self):
        w = self.tone(5e9)
        np.testing.assert_allclose(ideal_lowpass(w, 14e9).samples, w.samples, atol=1e-12)

    def test_band_edge_passes(self):
        w = self.tone(14e9)
        np.testing.assert_allclose(ideal_lowpass(w, 14e9).samples, w.samples, atol=1e-12)

    def test_out_of_band_tone(self):
        w = self.tone(-20e9)
        np.testing.assert_allclose(ideal_lowpass(w, 14e9).samples, 0.0, atol=1e-12)

    def test_white_noise_power(self):
        r = np.random.default_rng(7)
        n, reps = 512, 2000
        x = (r.standard_normal((reps, 2, n)) + 1j * r.standard_normal((reps, 2, n))) / np.sqrt(2)
        f = np.fft.fftfreq(n, 1 / self.fs)
        mask = np.abs(f) <= 14e9
        y = np.fft.ifft(np.fft.fft(x) * mask)
        per = np.mean(np.abs(y) ** 2, axis=-1).ravel()
        # the package filter on one realization equals the reference mask
        w = ideal_lowpass(DualPolWaveform(x[0], self.fs), 14e9)
        np.testing.assert_allclose(w.samples, y[0], atol=1e-12)
        # passed fraction of DFT bins; 2 BW / fs up to the shared edge bin
        expected = mask.sum() / n
        assert abs(expected - 2 * 14e9 / self.fs) <= 1 / n
        sigma = per.std(ddof=1) / np.sqrt(per.size)
        assert abs(per.mean() - expected) < 3 * sigma

    def test_above_nyquist(self):
        with pytest.raises(ValueError):
            ideal_lowpass(self.tone(1e9), 30e9)
