"""Discrete-time dual-polarization baseband primitives.

Symbols are handled as real arrays of shape ``(K, 4)`` laid out as
``[Re s_x, Im s_x, Re s_y, Im s_y]``.  Waveforms are complex arrays whose
second-to-last axis is the polarization (x, y); any leading axes are batch
axes (e.g. particles), so every kernel here also works on particle stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
from numpy.typing import NDArray

__all__ = [
    "DualPolWaveform",
    "PulseShape",
    "make_rrc_pulse",
    "shape",
    "matched_filter_sample",
    "to_spectrum",
    "from_spectrum",
    "angular_frequency",
    "lowpass_mask",
    "ideal_lowpass",
    "symbols_to_complex",
    "complex_to_symbols",
    "amplitude_scale",
]


@dataclass(frozen=True)
class DualPolWaveform:
    """Oversampled complex envelope on two polarizations, in sqrt(W)."""

    samples: NDArray[np.complex128]
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 2 or samples.shape[0] != 2:
            raise ValueError(f"samples must have shape (2, n), got {samples.shape}")
        if samples.shape[1] < 1:
            raise ValueError("waveform must contain at least one sample")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def x(self) -> NDArray[np.complex128]:
        return self.samples[0]

    @property
    def y(self) -> NDArray[np.complex128]:
        return self.samples[1]

    @property
    def length_samples(self) -> int:
        return self.samples.shape[1]

    def power(self) -> float:
        """Mean total power over both polarizations, in W."""
        return float(np.mean(np.sum(np.abs(self.samples) ** 2, axis=0)))

    def with_samples(self, samples: NDArray) -> "DualPolWaveform":
        return DualPolWaveform(samples, self.sample_rate)


@dataclass(frozen=True)
class PulseShape:
    taps: NDArray[np.float64]
    samples_per_symbol: int
    rolloff: float
    span_symbols: int

    @property
    def num_taps(self) -> int:
        return self.taps.size

    @property
    def delay(self) -> int:
        """Group delay of the filter in samples (index of the center tap)."""
        return (self.taps.size - 1) // 2


def make_rrc_pulse(rolloff: float, span_symbols: int, samples_per_symbol: int) -> PulseShape:
    """Truncated root-raised-cosine impulse response with unit energy.

    Args:
        rolloff: Excess-bandwidth factor in [0, 1].
        span_symbols: Truncation length in symbol periods (even, >= 2).
        samples_per_symbol: Oversampling factor (>= 2).

    Returns:
        PulseShape with ``span_symbols * samples_per_symbol + 1`` taps.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ValueError(f"rolloff must lie in [0, 1], got {rolloff}")
    if span_symbols < 2 or span_symbols % 2:
        raise ValueError(f"span_symbols must be even and >= 2, got {span_symbols}")
    if samples_per_symbol < 2:
        raise ValueError(f"samples_per_symbol must be >= 2, got {samples_per_symbol}")

    n = span_symbols * samples_per_symbol
    # time in symbol periods, exactly symmetric about the center tap
    t = (np.arange(n + 1) - n // 2) / samples_per_symbol
    beta = float(rolloff)
    h = np.empty_like(t)

    at_zero = t == 0.0
    if beta > 0:
        at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta), rtol=0.0, atol=1e-12)
    else:
        at_sing = np.zeros_like(at_zero)
    general = ~(at_zero | at_sing)

    tg = t[general]
    num = np.sin(np.pi * tg * (1 - beta)) + 4 * beta * tg * np.cos(np.pi * tg * (1 + beta))
    den = np.pi * tg * (1 - (4 * beta * tg) ** 2)
    h[general] = num / den
    h[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    if beta > 0:
        h[at_sing] = (beta / np.sqrt(2.0)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
            + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
        )

    # enforce bit-exact symmetry before normalizing
    h = 0.5 * (h + h[::-1])
    h /= np.sqrt(np.sum(h**2))
    h.setflags(write=False)
    return PulseShape(h, int(samples_per_symbol), beta, int(span_symbols))


def symbols_to_complex(symbols: NDArray) -> NDArray[np.complex128]:
    """(..., K, 4) real symbols -> (..., 2, K) complex per polarization."""
    s = np.asarray(symbols, dtype=np.float64)
    c = s[..., 0::2] + 1j * s[..., 1::2]
    return np.swapaxes(c, -1, -2)


def complex_to_symbols(c: NDArray) -> NDArray[np.float64]:
    """(..., 2, K) complex -> (..., K, 4) real symbols."""
    c = np.swapaxes(np.asarray(c), -1, -2)
    out = np.empty(c.shape[:-1] + (4,), dtype=np.float64)
    out[..., 0::2] = c.real
    out[..., 1::2] = c.imag
    return out


def amplitude_scale(power: float, samples_per_symbol: int) -> float:
    """Field amplitude mapping unit-energy symbols to total launch power ``power`` (W).

    Each polarization carries half the power; with unit-energy taps the mean
    power per polarization of the shaped signal is 1/sps before scaling.
    """
    return float(np.sqrt(power * samples_per_symbol / 2.0))


def shape(
    symbols: NDArray, pulse: PulseShape, symbol_rate: float, power: float = 1e-3
) -> DualPolWaveform:
    """Pulse-shape a (K, 4) symbol block into a dual-polarization waveform.

    The output is the full convolution of the upsampled symbols with the
    pulse, so it has ``K*sps + span*sps`` samples and the first symbol's
    pulse is centered at sample ``pulse.delay``.  The amplitude is scaled so
    that the mean power inside the data region equals ``power`` when the
    symbols have unit average energy per polarization.
    """
    s = np.asarray(symbols, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 4 or s.shape[0] < 1:
        raise ValueError(f"symbols must have shape (K, 4) with K >= 1, got {s.shape}")
    sps = pulse.samples_per_symbol
    k = s.shape[0]
    up = np.zeros((2, k * sps), dtype=np.complex128)
    up[:, ::sps] = symbols_to_complex(s)
    out = np.stack([np.convolve(up[p], pulse.taps) for p in range(2)])
    out *= amplitude_scale(power, sps)
    return DualPolWaveform(out, symbol_rate * sps)


def matched_filter_sample(
    wave: DualPolWaveform | NDArray,
    pulse: PulseShape,
    timing_offset: int,
    num_symbols: int,
    power: float = 1e-3,
) -> NDArray[np.float64]:
    """Matched-filter and sample at the symbol rate.

    Args:
        wave: A waveform, or a complex array of shape (..., 2, n).
        pulse: Transmit pulse; the receive filter is its time reverse.
        timing_offset: Sample index where the first symbol's pulse is centered.
        num_symbols: Number of symbols K to extract.
        power: Launch power used at the transmitter, to undo amplitude scaling.

    Returns:
        Real array of shape (..., K, 4).
    """
    samples = wave.samples if isinstance(wave, DualPolWaveform) else np.asarray(wave)
    sps = pulse.samples_per_symbol
    n = samples.shape[-1]
    last = timing_offset + (num_symbols - 1) * sps
    if timing_offset < 0 or num_symbols < 1 or last >= n:
        raise IndexError(
            f"sampling instants [{timing_offset}, {last}] fall outside waveform of {n} samples"
        )
    c = pulse.delay
    pad = [(0, 0)] * (samples.ndim - 1) + [(c, c)]
    padded = np.pad(samples, pad)
    # correlation window for symbol k starts at padded index timing_offset + k*sps
    win = np.lib.stride_tricks.sliding_window_view(padded, pulse.num_taps, axis=-1)
    win = win[..., timing_offset : last + 1 : sps, :]
    y = win @ pulse.taps[::-1]
    return complex_to_symbols(y / amplitude_scale(power, sps))


def to_spectrum(samples: NDArray, workers: int | None = None) -> NDArray[np.complex128]:
    """Unitary DFT along the last axis (Parseval holds exactly)."""
    return scipy.fft.fft(samples, axis=-1, norm="ortho", workers=workers)


def from_spectrum(spectrum: NDArray, workers: int | None = None) -> NDArray[np.complex128]:
    return scipy.fft.ifft(spectrum, axis=-1, norm="ortho", workers=workers)


def angular_frequency(n: int, sample_rate: float) -> NDArray[np.float64]:
    """Angular frequency (rad/s) of each DFT bin in standard FFT order."""
    return 2.0 * np.pi * scipy.fft.fftfreq(n, d=1.0 / sample_rate)


def lowpass_mask(n: int, sample_rate: float, one_sided_bandwidth: float) -> NDArray[np.bool_]:
    if one_sided_bandwidth > sample_rate / 2:
        raise ValueError(
            f"bandwidth {one_sided_bandwidth:g} Hz exceeds Nyquist {sample_rate / 2:g} Hz"
        )
    if one_sided_bandwidth < 0:
        raise ValueError("bandwidth must be non-negative")
    f = scipy.fft.fftfreq(n, d=1.0 / sample_rate)
    # small relative slack so a bin sitting exactly on the edge passes
    return np.abs(f) <= one_sided_bandwidth * (1 + 1e-12)


def ideal_lowpass(wave: DualPolWaveform, one_sided_bandwidth: float) -> DualPolWaveform:
    """Brick-wall filter: bins with |f| <= bandwidth pass unchanged, others are zeroed."""
    mask = lowpass_mask(wave.length_samples, wave.sample_rate, one_sided_bandwidth)
    out = from_spectrum(to_spectrum(wave.samples) * mask)
    return wave.with_samples(out)
