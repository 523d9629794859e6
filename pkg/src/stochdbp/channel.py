"""Fiber link model: SSFM fiber propagation, EDFAs, FBG dispersion compensation.

Units follow the usual fiber-optics bookkeeping: lengths in km, dispersion in
ps/(nm km), nonlinearity in 1/(W km), attenuation in dB/km, wavelength in nm,
time in s, frequency in Hz, power in W.  Waveform arrays have shape
``(..., 2, n)`` (leading batch axes allowed).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .signal import (
    DualPolWaveform,
    PulseShape,
    angular_frequency,
    from_spectrum,
    ideal_lowpass,
    lowpass_mask,
    shape,
    to_spectrum,
)

SPEED_OF_LIGHT = 299_792_458.0  # m/s
PLANCK = 6.626_070_15e-34  # J s
MANAKOV_FACTOR = 8.0 / 9.0

Direction = Literal["forward", "inverse"]

__all__ = [
    "AliasingWarning",
    "FiberParams",
    "AmplifierParams",
    "DcmParams",
    "LinkConfig",
    "StepPlan",
    "LinkModel",
    "LinkOutput",
    "step_size",
    "make_step_plan",
    "ssfm",
    "edfa",
    "edfa_inverse_particle",
    "fbg_dcm",
    "ase_noise",
    "simulate_link",
    "dbm_to_w",
    "db_to_lin",
]


class AliasingWarning(RuntimeWarning):
    pass


def dbm_to_w(p_dbm: float) -> float:
    return 1e-3 * 10 ** (p_dbm / 10)


def db_to_lin(x_db: float) -> float:
    return 10 ** (x_db / 10)


@dataclass(frozen=True)
class FiberParams:
    dispersion: float = 16.0  # ps/(nm km)
    gamma: float = 1.3  # 1/(W km)
    attenuation: float = 0.2  # dB/km
    length: float = 80.0  # km
    wavelength: float = 1550.0  # nm
    kind: str = "SMF"

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"fiber length must be positive, got {self.length}")
        if self.attenuation < 0:
            raise ValueError(f"attenuation must be non-negative, got {self.attenuation}")
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def beta2(self) -> float:
        """Group-velocity dispersion in s^2/km."""
        lam = self.wavelength * 1e-9
        d_si = self.dispersion * 1e-6  # s/m^2
        return -d_si * lam**2 / (2 * np.pi * SPEED_OF_LIGHT) * 1e3

    @property
    def alpha(self) -> float:
        """Power attenuation coefficient in 1/km."""
        return self.attenuation * np.log(10) / 10

    @property
    def loss_db(self) -> float:
        return self.attenuation * self.length


@dataclass(frozen=True)
class AmplifierParams:
    gain: float  # linear power gain
    noise_figure: float = 5.0  # dB
    noise_bandwidth: float = 14e9  # Hz, one-sided
    wavelength: float = 1550.0  # nm

    def __post_init__(self):
        if self.gain < 1:
            raise ValueError(f"amplifier gain must be >= 1, got {self.gain}")
        if self.noise_figure < 10 * np.log10(2):
            warnings.warn(
                f"noise figure {self.noise_figure} dB is below the 3 dB quantum limit",
                stacklevel=2,
            )

    @property
    def photon_energy(self) -> float:
        return PLANCK * SPEED_OF_LIGHT / (self.wavelength * 1e-9)

    @property
    def psd(self) -> float:
        """Two-sided ASE PSD per polarization, W/Hz: (G-1) F h nu / 2."""
        return (self.gain - 1) * db_to_lin(self.noise_figure) * self.photon_energy / 2

    @property
    def noise_power(self) -> float:
        """Added noise power per polarization after band limiting, W."""
        return self.psd * 2 * self.noise_bandwidth


@dataclass(frozen=True)
class DcmParams:
    insertion_loss: float = 3.0  # dB


@dataclass(frozen=True)
class LinkConfig:
    spans: int = 50
    smf: FiberParams = field(default_factory=FiberParams)
    dcm: DcmParams | None = field(default_factory=DcmParams)
    launch_power: float = 0.0  # dBm, total over both polarizations
    dcm_power_backoff: float = 4.0  # dB
    noise_figure: float = 5.0  # dB, all amplifiers
    symbol_rate: float = 14e9  # Bd
    step_epsilon: float = 1e-4
    manakov_factor: float = MANAKOV_FACTOR
    noise: bool = True

    def __post_init__(self):
        if self.spans < 1:
            raise ValueError(f"link.spans must be >= 1, got {self.spans}")
        if not self.symbol_rate > 0:
            raise ValueError("link.symbol_rate must be positive")
        if not self.step_epsilon > 0:
            raise ValueError("link.step_epsilon must be positive")
        if self.dcm is not None and self.smf.loss_db < self.dcm_power_backoff:
            raise ValueError("SMF loss is smaller than the DCM power backoff; EDFA1 gain < 1")

    @property
    def dispersion_managed(self) -> bool:
        return self.dcm is not None

    @property
    def launch_power_w(self) -> float:
        return dbm_to_w(self.launch_power)

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.symbol_rate

    def _amp(self, gain_db: float) -> AmplifierParams:
        return AmplifierParams(
            db_to_lin(gain_db), self.noise_figure, self.symbol_rate, self.smf.wavelength
        )

    @property
    def edfa1(self) -> AmplifierParams:
        """Amplifier after the SMF; restores launch power (minus backoff on DM links)."""
        backoff = self.dcm_power_backoff if self.dcm is not None else 0.0
        return self._amp(self.smf.loss_db - backoff)

    @property
    def edfa2(self) -> AmplifierParams | None:
        """Amplifier after the DCM, DM links only."""
        if self.dcm is None:
            return None
        return self._amp(self.dcm.insertion_loss + self.dcm_power_backoff)

    def with_power(self, launch_power_dbm: float) -> "LinkConfig":
        return replace(self, launch_power=launch_power_dbm)


@dataclass(frozen=True)
class StepPlan:
    segment_lengths: tuple[float, ...]

    @property
    def total_length(self) -> float:
        return float(math.fsum(self.segment_lengths))

    def __len__(self) -> int:
        return len(self.segment_lengths)


def step_size(
    epsilon: float,
    gamma: float,
    power: float,
    dispersion: float,
    wavelength: float,
    symbol_period: float,
) -> float:
    """SSFM segment length in km from the (eps L_N L_D^2)^(1/3) rule.

    Args:
        epsilon: Dimensionless accuracy parameter.
        gamma: Nonlinear coefficient, 1/(W km).
        power: Average launch power into the span, W.
        dispersion: D in ps/(nm km).
        wavelength: nm.
        symbol_period: s.
    """
    for name, v in (
        ("epsilon", epsilon),
        ("gamma", gamma),
        ("power", power),
        ("dispersion", abs(dispersion)),
        ("wavelength", wavelength),
        ("symbol_period", symbol_period),
    ):
        if not v > 0:
            raise ValueError(f"step_size: {name} must be positive, got {v}")
    nonlinear_length = 1.0 / (gamma * power)  # km
    lam = wavelength * 1e-9
    d_si = abs(dispersion) * 1e-6  # s/m^2
    dispersion_length = symbol_period**2 * 2 * np.pi * SPEED_OF_LIGHT / (d_si * lam**2) / 1e3
    return float((epsilon * nonlinear_length * dispersion_length**2) ** (1.0 / 3.0))


def make_step_plan(length: float, max_step: float) -> StepPlan:
    """Split ``length`` into the fewest equal segments no longer than ``max_step``."""
    if not length > 0 or not max_step > 0:
        raise ValueError("length and max_step must be positive")
    n = max(1, math.ceil(length / max_step - 1e-12))
    return StepPlan((length / n,) * n)


def link_step_plan(cfg: LinkConfig) -> StepPlan:
    """Step plan for the SMF of every span; shared by channel and receivers."""
    fiber = cfg.smf
    if fiber.gamma == 0 or fiber.dispersion == 0:
        # one of the operators vanishes, splitting is exact
        return StepPlan((fiber.length,))
    delta = step_size(
        cfg.step_epsilon,
        fiber.gamma,
        cfg.launch_power_w,
        fiber.dispersion,
        fiber.wavelength,
        cfg.symbol_period,
    )
    return make_step_plan(fiber.length, delta)


def _effective_length(alpha: float, dz: float) -> float:
    # integral of exp(-alpha z) over the segment, referenced to mid-segment power
    if alpha == 0:
        return dz
    return 2.0 * math.sinh(alpha * dz / 2.0) / alpha


def _linear_operator(omega: NDArray, beta2: float, alpha: float, dz: float) -> NDArray:
    """Frequency response of dispersion and attenuation over signed distance dz."""
    return np.exp(0.5j * beta2 * omega**2 * dz - 0.5 * alpha * dz)


def _dispersion_phase(omega: NDArray, beta2: float, dz: float) -> NDArray:
    return np.exp(0.5j * beta2 * omega**2 * dz)


def _kerr(samples: NDArray, phase_per_watt: float) -> NDArray:
    power = np.sum(samples.real**2 + samples.imag**2, axis=-2, keepdims=True)
    return samples * np.exp(1j * phase_per_watt * power)


class _FiberPropagator:
    """Precomputed symmetric split-step operators for one fiber and grid."""

    def __init__(
        self,
        fiber: FiberParams,
        plan: StepPlan,
        n: int,
        sample_rate: float,
        manakov_factor: float,
    ):
        if abs(plan.total_length - fiber.length) > 1e-9 * fiber.length:
            raise ValueError(
                f"step plan covers {plan.total_length} km, fiber is {fiber.length} km"
            )
        self.fiber = fiber
        self.plan = plan
        omega = angular_frequency(n, sample_rate)
        h = plan.segment_lengths
        # linear sub-steps between consecutive nonlinear kicks (merged halves)
        self._lin_lengths = [h[0] / 2] + [(h[i] + h[i + 1]) / 2 for i in range(len(h) - 1)]
        self._lin_lengths.append(h[-1] / 2)
        cache: dict[tuple[float, int], NDArray] = {}

        def op(dz: float, sign: int) -> NDArray:
            key = (dz, sign)
            if key not in cache:
                cache[key] = _linear_operator(omega, fiber.beta2, fiber.alpha, sign * dz)
            return cache[key]

        self._fwd = [op(dz, +1) for dz in self._lin_lengths]
        self._inv = [op(dz, -1) for dz in self._lin_lengths]
        self._kerr = [
            manakov_factor * fiber.gamma * _effective_length(fiber.alpha, dz) for dz in h
        ]

    def forward(self, samples: NDArray) -> NDArray:
        e = from_spectrum(to_spectrum(samples) * self._fwd[0])
        for i, phi in enumerate(self._kerr):
            e = _kerr(e, phi) if phi else e
            e = from_spectrum(to_spectrum(e) * self._fwd[i + 1])
        return e

    def inverse(self, samples: NDArray) -> NDArray:
        e = from_spectrum(to_spectrum(samples) * self._inv[-1])
        for i in range(len(self._kerr) - 1, -1, -1):
            phi = self._kerr[i]
            e = _kerr(e, -phi) if phi else e
            e = from_spectrum(to_spectrum(e) * self._inv[i])
        return e


def _check_aliasing(samples: NDArray, threshold: float = 1e-4) -> None:
    spec = np.abs(to_spectrum(samples)) ** 2
    n = samples.shape[-1]
    f = np.abs(np.fft.fftfreq(n))
    edge = f > 0.4  # outer 20 % of the simulated band
    total = spec.sum()
    if total > 0 and spec[..., edge].sum() / total > threshold:
        warnings.warn(
            "signal energy near the Nyquist edge; increase samples per symbol",
            AliasingWarning,
            stacklevel=3,
        )


def ssfm(
    wave: DualPolWaveform,
    fiber: FiberParams,
    plan: StepPlan,
    direction: Direction = "forward",
    manakov_factor: float = MANAKOV_FACTOR,
) -> DualPolWaveform:
    """Symmetrized split-step Fourier propagation through one fiber.

    ``direction="inverse"`` runs the exact algebraic inverse of the forward
    operator for the same plan (digital backpropagation of one fiber).
    """
    prop = _FiberPropagator(fiber, plan, wave.length_samples, wave.sample_rate, manakov_factor)
    if direction == "forward":
        out = prop.forward(wave.samples)
        _check_aliasing(out)
    elif direction == "inverse":
        out = prop.inverse(wave.samples)
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return wave.with_samples(out)


def ase_noise(
    shape: tuple[int, ...],
    psd: float,
    sample_rate: float,
    bandwidth: float,
    rng: np.random.Generator,
    mask: NDArray[np.bool_] | None = None,
) -> NDArray[np.complex128]:
    """Band-limited circular complex Gaussian noise, last axis is time.

    Noise is drawn directly in the retained DFT bins so its expected power per
    waveform row is exactly ``psd * 2 * bandwidth``.
    """
    n = shape[-1]
    if mask is None:
        mask = lowpass_mask(n, sample_rate, bandwidth)
    n_pass = int(mask.sum())
    out_spec = np.zeros(shape, dtype=np.complex128)
    if psd == 0 or n_pass == 0:
        return out_spec
    var_bin = psd * 2 * bandwidth * n / n_pass
    draws = rng.standard_normal(shape[:-1] + (2, n_pass))
    out_spec[..., mask] = np.sqrt(var_bin / 2) * (draws[..., 0, :] + 1j * draws[..., 1, :])
    return from_spectrum(out_spec)


def edfa(
    wave: DualPolWaveform,
    amp: AmplifierParams,
    rng: np.random.Generator | None = None,
    noise: bool = True,
) -> DualPolWaveform:
    """Amplify by sqrt(G) in field and add band-limited ASE on each polarization."""
    out = wave.samples * np.sqrt(amp.gain)
    if noise:
        if rng is None:
            raise ValueError("rng required when ASE noise is enabled")
        out = out + ase_noise(
            out.shape, amp.psd, wave.sample_rate, amp.noise_bandwidth, rng
        )
    return wave.with_samples(out)


def edfa_inverse_particle(
    wave: DualPolWaveform, amp: AmplifierParams, rng: np.random.Generator | None
) -> DualPolWaveform:
    """Return (wave + w)/sqrt(G) with w a fresh ASE realization; rng=None means w=0."""
    out = wave.samples
    if rng is not None:
        out = out + ase_noise(out.shape, amp.psd, wave.sample_rate, amp.noise_bandwidth, rng)
    return wave.with_samples(out / np.sqrt(amp.gain))


def fbg_dcm(
    wave: DualPolWaveform,
    smf: FiberParams,
    insertion_loss: float,
    direction: Direction = "forward",
) -> DualPolWaveform:
    """Ideal FBG: exact inverse of the preceding SMF's dispersion plus a flat loss."""
    omega = angular_frequency(wave.length_samples, wave.sample_rate)
    sign = -1 if direction == "forward" else +1
    h = _dispersion_phase(omega, smf.beta2, sign * smf.length)
    amp = 10 ** (sign * insertion_loss / 20)
    return wave.with_samples(from_spectrum(to_spectrum(wave.samples) * h) * amp)


class LinkModel:
    """All span operators of a link, precomputed for one sampling grid.

    Used both by the forward channel and by the backpropagation receivers so
    that the channel and the receiver share identical step plans.
    """

    def __init__(self, cfg: LinkConfig, n: int, sample_rate: float):
        self.cfg = cfg
        self.n = n
        self.sample_rate = sample_rate
        self.plan = link_step_plan(cfg)
        self.smf = _FiberPropagator(cfg.smf, self.plan, n, sample_rate, cfg.manakov_factor)
        self.edfa1 = cfg.edfa1
        self.edfa2 = cfg.edfa2
        self.noise_mask = lowpass_mask(n, sample_rate, cfg.symbol_rate)
        omega = angular_frequency(n, sample_rate)
        if cfg.dcm is not None:
            # same expressions as fbg_dcm so both receivers agree bit for bit
            self._dcm_fwd = _dispersion_phase(omega, cfg.smf.beta2, -cfg.smf.length)
            self._dcm_inv = _dispersion_phase(omega, cfg.smf.beta2, cfg.smf.length)
            self._dcm_loss = 10 ** (-cfg.dcm.insertion_loss / 20)
            self._dcm_gain = 10 ** (cfg.dcm.insertion_loss / 20)

    def _noise(self, shape: tuple[int, ...], amp: AmplifierParams, rng) -> NDArray:
        return ase_noise(
            shape, amp.psd, self.sample_rate, amp.noise_bandwidth, rng, self.noise_mask
        )

    def dcm_forward(self, samples: NDArray) -> NDArray:
        return from_spectrum(to_spectrum(samples) * self._dcm_fwd) * self._dcm_loss

    def dcm_inverse(self, samples: NDArray) -> NDArray:
        return from_spectrum(to_spectrum(samples) * self._dcm_inv) * self._dcm_gain

    def forward_span(self, e: NDArray, rng: np.random.Generator | None) -> NDArray:
        noisy = self.cfg.noise and rng is not None
        e = self.smf.forward(e)
        e = e * np.sqrt(self.edfa1.gain)
        if noisy:
            e = e + self._noise(e.shape, self.edfa1, rng)
        if self.edfa2 is not None:
            e = self.dcm_forward(e)
            e = e * np.sqrt(self.edfa2.gain)
            if noisy:
                e = e + self._noise(e.shape, self.edfa2, rng)
        return e

    def inverse_edfa(
        self, e: NDArray, amp: AmplifierParams, rngs: list[np.random.Generator] | None
    ) -> NDArray:
        """(e + w)/sqrt(G) with an independent draw for each leading-axis particle."""
        if rngs is not None:
            if e.ndim == 2:
                w = self._noise(e.shape, amp, rngs[0])
            else:
                w = np.stack([self._noise(e.shape[1:], amp, r) for r in rngs])
            e = e + w
        return e / np.sqrt(amp.gain)

    def inverse_span(self, e: NDArray, rngs: list[np.random.Generator] | None) -> NDArray:
        """Undo one span in reverse order: EDFA2, DCM, EDFA1, then the SMF."""
        if self.edfa2 is not None:
            e = self.inverse_edfa(e, self.edfa2, rngs)
            e = self.dcm_inverse(e)
        e = self.inverse_edfa(e, self.edfa1, rngs)
        return self.smf.inverse(e)


@dataclass(frozen=True)
class LinkOutput:
    r: DualPolWaveform
    transmitted: DualPolWaveform
    timing_offset: int
    num_symbols: int
    step_plan: StepPlan
    edfa1: AmplifierParams
    edfa2: AmplifierParams | None
    span_output_power: tuple[float, ...]


def simulate_link(
    symbols: NDArray,
    cfg: LinkConfig,
    pulse: PulseShape,
    rng: np.random.Generator | int | None = None,
    rx_filter: bool = True,
) -> LinkOutput:
    """Transmit a (K, 4) symbol block over the N-span link.

    Chain: pulse shaping at launch power, then per span SMF -> EDFA1 ->
    [FBG DCM -> EDFA2], then an ideal low-pass with one-sided bandwidth R_s.
    """
    rng = np.random.default_rng(rng)
    tx = shape(symbols, pulse, cfg.symbol_rate, cfg.launch_power_w)
    model = LinkModel(cfg, tx.length_samples, tx.sample_rate)
    e = tx.samples
    powers = []
    for _ in range(cfg.spans):
        e = model.forward_span(e, rng if cfg.noise else None)
        powers.append(float(np.mean(np.sum(np.abs(e) ** 2, axis=0))))
    _check_aliasing(e)
    r = tx.with_samples(e)
    if rx_filter:
        r = ideal_lowpass(r, cfg.symbol_rate)
    return LinkOutput(
        r=r,
        transmitted=tx,
        timing_offset=pulse.delay,
        num_symbols=int(np.asarray(symbols).shape[0]),
        step_plan=model.plan,
        edfa1=model.edfa1,
        edfa2=model.edfa2,
        span_output_power=tuple(powers),
    )
