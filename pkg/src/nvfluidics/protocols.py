"""Pulse protocols: Rabi, T1 relaxometry, XY8 correlation spectroscopy and
CASR (coherently averaged synchronized readout) with Overhauser DNP.

Sequences are built from :class:`PulseElement` records and executed on the
two-level Bloch model in :mod:`nvfluidics.spin`. The NMR protocols use the
toggling-frame phase of the NV coherence instead of stepping through every
pi pulse.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from . import spin
from .dsp import SampledCurve, TimeTrace
from .streams import stream

# Averaging counts used in the reference measurements.
T1_AVERAGES = 5_000
CORRELATION_AVERAGES = 10_000 * 8
CASR_AVERAGES = 100
DEFAULT_PHASE_SAMPLES = 128


class ConfigurationWarning(UserWarning):
    pass


class ElementKind(Enum):
    LASER_INIT = "laser_init"
    MICROWAVE_PULSE = "microwave_pulse"
    WAIT = "wait"
    READOUT = "readout"
    NUCLEAR_PI_HALF = "nuclear_pi_half"
    DNP_PUMP = "dnp_pump"


@dataclass(frozen=True)
class PulseElement:
    kind: ElementKind
    duration: float = 0.0
    rabi_frequency: float | None = None
    phase: float = 0.0
    detuning: float = 0.0
    drive_decay_time: float = math.inf

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError(f"{self.kind.value}: duration must be non-negative, got {self.duration}")
        if self.kind is ElementKind.MICROWAVE_PULSE:
            if self.rabi_frequency is None or not self.rabi_frequency > 0:
                raise ValueError(f"microwave pulse needs a positive Rabi frequency, got {self.rabi_frequency}")


def laser_init(duration: float = 3e-6) -> PulseElement:
    return PulseElement(ElementKind.LASER_INIT, duration)


def readout(duration: float = 1e-6) -> PulseElement:
    return PulseElement(ElementKind.READOUT, duration)


def wait(duration: float, detuning: float = 0.0) -> PulseElement:
    return PulseElement(ElementKind.WAIT, duration, detuning=detuning)


def mw_pulse(rabi_frequency, duration, phase=0.0, detuning=0.0, drive_decay_time=math.inf):
    return PulseElement(ElementKind.MICROWAVE_PULSE, duration, rabi_frequency, phase, detuning,
                        drive_decay_time)


@dataclass
class PulseSequence:
    elements: list
    repetitions: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.elements:
            raise ValueError("empty pulse sequence")
        if self.elements[0].kind is not ElementKind.LASER_INIT:
            raise ValueError("a sequence must begin with LaserInit")
        if self.elements[-1].kind is not ElementKind.READOUT:
            raise ValueError("a sequence must end with Readout")

    @property
    def duration(self) -> float:
        return self.repetitions * sum(e.duration for e in self.elements)


@dataclass(frozen=True)
class ReadoutParams:
    """Optical readout. ``noise_sigma`` is the single-shot noise; the trace
    noise is ``noise_sigma / sqrt(averaging)``."""

    contrast: float = 0.3
    baseline: float = 1.0
    noise_sigma: float = 0.0
    averaging: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.contrast <= 1:
            raise ValueError(f"contrast must lie in (0, 1], got {self.contrast}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.averaging < 1:
            raise ValueError("averaging must be >= 1")

    @property
    def trace_sigma(self) -> float:
        return self.noise_sigma / math.sqrt(self.averaging)


def _noise(sigma, size, seed, *key):
    if sigma <= 0:
        return np.zeros(size)
    return stream(seed, *key).normal(0.0, sigma, size)


def execute(sequence: PulseSequence, relax: spin.RelaxationParams = spin.NO_RELAXATION) -> spin.BlochState:
    """Run one repetition unit and return the Bloch state at Readout.

    Relaxation acts only during Wait elements; pulses are treated as
    instantaneous on the T1/T2 scale.
    """
    state = spin.GROUND
    for el in sequence.elements:
        kind = el.kind
        if kind is ElementKind.LASER_INIT:
            state = spin.GROUND
        elif kind is ElementKind.MICROWAVE_PULSE:
            state = spin.apply_pulse(state, el.rabi_frequency, el.duration, el.phase, el.detuning)
            if math.isfinite(el.drive_decay_time):
                shrink = math.exp(-el.duration / el.drive_decay_time)
                state = spin.BlochState.from_array(state.as_array() * shrink)
        elif kind is ElementKind.WAIT:
            state = spin.evolve_free(state, el.detuning, el.duration, relax)
        elif kind is ElementKind.READOUT:
            return state
        # NuclearPiHalf and DnpPump act on the sample, not the NV
    return state


# -- Rabi -------------------------------------------------------------------


def build_rabi(omega: float, durations: Sequence[float], drive_decay_time: float = math.inf) -> list:
    durations = np.asarray(durations, dtype=float)
    if durations.size == 0:
        raise ValueError("empty duration list")
    if np.any(durations < 0):
        raise ValueError("pulse durations must be non-negative")
    if np.any(np.diff(durations) < 0):
        raise ValueError("pulse durations must be sorted ascending")
    return [
        PulseSequence([laser_init(), mw_pulse(omega, float(t), drive_decay_time=drive_decay_time), readout()])
        for t in durations
    ]


def pi_pulse_duration(omega: float) -> float:
    return 1.0 / (2.0 * omega)


def run_rabi(
    omega: float,
    durations: Sequence[float],
    readout_params: ReadoutParams = ReadoutParams(),
    drive_decay_time: float = math.inf,
) -> TimeTrace:
    """Fluorescence versus resonant pulse length on a uniform duration grid."""
    durations = np.asarray(durations, dtype=float)
    seqs = build_rabi(omega, durations, drive_decay_time)
    if durations.size < 2:
        raise ValueError("a Rabi trace needs at least 2 durations")
    steps = np.diff(durations)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("Rabi durations must be uniformly spaced")
    z = np.array([execute(s).z for s in seqs])
    values = spin.readout_contrast(z, readout_params.contrast, readout_params.baseline)
    values = values + _noise(readout_params.trace_sigma, z.size, readout_params.seed, 1)
    return TimeTrace(
        t0=float(durations[0]),
        dt=float(steps[0]),
        values=values,
        metadata={"experiment": "rabi", "rabi_frequency_hz": omega},
    )


# -- T1 relaxometry ---------------------------------------------------------


@dataclass(frozen=True)
class GdSample:
    """Gd3+ solution. Rates are linear in concentration.

    ``fast_weight`` > 0 adds a second decay component at
    ``fast_rate_ratio`` times the bulk rate; the two weights sum to one.
    """

    concentration: float = 0.0
    rate_constant_k: float = 1e8
    intrinsic_gamma1: float = 200.0
    fast_weight: float = 0.0
    fast_rate_ratio: float = 1.0

    def __post_init__(self):
        for name in ("concentration", "rate_constant_k", "intrinsic_gamma1", "fast_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.fast_weight > 1:
            raise ValueError(f"fast_weight must lie in [0, 1], got {self.fast_weight}")
        if self.fast_rate_ratio < 1:
            raise ValueError(f"fast_rate_ratio must be >= 1, got {self.fast_rate_ratio}")


def gd_relaxation_rate(sample: GdSample) -> float:
    return sample.intrinsic_gamma1 + sample.rate_constant_k * sample.concentration


def t1_grid(n: int = 51, start: float = 200e-9, stop: float = 5.5e-3) -> np.ndarray:
    return np.geomspace(start, stop, n)


def build_t1(taus: Sequence[float]) -> list:
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0:
        raise ValueError("empty tau list")
    if np.any(taus <= 0):
        raise ValueError("T1 wait times must be positive")
    return [PulseSequence([laser_init(), wait(float(t)), readout()]) for t in taus]


def t1_components(sample: GdSample) -> list:
    """``[(weight, rate), ...]`` of the decay model for ``sample``."""
    rate = gd_relaxation_rate(sample)
    if sample.fast_weight == 0:
        return [(1.0, rate)]
    return [(sample.fast_weight, rate * sample.fast_rate_ratio), (1 - sample.fast_weight, rate)]


def run_t1(
    taus: Sequence[float],
    sample: GdSample,
    readout_params: ReadoutParams = ReadoutParams(averaging=T1_AVERAGES),
) -> SampledCurve:
    """Normalized T1 decay ``(F(tau) - F_eq) / (F(0) - F_eq)``.

    The spin relaxes towards the fully mixed state, so the normalized signal
    equals the Bloch z component.
    """
    seqs = build_t1(taus)
    taus = np.asarray(taus, dtype=float)
    z = np.zeros(taus.size)
    for weight, rate in t1_components(sample):
        relax = spin.RelaxationParams(gamma1=rate, gamma2=max(rate, rate / 2), equilibrium_z=0.0)
        z += weight * np.array([execute(s, relax).z for s in seqs])
    bright = spin.readout_contrast(1.0, readout_params.contrast, readout_params.baseline)
    mixed = spin.readout_contrast(0.0, readout_params.contrast, readout_params.baseline)
    f = spin.readout_contrast(z, readout_params.contrast, readout_params.baseline)
    values = (f - mixed) / (bright - mixed)
    values = values + _noise(readout_params.trace_sigma, z.size, readout_params.seed, 2)
    return SampledCurve(
        x=taus,
        values=values,
        metadata={"experiment": "t1", "concentration_M": sample.concentration,
                  "gamma1": gd_relaxation_rate(sample)},
    )


# -- nuclear signals and dynamical decoupling --------------------------------


@dataclass(frozen=True)
class FidModel:
    """Nuclear free-induction decay seen by the NV.

    ``b(t) = amplitude * sum_l w_l cos(2 pi (larmor + offset_l) t + phase0) exp(-t/T2*)``
    """

    larmor: float
    line_splittings: tuple = ((0.0, 1.0),)
    decay_time_T2star: float = math.inf
    amplitude: float = 1e-9
    phase0: float = 0.0

    def __post_init__(self):
        weights = [w for _, w in self.line_splittings]
        if not weights or any(w <= 0 for w in weights):
            raise ValueError("line weights must be positive")
        if abs(sum(weights) - 1) > 1e-9:
            raise ValueError(f"line weights must sum to 1, got {sum(weights)}")
        if not self.decay_time_T2star > 0:
            raise ValueError("T2* must be positive")

    @classmethod
    def doublet(cls, larmor, splitting, **kw) -> "FidModel":
        return cls(larmor, ((-splitting / 2, 0.5), (splitting / 2, 0.5)), **kw)

    def _lines(self):
        """Complex rates ``lambda_l`` and weights so b(t) = Re sum c_l exp(lambda_l t)."""
        decay = 0.0 if math.isinf(self.decay_time_T2star) else 1.0 / self.decay_time_T2star
        lam = np.array([2j * np.pi * (self.larmor + off) - decay for off, _ in self.line_splittings])
        c = np.array([self.amplitude * w for _, w in self.line_splittings], dtype=complex)
        return lam, c * np.exp(1j * self.phase0)

    def field(self, t) -> np.ndarray:
        lam, c = self._lines()
        t = np.asarray(t, dtype=float)
        return np.real(np.exp(np.multiply.outer(t, lam)) @ c)

    def frequencies(self) -> list:
        return [self.larmor + off for off, _ in self.line_splittings]


def _as_lines(source):
    """``(lambdas, coefficients)`` for a FidModel or an ``(amplitude, frequency, phase)`` tone."""
    if isinstance(source, FidModel):
        return source._lines()
    amplitude, frequency, phase = source
    return (np.array([2j * np.pi * frequency]), np.array([amplitude * np.exp(1j * phase)]))


def xy8_toggling(tau_interpulse: float, n_pulses: int):
    """Interval boundaries and toggling signs of an XY8-N block.

    Pi pulses sit at ``tau/2, 3 tau/2, ...``; the block lasts
    ``n_pulses * tau``.
    """
    if n_pulses <= 0 or n_pulses % 8:
        raise ValueError(f"XY8 needs a positive multiple of 8 pulses, got {n_pulses}")
    if not tau_interpulse > 0:
        raise ValueError("tau_interpulse must be positive")
    pulses = tau_interpulse * (np.arange(n_pulses) + 0.5)
    bounds = np.concatenate([[0.0], pulses, [n_pulses * tau_interpulse]])
    signs = (-1.0) ** np.arange(n_pulses + 1)
    return bounds, signs


def _toggled_kernel(lam, bounds, signs):
    """``int s(u) exp(lam u) du`` over the block, for each complex rate."""
    lam = np.asarray(lam, dtype=complex)
    out = np.zeros(lam.shape, dtype=complex)
    small = np.abs(lam) * bounds[-1] < 1e-12
    e = np.exp(np.multiply.outer(lam, bounds))
    seg = (e[..., 1:] - e[..., :-1]) @ signs
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, np.diff(bounds) @ signs, seg / np.where(small, 1.0, lam))
    return out


def xy8_accumulated_phase(
    source,
    tau_interpulse: float,
    n_pulses: int,
    gamma_nv: float = spin.GAMMA_ELECTRON,
    t_start: float = 0.0,
) -> float:
    """Phase (rad) picked up by the NV coherence during an XY8-N block.

    ``source`` is a FidModel or an ``(amplitude_T, frequency_Hz, phase)``
    tone ``b cos(2 pi f t + phase)``. The block starts at ``t_start``.
    At resonance (f = 1 / (2 tau)) with zero phase the magnitude is
    ``(2/pi) * 2 pi gamma b T``.
    """
    bounds, signs = xy8_toggling(tau_interpulse, n_pulses)
    lam, c = _as_lines(source)
    kernel = _toggled_kernel(lam, bounds, signs)
    return float(2 * np.pi * gamma_nv * np.real(np.sum(c * np.exp(lam * t_start) * kernel)))


def build_xy8_block(tau_interpulse: float, n_pulses: int, rabi_frequency: float) -> list:
    """Elements of one pi/2 - XY8-N - pi/2 block, for export and timing checks."""
    xy8_toggling(tau_interpulse, n_pulses)
    t_pi = pi_pulse_duration(rabi_frequency)
    phases = [0.0, np.pi / 2] * 2 + [np.pi / 2, 0.0] * 2  # XYXY YXYX
    els = [mw_pulse(rabi_frequency, t_pi / 2)]
    els.append(wait(tau_interpulse / 2 - t_pi / 2))
    for k in range(n_pulses):
        els.append(mw_pulse(rabi_frequency, t_pi, phase=phases[k % 8]))
        els.append(wait(tau_interpulse - t_pi if k < n_pulses - 1 else tau_interpulse / 2 - t_pi / 2))
    els.append(mw_pulse(rabi_frequency, t_pi / 2, phase=np.pi / 2))
    return els


def build_correlation(t_corr: float, tau_interpulse: float, n_pulses: int, rabi_frequency: float):
    block = build_xy8_block(tau_interpulse, n_pulses, rabi_frequency)
    return PulseSequence([laser_init(), *block, wait(t_corr), *block, readout()])


def phase_samples(n: int = DEFAULT_PHASE_SAMPLES) -> np.ndarray:
    return 2 * np.pi * np.arange(n) / n


def correlation_signal(
    t_corr: np.ndarray,
    fid: FidModel,
    tau_interpulse: float,
    n_pulses: int,
    gamma_nv: float,
    phases: np.ndarray,
) -> np.ndarray:
    """``mean_j sin(phi1_j) sin(phi2_j)`` over the supplied initial phases."""
    bounds, signs = xy8_toggling(tau_interpulse, n_pulses)
    lam, c = fid._lines()
    kernel = _toggled_kernel(lam, bounds, signs)
    t_block = bounds[-1]
    rot = np.exp(1j * np.asarray(phases))  # (P,)
    amp1 = c * kernel  # (L,)
    phi1 = 2 * np.pi * gamma_nv * np.real(np.outer(rot, amp1).sum(axis=1))  # (P,)
    shift = np.exp(np.multiply.outer(t_block + np.asarray(t_corr, float), lam))  # (T, L)
    phi2 = 2 * np.pi * gamma_nv * np.real((shift * amp1) @ np.ones(lam.size)[:, None] * rot[None, :])
    return (np.sin(phi2) * np.sin(phi1)[None, :]).mean(axis=1)


def correlation_grid(start: float = 2e-6, stop: float = 502e-6, n: int = 2501) -> np.ndarray:
    return np.linspace(start, stop, n)


def run_correlation(
    t_corr_grid: Sequence[float],
    fid: FidModel,
    tau_interpulse: float,
    n_pulses: int = 32,
    gamma_nv: float = spin.GAMMA_ELECTRON,
    averaging: int = CORRELATION_AVERAGES,
    noise_sigma: float = 0.0,
    n_phase: int = DEFAULT_PHASE_SAMPLES,
    seed: int = 0,
) -> TimeTrace:
    """Correlation-spectroscopy trace of two XY8-N blocks separated by ``t_corr``.

    The signal is averaged over ``n_phase`` uniformly spaced initial nuclear
    phases. ``noise_sigma`` is the single-shot noise, reduced by
    ``sqrt(averaging)``.
    """
    t = np.asarray(t_corr_grid, dtype=float)
    if t.size < 2:
        raise ValueError("correlation grid needs at least 2 points")
    steps = np.diff(t)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
        raise ValueError("correlation grid must be uniform and ascending")
    s = correlation_signal(t, fid, tau_interpulse, n_pulses, gamma_nv, phase_samples(n_phase))
    s = s + _noise(noise_sigma / math.sqrt(averaging), t.size, seed, 3)
    return TimeTrace(
        t0=float(t[0]),
        dt=float((t[-1] - t[0]) / (t.size - 1)),
        values=s,
        metadata={"experiment": "correlation", "tau_interpulse_s": tau_interpulse,
                  "n_pulses": n_pulses},
    )


# -- CASR -------------------------------------------------------------------


def alias_frequency(f_signal: float, f_sample: float) -> float:
    """Baseband alias of ``f_signal`` under sampling at ``f_sample``, in [0, f_sample/2]."""
    if f_signal <= 0 or f_sample <= 0:
        raise ValueError("frequencies must be positive")
    r = math.fmod(f_signal, f_sample)
    return min(r, f_sample - r)


class DnpResult(NamedTuple):
    gain: float
    electron_resonance: float | None
    relative_deviation: float | None
    on_resonance: bool


def dnp_pump(
    gain: float = 1.0,
    pump_frequency: float | None = None,
    B0: float | None = None,
    constants: spin.PhysicsConstants = spin.PhysicsConstants(),
    tolerance: float = 0.05,
) -> DnpResult:
    """Overhauser DNP stage. The enhancement is a scenario input.

    If both ``pump_frequency`` and ``B0`` are given, the pump is compared with
    the free-electron resonance ``gamma_e * B0`` and a ConfigurationWarning
    is issued beyond ``tolerance``.
    """
    if gain < 1:
        raise ValueError(f"DNP gain must be >= 1, got {gain}")
    if pump_frequency is None or B0 is None:
        return DnpResult(float(gain), None, None, True)
    f_e = constants.gamma_electron * B0
    dev = abs(pump_frequency - f_e) / f_e
    ok = dev <= tolerance
    if not ok:
        warnings.warn(
            f"DNP pump at {pump_frequency / 1e9:.3f} GHz is {100 * dev:.1f}% off the "
            f"electron resonance {f_e / 1e9:.3f} GHz at B0 = {B0} T",
            ConfigurationWarning,
            stacklevel=2,
        )
    return DnpResult(float(gain), f_e, dev, ok)


def run_casr(
    fid: FidModel,
    subsequence_duration: float,
    n_repetitions: int,
    gamma_nv: float = spin.GAMMA_ELECTRON,
    dnp_gain: float = 1.0,
    averaging: int = CASR_AVERAGES,
    noise_sigma: float = 0.0,
    filter_gain: float = 2 / math.pi,
    total_time: float | None = None,
    seed: int = 0,
) -> TimeTrace:
    """Stroboscopic CASR record: one sample per decoupling subsequence.

    Sample k reads ``sin(phi_k)`` with
    ``phi_k = 2 pi gamma_nv * filter_gain * dnp_gain * b(t_k) * subsequence_duration``,
    ``b`` evaluated at the window centre. The subsequence is abstracted to its
    duration and an effective filter gain.
    """
    if not subsequence_duration > 0:
        raise ValueError("subsequence_duration must be positive")
    if n_repetitions < 2:
        raise ValueError("CASR needs at least 2 repetitions")
    if total_time is not None:
        if abs(subsequence_duration * n_repetitions - total_time) > 1e-9 * total_time:
            raise ValueError(
                f"inconsistent timing: {n_repetitions} x {subsequence_duration} s != {total_time} s"
            )
    if dnp_gain < 1:
        raise ValueError(f"DNP gain must be >= 1, got {dnp_gain}")
    t = subsequence_duration * (np.arange(n_repetitions) + 0.5)
    phi = 2 * np.pi * gamma_nv * filter_gain * dnp_gain * fid.field(t) * subsequence_duration
    values = np.sin(phi) + _noise(noise_sigma / math.sqrt(averaging), t.size, seed, 4)
    return TimeTrace(
        t0=0.0,
        dt=subsequence_duration,
        values=values,
        metadata={"experiment": "casr", "f_sample_hz": 1.0 / subsequence_duration,
                  "dnp_gain": dnp_gain},
    )
