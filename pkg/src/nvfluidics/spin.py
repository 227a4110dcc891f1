"""NV-center level structure and two-level Bloch dynamics.

The NV is reduced to the driven |0> <-> |-1> subspace. The Bloch vector uses
z = +1 for the optically bright |0> state and z = -1 for |-1>. Rotations follow
the right-hand rule about their axis, so a positive angle about +x carries
+z towards -y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# CODATA 2018 values (Hz/T); nuclear moments in J/T.
GAMMA_ELECTRON = 2.8024951e10
GAMMA_NUCLEAR = {
    "1H": 42.577478e6,
    "19F": 40.078e6,
    "31P": 17.235e6,
    "13C": 10.7084e6,
}
NUCLEAR_MOMENT = {
    "1H": 1.41060679736e-26,
    "19F": 1.3273e-26,
    "31P": 0.5712e-26,
    "13C": 0.3566e-26,
}


@dataclass(frozen=True)
class PhysicsConstants:
    zero_field_splitting_D: float = 2.87e9
    gamma_electron: float = GAMMA_ELECTRON
    gamma_map: dict = field(default_factory=lambda: dict(GAMMA_NUCLEAR))
    mu0_over_4pi: float = 1e-7
    nuclear_moment_map: dict = field(default_factory=lambda: dict(NUCLEAR_MOMENT))

    def __post_init__(self):
        scalars = {
            "zero_field_splitting_D": self.zero_field_splitting_D,
            "gamma_electron": self.gamma_electron,
            "mu0_over_4pi": self.mu0_over_4pi,
        }
        for name, value in scalars.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        for table in (self.gamma_map, self.nuclear_moment_map):
            for species, value in table.items():
                if not value > 0:
                    raise ValueError(f"{species}: value must be positive, got {value}")

    def gamma(self, species: str) -> float:
        try:
            return self.gamma_map[species]
        except KeyError:
            raise KeyError(f"unknown nuclear species {species!r}") from None


@dataclass(frozen=True)
class MagneticBias:
    magnitude_B0: float
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.magnitude_B0 < 0:
            raise ValueError(f"B0 must be non-negative, got {self.magnitude_B0}")
        norm = math.sqrt(sum(a * a for a in self.axis))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"bias axis must be a unit vector, |axis| = {norm}")


@dataclass(frozen=True)
class BlochState:
    x: float = 0.0
    y: float = 0.0
    z: float = 1.0

    def __post_init__(self):
        if self.x * self.x + self.y * self.y + self.z * self.z > 1 + 1e-9:
            raise ValueError(f"Bloch vector outside the unit ball: {self.as_array()}")

    @classmethod
    def from_array(cls, v) -> "BlochState":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


GROUND = BlochState(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class RelaxationParams:
    """Longitudinal rate ``gamma1`` = 1/T1 and transverse rate ``gamma2`` = 1/T2."""

    gamma1: float = 0.0
    gamma2: float = 0.0
    equilibrium_z: float = 0.0

    def __post_init__(self):
        if self.gamma1 < 0:
            raise ValueError(f"gamma1 must be non-negative, got {self.gamma1}")
        if self.gamma2 < self.gamma1 / 2:
            raise ValueError(
                f"gamma2 ({self.gamma2}) must be at least gamma1/2 ({self.gamma1 / 2})"
            )
        if not -1.0 <= self.equilibrium_z <= 1.0:
            raise ValueError(f"equilibrium_z must lie in [-1, 1], got {self.equilibrium_z}")


NO_RELAXATION = RelaxationParams()


def nv_transition_frequency(constants: PhysicsConstants, bias: MagneticBias) -> float:
    """|0> -> |-1> transition frequency in Hz for a field along the NV axis.

    Raises
    ------
    ValueError
        If B0 reaches the ground-state level anticrossing at D / gamma_e.
    """
    b_lac = constants.zero_field_splitting_D / constants.gamma_electron
    if bias.magnitude_B0 >= b_lac:
        raise ValueError(
            f"B0 = {bias.magnitude_B0} T is at or beyond the level anticrossing ({b_lac:.4f} T)"
        )
    return constants.zero_field_splitting_D - constants.gamma_electron * bias.magnitude_B0


def larmor_frequency(gamma: float, B0: float) -> float:
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if B0 < 0:
        raise ValueError(f"B0 must be non-negative, got {B0}")
    return gamma * B0


def _unit_axis(axis) -> np.ndarray:
    k = np.asarray(axis, dtype=float)
    if k.shape != (3,):
        raise ValueError(f"rotation axis must be a 3-vector, got shape {k.shape}")
    if abs(np.linalg.norm(k) - 1.0) > 1e-9:
        raise ValueError(f"rotation axis must be a unit vector, |axis| = {np.linalg.norm(k)}")
    return k


def rotate_vectors(v: np.ndarray, axis, angle) -> np.ndarray:
    """Rodrigues rotation of an ``(..., 3)`` array of vectors.

    ``axis`` may be a single unit vector or an ``(..., 3)`` array broadcasting
    against ``v``; ``angle`` broadcasts against the leading dimensions.
    """
    v = np.asarray(v, dtype=float)
    k = np.asarray(axis, dtype=float)
    theta = np.asarray(angle, dtype=float)[..., None]
    c, s = np.cos(theta), np.sin(theta)
    kdotv = np.sum(k * v, axis=-1, keepdims=True)
    return v * c + np.cross(k, v) * s + k * kdotv * (1 - c)


def apply_rotation(state: BlochState, axis, angle: float) -> BlochState:
    k = _unit_axis(axis)
    v = rotate_vectors(state.as_array(), k, angle)
    # Clip roundoff so a pure state never leaves the unit ball.
    n = np.linalg.norm(v)
    if n > 1.0:
        v = v / n
    return BlochState.from_array(v)


def apply_pulse(
    state: BlochState,
    rabi_frequency: float,
    duration: float,
    phase: float = 0.0,
    detuning: float = 0.0,
) -> BlochState:
    """Square microwave pulse in the rotating frame.

    The drive axis lies in the equatorial plane at angle ``phase`` from +x; a
    detuning tilts it towards +z. The rotation rate is the generalized Rabi
    frequency sqrt(rabi_frequency**2 + detuning**2).
    """
    if rabi_frequency <= 0:
        raise ValueError(f"Rabi frequency must be positive, got {rabi_frequency}")
    if duration < 0:
        raise ValueError(f"pulse duration must be non-negative, got {duration}")
    omega_eff = math.hypot(rabi_frequency, detuning)
    axis = np.array(
        [rabi_frequency * math.cos(phase), rabi_frequency * math.sin(phase), detuning]
    ) / omega_eff
    return apply_rotation(state, axis, 2 * math.pi * omega_eff * duration)


def evolve_free(
    state: BlochState, detuning: float, tau: float, relax: RelaxationParams = NO_RELAXATION
) -> BlochState:
    """Free precession about +z at ``detuning`` Hz with T1/T2 relaxation."""
    if tau < 0:
        raise ValueError(f"free evolution time must be non-negative, got {tau}")
    phi = 2 * math.pi * detuning * tau
    c, s = math.cos(phi), math.sin(phi)
    d2 = math.exp(-relax.gamma2 * tau)
    d1 = math.exp(-relax.gamma1 * tau)
    x = (state.x * c - state.y * s) * d2
    y = (state.x * s + state.y * c) * d2
    z = relax.equilibrium_z + (state.z - relax.equilibrium_z) * d1
    return BlochState(x, y, z)


def readout_contrast(
    state: BlochState | float,
    contrast_c: float,
    baseline: float = 1.0,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Normalized fluorescence of the spin state.

    ``state`` may be a BlochState or an array of z components. With
    ``noise_sigma > 0`` additive Gaussian noise is drawn from ``rng``.
    """
    if not 0 < contrast_c <= 1:
        raise ValueError(f"contrast must lie in (0, 1], got {contrast_c}")
    z = state.z if isinstance(state, BlochState) else np.asarray(state, dtype=float)
    value = baseline * (1 - contrast_c * (1 - z) / 2)
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_sigma > 0")
        value = value + rng.normal(0.0, noise_sigma, size=np.shape(value))
    return value
