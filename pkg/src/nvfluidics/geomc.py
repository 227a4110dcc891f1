"""Monte Carlo estimate of the NMR signal from sample spins in a microfluidic
channel, sensed by an NV-doped layer of variable thickness.

Coordinates: the diamond surface is the plane z = 0, the diamond fills z < 0
and the channel sits on top. Geometry inputs are in micrometres and are
converted to metres once, where dipolar fields are evaluated.

Two estimators of the coherent (thermally or DNP polarized) signal are
available:

``"pairs"``
    draws NV positions in the sensor cylinder and spin positions in the
    channel and averages the projected dipolar field over all pairs. The pair
    kernel is heavy tailed where NV and spin meet at the surface, so it
    converges slowly.
``"conditional"``
    draws NV positions only; the average over uniformly distributed spins is
    taken exactly through the closed-form field of a uniformly magnetized
    box. Same expectation, finite variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spin import NUCLEAR_MOMENT
from .streams import map_ordered, stream

UM = 1e-6
MU0_OVER_4PI = 1e-7
PROTON_MOMENT = NUCLEAR_MOMENT["1H"]
# NV axis along <111> of a (100)-cut diamond: 54.7 deg from the surface
# normal, in-plane component along the channel length.
DEFAULT_BIAS_AXIS = (math.sqrt(2 / 3), 0.0, math.sqrt(1 / 3))
SURFACE_NORMAL_AXIS = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class ChannelGeometry:
    length: float = 1000.0
    width: float = 100.0
    height: float = 80.0
    offset: float = 0.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("length", "width", "height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"channel {name} must be positive, got {getattr(self, name)}")
        if self.offset < 0:
            raise ValueError(f"channel offset must be non-negative, got {self.offset}")

    @property
    def lower(self) -> np.ndarray:
        cx, cy = self.center
        return np.array([cx - self.length / 2, cy - self.width / 2, self.offset])

    @property
    def upper(self) -> np.ndarray:
        cx, cy = self.center
        return np.array([cx + self.length / 2, cy + self.width / 2, self.offset + self.height])

    @property
    def volume_m3(self) -> float:
        return self.length * self.width * self.height * UM**3

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)


@dataclass(frozen=True)
class SensorCylinder:
    diameter: float = 45.0
    depth_d_nv: float = 50.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError(f"sensor diameter must be positive, got {self.diameter}")
        if not self.depth_d_nv > 0:
            raise ValueError(f"sensor depth d_NV must be positive, got {self.depth_d_nv}")

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        rho2 = (p[..., 0] - self.center[0]) ** 2 + (p[..., 1] - self.center[1]) ** 2
        return (rho2 <= (self.diameter / 2) ** 2) & (p[..., 2] <= 0) & (p[..., 2] >= -self.depth_d_nv)


@dataclass(frozen=True)
class McParams:
    """Monte Carlo budget. ``n_spin_samples`` is only used by the pair estimator.

    Spin positions are re-drawn for every average.
    """

    n_nv_samples: int = 40
    n_spin_samples: int = 32_000
    n_averages: int = 1_000
    seed: int = 0

    def __post_init__(self):
        for name in ("n_nv_samples", "n_spin_samples", "n_averages"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


PAPER_MC = McParams(n_nv_samples=40, n_spin_samples=32_000, n_averages=10_000)


@dataclass
class SensitivityCurve:
    d_nv_um: np.ndarray
    signal_norm: np.ndarray
    stderr: np.ndarray
    mean_signal: np.ndarray = None
    mean_signal_stderr: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    @property
    def argmax(self) -> float:
        return float(self.d_nv_um[np.argmax(self.signal_norm)])


def _unit(axis) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if a.shape != (3,) or abs(n - 1) > 1e-9:
        raise ValueError(f"bias axis must be a unit 3-vector, got {axis}")
    return a


# -- point dipoles ----------------------------------------------------------


def dipolar_field(moment, displacement, mu0_over_4pi: float = MU0_OVER_4PI) -> np.ndarray:
    """Field (T) of a point dipole ``moment`` (J/T) at ``displacement`` (m).

    Both arguments broadcast over leading dimensions.
    """
    m = np.asarray(moment, dtype=float)
    r = np.asarray(displacement, dtype=float)
    r2 = np.sum(r * r, axis=-1, keepdims=True)
    if np.any(r2 == 0):
        raise ValueError("dipolar field is singular at zero displacement")
    rn = np.sqrt(r2)
    rhat = r / rn
    mr = np.sum(m * rhat, axis=-1, keepdims=True)
    return mu0_over_4pi * (3 * rhat * mr - m) / (rn * r2)


def projected_kernel(nv_um, spins_um, axis) -> np.ndarray:
    """``(n_nv, n_spin)`` matrix of ``B . axis`` (T per J/T) for spins with
    unit moments along ``axis``. Positions in micrometres."""
    a = _unit(axis)
    r = (np.asarray(nv_um)[:, None, :] - np.asarray(spins_um)[None, :, :]) * UM
    r2 = np.einsum("...i,...i->...", r, r)
    ra = r @ a
    return MU0_OVER_4PI * (3 * ra * ra / r2 - 1.0) / (r2 * np.sqrt(r2))


# -- sampling ---------------------------------------------------------------


def sample_cylinder(sensor: SensorCylinder, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((n, 3))
    rho = sensor.diameter / 2 * np.sqrt(u[:, 0])
    phi = 2 * np.pi * u[:, 1]
    return np.column_stack(
        [sensor.center[0] + rho * np.cos(phi), sensor.center[1] + rho * np.sin(phi),
         -sensor.depth_d_nv * u[:, 2]]
    )


def sample_channel(channel: ChannelGeometry, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = channel.lower, channel.upper
    return lo + (hi - lo) * rng.random((n, 3))


# -- uniformly magnetized box -----------------------------------------------


def _log_plus(a, R):
    """``log(a + R)`` for ``R = sqrt(a^2 + q^2)``, stable when ``a < 0``."""
    q2 = R * R - a * a
    with np.errstate(divide="ignore"):
        return np.where(a >= 0, np.log(a + R), np.log(np.maximum(q2, 0.0)) - np.log(R - a))


def _rect_field(q, u1, u2, v1, v2):
    """Integral of ``(p - p') / |p - p'|^3`` over the rectangle
    ``[u1,u2] x [v1,v2]`` in the plane w = 0, at local points ``q = (u, v, w)``."""
    u, v, w = q[..., 0], q[..., 1], q[..., 2]
    out = np.zeros(q.shape)
    for a, sa in ((u2, 1.0), (u1, -1.0)):
        for b, sb in ((v2, 1.0), (v1, -1.0)):
            s = sa * sb
            du, dv = a - u, b - v
            R = np.sqrt(du * du + dv * dv + w * w)
            out[..., 0] += s * _log_plus(dv, R)
            out[..., 1] += s * _log_plus(du, R)
            out[..., 2] += s * np.arctan2(du * dv, w * R)
    return out


def box_field(points_um, channel: ChannelGeometry, axis, mu0_over_4pi: float = MU0_OVER_4PI) -> np.ndarray:
    """Volume integral of the dipolar field of unit moments along ``axis``
    spread uniformly over the channel, at points outside it.

    Units: T per (J/T per m^3), i.e. multiply by a moment density to get a
    field. Built from the surface charges ``axis . n`` on the six faces.
    """
    m = _unit(axis)
    p = np.asarray(points_um, dtype=float) * UM
    lo, hi = channel.lower * UM, channel.upper * UM
    out = np.zeros(p.shape)
    for ax in range(3):
        o = [i for i in range(3) if i != ax]
        for face, sign in ((hi[ax], 1.0), (lo[ax], -1.0)):
            sigma = m[ax] * sign
            if sigma == 0:
                continue
            q = np.stack([p[..., o[0]], p[..., o[1]], p[..., ax] - face], axis=-1)
            f = _rect_field(q, lo[o[0]], hi[o[0]], lo[o[1]], hi[o[1]])
            out[..., o[0]] += sigma * f[..., 0]
            out[..., o[1]] += sigma * f[..., 1]
            out[..., ax] += sigma * f[..., 2]
    return mu0_over_4pi * out


# -- estimators -------------------------------------------------------------


def projected_mean_field(
    spin_position,
    sensor: SensorCylinder,
    bias_axis=DEFAULT_BIAS_AXIS,
    n_nv_samples: int = 1000,
    rng: np.random.Generator | None = None,
    moment: float = PROTON_MOMENT,
    nv_positions=None,
):
    """Field of one sample spin projected on the bias axis, averaged over NV
    positions drawn uniformly in the sensor cylinder.

    ``spin_position`` (micrometres) may be a single point or an ``(n, 3)``
    array. Returns ``(mean, stderr)`` in tesla. Pass ``nv_positions`` to reuse
    one NV draw for many spins.
    """
    s = np.atleast_2d(np.asarray(spin_position, dtype=float))
    if np.any(s[:, 2] <= 0):
        if np.any(sensor.contains(s)):
            raise ValueError("sample spin lies inside the sensor volume")
        raise ValueError("sample spin must lie above the diamond surface (z > 0)")
    if nv_positions is None:
        if rng is None:
            raise ValueError("need either rng or nv_positions")
        nv_positions = sample_cylinder(sensor, n_nv_samples, rng)
    k = moment * projected_kernel(nv_positions, s, bias_axis)
    mean = k.mean(axis=0)
    se = k.std(axis=0, ddof=1) / math.sqrt(k.shape[0]) if k.shape[0] > 1 else np.full(mean.shape, np.inf)
    if np.ndim(spin_position) == 1:
        return float(mean[0]), float(se[0])
    return mean, se


def _average_estimates(channel, sensor, mc, axis, statistic, estimator, moment, point_index):
    """Per-average estimates for one geometry; stream keyed by (point, average)."""
    out = np.empty(mc.n_averages)
    for k in range(mc.n_averages):
        rng = stream(mc.seed, point_index, k)
        nv = sample_cylinder(sensor, mc.n_nv_samples, rng)
        if estimator == "conditional":
            out[k] = moment * np.mean(box_field(nv, channel, axis) @ axis)
            continue
        spins = sample_channel(channel, mc.n_spin_samples, rng)
        per_spin = moment * projected_kernel(nv, spins, axis).mean(axis=0)
        if statistic == "mean":
            out[k] = per_spin.mean() * channel.volume_m3
        else:
            out[k] = math.sqrt(np.mean(per_spin**2))
    return out


def ensemble_signal(
    channel: ChannelGeometry,
    sensor: SensorCylinder,
    mc: McParams,
    bias_axis=DEFAULT_BIAS_AXIS,
    statistic: str = "mean",
    estimator: str = "conditional",
    moment: float = PROTON_MOMENT,
    point_index: int = 0,
    return_samples: bool = False,
):
    """Ensemble NMR signal at the NV layer, averaged over ``mc.n_averages`` draws.

    ``statistic="mean"``
        coherent signal of a polarized sample: mean projected field per NV,
        per unit spin density (T m^3).
    ``statistic="rms"``
        root mean square over spin positions of the NV-averaged projected
        field of a single spin (T); pair estimator only.

    Returns ``(value, stderr)``, plus the per-average estimates when
    ``return_samples`` is set.
    """
    if statistic not in ("mean", "rms"):
        raise ValueError(f"unknown statistic {statistic!r}")
    if estimator not in ("conditional", "pairs"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if statistic == "rms" and estimator == "conditional":
        raise ValueError("the rms statistic needs explicit spin samples (estimator='pairs')")
    axis = _unit(bias_axis)
    est = _average_estimates(channel, sensor, mc, axis, statistic, estimator, moment, point_index)
    value = float(est.mean())
    se = float(est.std(ddof=1) / math.sqrt(est.size)) if est.size > 1 else math.inf
    if return_samples:
        return value, se, est
    return value, se


def rms_ensemble_signal(channel, sensor, mc, bias_axis=DEFAULT_BIAS_AXIS, moment=PROTON_MOMENT):
    """Per-spin RMS projected field (T), pair estimator."""
    return ensemble_signal(channel, sensor, mc, bias_axis, statistic="rms", estimator="pairs",
                           moment=moment)


def sensitivity_curve(
    d_nv_grid,
    channel: ChannelGeometry = ChannelGeometry(),
    sensor_diameter: float = 45.0,
    mc: McParams = McParams(n_nv_samples=200, n_averages=1000),
    bias_axis=DEFAULT_BIAS_AXIS,
    statistic: str = "mean",
    estimator: str = "conditional",
    sensor_center=(0.0, 0.0),
    n_bootstrap: int = 400,
    workers: int = 1,
) -> SensitivityCurve:
    """Relative NMR sensitivity ``|signal| * sqrt(d_NV)`` versus layer thickness.

    The curve is normalized to a maximum of one. ``stderr`` is the bootstrap
    standard error of the normalized values, resampling Monte Carlo averages.
    ``mean_signal`` holds the per-NV signal without the sqrt(d_NV) weight,
    normalized to its own maximum.
    """
    d = np.asarray(d_nv_grid, dtype=float)
    if d.size == 0:
        raise ValueError("empty d_NV grid")
    if np.any(d <= 0) or np.any(np.diff(d) <= 0):
        raise ValueError("d_NV grid must be positive and strictly ascending")
    axis = _unit(bias_axis)

    def task(i):
        sensor = SensorCylinder(sensor_diameter, float(d[i]), tuple(sensor_center))
        return _average_estimates(channel, sensor, mc, axis, statistic, estimator, PROTON_MOMENT, i)

    samples = np.array(map_ordered(task, range(d.size), workers))  # (n_d, n_avg)
    weight = np.sqrt(d)

    def normalize(est):
        sig = np.abs(est.mean(axis=-1))
        s = sig * weight
        return s / s.max(axis=-1, keepdims=True), sig / sig.max(axis=-1, keepdims=True)

    s_norm, m_norm = normalize(samples)
    boot_rng = stream(mc.seed, 2**31 - 1)
    n_avg = samples.shape[1]
    boots_s = np.empty((n_bootstrap, d.size))
    boots_m = np.empty((n_bootstrap, d.size))
    for b in range(n_bootstrap):
        idx = boot_rng.integers(0, n_avg, n_avg)
        boots_s[b], boots_m[b] = normalize(samples[:, idx])
    return SensitivityCurve(
        d_nv_um=d,
        signal_norm=s_norm,
        stderr=boots_s.std(axis=0, ddof=1),
        mean_signal=m_norm,
        mean_signal_stderr=boots_m.std(axis=0, ddof=1),
        metadata={
            "statistic": statistic,
            "estimator": estimator,
            "bias_axis": [float(v) for v in axis],
            "raw_signal": samples.mean(axis=1).tolist(),
            "raw_stderr": (samples.std(axis=1, ddof=1) / math.sqrt(n_avg)).tolist(),
        },
    )


@dataclass
class SignMap:
    y_um: np.ndarray
    z_um: np.ndarray
    sign: np.ndarray  # (n_z, n_y)
    field: np.ndarray


def sign_map(
    channel: ChannelGeometry,
    sensor: SensorCylinder,
    n_y: int = 40,
    n_z: int = 32,
    bias_axis=DEFAULT_BIAS_AXIS,
    x_um: float = 0.0,
    n_nv_samples: int = 20_000,
    seed: int = 0,
) -> SignMap:
    """Sign of the NV-averaged projected field for spins on a cross-section
    grid (cell centres) of the channel at ``x = x_um``.

    NV positions are drawn once and mirrored through the plane y = y_sensor
    (antithetic pairs), so a geometry symmetric under that mirror yields a
    mirror-symmetric map.
    """
    if n_y < 2 or n_z < 2:
        raise ValueError("sign map needs at least a 2 x 2 grid")
    lo, hi = channel.lower, channel.upper
    y = lo[1] + (np.arange(n_y) + 0.5) * (hi[1] - lo[1]) / n_y
    z = lo[2] + (np.arange(n_z) + 0.5) * (hi[2] - lo[2]) / n_z
    Y, Z = np.meshgrid(y, z)
    spins = np.column_stack([np.full(Y.size, x_um), Y.ravel(), Z.ravel()])
    nv = sample_cylinder(sensor, n_nv_samples // 2, stream(seed, 0))
    mirror = nv.copy()
    mirror[:, 1] = 2 * sensor.center[1] - mirror[:, 1]
    nv = np.concatenate([nv, mirror])
    fields = np.concatenate(
        [projected_mean_field(chunk, sensor, bias_axis, nv_positions=nv)[0]
         for chunk in np.array_split(spins, max(1, spins.shape[0] // 64))]
    ).reshape(Z.shape)
    return SignMap(y_um=y, z_um=z, sign=np.sign(fields).astype(int), field=fields)
