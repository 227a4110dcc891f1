"""Independent reference implementations used only by the tests.

None of these share code paths with the package beyond the point-dipole
kernel, which is itself checked against hand values.
"""

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

from nvfluidics import geomc

# -- spin: 2x2 density matrix with Lindblad relaxation -----------------------

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SPLUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|, raises z
SMINUS = SPLUS.T.copy()
I2 = np.eye(2)


def rho_from_bloch(v):
    return 0.5 * (I2 + v[0] * SX + v[1] * SY + v[2] * SZ)


def bloch_from_rho(rho):
    return np.real([np.trace(rho @ s) for s in (SX, SY, SZ)])


def _liouvillian(h, jumps):
    # column-stacking vec: vec(A X B) = (B^T kron A) vec(X)
    L = -1j * (np.kron(I2, h) - np.kron(h.T, I2))
    for c in jumps:
        cdc = c.conj().T @ c
        L += np.kron(c.conj(), c) - 0.5 * np.kron(I2, cdc) - 0.5 * np.kron(cdc.T, I2)
    return L


def propagate(rho, h, jumps, t):
    vec = rho.reshape(-1, order="F")
    out = expm(_liouvillian(h, jumps) * t) @ vec
    return out.reshape(2, 2, order="F")


def pulse_oracle(rho, rabi, duration, phase, detuning):
    h = np.pi * (rabi * np.cos(phase) * SX + rabi * np.sin(phase) * SY + detuning * SZ)
    return propagate(rho, h, [], duration)


def free_oracle(rho, detuning, tau, gamma1, gamma2, zeq):
    h = np.pi * detuning * SZ
    jumps = [
        np.sqrt(gamma1 * (1 + zeq) / 2) * SPLUS,
        np.sqrt(gamma1 * (1 - zeq) / 2) * SMINUS,
        np.sqrt(max(gamma2 - gamma1 / 2, 0.0) / 2) * SZ,
    ]
    return propagate(rho, h, jumps, tau)


# -- XY8 toggled phase by adaptive quadrature -------------------------------


def xy8_phase_quad(b, f, phase, tau, n_pulses, gamma, t_start=0.0, t2star=np.inf):
    """2 pi gamma * int s(t) b(t) dt with s flipping at tau*(k + 1/2)."""
    decay = 0.0 if np.isinf(t2star) else 1.0 / t2star
    edges = np.concatenate([[0.0], tau * (np.arange(n_pulses) + 0.5), [n_pulses * tau]])
    total = 0.0
    for k in range(len(edges) - 1):
        sign = 1.0 if k % 2 == 0 else -1.0
        val, _ = quad(
            lambda u: b * np.cos(2 * np.pi * f * (u + t_start) + phase) * np.exp(-decay * (u + t_start)),
            edges[k], edges[k + 1], epsabs=0, epsrel=1e-11, limit=200,
        )
        total += sign * val
    return 2 * np.pi * gamma * total


# -- geomc: deterministic double-grid sum -----------------------------------


def cylinder_grid(sensor, nr, nphi, nz):
    """Midpoint polar grid over the sensor cylinder, weights proportional to r."""
    r = (np.arange(nr) + 0.5) / nr * sensor.diameter / 2
    ph = (np.arange(nphi) + 0.5) * 2 * np.pi / nphi
    z = -(np.arange(nz) + 0.5) / nz * sensor.depth_d_nv
    R, P, Z = np.meshgrid(r, ph, z, indexing="ij")
    pts = np.column_stack([(R * np.cos(P)).ravel() + sensor.center[0],
                           (R * np.sin(P)).ravel() + sensor.center[1], Z.ravel()])
    w = R.ravel()
    return pts, w / w.sum()


def box_grid(channel, n):
    lo, hi = channel.lower, channel.upper
    axes = [lo[i] + (np.arange(n[i]) + 0.5) * (hi[i] - lo[i]) / n[i] for i in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)


def double_grid_signal(channel, sensor, axis, scale=1):
    """Channel-integrated, NV-averaged projected field (T) by midpoint sums."""
    nv, w = cylinder_grid(sensor, 4 * scale, 8 * scale, 4 * scale)
    sp = box_grid(channel, (20 * scale, 8 * scale, 8 * scale))
    total = 0.0
    for chunk in np.array_split(sp, max(1, len(sp) // 2000)):
        total += w @ geomc.projected_kernel(nv, chunk, np.asarray(axis)).sum(axis=1)
    return total / len(sp) * channel.volume_m3 * geomc.PROTON_MOMENT


def richardson_signal(channel, sensor, axis):
    """Second-order Richardson extrapolation of the midpoint sums at scale 1
    and 2. Returns ``(value, error_estimate)``."""
    s1 = double_grid_signal(channel, sensor, axis, 1)
    s2 = double_grid_signal(channel, sensor, axis, 2)
    return s2 + (s2 - s1) / 3, abs(s2 - s1) / 3
