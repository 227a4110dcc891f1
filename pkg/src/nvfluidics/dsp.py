"""Trace/spectrum containers, power spectra and least-squares line fits.

All fits use damped least squares (Levenberg-Marquardt via
``scipy.optimize.least_squares``) with analytic Jacobians. Each fit works in
rescaled units (time in units of the record length, frequency in bins) so the
optimizer sees O(1) parameters; results are converted back to SI.

The "modified" Lorentzian is a Lorentzian on a constant baseline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

MAX_ITERATIONS = 500
STEP_TOL = 1e-10


@dataclass
class TimeTrace:
    t0: float
    dt: float
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("a trace needs at least 2 samples")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def __len__(self):
        return self.values.size


@dataclass
class SampledCurve:
    """Non-uniformly sampled curve (e.g. a log-spaced T1 sweep)."""

    x: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.shape != self.values.shape or self.x.ndim != 1:
            raise ValueError("x and values must be 1-D arrays of equal length")
        if self.x.size < 2:
            raise ValueError("a curve needs at least 2 samples")

    @property
    def times(self) -> np.ndarray:
        return self.x

    def __len__(self):
        return self.values.size


@dataclass
class PowerSpectrum:
    f0: float
    df: float
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise ValueError("power values must be non-negative")

    @property
    def frequencies(self) -> np.ndarray:
        return self.f0 + self.df * np.arange(self.values.size)

    def peak_frequency(self, fmin: float = 0.0) -> float:
        f = self.frequencies
        mask = f >= fmin
        return float(f[mask][np.argmax(self.values[mask])])


@dataclass
class FitResult:
    parameters: dict
    uncertainties: dict
    residual_norm: float
    converged: bool
    flags: set = field(default_factory=set)

    def __getitem__(self, name):
        return self.parameters[name]


# -- CSV --------------------------------------------------------------------


def write_trace_csv(path, trace, columns=("time_s", "value")):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for t, v in zip(trace.times, trace.values):
            writer.writerow([repr(float(t)), repr(float(v))])


def read_trace_csv(path) -> TimeTrace | SampledCurve:
    """Read a two-column ``time,value`` CSV with a header row.

    Uniformly spaced time columns give a TimeTrace, anything else a
    SampledCurve.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ValueError(f"{path}: need a header and at least 2 data rows")
    header, body = rows[0], rows[1:]
    if len(header) != 2:
        raise ValueError(f"{path}: expected 2 columns, header is {header}")
    try:
        data = np.array([[float(a), float(b)] for a, b in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric data ({exc})") from None
    t, v = data[:, 0], data[:, 1]
    steps = np.diff(t)
    if np.all(steps > 0) and np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        return TimeTrace(t0=t[0], dt=(t[-1] - t[0]) / (t.size - 1), values=v, metadata={"source": str(path)})
    return SampledCurve(x=t, values=v, metadata={"source": str(path)})


# -- spectra ----------------------------------------------------------------


def power_spectrum(trace: TimeTrace, window: str = "none", remove_mean: bool = False) -> PowerSpectrum:
    """One-sided power spectrum, normalized so that with ``window="none"``
    the summed power equals the summed squared samples (Parseval)."""
    x = np.asarray(trace.values, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 samples")
    if remove_mean:
        x = x - x.mean()
    if window == "hann":
        x = x * np.hanning(n)
    elif window != "none":
        raise ValueError(f"unknown window {window!r}")
    X = np.fft.rfft(x)
    p = np.abs(X) ** 2 / n
    if n % 2 == 0:
        p[1:-1] *= 2
    else:
        p[1:] *= 2
    return PowerSpectrum(f0=0.0, df=1.0 / (n * trace.dt), values=p, metadata=dict(trace.metadata))


# -- models -----------------------------------------------------------------


def decaying_sinusoid(t, amplitude, frequency, phase, rate, offset):
    return amplitude * np.cos(2 * np.pi * frequency * t + phase) * np.exp(-rate * t) + offset


def decaying_sinusoid_jac(t, amplitude, frequency, phase, rate, offset):
    arg = 2 * np.pi * frequency * t + phase
    e = np.exp(-rate * t)
    c, s = np.cos(arg) * e, np.sin(arg) * e
    return np.column_stack(
        [c, -amplitude * s * 2 * np.pi * t, -amplitude * s, -t * amplitude * c, np.ones_like(t)]
    )


def biexponential(t, a1, rate_a, a2, rate_b, offset):
    return a1 * np.exp(-rate_a * t) + a2 * np.exp(-rate_b * t) + offset


def biexponential_jac(t, a1, rate_a, a2, rate_b, offset):
    ea, eb = np.exp(-rate_a * t), np.exp(-rate_b * t)
    return np.column_stack([ea, -a1 * t * ea, eb, -a2 * t * eb, np.ones_like(t)])


def lorentzians(f, params):
    """Sum of Lorentzians plus baseline; ``params = [a, f0, w]*k + [baseline]``."""
    f = np.asarray(f, dtype=float)
    out = np.full(f.shape, params[-1], dtype=float)
    for a, f0, w in np.reshape(params[:-1], (-1, 3)):
        h2 = (w / 2) ** 2
        out += a * h2 / ((f - f0) ** 2 + h2)
    return out


def lorentzians_jac(f, params):
    f = np.asarray(f, dtype=float)
    cols = []
    for a, f0, w in np.reshape(params[:-1], (-1, 3)):
        h = w / 2
        u = f - f0
        d = u**2 + h**2
        cols += [h**2 / d, 2 * a * h**2 * u / d**2, a * h * u**2 / d**2]
    cols.append(np.ones_like(f))
    return np.column_stack(cols)


def coherent_lorentzians(f, params):
    """Power of coherently summed complex Lorentzian lines plus baseline.

    ``params = [s, f0, w]*k + [theta_2, ..., theta_k] + [baseline]`` where
    ``s**2`` is the peak power of a line on its own and ``theta_l`` its phase
    relative to line 1. Models the spectrum of several decaying tones that
    start with fixed relative phases (e.g. a J-coupled multiplet); for one line
    it reduces to :func:`lorentzians`.
    """
    f = np.asarray(f, dtype=float)
    k = (len(params) - 1 + 1) // 4
    lines = np.reshape(params[: 3 * k], (-1, 3))
    thetas = np.concatenate([[0.0], params[3 * k : 4 * k - 1]])
    z = np.zeros(f.shape, dtype=complex)
    for (s, f0, w), th in zip(lines, thetas):
        h = w / 2
        z += s * np.exp(1j * th) * h / (h - 1j * (f - f0))
    return np.abs(z) ** 2 + params[-1]


def coherent_lorentzians_jac(f, params):
    f = np.asarray(f, dtype=float)
    k = (len(params) - 1 + 1) // 4
    lines = np.reshape(params[: 3 * k], (-1, 3))
    thetas = np.concatenate([[0.0], params[3 * k : 4 * k - 1]])
    parts, z = [], np.zeros(f.shape, dtype=complex)
    for (s, f0, w), th in zip(lines, thetas):
        h = w / 2
        u = f - f0
        den = h - 1j * u
        zl = s * np.exp(1j * th) * h / den
        rot = s * np.exp(1j * th)
        parts.append((zl, zl / s if s != 0 else np.exp(1j * th) * h / den,
                      -1j * rot * h / den**2, 0.5 * (-1j * u) * rot / den**2))
        z += zl
    zc = np.conj(z)
    cols, phase_cols = [], []
    for i, (zl, dz_ds, dz_df0, dz_dw) in enumerate(parts):
        cols += [2 * np.real(zc * dz_ds), 2 * np.real(zc * dz_df0), 2 * np.real(zc * dz_dw)]
        if i > 0:
            phase_cols.append(2 * np.real(zc * 1j * zl))
    return np.column_stack(cols + phase_cols + [np.ones_like(f)])


# -- fitting helpers --------------------------------------------------------


def _solve(fun, jac, p0, bounds=(-np.inf, np.inf)):
    method = "lm" if bounds == (-np.inf, np.inf) else "trf"
    res = least_squares(
        fun,
        p0,
        jac=jac,
        method=method,
        bounds=bounds,
        xtol=STEP_TOL,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=MAX_ITERATIONS * (len(p0) + 1) if method == "lm" else MAX_ITERATIONS,
        x_scale="jac",
    )
    return res


def _covariance(res, n):
    p = res.x.size
    J = res.jac
    rss = float(np.sum(res.fun**2))
    dof = max(n - p, 1)
    try:
        cov = np.linalg.pinv(J.T @ J) * (rss / dof)
    except np.linalg.LinAlgError:
        cov = np.full((p, p), np.nan)
    return cov, rss


def _ok(res):
    return bool(res.success and res.status > 0 and np.all(np.isfinite(res.x)))


# -- decaying sinusoid ------------------------------------------------------


def _spectral_guess(t, y):
    """Frequency, phase and amplitude of the dominant tone by zero-padded DFT."""
    n = y.size
    dt = t[1] - t[0]
    pad = 16 * n
    X = np.fft.rfft(y, pad)
    k = int(np.argmax(np.abs(X[1:]))) + 1
    # parabolic interpolation on |X|
    if 0 < k < X.size - 1:
        a, b, c = np.abs(X[k - 1 : k + 2])
        denom = a - 2 * b + c
        k = k + (0.5 * (a - c) / denom if denom != 0 else 0.0)
    f = k / (pad * dt)
    proj = np.sum(y * np.exp(-2j * np.pi * f * t))
    return f, float(np.angle(proj)), 2 * abs(proj) / n


def fit_decaying_sinusoid(trace: TimeTrace) -> FitResult:
    """Fit ``A cos(2 pi f t + phi) exp(-t/tau) + C``.

    Returns parameters ``amplitude, frequency, phase, decay_time, offset``.
    A constant trace yields ``amplitude = 0`` with the
    ``frequency_unconstrained`` flag; ``decay_time`` is ``inf`` when no decay
    is resolved.
    """
    y = np.asarray(trace.values, dtype=float)
    if y.size < 8:
        raise ValueError("decaying-sinusoid fit needs at least 8 samples")
    t = np.asarray(trace.times, dtype=float)
    span = t[-1] - t[0] if t[-1] != t[0] else trace.dt
    scale = max(np.max(np.abs(y)), 1e-300)
    offset0 = float(y.mean())
    if np.ptp(y) <= 1e-12 * max(1.0, abs(offset0)):
        return FitResult(
            parameters={"amplitude": 0.0, "frequency": math.nan, "phase": math.nan,
                        "decay_time": math.nan, "offset": offset0},
            uncertainties={"amplitude": 0.0, "frequency": math.nan, "phase": math.nan,
                           "decay_time": math.nan, "offset": 0.0},
            residual_norm=float(np.linalg.norm(y - offset0)),
            converged=True,
            flags={"frequency_unconstrained"},
        )

    u = (t - t[0]) / span  # fit in units of the record length
    ys = y / scale
    f0, ph0, a0 = _spectral_guess(u, ys - ys.mean())

    def fun(p):
        return decaying_sinusoid(u, *p) - ys

    def jac(p):
        return decaying_sinusoid_jac(u, *p)

    best = None
    for rate0 in (0.0, 1.0, 5.0):
        res = _solve(fun, jac, np.array([a0 * (1 + rate0 / 2), f0, ph0, rate0, ys.mean()]))
        if best is None or res.cost < best.cost:
            best = res
    res = best
    cov, rss = _covariance(res, y.size)
    sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    a, f, ph, k, c = res.x
    if a < 0:
        a, ph = -a, ph + math.pi
    # phase referenced to absolute time t, not to the first sample
    f_si = f / span
    ph = (ph - 2 * np.pi * f_si * t[0]) % (2 * np.pi)
    k_si = k / span
    decay_time = 1.0 / k_si if k_si > 0 else math.inf
    decay_unc = sig[3] / span / k_si**2 if k_si > 0 else math.inf
    flags = set()
    if k_si < 0:
        flags.add("growing_envelope")
    return FitResult(
        parameters={"amplitude": float(a * scale), "frequency": float(f_si), "phase": float(ph),
                    "decay_time": float(decay_time), "offset": float(c * scale)},
        uncertainties={"amplitude": float(sig[0] * scale), "frequency": float(sig[1] / span),
                       "phase": float(sig[2]), "decay_time": float(abs(decay_unc)),
                       "offset": float(sig[4] * scale)},
        residual_norm=float(math.sqrt(rss) * scale),
        converged=_ok(res),
        flags=flags,
    )


# -- biexponential ----------------------------------------------------------


def _linear_amplitudes(u, y, rates):
    cols = [np.exp(-r * u) for r in rates] + [np.ones_like(u)]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, float(np.sum((A @ coef - y) ** 2))


def fit_biexponential(trace) -> FitResult:
    """Fit ``A1 exp(-Ga t) + A2 exp(-Gb t) + C`` with ``Ga >= Gb >= 0``.

    Accepts a TimeTrace or a SampledCurve. When the data do not support two
    distinct rates the ``degenerate`` flag is set, the single-exponential
    solution is reported in ``A1, Ga`` (with ``A2 = 0``, ``Gb = Ga``) and
    ``combined_rate`` carries the amplitude-weighted rate.
    """
    t = np.asarray(trace.times, dtype=float)
    y = np.asarray(trace.values, dtype=float)
    if y.size < 6:
        raise ValueError("biexponential fit needs at least 6 samples")
    names = ("A1", "rate_a", "A2", "rate_b", "offset")
    if np.ptp(y) <= 1e-12 * max(1.0, abs(y.mean())):
        zero = dict.fromkeys(names, 0.0)
        params = dict(zero, offset=float(y.mean()), combined_rate=0.0)
        return FitResult(params, dict(zero, combined_rate=0.0), 0.0, True, {"flat"})

    tmax = t.max()
    u = t / tmax
    # rate grid in units of 1/tmax, covering the sampled window
    grid = np.geomspace(0.1, 10.0 * tmax / max(t.min(), tmax * 1e-9), 60)

    # single exponential by variable projection, then LM
    sse1 = [(_linear_amplitudes(u, y, [r])[1], r) for r in grid]
    r1 = min(sse1)[1]
    (a1_0, c1_0), _ = _linear_amplitudes(u, y, [r1])

    def fun1(p):
        return p[0] * np.exp(-p[1] * u) + p[2] - y

    def jac1(p):
        e = np.exp(-p[1] * u)
        return np.column_stack([e, -p[0] * u * e, np.ones_like(u)])

    single = _solve(fun1, jac1, np.array([a1_0, r1, c1_0]))
    rss1 = float(np.sum(single.fun**2))

    best = None
    for i, ra in enumerate(grid):
        for rb in grid[:i]:
            coef, sse = _linear_amplitudes(u, y, [ra, rb])
            if best is None or sse < best[0]:
                best = (sse, ra, rb, coef)
    _, ra, rb, coef = best
    p0 = np.array([coef[0], ra, coef[1], rb, coef[2]])

    def fun(p):
        return biexponential(u, *p) - y

    def jac(p):
        return biexponential_jac(u, *p)

    res = _solve(fun, jac, p0)
    rss2 = float(np.sum(res.fun**2))
    a1, ga, a2, gb, c = res.x
    if ga < gb:
        a1, ga, a2, gb = a2, gb, a1, ga

    n = y.size
    total = float(np.sum((y - y.mean()) ** 2))
    tiny = 1e-20 * max(total, 1e-300)
    if rss1 <= tiny:
        f_stat = 0.0
    else:
        f_stat = (rss1 - rss2) / 2 / max(rss2 / max(n - 5, 1), tiny)
    degenerate = (
        f_stat < 10.0
        or abs(ga - gb) < 0.02 * max(abs(ga), 1e-300)
        or min(abs(a1), abs(a2)) < 1e-3 * (abs(a1) + abs(a2))
    )
    flags = set()
    if degenerate:
        flags.add("degenerate")
        cov, rss = _covariance(single, n)
        sig = np.sqrt(np.clip(np.diag(cov), 0, None))
        a, g, c = single.x
        params = {"A1": a, "rate_a": g / tmax, "A2": 0.0, "rate_b": g / tmax, "offset": c,
                  "combined_rate": g / tmax}
        unc = {"A1": sig[0], "rate_a": sig[1] / tmax, "A2": 0.0, "rate_b": sig[1] / tmax,
               "offset": sig[2], "combined_rate": sig[1] / tmax}
        converged = _ok(single)
    else:
        res.x[:] = [a1, ga, a2, gb, c]
        res.jac = biexponential_jac(u, *res.x)
        cov, rss = _covariance(res, n)
        sig = np.sqrt(np.clip(np.diag(cov), 0, None))
        params = {"A1": a1, "rate_a": ga / tmax, "A2": a2, "rate_b": gb / tmax, "offset": c,
                  "combined_rate": (a1 * ga + a2 * gb) / (a1 + a2) / tmax}
        unc = {"A1": sig[0], "rate_a": sig[1] / tmax, "A2": sig[2], "rate_b": sig[3] / tmax,
               "offset": sig[4], "combined_rate": math.nan}
        converged = _ok(res)
    return FitResult(
        {k: float(v) for k, v in params.items()},
        {k: float(v) for k, v in unc.items()},
        float(math.sqrt(rss)),
        converged,
        flags,
    )


# -- Lorentzians ------------------------------------------------------------


def _half_width_bins(p, k, level):
    """Number of bins from peak ``k`` until ``p`` drops below ``level``."""
    left = k
    while left > 0 and p[left] > level:
        left -= 1
    right = k
    while right < p.size - 1 and p[right] > level:
        right += 1
    return max((right - left) / 2.0, 0.5)


def fit_lorentzian(
    spectrum: PowerSpectrum,
    n_peaks: int = 1,
    fmin: float | None = None,
    fmax: float | None = None,
    coherent: bool = False,
) -> FitResult:
    """Fit one or two Lorentzians on a constant baseline.

    Parameters are ``center_i, fwhm_i, amplitude_i`` (i = 1..n_peaks, centers
    ascending) and ``baseline``. ``fmin``/``fmax`` restrict the fitted band.
    With ``coherent=True`` a doublet is fitted as the power of two complex
    lines with a free relative phase (see :func:`coherent_lorentzians`),
    which removes the peak-pulling of overlapping in-phase lines; the extra
    parameter is reported as ``relative_phase``.
    The ``not_found`` flag is set when the fitted peak height is compatible
    with the largest excursion expected from exponentially distributed
    periodogram noise.
    """
    if n_peaks not in (1, 2):
        raise ValueError(f"n_peaks must be 1 or 2, got {n_peaks}")
    f_all = spectrum.frequencies
    mask = np.ones(f_all.size, bool)
    if fmin is not None:
        mask &= f_all >= fmin
    if fmax is not None:
        mask &= f_all <= fmax
    f, p = f_all[mask], spectrum.values[mask]
    if p.size < 16:
        raise ValueError(f"Lorentzian fit needs at least 16 bins, got {p.size}")

    df = spectrum.df
    fref = f[0]
    x = (f - fref) / df  # bins
    scale = max(p.max(), 1e-300)
    ps = p / scale
    base0 = float(np.median(ps))

    k_max = int(np.argmax(ps))
    hw = _half_width_bins(ps, k_max, base0 + (ps[k_max] - base0) / 2)
    if n_peaks == 1:
        p0 = [ps[k_max] - base0, x[k_max], 2 * hw]
    else:
        peaks, props = find_peaks(ps, prominence=(ps[k_max] - base0) * 0.05)
        order = np.argsort(props["prominences"])[::-1]
        if peaks.size >= 2:
            k1, k2 = sorted(peaks[order[:2]])
            hw1 = min(_half_width_bins(ps, k1, base0 + (ps[k1] - base0) / 2), (k2 - k1) / 2)
            hw2 = min(_half_width_bins(ps, k2, base0 + (ps[k2] - base0) / 2), (k2 - k1) / 2)
            p0 = [ps[k1] - base0, x[k1], 2 * hw1, ps[k2] - base0, x[k2], 2 * hw2]
        else:
            a = (ps[k_max] - base0) / 2
            p0 = [a, x[k_max] - hw / 2, hw, a, x[k_max] + hw / 2, hw]
    coherent = coherent and n_peaks == 2
    if coherent:
        # amplitudes become sqrt(peak power); overlap makes the raw peak heights too large
        for i in (0, 3):
            p0[i] = math.sqrt(max(p0[i], 1e-12) / 2)
        p0 = np.array(p0 + [0.0, base0], dtype=float)
        model, model_jac = coherent_lorentzians, coherent_lorentzians_jac
    else:
        p0 = np.array(p0 + [base0], dtype=float)
        model, model_jac = lorentzians, lorentzians_jac

    def fun(q):
        return model(x, q) - ps

    def jac(q):
        return model_jac(x, q)

    res = _solve(fun, jac, p0)
    cov, rss = _covariance(res, p.size)
    sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    peaks_fit = []
    for i in range(n_peaks):
        a, c, w = res.x[3 * i : 3 * i + 3]
        sa, sc, sw = sig[3 * i : 3 * i + 3]
        if coherent:
            a, sa = a * a, 2 * abs(a) * sa
        peaks_fit.append((c, abs(w), a, sc, sw, sa))
    peaks_fit.sort(key=lambda q: q[0])

    params, unc = {}, {}
    for i, (c, w, a, sc, sw, sa) in enumerate(peaks_fit, start=1):
        params[f"center_{i}"] = fref + c * df
        params[f"fwhm_{i}"] = w * df
        params[f"amplitude_{i}"] = a * scale
        unc[f"center_{i}"] = sc * df
        unc[f"fwhm_{i}"] = sw * df
        unc[f"amplitude_{i}"] = sa * scale
    params["baseline"] = res.x[-1] * scale
    unc["baseline"] = sig[-1] * scale
    if coherent:
        params["relative_phase"] = float(np.angle(np.exp(1j * res.x[6])))
        unc["relative_phase"] = sig[6]

    flags = set()
    # noise floor from bins clear of the fitted lines; line tails would inflate it
    off = np.ones(x.size, bool)
    for c, w, *_ in peaks_fit:
        off &= np.abs(x - c) > 3 * max(w, 1.0)
    floor = ps[off] if off.sum() >= 16 else ps
    noise_mean = max(np.median(floor), 1e-300) / math.log(2)
    threshold = (math.log(p.size) + 7.0) * noise_mean
    # judge each line by the height it reaches on the sampled bins, so a fit
    # collapsed onto a single noise spike cannot claim a huge amplitude
    heights = []
    for c, w, a, *_ in peaks_fit:
        h2 = (w / 2) ** 2
        heights.append(a * np.max(h2 / ((x - c) ** 2 + h2)) if w > 0 else 0.0)
    if min(heights) < threshold or any(q[2] <= 0 for q in peaks_fit) or not np.ptp(p) > 0:
        flags.add("not_found")
    return FitResult(
        {k: float(v) for k, v in params.items()},
        {k: float(v) for k, v in unc.items()},
        float(math.sqrt(rss) * scale),
        _ok(res),
        flags,
    )


def hz_to_ppm(delta_f: float, reference: float) -> float:
    if reference <= 0:
        raise ValueError(f"reference frequency must be positive, got {reference}")
    return 1e6 * delta_f / reference
