import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nvfluidics import dsp
from nvfluidics.dsp import PowerSpectrum, SampledCurve, TimeTrace

# -- power spectrum ----------------------------------------------------------


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(2, 600), elements=st.floats(-1e3, 1e3)))
def test_parseval(x):
    s = dsp.power_spectrum(TimeTrace(0.0, 1e-3, x))
    energy = float(np.sum(x**2))
    assert abs(s.values.sum() - energy) <= 1e-9 * max(energy, 1e-300)
    assert np.all(s.values >= 0)
    assert s.df == pytest.approx(1 / (x.size * 1e-3))


def test_bin_centred_cosine():
    n, dt = 256, 1e-3
    t = np.arange(n) * dt
    s = dsp.power_spectrum(TimeTrace(0.0, dt, np.cos(2 * np.pi * 20 / (n * dt) * t)))
    assert s.values[20] / s.values.sum() >= 0.999


def test_constant_trace_all_power_at_dc():
    s = dsp.power_spectrum(TimeTrace(0.0, 0.1, np.full(64, 3.0)))
    assert s.values[0] == pytest.approx(s.values.sum())
    assert s.peak_frequency() == 0.0


def test_two_tones_14_bins_apart():
    fs = 1000.0
    t = np.arange(1000) / fs
    x = np.cos(2 * np.pi * 100 * t) + np.cos(2 * np.pi * 114 * t)
    s = dsp.power_spectrum(TimeTrace(0.0, 1 / fs, x))
    assert s.df == pytest.approx(1.0)
    top = np.sort(np.argsort(s.values)[-2:])
    assert top[1] - top[0] == 14


def test_spectrum_errors_and_hann():
    with pytest.raises(ValueError):
        TimeTrace(0.0, 1.0, [1.0])
    with pytest.raises(ValueError):
        dsp.power_spectrum(TimeTrace(0.0, 1.0, [1.0, 2.0]), window="flat-top")
    x = np.cos(2 * np.pi * 10.3 * np.arange(128) / 128)
    plain = dsp.power_spectrum(TimeTrace(0.0, 1 / 128, x))
    hann = dsp.power_spectrum(TimeTrace(0.0, 1 / 128, x), window="hann")
    far = slice(40, None)
    assert hann.values[far].sum() < 1e-3 * plain.values[far].sum()


def test_remove_mean():
    x = 5 + np.sin(2 * np.pi * np.arange(64) / 8)
    s = dsp.power_spectrum(TimeTrace(0.0, 1.0, x), remove_mean=True)
    assert s.values[0] < 1e-20
    assert s.peak_frequency() == pytest.approx(1 / 8)


# -- CSV ---------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        n = int(rng.integers(2, 300))
        tr = TimeTrace(float(rng.uniform(0, 1)), float(rng.uniform(1e-9, 1e-3)), rng.normal(size=n))
        p = tmp_path / f"t{i}.csv"
        dsp.write_trace_csv(p, tr)
        back = dsp.read_trace_csv(p)
        assert isinstance(back, TimeTrace)
        np.testing.assert_array_equal(back.values, tr.values)
        assert back.t0 == tr.t0
        assert back.dt == pytest.approx(tr.dt, rel=1e-12)


def test_csv_nonuniform_and_errors(tmp_path):
    c = SampledCurve(np.geomspace(1e-7, 1e-3, 10), np.linspace(1, 0, 10))
    p = tmp_path / "c.csv"
    dsp.write_trace_csv(p, c)
    assert p.read_text().splitlines()[0] == "time_s,value"
    back = dsp.read_trace_csv(p)
    assert isinstance(back, SampledCurve)
    np.testing.assert_array_equal(back.x, c.x)
    (tmp_path / "bad.csv").write_text("a,b\n1,x\n2,3\n")
    with pytest.raises(ValueError):
        dsp.read_trace_csv(tmp_path / "bad.csv")
    (tmp_path / "short.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        dsp.read_trace_csv(tmp_path / "short.csv")


# -- decaying sinusoid -------------------------------------------------------


def sinusoid_trace(f, tau, n=200, dt=None, amplitude=0.5, phase=0.3, offset=1.0, noise=0.0, rng=None):
    dt = dt or 1 / (f * 20)
    t = np.arange(n) * dt
    rate = 0.0 if math.isinf(tau) else 1 / tau
    y = dsp.decaying_sinusoid(t, amplitude, f, phase, rate, offset)
    if noise:
        y = y + rng.normal(0, noise * amplitude, n)
    return TimeTrace(0.0, dt, y)


def test_sinusoid_40mhz_noiseless():
    fit = dsp.fit_decaying_sinusoid(sinusoid_trace(40e6, 1e-6, n=400, dt=1e-9))
    assert fit.converged
    assert abs(fit["frequency"] / 40e6 - 1) < 5e-4
    assert abs(fit["decay_time"] / 1e-6 - 1) < 0.01
    assert all(v >= 0 for v in fit.uncertainties.values())


def test_sinusoid_zero_amplitude():
    fit = dsp.fit_decaying_sinusoid(TimeTrace(0.0, 1e-9, np.full(50, 0.7)))
    assert fit.converged
    assert fit["amplitude"] == 0.0
    assert "frequency_unconstrained" in fit.flags
    assert fit["offset"] == pytest.approx(0.7)


def test_sinusoid_too_short():
    with pytest.raises(ValueError):
        dsp.fit_decaying_sinusoid(TimeTrace(0.0, 1.0, np.arange(7.0)))


def test_sinusoid_noisy_100_reps():
    rng = np.random.default_rng(1)
    errs = []
    for _ in range(100):
        fit = dsp.fit_decaying_sinusoid(sinusoid_trace(40e6, 1e-6, n=200, dt=1e-9, noise=0.05, rng=rng))
        assert fit.converged
        errs.append(abs(fit["frequency"] / 40e6 - 1))
    assert max(errs) < 5e-3


def test_sinusoid_round_trip_100_draws():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(64, 300))
        cycles = rng.uniform(2, 0.3 * n)
        f = cycles / n  # dt = 1
        tau = n / rng.uniform(0.01, 3) if rng.random() < 0.8 else math.inf
        a = rng.uniform(0.1, 10)
        ph = rng.uniform(0, 2 * np.pi)
        c = rng.uniform(-1, 1)
        t = np.arange(n, dtype=float)
        rate = 0 if math.isinf(tau) else 1 / tau
        fit = dsp.fit_decaying_sinusoid(TimeTrace(0.0, 1.0, dsp.decaying_sinusoid(t, a, f, ph, rate, c)))
        assert fit.converged
        assert fit["frequency"] == pytest.approx(f, rel=5e-4)
        assert fit["amplitude"] == pytest.approx(a, rel=1e-3)
        if math.isinf(tau):
            assert fit["decay_time"] > 100 * n
        else:
            assert fit["decay_time"] == pytest.approx(tau, rel=0.01)
        dphi = np.angle(np.exp(1j * (fit["phase"] - ph)))
        assert abs(dphi) < 1e-3


def test_sinusoid_amplitude_scaling():
    base = sinusoid_trace(40e6, 1e-6, n=300, dt=1e-9, rng=np.random.default_rng(3), noise=0.02)
    f1 = dsp.fit_decaying_sinusoid(base)
    f2 = dsp.fit_decaying_sinusoid(TimeTrace(0.0, base.dt, 1e3 * base.values))
    assert f2["frequency"] == pytest.approx(f1["frequency"], rel=1e-8)
    assert f2["decay_time"] == pytest.approx(f1["decay_time"], rel=1e-6)
    assert f2["amplitude"] == pytest.approx(1e3 * f1["amplitude"], rel=1e-6)


# -- biexponential -----------------------------------------------------------

TAUS = np.geomspace(200e-9, 5.5e-3, 51)


def curve(a1, ga, a2, gb, c=0.0, noise=0.0, rng=None):
    y = dsp.biexponential(TAUS, a1, ga, a2, gb, c)
    if noise:
        y = y + rng.normal(0, noise, y.size)
    return SampledCurve(TAUS, y)


def test_biexp_single_exponential_degenerate():
    fit = dsp.fit_biexponential(curve(1.0, 800.0, 0.0, 0.0))
    assert "degenerate" in fit.flags
    assert fit["combined_rate"] == pytest.approx(800.0, rel=0.01)
    assert fit["A2"] == 0.0


def test_biexp_log_grid():
    fit = dsp.fit_biexponential(curve(0.5, 5000.0, 0.5, 200.0))
    assert fit.converged and "degenerate" not in fit.flags
    assert fit["rate_a"] == pytest.approx(5000, rel=0.05)
    assert fit["rate_b"] == pytest.approx(200, rel=0.05)
    assert fit["rate_a"] >= fit["rate_b"] >= 0


def test_biexp_flat():
    fit = dsp.fit_biexponential(SampledCurve(TAUS, np.full(51, 0.4)))
    assert fit["A1"] == fit["A2"] == 0.0
    assert fit["offset"] == pytest.approx(0.4)
    assert "flat" in fit.flags


def test_biexp_round_trip_100_draws():
    rng = np.random.default_rng(4)
    for _ in range(100):
        gb = rng.uniform(100, 1000)
        ga = gb * rng.uniform(5, 50)
        a1 = rng.uniform(0.3, 0.7)
        c = rng.uniform(-0.05, 0.05)
        fit = dsp.fit_biexponential(curve(a1, ga, 1 - a1, gb, c))
        assert fit.converged and "degenerate" not in fit.flags
        assert fit["rate_a"] == pytest.approx(ga, rel=0.05)
        assert fit["rate_b"] == pytest.approx(gb, rel=0.05)
        assert fit["A1"] == pytest.approx(a1, rel=0.05)


def test_biexp_noisy_recovers_rates():
    rng = np.random.default_rng(5)
    fit = dsp.fit_biexponential(curve(0.5, 5000.0, 0.5, 200.0, noise=5e-4, rng=rng))
    assert fit["rate_a"] == pytest.approx(5000, rel=0.05)
    assert fit["rate_b"] == pytest.approx(200, rel=0.05)


def test_biexp_uncertainties_calibrated():
    # the slow rate trades off against the offset; its reported error must say so
    pulls = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        fit = dsp.fit_biexponential(curve(0.5, 5000.0, 0.5, 200.0, noise=0.002, rng=rng))
        pulls.append((fit["rate_b"] - 200) / fit.uncertainties["rate_b"])
    assert 0.75 < np.std(pulls) < 1.35


def test_biexp_amplitude_scaling():
    y = curve(0.5, 5000.0, 0.5, 200.0, noise=0.002, rng=np.random.default_rng(6))
    f1 = dsp.fit_biexponential(y)
    f2 = dsp.fit_biexponential(SampledCurve(TAUS, 7.0 * y.values))
    for k in ("rate_a", "rate_b"):
        assert f2[k] == pytest.approx(f1[k], rel=1e-6)
    assert f2["A1"] == pytest.approx(7 * f1["A1"], rel=1e-6)


# -- Lorentzian --------------------------------------------------------------


def spectrum_of(params, n=1000, df=1.0, coherent=False):
    f = np.arange(n) * df
    model = dsp.coherent_lorentzians if coherent else dsp.lorentzians
    return PowerSpectrum(0.0, df, model(f, np.asarray(params, float)))


def test_lorentzian_single_5hz():
    fit = dsp.fit_lorentzian(spectrum_of([10.0, 300.0, 5.0, 0.01]), 1, 250, 350)
    assert fit.converged
    assert fit["fwhm_1"] == pytest.approx(5.0, rel=0.05)
    assert fit["center_1"] == pytest.approx(300.0, abs=0.01)
    assert "not_found" not in fit.flags


def test_lorentzian_doublet_14hz():
    fit = dsp.fit_lorentzian(spectrum_of([10.0, 293.0, 5.0, 10.0, 307.0, 5.0, 0.01]), 2, 250, 350)
    assert fit["center_1"] < fit["center_2"]
    assert abs(fit["center_2"] - fit["center_1"] - 14.0) < 0.5


def test_coherent_doublet_14hz():
    spec = spectrum_of([3.0, 293.0, 5.0, 3.0, 307.0, 5.0, 0.0, 0.01], coherent=True)
    fit = dsp.fit_lorentzian(spec, 2, 250, 350, coherent=True)
    assert abs(fit["center_2"] - fit["center_1"] - 14.0) < 1e-3
    assert fit["fwhm_1"] == pytest.approx(5.0, rel=1e-3)
    assert abs(fit["relative_phase"]) < 1e-3


def test_white_noise_not_found():
    rng = np.random.default_rng(7)
    for seed in range(5):
        x = rng.normal(size=2048)
        spec = dsp.power_spectrum(TimeTrace(0.0, 1e-3, x))
        fit = dsp.fit_lorentzian(spec, 1, 50, 450)
        assert "not_found" in fit.flags
        fit = dsp.fit_lorentzian(spec, 2, 50, 450, coherent=True)
        assert "not_found" in fit.flags


def test_flat_spectrum_not_found():
    fit = dsp.fit_lorentzian(PowerSpectrum(0.0, 1.0, np.zeros(100)), 2, coherent=True)
    assert "not_found" in fit.flags


def test_noisy_doublet_filling_band_is_found():
    # lines cover half the fitted band, so the band median is mostly line tails
    rng = np.random.default_rng(9)
    f = np.arange(1000.0)
    clean = dsp.coherent_lorentzians(f, np.array([3.0, 493.0, 5.0, 3.0, 507.0, 5.0, 0.3, 0.0]))
    for _ in range(20):
        spec = PowerSpectrum(0.0, 1.0, clean + 0.05 * rng.exponential(size=f.size))
        fit = dsp.fit_lorentzian(spec, 2, 460, 540, coherent=True)
        assert "not_found" not in fit.flags
        assert abs(fit["center_2"] - fit["center_1"] - 14.0) < 0.5


def test_lorentzian_errors():
    spec = spectrum_of([1.0, 50.0, 5.0, 0.0], n=100)
    with pytest.raises(ValueError):
        dsp.fit_lorentzian(spec, 3)
    with pytest.raises(ValueError):
        dsp.fit_lorentzian(spec, 1, 40, 50)


def test_lorentzian_round_trip_100_draws():
    rng = np.random.default_rng(8)
    for _ in range(100):
        c = rng.uniform(100, 400)
        w = rng.uniform(2, 20)
        a = rng.uniform(1, 1000)
        b = a * rng.uniform(0, 0.01)
        fit = dsp.fit_lorentzian(spectrum_of([a, c, w, b]), 1, c - 10 * w, c + 10 * w)
        assert fit.converged
        assert fit["center_1"] == pytest.approx(c, abs=0.01 * w)
        assert fit["fwhm_1"] == pytest.approx(w, rel=0.01)
        assert fit["amplitude_1"] == pytest.approx(a, rel=0.01)


def test_doublet_round_trip_100_draws():
    rng = np.random.default_rng(9)
    for _ in range(100):
        c = rng.uniform(200, 300)
        w = rng.uniform(2, 6)
        split = rng.uniform(3, 6) * w
        a1, a2 = rng.uniform(1, 10, 2)
        p = [a1, c - split / 2, w, a2, c + split / 2, w, 0.01]
        fit = dsp.fit_lorentzian(spectrum_of(p), 2, c - split - 10 * w, c + split + 10 * w)
        assert fit["center_2"] - fit["center_1"] == pytest.approx(split, abs=0.5)
        assert fit["fwhm_1"] == pytest.approx(w, rel=0.02)


def test_lorentzian_amplitude_scaling():
    rng = np.random.default_rng(10)
    spec = spectrum_of([10.0, 300.0, 5.0, 0.5])
    noisy = PowerSpectrum(0.0, 1.0, spec.values * rng.exponential(1.0, spec.values.size))
    f1 = dsp.fit_lorentzian(noisy, 1, 250, 350)
    f2 = dsp.fit_lorentzian(PowerSpectrum(0.0, 1.0, 1e4 * noisy.values), 1, 250, 350)
    assert f2["center_1"] == pytest.approx(f1["center_1"], rel=1e-9)
    assert f2["fwhm_1"] == pytest.approx(f1["fwhm_1"], rel=1e-6)
    assert f2["amplitude_1"] == pytest.approx(1e4 * f1["amplitude_1"], rel=1e-6)


# -- ppm ---------------------------------------------------------------------


def test_hz_to_ppm():
    assert dsp.hz_to_ppm(0.0, 7.664e6) == 0.0
    assert dsp.hz_to_ppm(5.0, 7.664e6) == pytest.approx(0.652, abs=5e-4)
    assert dsp.hz_to_ppm(7.664, 7.664e6) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        dsp.hz_to_ppm(1.0, 0.0)


# -- analytic Jacobians ------------------------------------------------------


def _fd(fun, p, h=1e-6):
    cols = []
    for i in range(p.size):
        step = h * max(abs(p[i]), 1.0)
        up, dn = p.copy(), p.copy()
        up[i] += step
        dn[i] -= step
        cols.append((fun(up) - fun(dn)) / (2 * step))
    return np.column_stack(cols)


def _check_jac(fun, jac, p):
    num, ana = _fd(fun, p), jac(p)
    scale = np.max(np.abs(ana), axis=0) + 1e-12
    assert np.max(np.abs(num - ana) / scale) < 1e-6


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(12)
    t = np.linspace(0, 3, 80)
    f = np.linspace(0, 40, 120)
    for _ in range(50):
        p = np.array([rng.uniform(0.5, 2), rng.uniform(0.5, 3), rng.uniform(0, 6), rng.uniform(0, 2), rng.uniform(-1, 1)])
        _check_jac(lambda q: dsp.decaying_sinusoid(t, *q), lambda q: dsp.decaying_sinusoid_jac(t, *q), p)
        p = np.array([rng.uniform(0.2, 1), rng.uniform(2, 5), rng.uniform(0.2, 1), rng.uniform(0.1, 1), rng.uniform(-1, 1)])
        _check_jac(lambda q: dsp.biexponential(t, *q), lambda q: dsp.biexponential_jac(t, *q), p)
        p = np.array([rng.uniform(1, 5), rng.uniform(10, 20), rng.uniform(1, 5),
                      rng.uniform(1, 5), rng.uniform(20, 30), rng.uniform(1, 5), rng.uniform(0, 1)])
        _check_jac(lambda q: dsp.lorentzians(f, q), lambda q: dsp.lorentzians_jac(f, q), p)
        p = np.array([rng.uniform(1, 5), rng.uniform(10, 20), rng.uniform(1, 5),
                      rng.uniform(1, 5), rng.uniform(20, 30), rng.uniform(1, 5),
                      rng.uniform(-3, 3), rng.uniform(0, 1)])
        _check_jac(lambda q: dsp.coherent_lorentzians(f, q), lambda q: dsp.coherent_lorentzians_jac(f, q), p)
