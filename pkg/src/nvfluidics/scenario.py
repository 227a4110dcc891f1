"""Declarative experiment scenarios: parsing, validation, dispatch and output.

A scenario is a TOML file with one required key, ``kind``, plus sections
whose keys depend on the kind. Every key has a default, so ``kind = "rabi"``
alone is a valid scenario. Unknown keys and out-of-range values are errors
reported by dotted key path (``geometry.height``).

Outputs are CSV tables (the contract), optional SVG plots and a
``manifest.toml`` holding the resolved configuration, toolkit version, seed,
run time and SHA-256 digests of every output file.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import __version__, dsp, geomc, protocols, spin

REQUIRED = object()
SCENARIO_PACKAGE = "nvfluidics.scenarios"
KINDS = ("rabi", "t1", "correlation", "casr", "sensitivity", "signmap")


class ScenarioError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def sensing_volume(spot_diameter: float, channel_height: float) -> float:
    """Cylindrical sensing volume in picolitres from micrometre inputs."""
    if spot_diameter < 0 or channel_height < 0:
        raise ValueError("dimensions must be non-negative")
    um3 = math.pi * (spot_diameter / 2) ** 2 * channel_height
    return um3 * 1e-3  # 1 pL = 1000 um^3


# -- schema -----------------------------------------------------------------

_pos = (lambda v: v > 0, "must be positive")
_nonneg = (lambda v: v >= 0, "must be non-negative")
_ge1 = (lambda v: v >= 1, "must be >= 1")
_unit_interval = (lambda v: 0 < v <= 1, "must lie in (0, 1]")
_frac = (lambda v: 0 <= v <= 1, "must lie in [0, 1]")


def _key(default, check=None, kind=None):
    return {"default": default, "check": check, "type": kind or type(default)}


_CONSTANTS = {
    "zero_field_splitting_D": _key(2.87e9, _pos),
    "gamma_electron": _key(spin.GAMMA_ELECTRON, _pos),
}
_READOUT = {
    "contrast": _key(0.3, _unit_interval),
    "baseline": _key(1.0, _pos),
    "noise_sigma": _key(0.0, _nonneg),
}
_OUTPUT = {"prefix": _key(""), "plot": _key(True)}
_GEOMETRY = {
    "length": _key(1000.0, _pos),
    "width": _key(100.0, _pos),
    "height": _key(80.0, _pos),
    "offset": _key(0.0, _nonneg),
    "spot_diameter": _key(45.0, _pos),
}
_AXIS = {"axis": _key(list(geomc.DEFAULT_BIAS_AXIS), None, list)}

SCHEMA = {
    "rabi": {
        "bias": {"B0": _key(0.033, _nonneg)},
        "sequence": {
            "rabi_frequency": _key(40e6, _pos),
            "t_start": _key(0.0, _nonneg),
            "t_stop": _key(200e-9, _pos),
            "n_points": _key(201, (lambda v: v >= 8, "must be >= 8")),
            "drive_decay_time": _key(math.inf, _pos),
        },
        "readout": dict(_READOUT, averaging=_key(1, _ge1)),
    },
    "t1": {
        "bias": {"B0": _key(0.033, _nonneg)},
        "sequence": {
            "tau_start": _key(200e-9, _pos),
            "tau_stop": _key(5.5e-3, _pos),
            "n_points": _key(51, (lambda v: v >= 6, "must be >= 6")),
        },
        "sample": {
            "concentrations": _key([0.0, 1e-6, 1e-5], None, list),
            "rate_constant_k": _key(1e8, _nonneg),
            "intrinsic_gamma1": _key(200.0, _nonneg),
            "fast_weight": _key(0.0, _frac),
            "fast_rate_ratio": _key(10.0, _ge1),
        },
        "readout": dict(_READOUT, averaging=_key(protocols.T1_AVERAGES, _ge1)),
    },
    "correlation": {
        "bias": {"B0": _key(0.031, _pos)},
        "sequence": {
            "t_start": _key(2e-6, _nonneg),
            "t_stop": _key(502e-6, _pos),
            "n_points": _key(2501, (lambda v: v >= 2, "must be >= 2")),
            "n_pulses": _key(32, (lambda v: v > 0 and v % 8 == 0, "must be a positive multiple of 8")),
            "tau_interpulse": _key(0.0, _nonneg),
            "n_phase": _key(protocols.DEFAULT_PHASE_SAMPLES, _ge1),
        },
        "sample": {
            "species": _key("19F"),
            "amplitude": _key(50e-9, _nonneg),
            "t2star": _key(200e-6, _pos),
            "phase0": _key(0.0),
        },
        "readout": {"noise_sigma": _key(0.0, _nonneg),
                    "averaging": _key(protocols.CORRELATION_AVERAGES, _ge1)},
    },
    "casr": {
        "bias": {"B0": _key(0.18, _pos)},
        "sequence": {
            "subsequence_duration": _key(1.0 / 9470, _pos),
            "n_repetitions": _key(9470, (lambda v: v >= 32, "must be >= 32")),
            "total_time": _key(1.0, _pos),
            "filter_gain": _key(2 / math.pi, _pos),
        },
        "sample": {
            "species": _key("1H"),
            "splitting": _key(14.0, _nonneg),
            "linewidth": _key(5.0, _pos),
            "amplitude": _key(1e-12, _nonneg),
            "phase0": _key(0.0),
        },
        "dnp": {"gain": _key(1.0, _ge1), "pump_frequency": _key(4.9e9, _pos)},
        "readout": {"noise_sigma": _key(0.0, _nonneg),
                    "averaging": _key(protocols.CASR_AVERAGES, _ge1)},
    },
    "sensitivity": {
        "geometry": _GEOMETRY,
        "sweep": {"d_nv": _key([5.0, 10.0] + [float(d) for d in range(20, 151, 10)], None, list)},
        "mc": {
            "n_nv_samples": _key(200, _ge1),
            "n_spin_samples": _key(32_000, _ge1),
            "n_averages": _key(1000, _ge1),
            "estimator": _key("conditional"),
            "statistic": _key("mean"),
            "n_bootstrap": _key(400, _ge1),
            "workers": _key(1, _ge1),
        },
        "bias": _AXIS,
    },
    "signmap": {
        "geometry": dict(_GEOMETRY, d_nv=_key(50.0, _pos)),
        "map": {
            "n_y": _key(40, (lambda v: v >= 2, "must be >= 2")),
            "n_z": _key(32, (lambda v: v >= 2, "must be >= 2")),
            "x_um": _key(0.0),
            "n_nv_samples": _key(20_000, (lambda v: v >= 2, "must be >= 2")),
        },
        "bias": {"axis": _key(list(geomc.SURFACE_NORMAL_AXIS), None, list)},
    },
}
for _kind in SCHEMA:
    SCHEMA[_kind]["constants"] = _CONSTANTS
    SCHEMA[_kind]["output"] = _OUTPUT

PAPER_SCALE = {
    "sensitivity": {"mc": {"n_nv_samples": 40, "n_spin_samples": 32_000, "n_averages": 10_000,
                           "estimator": "pairs"}},
}

_CHOICES = {
    ("mc", "estimator"): ("conditional", "pairs"),
    ("mc", "statistic"): ("mean", "rms"),
}


@dataclass
class ScenarioConfig:
    kind: str
    seed: int = 0
    sections: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, section):
        return self.sections[section]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, **copy.deepcopy(self.sections)}

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def with_overrides(self, seed=None, paper_scale=False) -> "ScenarioConfig":
        data = self.to_dict()
        if seed is not None:
            data["seed"] = seed
        if paper_scale:
            for section, values in PAPER_SCALE.get(self.kind, {}).items():
                data[section].update(values)
        return from_dict(data, source=self.source)


def _check_value(path, spec, value, errors):
    expected = spec["type"]
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number, got {type(value).__name__}")
            return None
        value = float(value)
    elif expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{path}: expected an integer, got {type(value).__name__}")
            return None
    elif expected is list:
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            errors.append(f"{path}: expected a list of numbers")
            return None
        value = [float(v) for v in value]
    elif not isinstance(value, expected):
        errors.append(f"{path}: expected {expected.__name__}, got {type(value).__name__}")
        return None
    check = spec["check"]
    if check is not None and not (isinstance(value, float) and math.isnan(value)):
        fn, message = check
        if not fn(value):
            errors.append(f"{path}: {message} (got {value!r})")
    elif isinstance(value, float) and math.isnan(value):
        errors.append(f"{path}: NaN is not allowed")
    return value


def _cross_checks(kind, s, errors):
    if kind == "rabi" and s["sequence"]["t_stop"] <= s["sequence"]["t_start"]:
        errors.append("sequence.t_stop: must exceed sequence.t_start")
    if kind == "t1":
        if s["sequence"]["tau_stop"] <= s["sequence"]["tau_start"]:
            errors.append("sequence.tau_stop: must exceed sequence.tau_start")
        conc = s["sample"]["concentrations"]
        if not conc:
            errors.append("sample.concentrations: must not be empty")
        if any(c < 0 for c in conc):
            errors.append("sample.concentrations: values must be non-negative")
    if kind == "correlation" and s["sequence"]["t_stop"] <= s["sequence"]["t_start"]:
        errors.append("sequence.t_stop: must exceed sequence.t_start")
    if kind in ("correlation", "casr"):
        species = s["sample"]["species"]
        if species not in spin.GAMMA_NUCLEAR:
            errors.append(f"sample.species: unknown species {species!r} "
                          f"(known: {', '.join(sorted(spin.GAMMA_NUCLEAR))})")
    if kind == "casr":
        seq = s["sequence"]
        if abs(seq["subsequence_duration"] * seq["n_repetitions"] - seq["total_time"]) > 1e-9 * seq["total_time"]:
            errors.append("sequence.total_time: must equal subsequence_duration * n_repetitions")
    if kind == "sensitivity":
        d = s["sweep"]["d_nv"]
        if not d:
            errors.append("sweep.d_nv: must not be empty")
        elif any(v <= 0 for v in d) or any(b <= a for a, b in zip(d, d[1:])):
            errors.append("sweep.d_nv: must be positive and strictly ascending")
        if s["mc"]["statistic"] == "rms" and s["mc"]["estimator"] == "conditional":
            errors.append("mc.statistic: 'rms' requires mc.estimator = 'pairs'")
    if "bias" in s and "axis" in s["bias"]:
        a = s["bias"]["axis"]
        if len(a) != 3 or abs(math.sqrt(sum(v * v for v in a)) - 1) > 1e-9:
            errors.append("bias.axis: must be a unit 3-vector")
    if kind in ("rabi", "t1"):
        c = s["constants"]
        b0 = s["bias"]["B0"]
        if b0 >= c["zero_field_splitting_D"] / c["gamma_electron"]:
            errors.append("bias.B0: at or beyond the NV level anticrossing")


def from_dict(data: dict, source: str | None = None) -> ScenarioConfig:
    errors = []
    data = dict(data)
    kind = data.pop("kind", REQUIRED)
    if kind is REQUIRED:
        raise ScenarioError(["kind: missing required key"])
    if kind not in SCHEMA:
        raise ScenarioError([f"kind: unknown experiment kind {kind!r} (expected one of {', '.join(KINDS)})"])
    seed = data.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"seed: expected a non-negative integer, got {seed!r}")
    schema = SCHEMA[kind]
    sections = {}
    for name, value in data.items():
        if name not in schema:
            errors.append(f"{name}: unknown key for kind {kind!r}")
        elif not isinstance(value, dict):
            errors.append(f"{name}: expected a table")
    for name, keys in schema.items():
        given = data.get(name, {})
        if not isinstance(given, dict):
            continue
        resolved = {}
        for key, value in given.items():
            if key not in keys:
                errors.append(f"{name}.{key}: unknown key")
        for key, spec in keys.items():
            if key in given:
                value = _check_value(f"{name}.{key}", spec, given[key], errors)
                choices = _CHOICES.get((name, key))
                if choices and value not in choices:
                    errors.append(f"{name}.{key}: must be one of {', '.join(choices)} (got {value!r})")
            else:
                value = copy.deepcopy(spec["default"])
            resolved[key] = value
        sections[name] = resolved
    if not errors:
        _cross_checks(kind, sections, errors)
    if errors:
        raise ScenarioError(errors)
    return ScenarioConfig(kind=kind, seed=seed, sections=sections, source=source)


def parse_text(text: str, source: str | None = None) -> ScenarioConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError([f"<syntax>: {exc}"]) from None
    return from_dict(data, source=source)


def parse_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ScenarioError([f"<file>: {path} does not exist"])
    return parse_text(path.read_text(), source=str(path))


# -- shipped examples -------------------------------------------------------


def list_examples() -> list:
    return sorted(p.name[:-5] for p in resources.files(SCENARIO_PACKAGE).iterdir() if p.name.endswith(".toml"))


def example_path(name: str):
    return resources.files(SCENARIO_PACKAGE) / f"{name}.toml"


def load_example(name: str) -> ScenarioConfig:
    p = example_path(name)
    if not p.is_file():
        raise ScenarioError([f"<example>: no shipped scenario named {name!r}"])
    return parse_text(p.read_text(), source=f"example:{name}")


# -- dispatch ---------------------------------------------------------------


def _constants(cfg) -> spin.PhysicsConstants:
    c = cfg["constants"]
    return spin.PhysicsConstants(zero_field_splitting_D=c["zero_field_splitting_D"],
                                 gamma_electron=c["gamma_electron"])


def _readout(cfg, seed) -> protocols.ReadoutParams:
    r = cfg["readout"]
    return protocols.ReadoutParams(r["contrast"], r["baseline"], r["noise_sigma"], r["averaging"], seed)


def _fit_rows(fit: dsp.FitResult):
    return [[k, v, fit.uncertainties.get(k, math.nan)] for k, v in fit.parameters.items()]


class _Outputs:
    def __init__(self):
        self.tables = {}  # name -> (columns, rows)
        self.plots = {}  # name -> callable(ax)
        self.summary = {}

    def table(self, name, columns, rows):
        self.tables[name] = (tuple(columns), [list(r) for r in rows])

    def plot(self, name, fn):
        self.plots[name] = fn


def _run_rabi(cfg, out):
    seq = cfg["sequence"]
    constants = _constants(cfg)
    f_mw = spin.nv_transition_frequency(constants, spin.MagneticBias(cfg["bias"]["B0"]))
    durations = np.linspace(seq["t_start"], seq["t_stop"], seq["n_points"])
    trace = protocols.run_rabi(seq["rabi_frequency"], durations, _readout(cfg, cfg.seed),
                               seq["drive_decay_time"])
    fit = dsp.fit_decaying_sinusoid(trace)
    out.table("trace", ("time_s", "value"), zip(trace.times, trace.values))
    out.table("fit", ("parameter", "value", "uncertainty"), _fit_rows(fit))
    out.summary.update(
        transition_frequency_hz=f_mw,
        fitted_frequency_hz=fit["frequency"],
        pi_pulse_s=protocols.pi_pulse_duration(fit["frequency"]),
        converged=fit.converged,
    )

    def draw(ax):
        t = trace.times
        ax.plot(t * 1e9, trace.values, "o", ms=3, label="simulated")
        p = fit.parameters
        rate = 0.0 if math.isinf(p["decay_time"]) else 1 / p["decay_time"]
        ax.plot(t * 1e9, dsp.decaying_sinusoid(t, p["amplitude"], p["frequency"], p["phase"], rate,
                                               p["offset"]), "-", label="fit")
        ax.set_xlabel("pulse duration (ns)")
        ax.set_ylabel("fluorescence (norm.)")
        ax.legend()

    out.plot("trace", draw)


def _run_t1(cfg, out):
    seq, smp = cfg["sequence"], cfg["sample"]
    taus = protocols.t1_grid(seq["n_points"], seq["tau_start"], seq["tau_stop"])
    curves = []
    for i, c in enumerate(smp["concentrations"]):
        sample = protocols.GdSample(c, smp["rate_constant_k"], smp["intrinsic_gamma1"],
                                    smp["fast_weight"], smp["fast_rate_ratio"])
        curve = protocols.run_t1(taus, sample, _readout(cfg, cfg.seed + i))
        fit = dsp.fit_biexponential(curve)
        name = f"t1_{i}"
        out.table(name, ("time_s", "value"), zip(curve.x, curve.values))
        out.table(f"{name}_fit", ("parameter", "value", "uncertainty"), _fit_rows(fit))
        out.summary[name] = {
            "concentration_M": c,
            "gamma1": protocols.gd_relaxation_rate(sample),
            "fit_rate_a": fit["rate_a"],
            "fit_rate_b": fit["rate_b"],
            "degenerate": "degenerate" in fit.flags,
        }
        curves.append((c, curve))

    def draw(ax):
        for c, curve in curves:
            ax.semilogx(curve.x, curve.values, "o-", ms=3, label=f"{c * 1e6:g} uM Gd")
        ax.set_xlabel("tau (s)")
        ax.set_ylabel("normalized signal")
        ax.legend()

    out.plot("t1", draw)


def _nmr_fid(cfg, larmor, t2star, splitting=0.0):
    smp = cfg["sample"]
    if splitting > 0:
        return protocols.FidModel.doublet(larmor, splitting, decay_time_T2star=t2star,
                                          amplitude=smp["amplitude"], phase0=smp["phase0"])
    return protocols.FidModel(larmor, decay_time_T2star=t2star, amplitude=smp["amplitude"],
                              phase0=smp["phase0"])


def _spectrum_plot(out, trace, spectrum, fit, xlabel):
    def draw(ax):
        ax.plot(spectrum.frequencies, spectrum.values, "-", lw=0.8)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("power")

    out.plot("spectrum", draw)

    def draw_trace(ax):
        ax.plot(trace.times, trace.values, "-", lw=0.6)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("signal")

    out.plot("trace", draw_trace)


def _run_correlation(cfg, out):
    seq, smp = cfg["sequence"], cfg["sample"]
    gamma = spin.GAMMA_NUCLEAR[smp["species"]]
    larmor = spin.larmor_frequency(gamma, cfg["bias"]["B0"])
    tau = seq["tau_interpulse"] or 1.0 / (2 * larmor)
    grid = protocols.correlation_grid(seq["t_start"], seq["t_stop"], seq["n_points"])
    fid = _nmr_fid(cfg, larmor, smp["t2star"])
    trace = protocols.run_correlation(
        grid, fid, tau, seq["n_pulses"], _constants(cfg).gamma_electron,
        cfg["readout"]["averaging"], cfg["readout"]["noise_sigma"], seq["n_phase"], cfg.seed,
    )
    spectrum = dsp.power_spectrum(trace, remove_mean=True)
    expected = protocols.alias_frequency(larmor, 1.0 / trace.dt)
    out.table("trace", ("time_s", "value"), zip(trace.times, trace.values))
    out.table("spectrum", ("freq_hz", "power"), zip(spectrum.frequencies, spectrum.values))
    out.summary.update(larmor_hz=larmor, expected_peak_hz=expected,
                       peak_hz=spectrum.peak_frequency(fmin=spectrum.df), bin_hz=spectrum.df)
    band = 40 * spectrum.df
    if np.ptp(trace.values) > 0:
        fit = dsp.fit_lorentzian(spectrum, 1, fmin=max(expected - band, spectrum.df), fmax=expected + band)
        out.table("fit", ("parameter", "value", "uncertainty"), _fit_rows(fit))
        out.summary.update(fit_center_hz=fit["center_1"], fit_fwhm_hz=fit["fwhm_1"],
                           peak_found="not_found" not in fit.flags)
    else:
        fit = None
    _spectrum_plot(out, trace, spectrum, fit, "frequency (Hz)")


def _run_casr(cfg, out):
    seq, smp, dnp = cfg["sequence"], cfg["sample"], cfg["dnp"]
    constants = _constants(cfg)
    B0 = cfg["bias"]["B0"]
    larmor = spin.larmor_frequency(spin.GAMMA_NUCLEAR[smp["species"]], B0)
    pump = protocols.dnp_pump(dnp["gain"], dnp["pump_frequency"], B0, constants)
    fid = _nmr_fid(cfg, larmor, 1.0 / (math.pi * smp["linewidth"]), smp["splitting"])
    trace = protocols.run_casr(
        fid, seq["subsequence_duration"], seq["n_repetitions"], constants.gamma_electron,
        pump.gain, cfg["readout"]["averaging"], cfg["readout"]["noise_sigma"], seq["filter_gain"],
        seq["total_time"], cfg.seed,
    )
    spectrum = dsp.power_spectrum(trace, remove_mean=True)
    f_sample = 1.0 / seq["subsequence_duration"]
    carrier = protocols.alias_frequency(larmor, f_sample)
    out.table("trace", ("time_s", "value"), zip(trace.times, trace.values))
    out.table("spectrum", ("freq_hz", "power"), zip(spectrum.frequencies, spectrum.values))
    out.summary.update(larmor_hz=larmor, alias_hz=carrier, dnp_on_resonance=pump.on_resonance)
    if np.ptp(trace.values) > 0:
        band = max(6 * smp["linewidth"] + 2 * smp["splitting"], 16 * spectrum.df)
        lo, hi = max(carrier - band, spectrum.df), carrier + band
        if smp["splitting"] > 0:
            fit = dsp.fit_lorentzian(spectrum, 2, fmin=lo, fmax=hi, coherent=True)
            out.summary.update(
                splitting_hz=fit["center_2"] - fit["center_1"],
                fwhm_hz=[fit["fwhm_1"], fit["fwhm_2"]],
                fwhm_ppm=dsp.hz_to_ppm(0.5 * (fit["fwhm_1"] + fit["fwhm_2"]), larmor),
            )
        else:
            fit = dsp.fit_lorentzian(spectrum, 1, fmin=lo, fmax=hi)
            out.summary.update(fwhm_hz=fit["fwhm_1"], fwhm_ppm=dsp.hz_to_ppm(fit["fwhm_1"], larmor))
        out.table("fit", ("parameter", "value", "uncertainty"), _fit_rows(fit))
    _spectrum_plot(out, trace, spectrum, None, "alias frequency (Hz)")


def _channel(cfg) -> geomc.ChannelGeometry:
    g = cfg["geometry"]
    return geomc.ChannelGeometry(g["length"], g["width"], g["height"], g["offset"])


def _run_sensitivity(cfg, out, workers=None):
    mc = cfg["mc"]
    curve = geomc.sensitivity_curve(
        cfg["sweep"]["d_nv"],
        _channel(cfg),
        cfg["geometry"]["spot_diameter"],
        geomc.McParams(mc["n_nv_samples"], mc["n_spin_samples"], mc["n_averages"], cfg.seed),
        bias_axis=cfg["bias"]["axis"],
        statistic=mc["statistic"],
        estimator=mc["estimator"],
        n_bootstrap=mc["n_bootstrap"],
        workers=workers or mc["workers"],
    )
    out.table("sensitivity", ("d_nv_um", "signal_norm", "stderr"),
              zip(curve.d_nv_um, curve.signal_norm, curve.stderr))
    out.table("mean_signal", ("d_nv_um", "signal_norm", "stderr"),
              zip(curve.d_nv_um, curve.mean_signal, curve.mean_signal_stderr))
    g = cfg["geometry"]
    out.summary.update(argmax_d_nv_um=curve.argmax,
                       sensing_volume_pl=sensing_volume(g["spot_diameter"], g["height"]))

    def draw(ax):
        ax.errorbar(curve.d_nv_um, curve.signal_norm, yerr=curve.stderr, fmt="o-", ms=3)
        ax.set_xlabel("d_NV (um)")
        ax.set_ylabel("normalized signal x sqrt(d_NV)")

    out.plot("sensitivity", draw)


def _run_signmap(cfg, out, workers=None):
    g, m = cfg["geometry"], cfg["map"]
    sm = geomc.sign_map(
        _channel(cfg),
        geomc.SensorCylinder(g["spot_diameter"], g["d_nv"]),
        m["n_y"], m["n_z"], cfg["bias"]["axis"], m["x_um"], m["n_nv_samples"], cfg.seed,
    )
    rows = [(y, z, int(sm.sign[j, i]), sm.field[j, i])
            for j, z in enumerate(sm.z_um) for i, y in enumerate(sm.y_um)]
    out.table("signmap", ("y_um", "z_um", "sign", "field_t"), rows)
    out.summary.update(positive_fraction=float(np.mean(sm.sign > 0)))

    def draw(ax):
        ax.pcolormesh(sm.y_um, sm.z_um, sm.sign, cmap="bwr", vmin=-1, vmax=1, shading="nearest")
        ax.set_xlabel("y (um)")
        ax.set_ylabel("z (um)")
        ax.set_aspect("equal")

    out.plot("signmap", draw)


_DISPATCH = {
    "rabi": _run_rabi,
    "t1": _run_t1,
    "correlation": _run_correlation,
    "casr": _run_casr,
    "sensitivity": _run_sensitivity,
    "signmap": _run_signmap,
}


# -- writing ----------------------------------------------------------------


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue().encode()


def _svg_bytes(draw) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "nvfluidics", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        try:
            draw(ax)
            fig.tight_layout()
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buf.getvalue()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _plain(obj):
    """Convert numpy scalars and containers to TOML-serializable values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


@dataclass
class RunManifest:
    config: dict
    version: str
    seed: int
    wall_time_s: float
    digests: dict
    summary: dict = field(default_factory=dict)
    path: Path | None = None

    def to_dict(self) -> dict:
        return _plain({
            "toolkit_version": self.version,
            "seed": self.seed,
            "wall_time_s": self.wall_time_s,
            "digests": self.digests,
            "summary": self.summary,
            "config": self.config,
        })

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def load(cls, path) -> "RunManifest":
        data = tomli.loads(Path(path).read_text())
        return cls(config=data["config"], version=data["toolkit_version"], seed=data["seed"],
                   wall_time_s=data["wall_time_s"], digests=data["digests"],
                   summary=data.get("summary", {}), path=Path(path))


def run(config: ScenarioConfig, out_dir, workers: int | None = None) -> RunManifest:
    """Run a validated scenario, write its outputs into ``out_dir`` and return
    the manifest (also written, last, as ``manifest.toml``)."""
    out_dir = Path(out_dir)
    start = time.perf_counter()
    out = _Outputs()
    runner = _DISPATCH[config.kind]
    try:
        if config.kind in ("sensitivity", "signmap"):
            runner(config, out, workers)
        else:
            runner(config, out)
    except (ValueError, ArithmeticError) as exc:
        where = config.source or config.kind
        raise RuntimeError(f"scenario {where} ({config.kind}): {exc}") from exc

    prefix = config["output"]["prefix"]
    digests = {}
    for name, (columns, rows) in out.tables.items():
        fname = f"{prefix}{name}.csv"
        data = _csv_bytes(columns, rows)
        _atomic_write(out_dir / fname, data)
        digests[fname] = _sha256(data)
    if config["output"]["plot"]:
        for name, draw in out.plots.items():
            fname = f"{prefix}{name}.svg"
            data = _svg_bytes(draw)
            _atomic_write(out_dir / fname, data)
            digests[fname] = _sha256(data)
    manifest = RunManifest(
        config=config.to_dict(),
        version=__version__,
        seed=config.seed,
        wall_time_s=time.perf_counter() - start,
        digests=digests,
        summary=out.summary,
        path=out_dir / f"{prefix}manifest.toml",
    )
    _atomic_write(manifest.path, manifest.dumps().encode())
    return manifest


def reproduce(manifest_path, out_dir) -> tuple:
    """Re-run the configuration stored in a manifest.

    Returns ``(new_manifest, mismatched_files)``.
    """
    old = RunManifest.load(manifest_path)
    cfg = from_dict(old.config, source=str(manifest_path))
    new = run(cfg, out_dir)
    mismatched = sorted(k for k in set(old.digests) | set(new.digests)
                        if old.digests.get(k) != new.digests.get(k))
    return new, mismatched
