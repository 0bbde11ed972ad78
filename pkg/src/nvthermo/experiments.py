"""End-to-end in-silico experiments driven by a :class:`Scenario`."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

import nvthermo
from nvthermo.heat_model import fit_heat_profile, laser_to_heat, steady_state_dT
from nvthermo.measurement import esr_rate, simulate_esr_scan
from nvthermo.pulse_engine import echo_fringe, echo_slope
from nvthermo.rng import label_key, substream
from nvthermo.scenario import Scenario, ScenarioError
from nvthermo.spin_model import TWO_PI, NVEnsembleParams, zfs_at_temperature
from nvthermo.thermometry import (
    EchoEstimatorConfig,
    EstimationError,
    choose_probe_points,
    echo_delta_T,
    fit_dip_centers,
    fit_echo_beats,
    four_point_delta_T,
    linear_fit_accuracy,
    sensitivity,
)

SWEEP_COLUMNS = ("probe_id", "power_W", "dT_true_K", "dT_est_K", "dT_err_K")

#: Suffixes accepted on numeric report keys; each names the unit of the value.
UNIT_SUFFIXES = (
    "_K", "_W", "_s", "_Hz", "_m", "_Km", "_K_per_W", "_K_per_sqrtHz", "_counts",
    "_counts_per_s", "_rad", "_unitless", "_count",
)


@dataclass
class RunReport:
    protocol: str
    summary: dict
    tables: dict = field(default_factory=dict)  # file name -> (columns, rows)
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"protocol": self.protocol, "provenance": self.provenance, "summary": self.summary}
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"

    def table_text(self, name: str) -> str:
        columns, rows = self.tables[name]
        buf = io.StringIO()
        prov = " ".join(f"{k}={self.provenance[k]}" for k in sorted(self.provenance))
        if prov:
            buf.write(f"# {prov}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
        return buf.getvalue()

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in sorted(self.tables):
            p = out / name
            p.write_text(self.table_text(name))
            paths.append(p)
        p = out / "report.json"
        p.write_text(self.to_json())
        paths.append(p)
        return paths

    def validate(self) -> None:
        """Check that every numeric summary entry names its unit."""
        bad = [k for k in _numeric_keys(self.summary) if not k.endswith(UNIT_SUFFIXES)]
        if bad:
            raise ValueError(f"report keys without unit suffix: {bad}")
        for name, (columns, rows) in self.tables.items():
            for c in columns:
                if c not in ("probe_id",) and not c.endswith(UNIT_SUFFIXES):
                    raise ValueError(f"{name}: column {c!r} has no unit suffix")
            for row in rows:
                if set(row) != set(columns):
                    raise ValueError(f"{name}: row keys {sorted(row)} do not match columns")


def _numeric_keys(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if isinstance(v, (dict, list)):
                yield from _numeric_keys(v, k)
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                yield k
    elif isinstance(obj, list):
        for v in obj:
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                yield prefix
            else:
                yield from _numeric_keys(v, prefix)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _provenance(scenario: Scenario, noise: str) -> dict:
    return {
        "seed": scenario.seed,
        "config_hash": scenario.config_hash(),
        "version": nvthermo.__version__,
        "noise": noise,
    }


def _map(fn, cells, threads: int):
    if threads <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


def _check_noise(noise: str) -> bool:
    if noise not in ("shot", "none"):
        raise ScenarioError(f"noise must be 'shot' or 'none', got {noise!r}", "noise")
    return noise == "shot"


# ---------------------------------------------------------------------------
# four-point measurement of a probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeSetup:
    probe: object
    params: NVEnsembleParams
    calibration: object  # ESRSpectrumModel at ambient temperature
    config: object  # FourPointConfig


def _probe_setups(scenario: Scenario) -> list[ProbeSetup]:
    fp = scenario.four_point
    setups = []
    for probe in scenario.probes:
        params = scenario.nv_params(probe)
        center = zfs_at_temperature(params, scenario.ambient_temperature)
        model = scenario.spectrum_model(center, probe)
        dw = None if fp.delta_omega_hz is None else TWO_PI * fp.delta_omega_hz
        cfg = choose_probe_points(model, params.d_delta_dT, dw, fp.mirrored_ordering)
        setups.append(ProbeSetup(probe, params, model, cfg))
    return setups


def _measure(scenario: Scenario, setup: ProbeSetup, dT_true: float, rng, shot: bool):
    params = setup.params
    temp = scenario.ambient_temperature + dT_true
    truth = setup.calibration.replace(
        center=zfs_at_temperature(params, temp),
        half_splitting=setup.calibration.half_splitting + TWO_PI * scenario.four_point.field_drift_hz,
    )
    expected = np.asarray(esr_rate(truth, setup.config.probe_frequencies)) * scenario.four_point.dwell
    counts = rng.poisson(expected).astype(float) if shot else expected
    return four_point_delta_T(*counts, setup.config)


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------

def run_power_sweep(scenario: Scenario, noise: str = "shot", threads: int = 1) -> RunReport:
    """Heating of every probe versus laser power, measured with the four-point estimator."""
    shot = _check_noise(noise)
    if not scenario.probes:
        raise ScenarioError("at least one probe is required", "probes")
    powers = scenario.laser.powers
    if len(powers) < 3:
        raise ScenarioError("power sweeps need at least 3 laser powers", "laser.powers")
    setups = _probe_setups(scenario)

    def truth(power):
        spot = scenario.laser_spot(power)
        q = [laser_to_heat(spot, src.position) for src in scenario.heat.sources]
        return scenario.heat_scene(q)

    scenes = [truth(p) for p in powers]
    cells = [(i, j) for i in range(len(setups)) for j in range(len(powers))]

    def cell(ij):
        i, j = ij
        setup = setups[i]
        dT = steady_state_dT(scenes[j], setup.probe.position)
        rng = substream(scenario.seed, label_key(setup.probe.id), j)
        try:
            est = _measure(scenario, setup, dT, rng, shot)
        except EstimationError as exc:
            raise EstimationError(f"probe {setup.probe.id}, power index {j}: {exc}") from exc
        return {"probe_id": setup.probe.id, "power_W": float(powers[j]), "dT_true_K": float(dT),
                "dT_est_K": est.delta_T, "dT_err_K": est.std_error}

    rows = _map(cell, cells, threads)
    probes = {}
    for setup in setups:
        pid = setup.probe.id
        mine = [r for r in rows if r["probe_id"] == pid]
        fit = linear_fit_accuracy([r["power_W"] for r in mine], [r["dT_est_K"] for r in mine])
        fit_true = linear_fit_accuracy([r["power_W"] for r in mine], [r["dT_true_K"] for r in mine])
        src = np.asarray(scenario.heat.sources[0].position) if scenario.heat.sources else np.zeros(3)
        probes[pid] = {
            "distance_m": float(np.linalg.norm(np.asarray(setup.probe.position) - src)),
            "slope_K_per_W": fit.slope,
            "slope_error_K_per_W": fit.slope_error,
            "slope_true_K_per_W": fit_true.slope,
            "accuracy_K": fit.accuracy,
            "accuracy_error_K": fit.accuracy_error,
            "n_points_count": fit.n_points,
            "max_abs_error_K": float(max(abs(r["dT_est_K"] - r["dT_true_K"]) for r in mine)),
        }
    top = [r for r in rows if r["power_W"] == max(powers)]
    summary = {
        "probes": probes,
        "max_power_W": float(max(powers)),
        "gradient_at_max_power_K": float(max(r["dT_est_K"] for r in top) - min(r["dT_est_K"] for r in top)),
        "gradient_true_at_max_power_K": float(max(r["dT_true_K"] for r in top)
                                             - min(r["dT_true_K"] for r in top)),
    }
    report = RunReport("four_point", summary, {"sweep.csv": (SWEEP_COLUMNS, rows)},
                       _provenance(scenario, noise))
    report.validate()
    return report


def run_heat_profile(scenario: Scenario, noise: str = "shot", threads: int = 1) -> RunReport:
    """Probe temperatures around one heat source and the inverse ``1/r`` fit."""
    shot = _check_noise(noise)
    if len(scenario.probes) < 2:
        raise ScenarioError("heat profiles need at least 2 probes", "probes")
    if len(scenario.heat.sources) != 1:
        raise ScenarioError("heat profiles need exactly one source", "heat.sources")
    scene = scenario.heat_scene()
    src = np.asarray(scene.sources[0].position)
    setups = sorted(_probe_setups(scenario), key=lambda s: s.probe.id)

    def cell(setup):
        dT = steady_state_dT(scene, setup.probe.position)
        rng = substream(scenario.seed, label_key(setup.probe.id), 0)
        est = _measure(scenario, setup, dT, rng, shot)
        r = float(np.linalg.norm(np.asarray(setup.probe.position) - src))
        return {"probe_id": setup.probe.id, "distance_m": r, "dT_true_K": float(dT),
                "dT_est_K": est.delta_T, "dT_err_K": est.std_error}

    rows = _map(cell, setups, threads)
    readings = [(r["distance_m"], r["dT_est_K"], r["dT_err_K"]) for r in rows]
    fit = fit_heat_profile(readings, scene.conductivity, scene.source_radius)
    true_q = scene.sources[0].q_dot
    summary = {
        "q_dot_W": fit.q_dot,
        "q_dot_error_W": fit.q_dot_error,
        "q_dot_true_W": true_q,
        "dT_at_source_K": fit.dT_at_source,
        "dT_at_source_error_K": fit.dT_at_source_error,
        "dT_at_source_true_K": steady_state_dT(scene, src),
        "amplitude_Km": fit.amplitude,
        "chi2_unitless": fit.chi2,
        "n_probes_count": fit.n_readings,
    }
    columns = ("probe_id", "distance_m", "dT_true_K", "dT_est_K", "dT_err_K")
    report = RunReport("heat_profile", summary, {"profile.csv": (columns, rows)},
                       _provenance(scenario, noise))
    report.validate()
    return report


def run_esr_scan(scenario: Scenario, noise: str = "shot", threads: int = 1) -> RunReport:
    """CW-ESR frequency scan of the first probe, its double-Lorentzian fit and probe placement."""
    shot = _check_noise(noise)
    if not scenario.probes:
        raise ScenarioError("at least one probe is required", "probes")
    setup = _probe_setups(scenario)[0]
    model = setup.calibration
    sc = scenario.scan
    freqs = model.center + TWO_PI * np.linspace(-sc.span_hz / 2, sc.span_hz / 2, sc.points)
    rng = substream(scenario.seed, label_key(setup.probe.id), 0)
    expected = simulate_esr_scan(model, freqs, sc.dwell, noiseless=True)
    counts = simulate_esr_scan(model, freqs, sc.dwell, seed=rng) if shot else expected
    fit = fit_dip_centers(freqs, counts)
    v, e = fit.values, fit.errors
    cfg = setup.config
    summary = {
        "probe": setup.probe.id,
        "center_Hz": v["center"] / TWO_PI,
        "center_error_Hz": e["center"] / TWO_PI,
        "half_splitting_Hz": v["half_splitting"] / TWO_PI,
        "half_splitting_error_Hz": e["half_splitting"] / TWO_PI,
        "linewidth_Hz": v["linewidth"] / TWO_PI,
        "linewidth_error_Hz": e["linewidth"] / TWO_PI,
        "contrast_unitless": v["contrast"],
        "baseline_counts": v["baseline"],
        "fit_temperature_offset_K": (v["center"] - model.center) / setup.params.d_delta_dT,
        "probe_frequencies_Hz": [float(f / TWO_PI) for f in cfg.probe_frequencies],
        "delta_omega_Hz": cfg.delta_omega / TWO_PI,
    }
    rows = [{"freq_Hz": float(f / TWO_PI), "counts_counts": float(c), "expected_counts": float(x)}
            for f, c, x in zip(freqs, counts, expected)]
    report = RunReport("esr_scan", summary,
                       {"scan.csv": (("freq_Hz", "counts_counts", "expected_counts"), rows)},
                       _provenance(scenario, noise))
    report.validate()
    return report


# ---------------------------------------------------------------------------
# echo thermometry
# ---------------------------------------------------------------------------

def operating_point(params, env, evolution_time, photon):
    """Carrier detuning maximizing the positive echo slope at ``evolution_time``."""
    tau = evolution_time / 2.0
    period = TWO_PI / evolution_time
    grid = np.linspace(0.0, period, 721)
    slopes = np.array([echo_slope(tau, params, env, d, photon) for d in grid])
    k = int(np.argmax(slopes))
    step = grid[1] - grid[0]
    res = minimize_scalar(lambda d: -echo_slope(tau, params, env, d, photon),
                          bounds=(grid[k] - step, grid[k] + step), method="bounded",
                          options={"xatol": 1e-9 * period})
    det = float(res.x)
    slope = echo_slope(tau, params, env, det, photon)
    if not slope > 0:
        raise EstimationError("echo fringe has no usable slope at this evolution time")
    return det, slope


def echo_accuracy(params, env, photon, evolution_time, integration_time, init_time, readout_time,
                  trials, seed, path, shot=True):
    """Accuracy (K) of the fixed-tau echo thermometer after ``integration_time``.

    Returns ``(monte_carlo_std, analytic_std, shots)``; the Monte Carlo value is
    the spread of ``trials`` independent estimates, each from Poisson photon
    counts summed over all shots.
    """
    det, slope = operating_point(params, env, evolution_time, photon)
    s_op = echo_fringe(evolution_time / 2.0, params, env, 0.0, det, photon)
    cfg = EchoEstimatorConfig(evolution_time / 2.0, slope, s_op, params.d_delta_dT)
    shot_time = evolution_time + init_time + readout_time
    shots = max(1, int(integration_time // shot_time))
    per_shot = photon.bright_counts_per_shot * params.n_nv
    sigma_s = math.sqrt(s_op / (per_shot * shots))
    analytic = sigma_s / abs(cfg.transduction)
    if not shot:
        return analytic, analytic, shots
    rate = photon.rate_baseline * photon.collection_factor * params.n_nv * s_op
    estimates = np.empty(trials)
    for k in range(trials):
        rng = substream(seed, *path, k)
        counts = rng.poisson(rate * photon.readout_window * shots)
        estimates[k] = echo_delta_T(counts / (per_shot * shots), s_op, cfg).delta_T
    return float(np.std(estimates, ddof=1)), analytic, shots


def run_echo_benchmark(scenario: Scenario, noise: str = "shot", threads: int = 1) -> RunReport:
    """Echo fringe trace with its beat fit, then the fixed-tau temperature readout."""
    shot = _check_noise(noise)
    params = scenario.nv_params()
    env = scenario.field_environment()
    photon = scenario.echo_photon_model(params)
    e = scenario.echo

    times = np.linspace(0.0, e.trace_max_time, e.trace_points)
    detuning = TWO_PI * e.trace_detuning_hz
    signal = echo_fringe(times / 2.0, params, env, 0.0, detuning, photon)
    per_point = photon.bright_counts_per_shot * params.n_nv * e.trace_shots
    if shot:
        rng = substream(scenario.seed, 0, 0)
        measured = rng.poisson(signal * per_point) / per_point
        sigma = np.sqrt(signal / per_point)
        beats = fit_echo_beats(times, measured, sigma=sigma)
    else:
        measured = signal
        beats = fit_echo_beats(times, measured)

    def cell(_):
        return echo_accuracy(params, env, photon, e.evolution_time, e.integration_time, e.init_time,
                             e.readout_time, e.trials, scenario.seed, (1, 0), shot)

    (accuracy, analytic, shots), = _map(cell, [0], threads)
    eta = accuracy * math.sqrt(e.integration_time)
    summary = {
        "beat_frequencies_Hz": [f / TWO_PI for f in beats.frequencies],
        "beat_weights_unitless": list(beats.weights),
        "beat_components_count": beats.n_components,
        "envelope_time_s": beats.envelope_time,
        "envelope_stretch_unitless": beats.stretch,
        "fringe_offset_unitless": beats.offset,
        "fringe_amplitude_unitless": beats.amplitude,
        "evolution_time_s": e.evolution_time,
        "integration_time_s": e.integration_time,
        "shots_count": shots,
        "readout_factor_unitless": photon.readout_factor,
        "accuracy_K": accuracy,
        "accuracy_analytic_K": analytic,
        "eta_K_per_sqrtHz": eta,
    }
    rows = [{"time_s": float(t), "signal_unitless": float(m), "expected_unitless": float(s)}
            for t, m, s in zip(times, np.atleast_1d(measured), np.atleast_1d(signal))]
    report = RunReport("echo", summary,
                       {"trace.csv": (("time_s", "signal_unitless", "expected_unitless"), rows)},
                       _provenance(scenario, noise))
    report.validate()
    return report


def _loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_sensitivity_sweep(scenario: Scenario, noise: str = "shot", threads: int = 1) -> RunReport:
    """Sensitivity surface over NV number, coherence time and integration time."""
    shot = _check_noise(noise)
    sv = scenario.sensitivity
    e = scenario.echo
    base = scenario.nv_params()
    env = scenario.field_environment()
    photon = scenario.echo_photon_model(base)

    rows = []
    for n in sv.n_nv:
        for tc in sv.t_coh:
            p = _with(base, n_nv=int(n), t_coh=float(tc))
            for t in sv.integration_time:
                rep = sensitivity(p, t)
                rows.append({"n_nv_count": int(n), "t_coh_s": float(tc), "integration_time_s": float(t),
                             "eta_K_per_sqrtHz": rep.eta, "accuracy_K": rep.accuracy_at_t})

    t_ref = float(sv.integration_time[len(sv.integration_time) // 2])
    cells = [("n", i, n) for i, n in enumerate(sv.n_nv)] + [("t", i, t) for i, t in enumerate(sv.integration_time)]

    def cell(c):
        kind, i, value = c
        if kind == "n":
            p, t, path = _with(base, n_nv=int(value)), t_ref, (2, i)
        else:
            p, t, path = base, float(value), (3, i)
        acc, analytic, _ = echo_accuracy(p, env, photon, sv.evolution_time, t, e.init_time,
                                         e.readout_time, sv.trials, scenario.seed, path, shot)
        return {"kind": kind, "value": value, "accuracy_K": acc, "analytic_K": analytic}

    mc = _map(cell, cells, threads)
    mc_n = [m for m in mc if m["kind"] == "n"]
    mc_t = [m for m in mc if m["kind"] == "t"]
    ultimate = sensitivity(_with(base, n_nv=sv.ultimate_n_nv, t_coh=sv.ultimate_t_coh), 1.0)
    summary = {
        "exponent_vs_n_nv_unitless": _loglog_slope([m["value"] for m in mc_n], [m["accuracy_K"] for m in mc_n]),
        "exponent_vs_time_unitless": _loglog_slope([m["value"] for m in mc_t], [m["accuracy_K"] for m in mc_t]),
        "analytic_exponent_vs_n_nv_unitless": _loglog_slope(
            list(sv.n_nv), [sensitivity(_with(base, n_nv=int(n)), t_ref).eta for n in sv.n_nv]),
        "mc_accuracy_vs_n_nv_K": [m["accuracy_K"] for m in mc_n],
        "mc_accuracy_vs_time_K": [m["accuracy_K"] for m in mc_t],
        "mc_reference_time_s": t_ref,
        "ultimate_eta_K_per_sqrtHz": ultimate.eta,
        "ultimate_n_nv_count": sv.ultimate_n_nv,
        "ultimate_t_coh_s": sv.ultimate_t_coh,
    }
    columns = ("n_nv_count", "t_coh_s", "integration_time_s", "eta_K_per_sqrtHz", "accuracy_K")
    report = RunReport("sensitivity_sweep", summary, {"surface.csv": (columns, rows)},
                       _provenance(scenario, noise))
    report.validate()
    return report


def _with(params: NVEnsembleParams, **changes) -> NVEnsembleParams:
    from dataclasses import replace

    return replace(params, **changes)


RUNNERS = {
    "four_point": run_power_sweep,
    "echo": run_echo_benchmark,
    "esr_scan": run_esr_scan,
    "heat_profile": run_heat_profile,
    "sensitivity_sweep": run_sensitivity_sweep,
}


def run_scenario(scenario: Scenario, noise: str = "shot", threads: int = 1) -> RunReport:
    return RUNNERS[scenario.protocol](scenario, noise=noise, threads=threads)
