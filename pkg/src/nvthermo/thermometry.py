"""Temperature estimators, fits and sensitivity figures of merit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize_scalar
from scipy.special import gammaln

from nvthermo.measurement import ESRSpectrumModel, esr_rate, esr_rate_derivative
from nvthermo.spin_model import NVEnsembleParams


class EstimationError(ArithmeticError):
    """The estimator cannot produce a value from the given data (degenerate geometry)."""


class FitError(RuntimeError):
    """A nonlinear fit failed to converge."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# four-point ESR estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FourPointConfig:
    """Probe geometry of the four-frequency estimator.

    The probes on the lower dip are ``omega_minus -+ delta_omega`` (f1, f2).
    On the upper dip, ``mirrored_ordering`` puts f3 at ``omega_plus + delta_omega``
    and f4 at ``omega_plus - delta_omega``; otherwise the lower-dip order is
    copied (f3 below, f4 above).
    """

    omega_minus: float
    omega_plus: float
    delta_omega: float
    d_delta_dT: float
    mirrored_ordering: bool = True
    degeneracy_floor: float = 1e-6

    def __post_init__(self):
        if not self.delta_omega > 0:
            raise ValueError(f"delta_omega must be positive, got {self.delta_omega}")
        if not self.omega_minus < self.omega_plus:
            raise ValueError("omega_minus must be below omega_plus")
        if self.d_delta_dT == 0:
            raise ValueError("d_delta_dT must be nonzero")

    @property
    def probe_frequencies(self) -> np.ndarray:
        lo, hi, d = self.omega_minus, self.omega_plus, self.delta_omega
        if self.mirrored_ordering:
            return np.array([lo - d, lo + d, hi + d, hi - d])
        return np.array([lo - d, lo + d, hi - d, hi + d])


@dataclass(frozen=True)
class EstimatorOutput:
    delta_T: float
    std_error: float
    numerator: float = float("nan")
    denominator: float = float("nan")


def four_point_delta_T(f1, f2, f3, f4, cfg: FourPointConfig, variances=None) -> EstimatorOutput:
    """Temperature change from fluorescence at the four probe frequencies.

    ``variances`` defaults to the Poisson variance of count data (``f_i``).
    """
    f = np.array([f1, f2, f3, f4], dtype=float)
    num = (f[0] + f[1]) - (f[2] + f[3])
    den = (f[0] - f[1]) + (f[2] - f[3])
    scale = np.mean(np.abs(f))
    if not abs(den) > cfg.degeneracy_floor * scale:
        raise EstimationError(
            f"degenerate four-point denominator {den:g} (floor {cfg.degeneracy_floor * scale:g}); "
            "check the probe geometry"
        )
    k = cfg.delta_omega / cfg.d_delta_dT
    delta_T = k * num / den
    var = np.clip(f, 0.0, None) if variances is None else np.asarray(variances, dtype=float)
    r = num / den
    grad = k / den * np.array([1 - r, 1 + r, -1 - r, -1 + r])
    std = float(np.sqrt(np.sum(grad**2 * var)))
    return EstimatorOutput(float(delta_T), std, float(num), float(den))


def _outer_max_slope(model: ESRSpectrumModel, side: int) -> float:
    # side=-1 searches below the lower dip, +1 above the upper dip
    w = model.linewidth
    inner = model.center + side * abs(model.half_splitting)
    outer = inner + side * 6.0 * w
    lo, hi = sorted((inner, outer))
    obj = lambda om: -side * esr_rate_derivative(model, om) * w / model.rate_baseline
    # coarse grid then bounded refinement around the best grid point
    grid = np.linspace(lo, hi, 601)
    k = int(np.argmin(obj(grid)))
    step = grid[1] - grid[0]
    res = minimize_scalar(obj, bounds=(max(lo, grid[k] - step), min(hi, grid[k] + step)),
                          method="bounded", options={"xatol": 1e-10 * w})
    return float(res.x)


def choose_probe_points(model: ESRSpectrumModel, d_delta_dT: float, delta_omega: float | None = None,
                        mirrored_ordering: bool = True) -> FourPointConfig:
    """Place the probes on the outer maximum-slope flanks of the two dips.

    ``delta_omega`` defaults to ``linewidth / 20``; larger offsets bias the
    linearized estimator (about 40 % at half the linewidth).
    """
    om_minus = _outer_max_slope(model, -1)
    om_plus = _outer_max_slope(model, +1)
    slope = min(abs(esr_rate_derivative(model, om_minus)), abs(esr_rate_derivative(model, om_plus)))
    if not slope * model.linewidth > 1e-9 * model.rate_baseline:
        raise EstimationError("spectrum has no resolvable slope structure")
    if delta_omega is None:
        delta_omega = model.linewidth / 20.0
    return FourPointConfig(om_minus, om_plus, delta_omega, d_delta_dT, mirrored_ordering)


def measure_four_point(model: ESRSpectrumModel, cfg: FourPointConfig) -> np.ndarray:
    """Noiseless fluorescence rates at the four probe frequencies."""
    return np.asarray(esr_rate(model, cfg.probe_frequencies), dtype=float)


# ---------------------------------------------------------------------------
# ESR spectrum fit
# ---------------------------------------------------------------------------

DIP_PARAMS = ("center", "half_splitting", "linewidth", "contrast", "baseline")


@dataclass(frozen=True)
class DipFit:
    values: dict
    errors: dict
    covariance: np.ndarray = field(repr=False)
    residual_norm: float
    nfev: int

    def model(self) -> ESRSpectrumModel:
        v = self.values
        return ESRSpectrumModel(v["center"], v["half_splitting"], v["linewidth"],
                                v["contrast"], v["baseline"])


def _dip_initial_guess(freqs, counts):
    base = float(np.max(counts))
    depth = np.clip(base - counts, 0.0, None)
    k0 = int(np.argmin(counts))
    weight = depth**2
    c0 = float(np.sum(freqs * weight) / np.sum(weight)) if weight.sum() > 0 else float(freqs[k0])
    half = depth[k0] / 2.0
    left = k0
    while left > 0 and depth[left - 1] >= half:
        left -= 1
    right = k0
    while right < len(freqs) - 1 and depth[right + 1] >= half:
        right += 1
    span = max(freqs[-1] - freqs[0], 1e-30)
    w0 = max(0.5 * (freqs[right] - freqs[left]), span / (4 * len(freqs)))
    h0 = abs(freqs[k0] - c0)
    contrast0 = float(np.clip(depth[k0] / base, 0.01, 0.95))
    return c0, h0, w0, contrast0, base


def fit_dip_centers(freqs, counts, sigma=None, p0=None, max_nfev: int = 5000) -> DipFit:
    """Least-squares fit of the double-Lorentzian ESR model.

    ``sigma`` defaults to Poisson errors ``sqrt(counts)``. Returns parameter
    values (``half_splitting`` reported non-negative) with one-sigma errors.
    """
    freqs = np.asarray(freqs, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if freqs.shape != counts.shape or freqs.ndim != 1:
        raise ValueError("freqs and counts must be 1-D arrays of equal length")
    if len(freqs) < 8:
        raise ValueError(f"need at least 8 points, got {len(freqs)}")
    order = np.argsort(freqs)
    freqs, counts = freqs[order], counts[order]
    sig = np.sqrt(np.clip(counts, 1.0, None)) if sigma is None else np.broadcast_to(
        np.asarray(sigma, dtype=float), counts.shape)[order]
    if np.any(sig <= 0):
        raise ValueError("sigma must be positive")

    c0, h0, w0, ct0, b0 = p0 if p0 is not None else _dip_initial_guess(freqs, counts)
    scale = np.array([w0, w0, w0, 1.0, b0])
    offset = np.array([c0, 0.0, 0.0, 0.0, 0.0])

    def unpack(x):
        return offset + scale * x

    def resid(x):
        c, h, w, ct, b = unpack(x)
        m = ESRSpectrumModel(c, h, w, ct, b)
        return (esr_rate(m, freqs) - counts) / sig

    lower = np.array([-np.inf, -np.inf, 1e-6, 1e-6, 1e-6])
    upper = np.array([np.inf, np.inf, np.inf, 1 - 1e-9, np.inf])
    starts = [np.array([0.0, max(h0, 0.25 * w0) / w0, 1.0, ct0, 1.0])]
    starts.append(np.array([0.0, max(h0, w0) / w0 * 1.5, 0.7, ct0, 1.0]))
    best = None
    for x0 in starts:
        x0 = np.clip(x0, lower + 1e-9, upper - 1e-9)
        res = least_squares(resid, x0, bounds=(lower, upper), method="trf", x_scale="jac",
                            ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=max_nfev)
        if best is None or res.cost < best.cost:
            best = res
    res = best
    if res.status <= 0:
        raise FitError("ESR fit did not converge", {"status": res.status, "message": res.message,
                                                    "cost": float(res.cost), "nfev": res.nfev})
    values = unpack(res.x)
    values[1] = abs(values[1])
    jac = res.jac * (1.0 / scale)
    cov = _covariance(jac)
    errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return DipFit(dict(zip(DIP_PARAMS, map(float, values))), dict(zip(DIP_PARAMS, map(float, errors))),
                  cov, float(np.sqrt(2.0 * res.cost)), int(res.nfev))


def _covariance(jac: np.ndarray) -> np.ndarray:
    """Inverse of ``J^T J``; directions with no curvature get infinite variance."""
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    tol = s.max() * 1e-10 if s.size else 0.0
    with np.errstate(divide="ignore"):
        inv_s2 = np.where(s > tol, 1.0 / s**2, np.inf)
    cov = (vt.T * inv_s2) @ vt
    flat = s <= tol
    if np.any(flat):
        # inf * 0 produces nan; make the loose directions explicit
        loose = np.any(np.abs(vt[flat]) > 1e-6, axis=0)
        cov = np.where(np.isnan(cov), 0.0, cov)
        cov[loose, loose] = np.inf
    return cov


# ---------------------------------------------------------------------------
# echo beat fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BeatFit:
    amplitude: float
    weights: tuple
    frequencies: tuple  # rad/s, ascending
    envelope_time: float
    stretch: float
    offset: float
    residual_norm: float
    n_components: int
    errors: dict = field(default_factory=dict)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        osc = sum(w * np.cos(f * t) for w, f in zip(self.weights, self.frequencies) if w != 0)
        return self.offset + self.amplitude * osc * np.exp(-((t / self.envelope_time) ** self.stretch))


def _beat_model(x, t, n):
    off, tenv, p = x[0], x[1], x[2]
    env = np.exp(-((t / tenv) ** p))
    osc = sum(x[3 + 2 * k] * np.cos(x[4 + 2 * k] * t) for k in range(n))
    return off + osc * env


def _spectral_peaks(t, y, max_peaks=4):
    n = len(t)
    grid = np.linspace(t[0], t[-1], n)
    yu = np.interp(grid, t, y)
    pad = 64 * n
    amp = np.abs(np.fft.rfft((yu - yu.mean()) * np.hanning(n), pad))
    freqs = 2 * np.pi * np.fft.rfftfreq(pad, grid[1] - grid[0])
    idx = [i for i in range(1, len(amp) - 1) if amp[i] >= amp[i - 1] and amp[i] >= amp[i + 1]]
    idx.sort(key=lambda i: -amp[i])
    peaks = [freqs[i] for i in idx[:max_peaks]]
    return peaks or [0.0]


def fit_echo_beats(times, signals, sigma=None, max_nfev: int = 4000) -> BeatFit:
    """Fit a stretched-exponential damped sum of one or two cosines.

    Both models are fitted; the two-frequency model is kept only when it
    lowers the residual significantly (F statistic above 10).
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(signals, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and signals must be 1-D arrays of equal length")
    if len(t) < 12:
        raise ValueError(f"need at least 12 samples, got {len(t)}")
    order = np.argsort(t)
    t, y = t[order], y[order]
    sig = np.ones_like(y) if sigma is None else np.broadcast_to(np.asarray(sigma, float), y.shape)[order]
    span = t[-1] - t[0]
    if span <= 0:
        raise ValueError("times must span a nonzero interval")
    off0 = float(np.mean(y))
    a0 = float(np.max(np.abs(y - off0))) or 1.0
    peaks = _spectral_peaks(t, y)
    fscale = 2 * np.pi / span

    def fit(n, x0):
        xs = np.concatenate([[a0, span, 1.0], np.tile([a0, fscale], n)])
        lower = np.concatenate([[-np.inf, 1e-3, 0.5], np.tile([-np.inf, 0.0], n)])
        upper = np.concatenate([[np.inf, np.inf, 4.0], np.tile([np.inf, np.inf], n)])
        x0 = np.clip(np.asarray(x0, float) / xs, lower + 1e-12, upper - 1e-12)
        res = least_squares(lambda x: (_beat_model(x * xs, t, n) - y) / sig, x0,
                            bounds=(lower, upper), method="trf", x_scale="jac",
                            ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=max_nfev)
        return res, xs

    fits = {1: [], 2: []}
    for tenv in (0.5 * span, span, 2.0 * span):
        for p in (1.0, 2.0):
            for f in peaks[:3]:
                fits[1].append(fit(1, [off0, tenv, p, a0, f]))
            for i, fa in enumerate(peaks[:3]):
                for fb in peaks[i + 1:4]:
                    fits[2].append(fit(2, [off0, tenv, p, a0 / 2, fa, a0 / 2, fb]))
            if len(peaks) == 1:
                fits[2].append(fit(2, [off0, tenv, p, a0 / 2, peaks[0], a0 / 2, peaks[0] + 0.5 * fscale]))
    best = {n: min(fs, key=lambda r: r[0].cost) for n, fs in fits.items() if fs}
    if all(r.status <= 0 for r, _ in best.values()):
        raise FitError("echo beat fit did not converge",
                       {n: r.message for n, (r, _) in best.items()})
    ss1, ss2 = 2 * best[1][0].cost, 2 * best[2][0].cost
    dof2 = len(t) - 7
    total = float(np.sum(((y - off0) / sig) ** 2))
    use_two = ss2 < ss1 and ss1 > 1e-20 * max(total, 1e-300) and (
        ss2 <= 1e-24 * max(total, 1e-300) or ((ss1 - ss2) / 2) / (ss2 / dof2) > 10.0
    )
    n = 2 if use_two else 1
    res, xs = best[n]
    if res.status <= 0:
        raise FitError("echo beat fit did not converge", {"message": res.message})
    x = res.x * xs
    cov = _covariance(res.jac / xs)
    if sigma is None and len(t) > len(x):
        cov = cov * (2 * res.cost / (len(t) - len(x)))
    err = np.sqrt(np.clip(np.diag(cov), 0, None))

    comps = sorted(((x[3 + 2 * k], x[4 + 2 * k], err[3 + 2 * k], err[4 + 2 * k]) for k in range(n)),
                   key=lambda c: c[1])
    amp = sum(c[0] for c in comps)
    weights = tuple(c[0] / amp for c in comps) + (0.0,) * (2 - n)
    freqs = tuple(c[1] for c in comps) + (float("nan"),) * (2 - n)
    errors = {
        "offset": err[0], "envelope_time": err[1], "stretch": err[2],
        "amplitudes": tuple(c[2] for c in comps) + (0.0,) * (2 - n),
        "frequencies": tuple(c[3] for c in comps) + (float("nan"),) * (2 - n),
    }
    errors["weights"] = tuple(e / abs(amp) for e in errors["amplitudes"])
    return BeatFit(float(amp), tuple(map(float, weights)), tuple(map(float, freqs)), float(x[1]),
                   float(x[2]), float(x[0]), float(np.sqrt(2 * res.cost)), n, errors)


# ---------------------------------------------------------------------------
# fixed-tau echo readout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EchoEstimatorConfig:
    """Operating point of the fixed-tau echo thermometer.

    ``fringe_amplitude`` is the derivative of the normalized signal with
    respect to accumulated phase at the operating point.
    """

    tau: float
    fringe_amplitude: float
    signal_offset: float
    d_delta_dT: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.fringe_amplitude > 0:
            raise ValueError(f"fringe_amplitude must be positive, got {self.fringe_amplitude}")

    @property
    def transduction(self) -> float:
        """Signal change per kelvin."""
        return self.fringe_amplitude * self.d_delta_dT * 2.0 * self.tau


def echo_delta_T(signal, reference_signal, cfg: EchoEstimatorConfig, sigma: float = 0.0) -> EstimatorOutput:
    """Temperature change from the shift of a fixed-tau echo signal."""
    if cfg.fringe_amplitude == 0:
        raise EstimationError("zero fringe amplitude")
    delta = (np.asarray(signal, dtype=float) - reference_signal) / cfg.transduction
    std = sigma / abs(cfg.transduction)
    if np.ndim(delta) == 0:
        return EstimatorOutput(float(delta), float(std))
    return EstimatorOutput(delta, float(std))


# ---------------------------------------------------------------------------
# sensitivity and linear-fit accuracy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensitivityReport:
    eta: float  # K/sqrt(Hz)
    accuracy_at_t: float  # K
    integration_time: float  # s


def sensitivity(params: NVEnsembleParams, t: float) -> SensitivityReport:
    """Projection-noise sensitivity degraded by the readout factor."""
    if not t > 0:
        raise ValueError(f"integration time must be positive, got {t}")
    eta = 1.0 / (params.readout_factor * abs(params.d_delta_dT) * np.sqrt(params.t_coh * params.n_nv))
    return SensitivityReport(float(eta), float(eta / np.sqrt(t)), float(t))


@dataclass(frozen=True)
class LinearFitReport:
    slope: float  # K/W
    accuracy: float  # K
    accuracy_error: float  # K
    n_points: int
    slope_error: float = float("nan")


def accuracy_error_factor(n: int) -> float:
    """``sqrt(1 - 2/(n-1) * Gamma(n/2)^2 / Gamma((n-1)/2)^2)``, the relative spread of the accuracy."""
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    log_ratio = 2.0 * (gammaln(n / 2.0) - gammaln((n - 1) / 2.0))
    return float(np.sqrt(max(0.0, 1.0 - 2.0 / (n - 1) * np.exp(log_ratio))))


def linear_fit_accuracy(powers, temps) -> LinearFitReport:
    """Zero-intercept fit ``T = m P`` and the residual accuracy with its error bar."""
    p = np.asarray(powers, dtype=float)
    y = np.asarray(temps, dtype=float)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError("powers and temps must be 1-D arrays of equal length")
    n = len(p)
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if np.ptp(p) == 0:
        raise ValueError("powers must not all be equal")
    spp = float(np.dot(p, p))
    m = float(np.dot(p, y) / spp)
    resid = y - m * p
    acc = float(np.sqrt(np.dot(resid, resid) / (n - 1)))
    return LinearFitReport(m, acc, acc * accuracy_error_factor(n), n, acc / np.sqrt(spp))
