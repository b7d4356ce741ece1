"""Nonlinear least-squares engine and the shipped fit models.

The fitter is a damped Gauss-Newton (Levenberg-Marquardt) loop on weighted
residuals with Marquardt diagonal scaling. Counting data gets Poisson weights
1/max(y, 1). Uncertainties come from the covariance at the optimum scaled by
the reduced chi-square; widths are parameterized as FWHM throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks, peak_widths

from .constants import CODATA
from .physics import FOUR_LN2, TWO_PI
from .series import CountTimeSeries

MAX_ITERATIONS = 200
COST_TOL = 1e-10
GRAD_TOL = 1e-10


class FitInputError(ValueError):
    """Raised for data that violates a fit precondition."""


class PeakSeedingError(FitInputError):
    """Raised when fewer peaks are detected than requested."""

    def __init__(self, requested: int, found: int):
        super().__init__(f"requested {requested} peaks but detected only {found}")
        self.requested = requested
        self.found = found


@dataclass(frozen=True)
class FitModel:
    """A parametric curve y = predict(params, x) with optional analytic Jacobian."""

    name: str
    param_names: tuple[str, ...]
    predict: callable
    jacobian: callable | None = None

    @property
    def n_params(self) -> int:
        return len(self.param_names)


@dataclass
class FitReport:
    """Fitted parameters with 1-sigma uncertainties and convergence metadata."""

    model: str
    parameters: dict[str, float]
    uncertainties: dict[str, float]
    residual_norm: float
    iterations: int
    converged: bool
    condition: float
    flags: tuple[str, ...] = ()
    cost_trace: tuple[float, ...] = field(default=(), repr=False)

    def __getitem__(self, name: str) -> float:
        return self.parameters[name]

    def sigma(self, name: str) -> float:
        return self.uncertainties[name]

    def to_json(self) -> str:
        doc = {
            "model": self.model,
            "parameters": {
                name: {"value": self.parameters[name], "sigma": self.uncertainties[name]}
                for name in self.parameters
            },
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "condition": self.condition,
            "flags": list(self.flags),
        }
        return json.dumps(doc, indent=2)


def poisson_weights(y: np.ndarray) -> np.ndarray:
    """Counting-statistics weights 1 / max(y, 1)."""
    return 1.0 / np.maximum(np.asarray(y, dtype=float), 1.0)


def numeric_jacobian(predict, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Forward-difference Jacobian of ``predict`` with respect to the parameters."""
    params = np.asarray(params, dtype=float)
    y0 = np.asarray(predict(params, x), dtype=float)
    jac = np.empty((y0.shape[0], params.shape[0]))
    for j in range(params.shape[0]):
        step = math.sqrt(np.finfo(float).eps) * max(abs(params[j]), 1.0)
        p = params.copy()
        p[j] += step
        jac[:, j] = (np.asarray(predict(p, x), dtype=float) - y0) / step
    return jac


def levenberg_marquardt(model: FitModel, x, y, weights=None, init=None, *,
                        max_iterations: int = MAX_ITERATIONS,
                        cost_tol: float = COST_TOL,
                        grad_tol: float = GRAD_TOL) -> FitReport:
    """Minimize the weighted sum of squared residuals of ``model`` over ``init``.

    Terminates on a relative cost change below ``cost_tol`` between accepted
    steps, on a gradient infinity-norm below ``grad_tol``, or after
    ``max_iterations`` accepted iterations. Singular normal equations that
    damping cannot rescue yield a non-converged report, not an exception.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if init is None:
        raise FitInputError("initial parameters required")
    p = np.asarray(init, dtype=float).copy()
    if x.shape[0] != y.shape[0]:
        raise FitInputError("x and y lengths differ")
    if x.shape[0] < model.n_params:
        raise FitInputError("need at least as many points as parameters")
    if weights is None:
        weights = np.ones_like(y)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape[0] != y.shape[0]:
            raise FitInputError("weights length mismatch")
    sw = np.sqrt(weights)

    def residuals(params):
        pred = np.asarray(model.predict(params, x), dtype=float)
        return sw * (pred - y)

    def jacobian(params):
        if model.jacobian is not None:
            jac = np.asarray(model.jacobian(params, x), dtype=float)
        else:
            jac = numeric_jacobian(model.predict, params, x)
        return sw[:, None] * jac

    r = residuals(p)
    if not np.all(np.isfinite(r)):
        raise FitInputError("model not finite at the initial parameters")
    cost = float(r @ r)
    trace = [cost]
    lam = 1e-3
    converged = False
    flags: list[str] = []
    iterations = 0
    a_matrix = None

    for _ in range(max_iterations):
        jac = jacobian(p)
        a_matrix = jac.T @ jac
        g = jac.T @ r
        if np.max(np.abs(g)) < grad_tol:
            converged = True
            break
        stepped = False
        diag = np.diag(np.maximum(np.diag(a_matrix), 1e-300))
        while lam < 1e15:
            try:
                delta = np.linalg.solve(a_matrix + lam * diag, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_try = p + delta
            r_try = residuals(p_try)
            cost_try = float(r_try @ r_try) if np.all(np.isfinite(r_try)) else math.inf
            if cost_try < cost:
                rel_drop = (cost - cost_try) / max(cost, 1e-300)
                p = p_try
                r = r_try
                cost = cost_try
                trace.append(cost)
                iterations += 1
                lam = max(lam / 4.0, 1e-12)
                stepped = True
                if rel_drop < cost_tol:
                    converged = True
                break
            lam *= 8.0
        if not stepped:
            flags.append("damping-exhausted")
            break
        if converged:
            break
    if iterations >= max_iterations:
        flags.append("iteration-limit")

    if a_matrix is None:
        jac = jacobian(p)
        a_matrix = jac.T @ jac
    n, k = x.shape[0], model.n_params
    chi2_red = cost / (n - k) if n > k else 0.0
    try:
        cov = np.linalg.inv(a_matrix) * chi2_red
        condition = float(np.linalg.cond(a_matrix))
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(a_matrix) * chi2_red
        condition = math.inf
        flags.append("singular-covariance")
    sigmas = np.sqrt(np.maximum(np.diag(cov), 0.0))
    if math.isfinite(condition) and condition > 1e8:
        flags.append("ill-conditioned")

    return FitReport(
        model=model.name,
        parameters=dict(zip(model.param_names, map(float, p))),
        uncertainties=dict(zip(model.param_names, map(float, sigmas))),
        residual_norm=math.sqrt(cost),
        iterations=iterations,
        converged=converged,
        condition=condition,
        flags=tuple(flags),
        cost_trace=tuple(trace),
    )


# ----------------------------------------------------------------------
# shipped models
# ----------------------------------------------------------------------

def exponential_model() -> FitModel:
    """A exp(-t/tau) + c."""

    def predict(p, t):
        a, tau, c = p
        return a * np.exp(-t / tau) + c

    def jacobian(p, t):
        a, tau, _ = p
        e = np.exp(-t / tau)
        return np.column_stack([e, a * e * t / tau ** 2, np.ones_like(t)])

    return FitModel("exponential", ("amplitude", "tau", "baseline"), predict, jacobian)


def double_exponential_model() -> FitModel:
    """A1 exp(-t/tau1) + A2 exp(-t/tau2) + c."""

    def predict(p, t):
        a1, t1, a2, t2, c = p
        return a1 * np.exp(-t / t1) + a2 * np.exp(-t / t2) + c

    def jacobian(p, t):
        a1, t1, a2, t2, _ = p
        e1 = np.exp(-t / t1)
        e2 = np.exp(-t / t2)
        return np.column_stack([e1, a1 * e1 * t / t1 ** 2,
                                e2, a2 * e2 * t / t2 ** 2, np.ones_like(t)])

    return FitModel("double-exponential",
                    ("amplitude_fast", "tau_fast", "amplitude_slow", "tau_slow", "baseline"),
                    predict, jacobian)


def multi_gaussian_model(n_peaks: int) -> FitModel:
    """Sum of n unit-area-free Gaussians (center, fwhm, amplitude each) plus baseline."""

    if n_peaks < 1:
        raise ValueError("need at least one peak")

    def predict(p, x):
        out = np.full_like(np.asarray(x, dtype=float), p[-1])
        for i in range(n_peaks):
            c, f, a = p[3 * i], p[3 * i + 1], p[3 * i + 2]
            out = out + a * np.exp(-FOUR_LN2 * ((x - c) / f) ** 2)
        return out

    def jacobian(p, x):
        cols = []
        for i in range(n_peaks):
            c, f, a = p[3 * i], p[3 * i + 1], p[3 * i + 2]
            u = (x - c) / f
            e = np.exp(-FOUR_LN2 * u ** 2)
            cols.append(a * e * 2.0 * FOUR_LN2 * u / f)            # d/dc
            cols.append(a * e * 2.0 * FOUR_LN2 * u ** 2 / f)       # d/df
            cols.append(e)                                         # d/da
        cols.append(np.ones_like(np.asarray(x, dtype=float)))
        return np.column_stack(cols)

    names = []
    for i in range(n_peaks):
        names += [f"center_{i + 1}", f"fwhm_{i + 1}", f"amplitude_{i + 1}"]
    names.append("baseline")
    return FitModel(f"gaussians-{n_peaks}", tuple(names), predict, jacobian)


def thermal_detuning_model() -> FitModel:
    """amplitude * exp(-b * dw / T) / sqrt(dw) with T kept positive via log(T).

    Parameters are (log_temperature, amplitude); ``dw`` is the detuning above
    the trap bottom in rad/s and b = 2 hbar / (3 kB).
    """
    b = 2.0 * CODATA.hbar / (3.0 * CODATA.k_B)

    def predict(p, dw):
        log_t, amp = p
        t = math.exp(log_t)
        return amp * np.exp(-b * dw / t) / np.sqrt(dw)

    def jacobian(p, dw):
        log_t, amp = p
        t = math.exp(log_t)
        base = np.exp(-b * dw / t) / np.sqrt(dw)
        return np.column_stack([amp * base * (b * dw / t), base])

    return FitModel("thermal-detuning", ("log_temperature", "amplitude"), predict, jacobian)


# ----------------------------------------------------------------------
# fit drivers
# ----------------------------------------------------------------------

def _series_xy(series: CountTimeSeries) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(series.bin_centers)
    return series.bin_centers[order], series.counts[order].astype(float)


def _log_linear(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """OLS of ln(y) on t; returns (amplitude, tau)."""
    ln = np.log(y)
    slope, intercept = np.polyfit(t, ln, 1)
    tau = -1.0 / slope if slope < 0.0 else np.ptp(t) * 10.0
    return math.exp(intercept), tau


def fit_exponential(series: CountTimeSeries) -> FitReport:
    """Fit A exp(-t/tau) + c to a count decay; seeds from a log-linear tail fit."""
    t, y = _series_xy(series)
    if t.shape[0] < 10:
        raise FitInputError("need at least 10 bins")
    baseline = float(np.mean(y[int(0.9 * len(y)):]))
    net = y - baseline
    mask = net > max(net.max() / 50.0, 0.0)
    if net.max() <= 0.0 or mask.sum() < 3:
        raise FitInputError("no positive dynamic range after baseline subtraction")
    amp, tau = _log_linear(t[mask], net[mask])
    report = levenberg_marquardt(exponential_model(), t, y, poisson_weights(y),
                                 [amp, tau, baseline])
    span = float(t[-1] - t[0])
    if report.parameters["tau"] > 50.0 * span or report.parameters["tau"] <= 0.0:
        report.flags = report.flags + ("tau-unbounded",)
        report.converged = False
    return report


def fit_double_exponential(series: CountTimeSeries) -> FitReport:
    """Fit the sum of a fast and a slow exponential plus a constant.

    Seeds the slow component from the tail, the fast one from the early
    residual; reports parameters ordered so tau_fast < tau_slow and flags
    the fit as degenerate when the two timescales are within a factor 2.
    """
    t, y = _series_xy(series)
    if t.shape[0] < 10:
        raise FitInputError("need at least 10 bins")
    baseline = float(np.mean(y[int(0.9 * len(y)):]))
    net = y - baseline
    if net.max() <= 0.0:
        raise FitInputError("no positive dynamic range after baseline subtraction")

    tail = t > t[0] + 0.35 * (t[-1] - t[0])
    tail &= net > max(net.max() / 100.0, 0.0)
    if tail.sum() >= 3:
        a2, tau2 = _log_linear(t[tail], net[tail])
    else:
        a2, tau2 = float(net.max()) / 2.0, float(t[-1] - t[0]) / 2.0
    early = t <= t[0] + 0.25 * (t[-1] - t[0])
    resid = net - a2 * np.exp(-t / tau2)
    early &= resid > max(float(resid.max()) / 50.0, 0.0)
    if early.sum() >= 3:
        a1, tau1 = _log_linear(t[early], resid[early])
    else:
        a1, tau1 = max(float(net[0] - a2), float(net.max()) / 10.0), tau2 / 10.0
    tau1 = min(tau1, tau2 / 2.0)

    report = levenberg_marquardt(double_exponential_model(), t, y, poisson_weights(y),
                                 [max(a1, 1e-12), max(tau1, 1e-9), a2, tau2, baseline])
    p = report.parameters
    if p["tau_fast"] > p["tau_slow"]:  # normalize ordering
        p["amplitude_fast"], p["amplitude_slow"] = p["amplitude_slow"], p["amplitude_fast"]
        p["tau_fast"], p["tau_slow"] = p["tau_slow"], p["tau_fast"]
        u = report.uncertainties
        u["amplitude_fast"], u["amplitude_slow"] = u["amplitude_slow"], u["amplitude_fast"]
        u["tau_fast"], u["tau_slow"] = u["tau_slow"], u["tau_fast"]
    if p["tau_fast"] > 0.0 and p["tau_slow"] / p["tau_fast"] < 2.0:
        report.flags = report.flags + ("degenerate-timescales",)
    return report


def seed_peaks(x: np.ndarray, y: np.ndarray, n_peaks: int) -> list[tuple[float, float, float]]:
    """Locate peak seeds (center, fwhm, amplitude) by smoothed local maxima.

    The prominence threshold starts at 3 sqrt(baseline) and is relaxed (along
    with the smoothing window) if too few maxima appear; blends that still
    hide a requested peak are seeded by splitting the widest candidate.
    Raises PeakSeedingError with the number found when no candidate at all
    supports the requested count.
    """
    n = y.shape[0]
    dx = abs(float(np.mean(np.diff(x)))) if n > 1 else 1.0
    baseline = float(np.percentile(y, 10))
    base_window = max(3, min(n // 40 * 2 + 1, 15))
    base_prom = 3.0 * math.sqrt(max(baseline, 1.0))
    distance = max(1, n // (6 * n_peaks))

    best: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    for window, prominence in ((base_window, base_prom),
                               (base_window, 0.5 * base_prom),
                               (max(3, base_window // 2), 0.5 * base_prom)):
        kernel = np.ones(window) / window
        smooth = np.convolve(y, kernel, mode="same")
        peaks, props = find_peaks(smooth, prominence=prominence, distance=distance)
        if best is None or peaks.shape[0] > best[0].shape[0]:
            best = (peaks, props["prominences"], smooth)
        if peaks.shape[0] >= n_peaks:
            break
    peaks, prominences, smooth = best
    if peaks.shape[0] == 0:
        raise PeakSeedingError(n_peaks, 0)
    if peaks.shape[0] > n_peaks:
        keep = np.sort(np.argsort(prominences)[::-1][:n_peaks])
        peaks = peaks[keep]
    widths, _, _, _ = peak_widths(smooth, peaks, rel_height=0.5)
    seeds = []
    for pk, wd in zip(peaks, widths):
        fwhm = max(wd * dx, 2.0 * dx)
        amp = max(float(smooth[pk] - baseline), 1e-12)
        seeds.append([float(x[pk]), fwhm, amp])

    # a blend can swallow a neighbor: seed missing peaks by splitting the
    # widest candidates in two
    while len(seeds) < n_peaks:
        seeds.sort(key=lambda s: s[1], reverse=True)
        c, f, a = seeds[0]
        if f < 4.0 * dx:
            raise PeakSeedingError(n_peaks, len(seeds))
        seeds[0] = [c - 0.25 * f, 0.5 * f, a]
        seeds.append([c + 0.25 * f, 0.5 * f, a])
    seeds.sort(key=lambda s: s[0])
    return [tuple(s) for s in seeds]


def _pathological_peaks(report: FitReport, n_peaks: int, x: np.ndarray) -> bool:
    span = float(x[-1] - x[0])
    for i in range(n_peaks):
        a = report.parameters[f"amplitude_{i + 1}"]
        c = report.parameters[f"center_{i + 1}"]
        f = abs(report.parameters[f"fwhm_{i + 1}"])
        if a <= 0.0 or f > 0.6 * span or not (x[0] - 0.1 * span <= c <= x[-1] + 0.1 * span):
            return True
    return False


def fit_multi_gaussian(spectrum: CountTimeSeries, n_peaks: int) -> FitReport:
    """Fit ``n_peaks`` Gaussians plus a shared baseline; centers sorted ascending.

    Blended lines make the raw per-peak width estimates unreliable and open
    spurious cost basins, so the fit seeds every peak with a common width and
    retries from a few width scales, keeping the best non-pathological basin.
    """
    if n_peaks < 1:
        raise FitInputError("need at least one peak")
    x, y = _series_xy(spectrum)
    if x.shape[0] < 4 * n_peaks + 1:
        raise FitInputError("not enough bins for the requested peak count")
    seeds = seed_peaks(x, y, n_peaks)
    dx = abs(float(np.mean(np.diff(x))))
    span = float(x[-1] - x[0])
    common = float(np.clip(np.median([f for _, f, _ in seeds]), 2.0 * dx, span / 4.0))
    baseline0 = float(np.percentile(y, 10))
    model = multi_gaussian_model(n_peaks)
    weights = poisson_weights(y)

    report = None
    best_key = None
    for width_scale in (1.0, 1.6, 0.6):
        init = []
        for c, _, a in seeds:
            init += [c, width_scale * common, a]
        init.append(baseline0)
        try:
            trial = levenberg_marquardt(model, x, y, weights, init)
        except FitInputError:
            continue
        key = (not trial.converged, _pathological_peaks(trial, n_peaks, x),
               trial.residual_norm)
        if best_key is None or key < best_key:
            best_key = key
            report = trial
    if report is None:
        raise FitInputError("all peak-fit starts failed")
    if _pathological_peaks(report, n_peaks, x):
        report.flags = report.flags + ("pathological-peaks",)

    # report peaks sorted by center
    trip = [(report.parameters[f"center_{i+1}"], report.parameters[f"fwhm_{i+1}"],
             report.parameters[f"amplitude_{i+1}"],
             report.uncertainties[f"center_{i+1}"], report.uncertainties[f"fwhm_{i+1}"],
             report.uncertainties[f"amplitude_{i+1}"]) for i in range(n_peaks)]
    trip.sort(key=lambda v: v[0])
    for i, (c, f, a, sc, sf, sa) in enumerate(trip):
        report.parameters[f"center_{i+1}"] = c
        report.parameters[f"fwhm_{i+1}"] = abs(f)
        report.parameters[f"amplitude_{i+1}"] = a
        report.uncertainties[f"center_{i+1}"] = sc
        report.uncertainties[f"fwhm_{i+1}"] = sf
        report.uncertainties[f"amplitude_{i+1}"] = sa
    return report


def fit_temperature(spectrum: CountTimeSeries, trap_bottom: float) -> FitReport:
    """Fit the thermal detuning model and report the cloud temperature.

    ``trap_bottom`` is the trap-bottom resonance expressed on the spectrum's
    frequency axis (Hz). Bins within 1 kHz of the bottom are excluded; the
    temperature stays positive through an internal log parameterization.
    """
    x, y = _series_xy(spectrum)
    dw = TWO_PI * (x - trap_bottom)
    # keep clear of the inverse-square-root spike at the bottom: the binned,
    # window-convolved data deviates from the pointwise model there
    spacing = TWO_PI * float(np.median(np.abs(np.diff(x)))) if x.shape[0] > 1 else 0.0
    floor = max(TWO_PI * 1e3, 12.0 * spacing)
    mask = dw > floor
    if mask.sum() < 5:
        raise FitInputError("too few bins above the trap bottom")
    if np.all(y[mask] <= 0.0):
        raise FitInputError("no positive counts above the trap bottom")
    dw = dw[mask]
    yy = y[mask]

    b = 2.0 * CODATA.hbar / (3.0 * CODATA.k_B)
    pos = yy > 0.0
    slope, intercept = np.polyfit(dw[pos], np.log(yy[pos] * np.sqrt(dw[pos])), 1)
    t0 = b / max(-slope, 1e-12) if slope < 0.0 else 1e-4
    t0 = min(max(t0, 1e-8), 1e-2)
    amp0 = math.exp(intercept)

    model = thermal_detuning_model()
    report = levenberg_marquardt(model, dw, yy, poisson_weights(yy),
                                 [math.log(t0), amp0])
    log_t = report.parameters.pop("log_temperature")
    sig_log = report.uncertainties.pop("log_temperature")
    t_fit = math.exp(log_t)
    report.parameters = {"temperature": t_fit, **report.parameters}
    report.uncertainties = {"temperature": t_fit * sig_log, **report.uncertainties}
    return report


def linear_fit(x, y) -> tuple[float, float, tuple[float, float]]:
    """Ordinary least squares line fit: returns slope, intercept, standard errors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise FitInputError("x and y lengths differ")
    if x.shape[0] < 3:
        raise FitInputError("need at least 3 points")
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx == 0.0:
        raise FitInputError("all x values identical (rank deficient)")
    if np.all(y == y[0]):  # constant data has exactly zero slope
        return 0.0, float(y[0]), (0.0, 0.0)
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xbar)
    resid = y - (slope * x + intercept)
    dof = x.shape[0] - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    se_slope = math.sqrt(s2 / sxx)
    se_intercept = math.sqrt(s2 * (1.0 / x.shape[0] + xbar ** 2 / sxx))
    return slope, intercept, (se_slope, se_intercept)
