"""Regime fits on sampled survival traces: Zeno parabola, exponential, power law, band-edge beating."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import lombscargle

from . import analytic
from .errors import DecayLabError, FitError
from .evolve import SurvivalTrace, bound_state_weights
from .model import ChainParams

MIN_SAMPLES = 8
SLOPE_SPREAD = 0.05
STENCIL = 5
SUPPRESSED_CONTRAST = 0.05

# Values quoted for the measured arrays; printed for comparison, never asserted.
PUBLISHED_VALUES = {
    "z_fit_array_A": 1.23,
    "c_inf_mm_array_B": 9.48,
}


@dataclass(frozen=True)
class FitWindow:
    t_lo: float
    t_hi: float
    selection: str = "manual"

    def __post_init__(self):
        if not self.t_lo < self.t_hi:
            raise FitError(f"empty fit window [{self.t_lo}, {self.t_hi}]")

    def mask(self, t: np.ndarray) -> np.ndarray:
        return (t >= self.t_lo) & (t <= self.t_hi)

    def as_dict(self) -> dict:
        return {"t_lo_mm": self.t_lo, "t_hi_mm": self.t_hi, "selection": self.selection}


def _window_samples(trace: SurvivalTrace, window: FitWindow, positive: bool = False):
    mask = window.mask(trace.t)
    if positive:
        mask &= trace.p > 0
    if mask.sum() < MIN_SAMPLES:
        raise FitError(f"window [{window.t_lo:g}, {window.t_hi:g}] mm holds {mask.sum()} usable samples, need {MIN_SAMPLES}")
    return trace.t[mask], trace.p[mask], mask


def _nominal_tau_z(trace: SurvivalTrace) -> Optional[float]:
    if trace.params is None or trace.params.kappa0 == 0:
        return None
    return 1.0 / trace.params.kappa0


def fit_zeno(trace: SurvivalTrace, window: Optional[FitWindow] = None, *, enforce: bool = True) -> tuple[float, float]:
    """Zeno time from 1 - p = (t/tau_z)^2, least squares through the origin in t^2.

    Returns (tau_z_est, rms of the residuals of 1 - p).
    """
    tau_nominal = _nominal_tau_z(trace)
    if window is None:
        if tau_nominal is None:
            raise FitError("fit_zeno needs a window when the trace carries no coupling parameters")
        window = FitWindow(float(trace.t[0]), float(trace.t[0]) + 0.2 * tau_nominal, "automatic")
    if enforce and tau_nominal is not None and window.t_hi > 0.3 * tau_nominal * (1 + 1e-12):
        raise FitError(f"Zeno window ends at {window.t_hi:g} mm, beyond 0.3/kappa0 = {0.3 * tau_nominal:g} mm")
    t, p, _ = _window_samples(trace, window)
    x = t**2
    y = 1.0 - p
    slope = float(np.dot(x, y) / np.dot(x, x))
    if not slope > 0:
        raise FitError("no curvature: 1 - p does not grow with t^2")
    rms = float(np.sqrt(np.mean((y - slope * x) ** 2)))
    return slope**-0.5, rms


def _local_log_slope(t: np.ndarray, logp: np.ndarray) -> np.ndarray:
    dt = np.diff(t)
    if np.allclose(dt, dt[0], rtol=1e-9, atol=0) and t.size >= STENCIL:
        h = dt[0]
        slope = np.full(t.size, np.nan)
        slope[2:-2] = (logp[:-4] - 8 * logp[1:-3] + 8 * logp[3:-1] - logp[4:]) / (12 * h)
        return slope
    return np.gradient(logp, t)


def select_exp_window(trace: SurvivalTrace, spread: float = SLOPE_SPREAD) -> FitWindow:
    """Largest window after the Zeno crossover on which d ln p/dt is constant within ``spread``.

    The crossover is estimated as gamma tau_z^2 / 2 from the median log-slope
    and the curvature at the first positive time. Ties go to the earliest window.
    """
    t, p = trace.t, trace.p
    valid = p > 0
    logp = np.full(p.shape, -np.inf)
    logp[valid] = np.log(p[valid])
    with np.errstate(invalid="ignore"):
        slope = _local_log_slope(t, logp)
    slope[~np.isfinite(slope)] = np.nan

    finite = np.isfinite(slope)
    if finite.sum() < MIN_SAMPLES:
        raise FitError("no exponential regime detected: too few usable samples")
    gamma_hat = -float(np.nanmedian(slope))
    first = np.argmax(t > 0)
    curvature = (1.0 - p[first]) / t[first] ** 2
    tau_zero = gamma_hat / (2.0 * curvature) if curvature > 0 and gamma_hat > 0 else t[0]
    start = int(np.searchsorted(t, max(tau_zero, t[0])))

    best = None  # (length, i, j)
    n = t.size
    for i in range(start, n - MIN_SAMPLES + 1):
        s = slope[i:]
        ok = np.isfinite(s) & (s < 0)
        if not ok[0]:
            continue
        # windows must be contiguous runs of usable slopes
        run = np.argmin(ok) if not ok.all() else ok.size
        s = s[:run]
        if s.size < MIN_SAMPLES:
            continue
        hi = np.maximum.accumulate(s)
        lo = np.minimum.accumulate(s)
        mean = np.cumsum(s) / np.arange(1, s.size + 1)
        good = (hi - lo) <= spread * np.abs(mean)
        good[: MIN_SAMPLES - 1] = False
        if not good.any():
            continue
        length = int(np.nonzero(good)[0].max()) + 1
        if best is None or length > best[0]:
            best = (length, i, i + length - 1)
    if best is None:
        raise FitError("no exponential regime detected")
    _, i, j = best
    return FitWindow(float(t[i]), float(t[j]), "automatic")


def _weighted_line(x: np.ndarray, y: np.ndarray, w: Optional[np.ndarray]):
    design = np.column_stack([np.ones_like(x), x])
    if w is not None:
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    else:
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))


def fit_exponential(
    trace: SurvivalTrace, window: FitWindow, sigma_p: Optional[np.ndarray] = None
) -> tuple[float, float, float]:
    """Straight line through ln p on the window: (Z, gamma, rms of ln p residuals).

    ``sigma_p`` switches to weights (p/sigma_p)^2, the inverse variance of ln p.
    """
    t, p, mask = _window_samples(trace, window, positive=True)
    w = None if sigma_p is None else (p / np.asarray(sigma_p)[mask]) ** 2
    intercept, slope, rms = _weighted_line(t, np.log(p), w)
    return math.exp(intercept), -slope, rms


def _expected_omega(trace: SurvivalTrace) -> Optional[float]:
    return None if trace.params is None else 4.0 * trace.params.kappa


def period_average(t: np.ndarray, y: np.ndarray, period: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered boxcar mean of the linear interpolant over one period.

    Returns (mask of points whose full box fits inside the data, averages there).
    """
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])
    half = 0.5 * period
    inside = (t - half >= t[0]) & (t + half <= t[-1])
    ti = t[inside]
    upper = np.interp(ti + half, t, cum)
    lower = np.interp(ti - half, t, cum)
    return inside, (upper - lower) / period


def fit_power_law(
    trace: SurvivalTrace, window: FitWindow, period: Optional[float] = None
) -> tuple[float, float, float]:
    """Power law through the period-averaged trace: (exponent, prefactor in mm, rms).

    The running mean over one oscillation period is taken of t^3 p and divided
    back by t^3; averaging p itself would bend a pure power law at short t.

    The prefactor is C in p = (C/t)^3 convention: (amplitude)^(1/3).
    """
    if period is None:
        omega = _expected_omega(trace)
        if omega is None:
            raise FitError("fit_power_law needs the oscillation period or trace parameters")
        period = 2.0 * math.pi / omega
    if window.t_hi - window.t_lo < 2.0 * period:
        raise FitError(f"power-law window shorter than two oscillation periods ({2 * period:.3g} mm)")
    if np.any(trace.p <= 0):
        raise FitError("power-law fit needs p > 0")
    # average the envelope-flattened t^3 p so a pure t^-3 law passes through unbiased
    inside, averaged = period_average(trace.t, trace.t**3 * trace.p, period)
    t_avg = trace.t[inside]
    averaged = averaged / t_avg**3
    sel = window.mask(t_avg)
    if sel.sum() < MIN_SAMPLES:
        raise FitError("too few period-averaged samples in the power-law window")
    intercept, slope, rms = _weighted_line(np.log(t_avg[sel]), np.log(averaged[sel]), None)
    return slope, math.exp(intercept / 3.0), rms


@dataclass(frozen=True)
class OscillationFit:
    omega: float
    contrast: float
    suppressed: bool

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega


def _ls_amplitude(t: np.ndarray, r: np.ndarray, omega: float) -> float:
    design = np.column_stack([np.ones_like(t), np.cos(omega * t), np.sin(omega * t)])
    coef, *_ = np.linalg.lstsq(design, r, rcond=None)
    return float(math.hypot(coef[1], coef[2]))


def oscillation_frequency(
    trace: SurvivalTrace,
    window: FitWindow,
    omega_expected: Optional[float] = None,
    threshold: float = SUPPRESSED_CONTRAST,
) -> OscillationFit:
    """Dominant angular frequency and relative modulation of t^3 p(t) on the window.

    t^3 p is divided by its one-period running mean (a quadratic trend when no
    period is known) so slow envelopes drop out; the Lomb-Scargle peak is then
    polished by maximizing the least-squares sinusoid amplitude.
    """
    omega_expected = omega_expected or _expected_omega(trace)
    t_all, p_all = trace.t, trace.p
    y_all = t_all**3 * p_all
    if omega_expected is not None:
        inside, trend = period_average(t_all, y_all, 2.0 * math.pi / omega_expected)
        t_in, y_in = t_all[inside], y_all[inside]
        sel = window.mask(t_in)
        t, y, trend = t_in[sel], y_in[sel], trend[sel]
    else:
        t, y, _ = _window_samples(SurvivalTrace(t_all, y_all), window)
        trend = np.polyval(np.polyfit(t - t.mean(), y, 2), t - t.mean())
    if t.size < MIN_SAMPLES:
        raise FitError("too few samples in the oscillation window")
    span = t[-1] - t[0]
    if omega_expected is not None and window.t_hi - window.t_lo < 3.0 * 2.0 * math.pi / omega_expected:
        raise FitError("oscillation window spans fewer than three expected periods")
    r = y / trend - 1.0
    r = r - r.mean()

    dt = float(np.median(np.diff(t)))
    w_lo = 2.0 * math.pi / span
    w_hi = math.pi / dt
    if omega_expected is not None:
        w_hi = min(w_hi, 4.0 * omega_expected)
    grid = np.linspace(w_lo, w_hi, max(2000, int(20 * (w_hi - w_lo) * span / (2 * math.pi))))
    power = lombscargle(t, r, grid)
    k = int(np.argmax(power))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    best = minimize_scalar(lambda w: -_ls_amplitude(t, r, w), bounds=(lo, hi), method="bounded",
                           options={"xatol": 1e-10 * grid[k]})
    omega = float(best.x)
    contrast = _ls_amplitude(t, r, omega)
    return OscillationFit(omega=omega, contrast=contrast, suppressed=contrast < threshold)


@dataclass
class RegimeFit:
    tau_z_est: Optional[float] = None
    z_est: Optional[float] = None
    gamma_est: Optional[float] = None
    power_exponent: Optional[float] = None
    power_prefactor: Optional[float] = None
    osc_omega_est: Optional[float] = None
    osc_contrast: Optional[float] = None
    osc_suppressed: Optional[bool] = None
    plateau_est: Optional[float] = None
    windows: dict = field(default_factory=dict)
    rms: dict = field(default_factory=dict)
    regimes: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def no_decay(self) -> bool:
        return self.regimes.get("decay") == "absent"


def _analytic_predictions(params: ChainParams) -> dict:
    out: dict = {"tau_z_mm": 1.0 / params.kappa0 if params.kappa0 else None}
    try:
        out["tau_z_variance_mm"] = analytic.zeno_time(params)
    except DecayLabError as exc:
        out["tau_z_variance_mm"] = None
        out["tau_z_error"] = str(exc)
    if not params.nearest_neighbor_only:
        out["analytic"] = "skipped: closed forms hold for q = q0 = 0 only"
        return out
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            pd = analytic.pole(params)
            out.update(
                e_pole_per_mm=[pd.e_pole.real, pd.e_pole.imag],
                gamma_per_mm=pd.gamma,
                z_factor=pd.z_factor,
                z_formula=pd.z_formula,
                strip_valid=pd.strip_valid,
                unstable=pd.unstable,
            )
        except DecayLabError as exc:
            out["pole_error"] = str(exc)
        for name, func in (("gamma_fgr_per_mm", analytic.decay_rate_fgr),):
            try:
                out[name] = func(params)
            except DecayLabError as exc:
                out[name] = None
                out[name + "_error"] = str(exc)
        try:
            asym = analytic.power_law_asymptote(params)
            out.update(
                c_cubed_mm3=asym.c_cubed,
                c_len_mm=asym.c_len,
                c_cubed_closed_form_mm3=asym.c_cubed_closed_form,
                c_len_closed_form_mm=asym.c_len_closed_form,
                osc_omega_per_mm=asym.osc_omega,
                osc_amp=asym.osc_amp,
                osc_phase_rad=asym.osc_phase,
            )
        except DecayLabError as exc:
            out["asymptote_error"] = str(exc)
        try:
            tt = analytic.transition_times(params)
            out.update(tau_zero_mm=tt.tau_zero, tau_inf_mm=tt.tau_inf, lifetime_mm=tt.lifetime)
        except DecayLabError as exc:
            out["transition_error"] = str(exc)
    return out


def _record(report: RegimeFit, key: str, func):
    try:
        return func()
    except DecayLabError as exc:
        report.errors[key] = str(exc)
        return None


def regime_report(params: Optional[ChainParams], trace: SurvivalTrace) -> RegimeFit:
    """Run every fit with automatic windows; failures become absent regimes, never exceptions."""
    if params is not None and trace.params is None:
        trace = SurvivalTrace(trace.t, trace.p, trace.a, params, trace.n_sites, trace.guard_ok)
    report = RegimeFit()
    t, p = trace.t, trace.p
    if np.all(np.abs(1.0 - p) < 1e-9) or (params is not None and params.kappa0 == 0 and params.q0 == 0):
        report.regimes.update(decay="absent", zeno="absent", exponential="absent", power_law="absent",
                              oscillation="absent", plateau="absent")
        report.notes.append("no decay: the defect is decoupled or p stays at 1")
        return report
    report.regimes["decay"] = "detected"

    # Zeno parabola
    zeno = _record(report, "zeno", lambda: fit_zeno(trace))
    if zeno is not None:
        report.tau_z_est, report.rms["zeno"] = zeno
        tau_nominal = _nominal_tau_z(trace)
        report.windows["zeno"] = FitWindow(float(t[0]), float(t[0]) + 0.2 * tau_nominal, "automatic").as_dict()
    report.regimes["zeno"] = "detected" if zeno is not None else "absent"

    # exponential
    exp_window = _record(report, "exponential", lambda: select_exp_window(trace))
    exp_fit = None
    if exp_window is not None:
        exp_fit = _record(report, "exponential", lambda: fit_exponential(trace, exp_window))
    if exp_fit is not None:
        report.z_est, report.gamma_est, report.rms["exponential"] = exp_fit
        report.windows["exponential"] = exp_window.as_dict()
    report.regimes["exponential"] = "detected" if exp_fit is not None else "absent"

    # power law on the late part of the trace, compared against a pure exponential there
    late = FitWindow(float(t[0] + (t[-1] - t[0]) * 5.0 / 9.0), float(t[-1]), "automatic")
    power = _record(report, "power_law", lambda: fit_power_law(trace, late))
    power_detected = False
    if power is not None:
        report.power_exponent, report.power_prefactor, report.rms["power_law"] = power
        report.windows["power_law"] = late.as_dict()
        alt = _record(report, "power_law_vs_exponential", lambda: fit_exponential(trace, late))
        power_detected = abs(report.power_exponent + 3.0) <= 0.5 and (alt is None or report.rms["power_law"] < alt[2])
    report.regimes["power_law"] = "detected" if power_detected else "absent"

    # band-edge beating on the second half
    osc_window = FitWindow(float(t[0] + 0.5 * (t[-1] - t[0])), float(t[-1]), "automatic")
    osc = _record(report, "oscillation", lambda: oscillation_frequency(trace, osc_window))
    if osc is not None:
        report.osc_omega_est, report.osc_contrast, report.osc_suppressed = osc.omega, osc.contrast, osc.suppressed
        report.windows["oscillation"] = osc_window.as_dict()
        report.regimes["oscillation"] = "suppressed" if osc.suppressed else "detected"
    else:
        report.regimes["oscillation"] = "absent"

    # long-time plateau from bound states
    tail = t >= t[0] + 2.0 * (t[-1] - t[0]) / 3.0
    report.plateau_est = float(p[tail].mean())
    if trace.params is not None:
        states = _record(report, "bound_states", lambda: bound_state_weights(trace.params))
        if states is not None:
            predicted = float(sum(w * w for _, w in states))
            report.predictions["bound_states"] = [[e, w] for e, w in states]
            report.predictions["plateau"] = predicted
            detected = predicted > 0 and abs(report.plateau_est - predicted) <= 0.05 * predicted
            report.regimes["plateau"] = "detected" if detected else "absent"
        report.predictions.update(_analytic_predictions(trace.params))
    report.regimes.setdefault("plateau", "absent")

    report.predictions["published_reference"] = {
        "z_fit": PUBLISHED_VALUES["z_fit_array_A"],
        "c_inf_mm": PUBLISHED_VALUES["c_inf_mm_array_B"],
        "note": (
            "published fit values for the measured arrays A and B; shown for comparison "
            "with the computed counterparts and not reproduced by this model"
        ),
    }
    if "c_len_mm" in report.predictions:
        report.notes.append(
            f"computed power-law prefactor {report.predictions['c_len_mm']:.3g} mm "
            f"(closed-form variant {report.predictions['c_len_closed_form_mm']:.3g} mm) vs published 9.48 mm"
        )
    return report
