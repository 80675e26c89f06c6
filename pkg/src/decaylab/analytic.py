"""Closed-form resolvent analysis of the nearest-neighbour (q = 0) chain.

The defect propagator has a square-root branch cut on the band
[-2 kappa, 2 kappa]. Continuing it from above through the cut gives a
second-sheet function whose lower-half-plane pole sets the exponential
regime; the two band-edge branch points produce the t^-3 tail and the
4 kappa beating.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, ParameterError
from .model import ChainParams
from .quadrature import integrate_half_line

SHEETS = ("I", "II")


def _require_nearest_neighbor(params: ChainParams) -> None:
    if not params.nearest_neighbor_only:
        raise ParameterError("analytic module requires q=0 (and q0=0)")


def _root_product(params: ChainParams, e):
    """sqrt(E + 2 kappa) * sqrt(E - 2 kappa) with principal roots; cut on the band."""
    e = np.asarray(e, dtype=complex)
    two_k = 2.0 * params.kappa
    return np.sqrt(e + two_k) * np.sqrt(e - two_k)


def inverse_propagator(params: ChainParams, e, sheet: str = "I"):
    """1/G on the requested sheet.

    Sheet I is the physical resolvent <0|(E - H)^-1|0>, analytic off the cut
    with E G(E) -> 1 at infinity. Sheet II is its continuation from the upper
    half plane through the cut and differs only by the sign of the root term.
    """
    _require_nearest_neighbor(params)
    if sheet not in SHEETS:
        raise ParameterError(f"sheet must be 'I' or 'II', got {sheet!r}")
    lam2 = params.lam**2
    sign = 1.0 if sheet == "I" else -1.0
    e_arr = np.asarray(e, dtype=complex)
    value = (1.0 - 0.5 * lam2) * e_arr - params.eps + sign * 0.5 * lam2 * _root_product(params, e_arr)
    return complex(value) if np.ndim(e) == 0 else value


def propagator(params: ChainParams, e, sheet: str = "I"):
    _require_nearest_neighbor(params)
    e_arr = np.asarray(e, dtype=complex)
    if np.any(np.isclose(np.abs(e_arr), 2.0 * params.kappa, rtol=0, atol=1e-14 * params.kappa) & (e_arr.imag == 0)):
        raise ParameterError("propagator is singular at the branch points +-2 kappa")
    return 1.0 / inverse_propagator(params, e, sheet)


def _inverse_propagator_derivative(params: ChainParams, e: complex, sheet: str = "II") -> complex:
    lam2 = params.lam**2
    sign = 1.0 if sheet == "I" else -1.0
    return (1.0 - 0.5 * lam2) + sign * 0.5 * lam2 * e / complex(_root_product(params, e))


@dataclass(frozen=True)
class PoleData:
    e_pole: complex
    residue: complex
    z_factor: float
    z_formula: float
    e_pole_closed_form: complex
    strip_valid: bool
    unstable: bool

    @property
    def delta(self) -> float:
        return self.e_pole.real

    @property
    def gamma(self) -> float:
        return -2.0 * self.e_pole.imag

    @property
    def lifetime(self) -> float:
        return math.inf if self.gamma == 0 else 1.0 / self.gamma


def z_factor_formula(params: ChainParams) -> float:
    """Extrapolated intercept |Z|^2 of the exponential regime."""
    lam2 = params.lam**2
    x2 = (params.eps / (2.0 * params.kappa)) ** 2
    return 1.0 + lam2 / (1.0 - lam2) * (1.0 - 0.75 * lam2 - x2) / (1.0 - lam2 - x2)


def strip_condition(params: ChainParams) -> bool:
    """True when the pole sits between the vertical half-lines below +-2 kappa."""
    k, e = params.kappa, abs(params.eps)
    return 0.5 * params.lam**2 < (2.0 * k - e) / (4.0 * k - e)


def pole_closed_form(params: ChainParams) -> complex:
    lam2 = params.lam**2
    radicand = 1.0 - lam2 - (params.eps / (2.0 * params.kappa)) ** 2
    if lam2 >= 1.0 or radicand <= 0.0:
        raise ParameterError(
            "no complex second-sheet pole: need lambda^2 < 1 - (eps/2kappa)^2 "
            f"(lambda^2={lam2:.4g}, (eps/2kappa)^2={(params.eps / (2 * params.kappa)) ** 2:.4g})"
        )
    return ((1.0 - 0.5 * lam2) * params.eps - 1j * lam2 * params.kappa * math.sqrt(radicand)) / (1.0 - lam2)


def pole(params: ChainParams, *, max_iter: int = 50) -> PoleData:
    """Second-sheet pole, its residue and the renormalization Z.

    The closed form seeds a Newton iteration on 1/G^II; the refined root is
    the one reported. Outside the strip the result carries strip_valid=False
    and a warning is issued.
    """
    _require_nearest_neighbor(params)
    if params.kappa0 == 0.0:
        return PoleData(complex(params.eps), 1.0 + 0j, 1.0, 1.0, complex(params.eps), True, False)
    seed = pole_closed_form(params)
    e = seed
    previous = math.inf
    for _ in range(max_iter):
        f = inverse_propagator(params, e, "II")
        step = f / _inverse_propagator_derivative(params, e, "II")
        if abs(step) >= previous:
            # steps stopped shrinking: at the rounding floor
            break
        e -= step
        previous = abs(step)
        if previous <= 1e-15 * max(abs(e), params.kappa):
            break
    else:
        raise ConvergenceError(f"Newton refinement of the pole stalled near {e}")
    if abs(inverse_propagator(params, e, "II")) > 1e-12 * params.kappa:
        raise ConvergenceError(f"pole refinement left residual {abs(inverse_propagator(params, e, 'II')):.2e}")
    residue = 1.0 / _inverse_propagator_derivative(params, e, "II")
    strip_valid = strip_condition(params)
    if not strip_valid:
        warnings.warn(
            "pole lies outside the strip between the branch-point half-lines; "
            "the pole + cut split may not describe the dominant decay",
            RuntimeWarning,
            stacklevel=2,
        )
    return PoleData(
        e_pole=complex(e),
        residue=complex(residue),
        z_factor=abs(residue) ** 2,
        z_formula=z_factor_formula(params),
        e_pole_closed_form=seed,
        strip_valid=strip_valid,
        unstable=e.imag < 0,
    )


def decay_rate_fgr(params: ChainParams) -> float:
    """Golden-rule rate 2 lambda^2 kappa sqrt(1 - (eps/2kappa)^2)."""
    _require_nearest_neighbor(params)
    x = params.eps / (2.0 * params.kappa)
    if abs(x) >= 1.0:
        raise ParameterError("defect outside band: golden rule density of states vanishes")
    return 2.0 * params.lam**2 * params.kappa * math.sqrt(1.0 - x * x)


def zeno_time(params: ChainParams) -> float:
    """Inverse energy spread of the defect state, 1/sqrt(kappa0^2 + q0^2).

    The next-nearest chain hopping q never enters; with q0 = 0 this is 1/kappa0.
    """
    if params.kappa0 == 0.0:
        raise ParameterError("no decay channel: kappa0 = 0")
    return 1.0 / math.hypot(params.kappa0, params.q0)


def edge_coefficients(params: ChainParams) -> tuple[float, float]:
    """Values of the cut integrand weight at the two branch points, (C_+(0), C_-(0))."""
    _require_nearest_neighbor(params)
    base = params.kappa * (2.0 - params.lam**2)
    if abs(params.eps) >= base:
        raise ParameterError(
            "pole collides with a band edge: |eps| >= kappa (2 - lambda^2), edge coefficients diverge"
        )
    root = 2.0 * math.sqrt(params.kappa)
    return root / (base - params.eps) ** 2, root / (base + params.eps) ** 2


def _cut_weight(params: ChainParams, x: np.ndarray, sigma: int) -> np.ndarray:
    lam2 = params.lam**2
    k = params.kappa
    d = (1.0 - 0.5 * lam2) * (2.0 * sigma * k - 1j * x) - params.eps
    return np.sqrt(4.0 * k - 1j * sigma * x) / (d * d + 0.25 * lam2 * lam2 * (4j * sigma * k + x) * x)


def cut_amplitude(params: ChainParams, t: float, rel_tol: float = 1e-10) -> complex:
    """Branch-cut part of the survival amplitude at time t (mm).

    Both edge integrals share one integrand: separately each diverges
    logarithmically at t = 0, only their phased sum converges. The
    substitution x = u^2 removes the sqrt(x) endpoint behaviour.
    """
    _require_nearest_neighbor(params)
    if t < 0:
        raise ParameterError("cut_amplitude needs t >= 0")
    k = params.kappa
    phase = {s: cmath.exp(-1j * s * (2.0 * k * t + 0.25 * math.pi)) for s in (1, -1)}

    def integrand(u):
        x = u * u
        kernel = 2.0 * x * np.exp(-x * t)
        return kernel * (phase[1] * _cut_weight(params, x, 1) + phase[-1] * _cut_weight(params, x, -1))

    # natural scale of u: the edge width sqrt(kappa), or 1/sqrt(t) once the kernel cuts off
    scale = 1.0 / math.sqrt(t + 1.0 / k)
    value, _ = integrate_half_line(integrand, scale, rel_tol=rel_tol, abs_tol=1e-16 / math.sqrt(k))
    return complex(-params.lam**2 / (2.0 * math.pi) * value)


def pole_cut_amplitude(params: ChainParams, t, pole_data: PoleData | None = None):
    """Z exp(-i E_p t) + a_cut(t), vectorized over t."""
    pole_data = pole_data or pole(params)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    cut = np.array([cut_amplitude(params, ti) for ti in t_arr])
    total = pole_data.residue * np.exp(-1j * pole_data.e_pole * t_arr) + cut
    return complex(total[0]) if np.ndim(t) == 0 else total


@dataclass(frozen=True)
class AsymptoteData:
    """Long-time tail p ~ (c_cubed / t^3) (1 + osc_amp cos(osc_omega t + osc_phase))."""

    edge_coeff_plus: float
    edge_coeff_minus: float
    c_cubed: float
    c_cubed_closed_form: float
    osc_omega: float
    osc_amp: float
    osc_phase: float

    @property
    def c_len(self) -> float:
        """Length-convention prefactor, p ~ (c_len / t)^3 (mm)."""
        return self.c_cubed ** (1.0 / 3.0)

    @property
    def c_len_closed_form(self) -> float:
        return self.c_cubed_closed_form ** (1.0 / 3.0)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.osc_omega

    def envelope(self, t):
        return self.c_cubed / np.asarray(t, dtype=float) ** 3

    def probability(self, t):
        t = np.asarray(t, dtype=float)
        return self.envelope(t) * (1.0 + self.osc_amp * np.cos(self.osc_omega * t + self.osc_phase))


def power_law_asymptote(params: ChainParams) -> AsymptoteData:
    """Edge-dominated asymptote from freezing the cut weight at the branch points.

    With C_+ and C_- real and positive the two edge terms beat as
    C_+^2 + C_-^2 + 2 C_+ C_- cos(4 kappa t + pi/2). ``c_cubed_closed_form``
    is the alternative closed-form prefactor lambda^4 kappa/2pi (...),
    which is exactly twice ``c_cubed``.
    """
    _require_nearest_neighbor(params)
    if not params.edge_formula_valid:
        raise ParameterError("edge asymptote requires |q/kappa| < 1/4")
    c_plus, c_minus = edge_coefficients(params)
    lam4 = params.lam**4
    k = params.kappa
    base = k * (2.0 - params.lam**2)
    inv4 = 1.0 / (base + params.eps) ** 4 + 1.0 / (base - params.eps) ** 4
    return AsymptoteData(
        edge_coeff_plus=c_plus,
        edge_coeff_minus=c_minus,
        c_cubed=lam4 / (16.0 * math.pi) * (c_plus**2 + c_minus**2),
        c_cubed_closed_form=lam4 * k / (2.0 * math.pi) * inv4,
        osc_omega=4.0 * k,
        osc_amp=2.0 * c_plus * c_minus / (c_plus**2 + c_minus**2),
        osc_phase=0.5 * math.pi,
    )


@dataclass(frozen=True)
class TransitionTimes:
    tau_zero: float
    tau_inf: float
    tau_z: float
    lifetime: float


def _crossover_gap(log_z: float, gamma: float, c_cubed: float, tau: float) -> float:
    # log of Z exp(-gamma tau) minus log of c / tau^3
    return log_z - gamma * tau - math.log(c_cubed) + 3.0 * math.log(tau)


def transition_times(params: ChainParams, c_cubed: float | None = None) -> TransitionTimes:
    """Zeno->exponential (closest approach) and exponential->power-law crossovers.

    tau_inf is the largest root of Z exp(-gamma tau) = c / tau^3 using the
    implemented non-oscillating prefactor unless ``c_cubed`` is given.
    """
    _require_nearest_neighbor(params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pd = pole(params)
    if not pd.unstable or pd.gamma <= 0:
        raise ParameterError("no exponential/power-law crossover: pole is not decaying")
    tau_z = zeno_time(params)
    tau_zero = pd.gamma * tau_z**2 / 2.0
    if c_cubed is None:
        c_cubed = power_law_asymptote(params).c_cubed
    log_z = math.log(pd.z_factor)
    # the gap peaks at tau = 3/gamma and falls forever after, so the
    # largest root is bracketed by [max(tau_zero, 3/gamma), 1e6 tau_z]
    lo = max(tau_zero, 3.0 / pd.gamma)
    hi = 1e6 * tau_z
    g_lo = _crossover_gap(log_z, pd.gamma, c_cubed, lo)
    g_hi = _crossover_gap(log_z, pd.gamma, c_cubed, hi)
    if not (g_lo > 0 > g_hi):
        raise ParameterError("no exponential/power-law crossover in [tau_0, 1e6 tau_Z]")
    tau_inf = brentq(
        lambda tau: _crossover_gap(log_z, pd.gamma, c_cubed, tau), lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500
    )
    return TransitionTimes(tau_zero=tau_zero, tau_inf=tau_inf, tau_z=tau_z, lifetime=1.0 / pd.gamma)
