"""Exact time evolution of the truncated chain by spectral decomposition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError, ParameterError
from .model import ChainParams, band_edges, build_hamiltonian, max_group_velocity

GUARD_FRACTION = 0.1
N_CAP = 4096


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    weights: np.ndarray
    n_sites: int
    vectors: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class TimeGrid:
    """Sampling of the propagation coordinate (mm)."""

    t_min: float = 0.0
    t_max: float = 90.0
    n_samples: int = 901
    spacing: str = "uniform"

    def __post_init__(self):
        if self.t_min < 0 or not self.t_max > self.t_min:
            raise ParameterError(f"need 0 <= t_min < t_max, got [{self.t_min}, {self.t_max}]")
        if self.n_samples < 2:
            raise ParameterError("n_samples must be >= 2")
        if self.spacing not in ("uniform", "log-augmented"):
            raise ParameterError(f"unknown spacing {self.spacing!r}")

    @classmethod
    def from_step(cls, t_max: float, step: float, t_min: float = 0.0, spacing: str = "uniform") -> "TimeGrid":
        if step <= 0:
            raise ParameterError("step must be positive")
        n = int(round((t_max - t_min) / step)) + 1
        return cls(t_min=t_min, t_max=t_min + (n - 1) * step, n_samples=n, spacing=spacing)

    def points(self) -> np.ndarray:
        t = np.linspace(self.t_min, self.t_max, self.n_samples)
        if self.spacing == "log-augmented":
            # extra geometric samples resolve the quadratic start
            lo = max(self.t_min, (self.t_max - self.t_min) * 1e-4)
            extra = np.geomspace(lo, self.t_max, max(self.n_samples // 4, 2))
            t = np.unique(np.concatenate([t, extra]))
        return t


@dataclass(frozen=True)
class SurvivalTrace:
    t: np.ndarray
    p: np.ndarray
    a: Optional[np.ndarray] = None
    params: Optional[ChainParams] = None
    n_sites: Optional[int] = None
    guard_ok: bool = True

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if t.ndim != 1 or t.shape != p.shape:
            raise ParameterError("t and p must be 1-D arrays of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ParameterError("t must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        if self.a is not None:
            object.__setattr__(self, "a", np.asarray(self.a, dtype=complex))

    def __len__(self) -> int:
        return self.t.size

    def window(self, t_lo: float, t_hi: float) -> "SurvivalTrace":
        mask = (self.t >= t_lo) & (self.t <= t_hi)
        a = None if self.a is None else self.a[mask]
        return SurvivalTrace(self.t[mask], self.p[mask], a, self.params, self.n_sites, self.guard_ok)


def diagonalize(matrix: np.ndarray) -> SpectralDecomposition:
    """Eigen-decomposition of a real symmetric matrix, weights on site 0."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {m.shape}")
    if not np.array_equal(m, m.T):
        raise ParameterError("matrix is not symmetric")
    energies, vectors = np.linalg.eigh(m)
    scale = max(np.abs(m).max(), np.finfo(float).tiny)
    residual = np.abs(m @ vectors - vectors * energies).max()
    if residual > 1e-10 * scale:
        raise ConvergenceError(f"eigen-decomposition residual {residual:.3e} exceeds 1e-10*|M|")
    return SpectralDecomposition(
        eigenvalues=energies, weights=vectors[0] ** 2, n_sites=m.shape[0], vectors=vectors
    )


def survival_amplitude(spec: SpectralDecomposition, t):
    """a(t) = sum_k w_k exp(-i E_k t); accepts a scalar or an array of times."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    phases = np.exp(-1j * np.outer(t_arr, spec.eigenvalues))
    a = phases @ spec.weights
    return complex(a[0]) if np.ndim(t) == 0 else a


def _amplitudes(spec: SpectralDecomposition, t: np.ndarray) -> np.ndarray:
    """Site amplitudes psi_n(t) = <n|exp(-itH)|0>, shape (n_sites, len(t))."""
    coeffs = spec.vectors[0][:, None] * np.exp(-1j * np.outer(spec.eigenvalues, t))
    return spec.vectors @ coeffs


def _decompose(params: ChainParams, n_sites: int) -> SpectralDecomposition:
    return diagonalize(build_hamiltonian(params, n_sites))


def _guard_population(spec: SpectralDecomposition, t: np.ndarray) -> float:
    first = int(math.floor((1.0 - GUARD_FRACTION) * spec.n_sites))
    psi = _amplitudes(spec, t)
    return float((np.abs(psi[first:]) ** 2).sum(axis=0).max())


def _check_times(params: ChainParams, t_max: float) -> np.ndarray:
    n = max(64, int(math.ceil(4.0 * max_group_velocity(params) * t_max)))
    return np.linspace(0.0, t_max, n + 1)


def choose_truncation(
    params: ChainParams,
    t_max: float,
    tol: float = 1e-10,
    *,
    n_start: Optional[int] = None,
    guard: bool = True,
    n_cap: int = N_CAP,
) -> int:
    """Smallest chain length on the doubling schedule that behaves as semi-infinite up to t_max.

    Both conditions are checked on a grid resolving the fastest group velocity:
    the population of the last 10% of sites stays below ``tol``, and doubling
    the length moves p(t) by less than ``tol``.
    """
    if not t_max > 0:
        raise ParameterError("t_max must be positive")
    if not 0 < tol < 1:
        raise ParameterError("tol must lie in (0, 1)")
    if n_start is None:
        n_start = max(64, int(math.ceil(max_group_velocity(params) * t_max)))
    if not guard:
        return int(n_start)

    n = int(n_start)
    if n > n_cap:
        raise ConvergenceError(
            f"truncation not converged: t={t_max:g} mm needs more than {n_cap} sites (start {n})"
        )
    times = _check_times(params, t_max)
    current = _decompose(params, n)
    while n <= n_cap:
        guard_pop = _guard_population(current, times)
        if guard_pop < tol and 2 * n <= n_cap:
            doubled = _decompose(params, 2 * n)
            change = np.abs(
                np.abs(survival_amplitude(current, times)) ** 2
                - np.abs(survival_amplitude(doubled, times)) ** 2
            ).max()
            if change < tol:
                return n
            current = doubled
        elif 2 * n <= n_cap:
            current = _decompose(params, 2 * n)
        n *= 2
    raise ConvergenceError(
        f"truncation not converged: no chain length <= {n_cap} meets tol={tol:g} up to t={t_max:g} mm"
    )


def survival_trace(
    params: ChainParams,
    grid: Optional[TimeGrid] = None,
    tol: float = 1e-10,
    *,
    n_sites: Optional[int] = None,
) -> SurvivalTrace:
    """Survival probability on a grid; the chain length is chosen automatically unless given."""
    grid = grid or TimeGrid()
    t = grid.points()
    if params.kappa0 == 0.0 and params.q0 == 0.0:
        # decoupled defect: a(t) = exp(-i eps t) exactly
        a = np.exp(-1j * params.eps * t)
        return SurvivalTrace(t, np.ones_like(t), a, params, 1, True)
    t_max = float(t.max()) or 1.0
    if n_sites is None:
        n_sites = choose_truncation(params, t_max, tol)
        spec = _decompose(params, n_sites)
        guard_ok = True
    else:
        spec = _decompose(params, n_sites)
        guard_ok = _guard_population(spec, _check_times(params, t_max)) < tol
    a = survival_amplitude(spec, t)
    p = np.abs(a) ** 2
    return SurvivalTrace(t, p, a, params, n_sites, guard_ok)


def site_populations(params: ChainParams, t: float, n_sites: int) -> np.ndarray:
    """|<n|exp(-itH)|0>|^2 for every site of an n_sites chain."""
    spec = _decompose(params, n_sites)
    return np.abs(_amplitudes(spec, np.array([float(t)]))[:, 0]) ** 2


def site_population_history(params: ChainParams, t: np.ndarray, n_sites: int) -> np.ndarray:
    """Populations for many times at once, shape (len(t), n_sites)."""
    spec = _decompose(params, n_sites)
    return (np.abs(_amplitudes(spec, np.asarray(t, dtype=float))) ** 2).T


def _out_of_band(params: ChainParams, spec: SpectralDecomposition, floor: float):
    band = band_edges(params)
    margin = 1e-12 * max(band.width, 1.0)
    mask = ((spec.eigenvalues < band.e_min - margin) | (spec.eigenvalues > band.e_max + margin)) & (
        spec.weights > floor
    )
    return spec.eigenvalues[mask], spec.weights[mask]


def bound_state_weights(
    params: ChainParams,
    tol: float = 1e-8,
    *,
    n_start: int = 64,
    n_cap: int = N_CAP,
) -> list[tuple[float, float]]:
    """Discrete eigenvalues outside the band with their weight on the defect site.

    Chains of increasing length are diagonalized until the out-of-band
    eigenpairs stop moving (energies and weights within ``tol``). States
    whose weight keeps shrinking with length are finite-size artefacts
    hugging a band edge and never stabilize above the floor.
    """
    if params.kappa0 == 0.0 and params.q0 == 0.0:
        # decoupled defect is an exact eigenstate, possibly embedded in the band
        return [(params.eps, 1.0)]
    floor = tol
    prev = None
    n = max(int(n_start), 3)
    history = []
    while n <= n_cap:
        energies, weights = _out_of_band(params, _decompose(params, n), floor)
        history.append((n, energies.size))
        if prev is not None and energies.size == prev[0].size:
            if energies.size == 0 or (
                np.abs(energies - prev[0]).max() < tol and np.abs(weights - prev[1]).max() < tol
            ):
                return [(float(e), float(w)) for e, w in zip(energies, weights)]
        prev = (energies, weights)
        n *= 2
    raise ConvergenceError(
        "bound-state search did not stabilize; (n_sites, out-of-band count) history: "
        + ", ".join(f"({n}, {c})" for n, c in history)
    )
