"""Defect site coupled to a semi-infinite tight-binding chain.

Propagation distance plays the role of time, so every "time" is in mm and
every coupling or energy is in mm^-1 (hbar = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import ParameterError

COUPLING_KEYS = ("kappa0", "kappa", "eps", "q", "q0")

# Nominal rows of the fabricated arrays, plus the couplings that best fit
# the measured B and C traces. q0 = q throughout.
PRESETS: dict[str, dict[str, float]] = {
    "A": dict(kappa0=0.045, kappa=0.119, eps=-0.08, q=0.005, q0=0.005),
    "B": dict(kappa0=0.118, kappa=0.132, eps=0.10, q=0.01, q0=0.01),
    "C": dict(kappa0=0.183, kappa=0.158, eps=0.0, q=0.01, q0=0.01),
    "B-fit": dict(kappa0=0.119, kappa=0.132, eps=0.12, q=0.01, q0=0.01),
    "C-fit": dict(kappa0=0.205, kappa=0.160, eps=0.0, q=0.01, q0=0.01),
}


@dataclass(frozen=True)
class ChainParams:
    """Couplings of the defect + chain Hamiltonian (mm^-1)."""

    kappa0: float
    kappa: float
    eps: float = 0.0
    q: float = 0.0
    q0: float = 0.0

    def __post_init__(self):
        for key in COUPLING_KEYS:
            value = getattr(self, key)
            if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
                raise ParameterError(f"{key} must be a finite real, got {value!r}")
            object.__setattr__(self, key, float(value))
        if self.kappa <= 0:
            raise ParameterError("degenerate chain: kappa must be > 0")
        if self.kappa0 < 0:
            raise ParameterError("kappa0 must be >= 0")

    @property
    def lam(self) -> float:
        """Coupling ratio kappa0/kappa."""
        return self.kappa0 / self.kappa

    @property
    def Q(self) -> float:
        return self.q / self.kappa

    @property
    def edge_formula_valid(self) -> bool:
        # Long-time edge asymptotics keep their q = 0 form only in this range.
        return abs(self.Q) < 0.25

    @property
    def nearest_neighbor_only(self) -> bool:
        return self.q == 0.0 and self.q0 == 0.0

    def replace(self, **changes: float) -> "ChainParams":
        values = self.as_dict()
        values.update(changes)
        return ChainParams(**values)

    def as_dict(self) -> dict[str, float]:
        return {key: getattr(self, key) for key in COUPLING_KEYS}


def validate_params(raw: Union[str, Mapping[str, float]]) -> ChainParams:
    """Build ChainParams from a preset name or a mapping of the five couplings."""
    if isinstance(raw, str):
        if raw not in PRESETS:
            raise ParameterError(f"unknown preset {raw!r}; choose from {', '.join(PRESETS)}")
        return ChainParams(**PRESETS[raw])
    missing = [key for key in COUPLING_KEYS if key not in raw]
    if missing:
        raise ParameterError(f"missing coupling(s): {', '.join(missing)}")
    unknown = sorted(set(raw) - set(COUPLING_KEYS))
    if unknown:
        raise ParameterError(f"unknown key(s): {', '.join(unknown)}")
    values = {}
    for key in COUPLING_KEYS:
        try:
            values[key] = float(raw[key])
        except (TypeError, ValueError):
            raise ParameterError(f"{key} must be a real number, got {raw[key]!r}") from None
    return ChainParams(**values)


@dataclass(frozen=True)
class BandInfo:
    e_min: float
    e_max: float
    kappa: float
    q: float

    @property
    def width(self) -> float:
        return self.e_max - self.e_min

    def dispersion(self, k):
        return 2.0 * self.kappa * np.cos(k) + 2.0 * self.q * np.cos(2.0 * k)

    def contains(self, energy: float) -> bool:
        return self.e_min <= energy <= self.e_max


def band_edges(params: ChainParams) -> BandInfo:
    """Exact extrema of 2 kappa cos k + 2 q cos 2k over k in [0, pi]."""
    kappa, q = params.kappa, params.q
    candidates = [2.0 * kappa + 2.0 * q, -2.0 * kappa + 2.0 * q]
    if q != 0.0 and abs(kappa / (4.0 * q)) <= 1.0:
        # interior stationary point, cos k = -kappa / 4q
        candidates.append(-(kappa**2) / (4.0 * q) - 2.0 * q)
    return BandInfo(e_min=min(candidates), e_max=max(candidates), kappa=kappa, q=q)


def instability_margin(params: ChainParams) -> float:
    """1 - |eps|/2kappa - lambda^2; positive means full decay in the q = 0 heuristic.

    Only the sign is meaningful, and only as a heuristic: the exact
    bound-state threshold of the q = 0 chain is lambda^2 = 2 - |eps|/kappa.
    """
    return 1.0 - abs(params.eps) / (2.0 * params.kappa) - params.lam**2


def bound_state_threshold(params: ChainParams) -> float:
    """Exact q = 0 margin 2 - |eps|/kappa - lambda^2; negative iff a bound state exists."""
    return 2.0 - abs(params.eps) / params.kappa - params.lam**2


def build_hamiltonian(params: ChainParams, n_sites: int) -> np.ndarray:
    """Dense truncated Hamiltonian; site 0 is the defect."""
    if isinstance(n_sites, bool) or int(n_sites) != n_sites:
        raise ParameterError(f"n_sites must be an integer, got {n_sites!r}")
    n_sites = int(n_sites)
    needed = 2 if params.nearest_neighbor_only else 3
    if n_sites < needed:
        raise ParameterError(f"n_sites={n_sites} too small, need at least {needed}")

    h = np.zeros((n_sites, n_sites))
    h[0, 0] = params.eps
    h[0, 1] = h[1, 0] = params.kappa0
    if n_sites > 2:
        h[0, 2] = h[2, 0] = params.q0
    idx = np.arange(1, n_sites - 1)
    h[idx, idx + 1] = h[idx + 1, idx] = params.kappa
    idx = np.arange(1, n_sites - 2)
    h[idx, idx + 2] = h[idx + 2, idx] = params.q
    return h


def max_group_velocity(params: ChainParams) -> float:
    """Upper bound on |d/dk (2 kappa cos k + 2 q cos 2k)|, in sites per mm."""
    return 2.0 * (params.kappa + 2.0 * abs(params.q))

