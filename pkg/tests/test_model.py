from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decaylab.model import (
    PRESETS,
    ChainParams,
    band_edges,
    bound_state_threshold,
    build_hamiltonian,
    instability_margin,
    max_group_velocity,
    validate_params,
)
from decaylab.errors import ParameterError


def test_row_a_is_valid_with_expected_ratio():
    p = validate_params(dict(kappa0=0.045, kappa=0.119, eps=-0.08, q=0.005, q0=0.005))
    assert p.lam == pytest.approx(0.378, abs=5e-4)
    assert p == validate_params("A")


def test_zero_bandwidth_is_degenerate():
    with pytest.raises(ParameterError, match="degenerate chain"):
        validate_params(dict(kappa0=1, kappa=0, eps=0, q=0, q0=0))


def test_missing_and_unknown_keys():
    with pytest.raises(ParameterError, match="missing"):
        validate_params(dict(kappa0=0.1, kappa=0.1, eps=0, q=0))
    with pytest.raises(ParameterError, match="unknown key"):
        validate_params(dict(kappa0=0.1, kappa=0.1, eps=0, q=0, q0=0, extra=1))
    with pytest.raises(ParameterError, match="unknown preset"):
        validate_params("D")


def test_non_finite_and_negative_coupling_rejected():
    with pytest.raises(ParameterError):
        ChainParams(kappa0=float("nan"), kappa=0.1)
    with pytest.raises(ParameterError):
        ChainParams(kappa0=-0.1, kappa=0.1)


def test_large_q_ratio_accepted_but_flagged():
    p = ChainParams(kappa0=0.1, kappa=0.1, q=0.03)
    assert not p.edge_formula_valid
    assert ChainParams(kappa0=0.1, kappa=0.1, q=0.02).edge_formula_valid


def test_presets_all_valid():
    for name in PRESETS:
        assert validate_params(name).kappa > 0


def test_band_edges_nearest_neighbour():
    band = band_edges(ChainParams(kappa0=0.1, kappa=0.15))
    assert (band.e_min, band.e_max) == pytest.approx((-0.3, 0.3))


@given(
    kappa=st.floats(0.05, 1.0),
    ratio=st.floats(-0.6, 0.6),
)
@settings(max_examples=200, deadline=None)
def test_band_edges_match_dense_dispersion(kappa, ratio):
    p = ChainParams(kappa0=0.1, kappa=kappa, q=ratio * kappa)
    band = band_edges(p)
    k = np.linspace(0, math.pi, 20001)
    e = band.dispersion(k)
    assert band.e_min == pytest.approx(e.min(), abs=1e-6 * kappa)
    assert band.e_max == pytest.approx(e.max(), abs=1e-6 * kappa)


@given(
    kappa0=st.floats(0.0, 0.5),
    kappa=st.floats(0.01, 0.5),
    eps=st.floats(-0.5, 0.5),
    q=st.floats(-0.05, 0.05),
    q0=st.floats(-0.05, 0.05),
    n=st.integers(3, 40),
)
@settings(max_examples=200, deadline=None)
def test_hamiltonian_symmetric_real(kappa0, kappa, eps, q, q0, n):
    h = build_hamiltonian(ChainParams(kappa0, kappa, eps, q, q0), n)
    assert h.dtype == float
    assert np.array_equal(h, h.T)
    assert h[0, 0] == eps
    assert h[0, 1] == kappa0
    assert h[0, 2] == q0
    assert h[1, 2] == kappa
    if n > 3:
        assert h[1, 3] == q


def test_hamiltonian_size_checks():
    with pytest.raises(ParameterError):
        build_hamiltonian(ChainParams(0.1, 0.1), 1)
    with pytest.raises(ParameterError):
        build_hamiltonian(ChainParams(0.1, 0.1, q=0.01), 2)


def test_margins():
    p = ChainParams(kappa0=0.09, kappa=0.1, eps=0.02)
    lam2 = 0.81
    assert instability_margin(p) == pytest.approx(1 - 0.1 - lam2)
    assert bound_state_threshold(p) == pytest.approx(2 - 0.2 - lam2)
    assert max_group_velocity(ChainParams(0.1, 0.1, q=-0.01)) == pytest.approx(0.24)


def test_replace_and_dict_round_trip():
    p = validate_params("C-fit")
    assert ChainParams(**p.as_dict()) == p
    assert p.replace(q=0.0).q == 0.0
    assert p.replace(q=0.0).nearest_neighbor_only is False
    assert p.replace(q=0.0, q0=0.0).nearest_neighbor_only
