from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decaylab.errors import ConvergenceError, ParameterError
from decaylab.evolve import (
    SurvivalTrace,
    TimeGrid,
    bound_state_weights,
    choose_truncation,
    diagonalize,
    site_population_history,
    site_populations,
    survival_amplitude,
    survival_trace,
)
from decaylab.model import ChainParams, build_hamiltonian, validate_params

from oracles import rk4_survival, uniform_chain_survival


def test_time_grid_validation():
    with pytest.raises(ParameterError):
        TimeGrid(t_min=5, t_max=1)
    with pytest.raises(ParameterError):
        TimeGrid(spacing="random")
    g = TimeGrid.from_step(88.0, 0.1)
    assert g.n_samples == 881
    pts = TimeGrid(0, 10, 11, "log-augmented").points()
    assert np.all(np.diff(pts) > 0) and pts[-1] == 10


def test_trace_requires_increasing_times():
    with pytest.raises(ParameterError):
        SurvivalTrace([0, 1, 1], [1, 0.9, 0.8])


def test_diagonalize_rejects_asymmetric():
    with pytest.raises(ParameterError):
        diagonalize(np.array([[0.0, 1.0], [0.5, 0.0]]))


def test_decoupled_defect_never_decays():
    trace = survival_trace(ChainParams(kappa0=0.0, kappa=0.1, eps=0.03), TimeGrid(0, 50, 51))
    assert np.all(trace.p == 1.0)


def test_short_time_parabola():
    p = ChainParams(kappa0=0.05, kappa=0.12)
    t = np.array([0.0, 0.01, 0.02])
    a = survival_amplitude(diagonalize(build_hamiltonian(p, 64)), t)
    np.testing.assert_allclose(np.abs(a) ** 2, 1 - (p.kappa0 * t) ** 2, rtol=0, atol=1e-9)


@pytest.mark.parametrize("name", ["A", "B-fit", "C-fit"])
def test_unitarity_all_sites(name):
    params = validate_params(name)
    t = np.linspace(0, 90, 181)
    for n in (64, 256, 1024):
        total = site_population_history(params, t, n).sum(axis=1)
        np.testing.assert_allclose(total, 1.0, rtol=0, atol=1e-10)


def test_matches_rk4_oracle_row_a():
    params = validate_params("A")
    grid = TimeGrid(0, 90, 91)
    trace = survival_trace(params, grid)
    ham = build_hamiltonian(params, trace.n_sites)
    ref = rk4_survival(ham, grid.points(), 0.001 / params.kappa)
    np.testing.assert_allclose(trace.p, ref, rtol=1e-8, atol=0)


def test_uniform_chain_bessel_oracle():
    kappa = 0.12
    params = ChainParams(kappa0=kappa, kappa=kappa)
    t = np.linspace(0, 50 / kappa, 401)
    trace = survival_trace(params, TimeGrid(0, t[-1], t.size))
    ref = uniform_chain_survival(kappa, t)
    np.testing.assert_allclose(trace.p, ref, rtol=1e-8, atol=1e-14)


def test_truncation_converges_on_doubling():
    params = validate_params("B-fit")
    n = choose_truncation(params, 90.0, 1e-10)
    t = np.linspace(0, 90, 91)
    p1 = np.abs(survival_amplitude(diagonalize(build_hamiltonian(params, n)), t)) ** 2
    p2 = np.abs(survival_amplitude(diagonalize(build_hamiltonian(params, 2 * n)), t)) ** 2
    assert np.abs(p1 - p2).max() < 1e-10


def test_truncation_cap_raises():
    with pytest.raises(ConvergenceError, match="truncation not converged"):
        choose_truncation(validate_params("C-fit"), 5000.0, 1e-10, n_cap=128)


def test_explicit_short_chain_flags_guard():
    trace = survival_trace(validate_params("C-fit"), TimeGrid(0, 200, 201), n_sites=40)
    assert not trace.guard_ok


def test_row_b_light_stays_inside_forty_guides():
    # the fabricated 40-guide array behaves as semi-infinite up to the sample length
    pops = site_populations(validate_params("B"), 88.0, 40)
    assert pops[39] < 1e-8
    assert np.nonzero(pops > 1e-4)[0].max() < 35


@given(
    kappa0=st.floats(0.01, 0.3),
    kappa=st.floats(0.05, 0.3),
    eps=st.floats(-0.3, 0.3),
    q=st.floats(-0.02, 0.02),
    t=st.floats(0.0, 60.0),
)
@settings(max_examples=60, deadline=None)
def test_populations_sum_to_one(kappa0, kappa, eps, q, t):
    pops = site_populations(ChainParams(kappa0, kappa, eps, q, q), t, 128)
    assert abs(pops.sum() - 1.0) < 1e-10
    assert np.all(pops >= 0)


def test_no_bound_state_below_exact_threshold():
    # lambda^2 = 1.64 at eps = 0 lies below the threshold lambda^2 = 2
    assert bound_state_weights(ChainParams(kappa0=0.16 * 1.64**0.5, kappa=0.16)) == []


def test_two_symmetric_bound_states_above_threshold():
    kappa = 0.16
    states = bound_state_weights(ChainParams(kappa0=kappa * 2.5**0.5, kappa=kappa))
    energies = sorted(e for e, _ in states)
    # E = +-lambda^2 kappa / sqrt(lambda^2 - 1), weight (lambda^2 - 2) / (2 (lambda^2 - 1))
    expected = 2.5 * kappa / 1.5**0.5
    assert energies == pytest.approx([-expected, expected], rel=1e-8)
    assert [w for _, w in states] == pytest.approx([1 / 6, 1 / 6], rel=1e-7)


def test_decoupled_defect_is_bound():
    assert bound_state_weights(ChainParams(kappa0=0.0, kappa=0.1, eps=0.05)) == [(0.05, 1.0)]
