from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from decaylab.errors import FitError, ParameterError
from decaylab.evolve import site_populations
from decaylab.labsim import (
    HdrProfile,
    ImageStack,
    LabConfig,
    dynamic_range,
    estimate_uncertainty,
    extract_survival,
    ground_truth,
    hdr_reconstruct,
    load_stack,
    save_stack,
    synthesize_stack,
)
from decaylab.model import validate_params

B_FIT = validate_params("B-fit")
CLEAN = LabConfig(speckle_rel_sigma=0.0, loss_db_per_cm=0.0, quantize=False)


def _profile_from_total(t, p_tot, window=0.2):
    p = np.full(t.shape, 0.5)
    return HdrProfile(t=t, p1=p * p_tot, p_tot=p_tot, p=p, sigma_p=np.zeros_like(p), sigma_t=0.0,
                      sigma_p_over_p=0.0, quantization_p=np.zeros_like(p), window_mm=window)


def test_config_invariants():
    with pytest.raises(ParameterError):
        LabConfig(exposures_ms=(1.0, 1.0, 2.0))
    with pytest.raises(ParameterError):
        LabConfig(bit_depth=0)
    with pytest.raises(ParameterError):
        LabConfig(window_mm=0.0)
    lab = LabConfig()
    assert len(lab.exposures_ms) == 7
    assert lab.exposures_ms[0] == pytest.approx(1.0) and lab.exposures_ms[-1] == pytest.approx(63.0)
    assert lab.ceiling == 255


def test_clean_frames_proportional_to_population_and_exposure():
    stack = synthesize_stack(B_FIT, CLEAN)
    frames = stack.frames
    scaled = stack.populations[:, None, :, :, None] * stack.exposures[None, :, None, None, None] * stack.gain
    unsat = frames < stack.ceiling
    np.testing.assert_allclose(frames[unsat], scaled.repeat(frames.shape[-1], axis=-1)[unsat], rtol=1e-12)


def test_loss_scales_total_power():
    lab = replace(CLEAN, loss_db_per_cm=0.6)
    recon = hdr_reconstruct(synthesize_stack(B_FIT, lab))
    total = np.nansum(recon.intensity, axis=(1, 2, 3))
    t = recon.t
    assert total[t == 10.0][0] / total[t == 0.0][0] == pytest.approx(10 ** -0.06, rel=1e-10)


def test_exposure_ratio_of_unsaturated_pixels():
    stack = synthesize_stack(B_FIT, LabConfig(seed=3))
    short, long = stack.frames[:, 0].astype(float), stack.frames[:, -1].astype(float)
    ok = (long < stack.ceiling) & (short >= 1)
    ratio = long[ok] / short[ok]
    # rounding of either value moves the ratio by at most half a count on each side
    bound = 63 * (0.5 / short[ok]) + 0.5 / short[ok]
    assert ok.sum() > 100
    assert np.all(np.abs(ratio - 63) <= bound + 1e-9)


def test_pixel_range_and_monotone_exposures():
    stack = synthesize_stack(B_FIT, LabConfig(seed=1))
    assert stack.frames.min() >= 0 and stack.frames.max() <= stack.ceiling
    assert np.all(np.diff(stack.frames.astype(int), axis=1) >= 0)


def test_gain_puts_brightest_pixel_below_saturation():
    stack = synthesize_stack(B_FIT, LabConfig(seed=2))
    assert stack.frames[:, 0].max() == round(0.9 * stack.ceiling)


def test_single_frame_identity():
    lab = LabConfig(exposures_ms=(4.0,), speckle_rel_sigma=0.0)
    stack = synthesize_stack(B_FIT, lab)
    recon = hdr_reconstruct(stack)
    np.testing.assert_array_equal(recon.intensity, stack.frames[:, 0] / 4.0)


def _two_pixel_stack(values: np.ndarray, exposures) -> ImageStack:
    lab = LabConfig(exposures_ms=tuple(exposures), n_waveguides=3, pixels_per_waveguide=1, rows_per_window=1,
                    bit_depth=8)
    frames = values.reshape(1, len(exposures), 1, 3, 1)
    return ImageStack(t=np.array([0.0]), frames=frames, populations=np.zeros((1, 1, 3)), gain=1.0, config=lab)


def test_hdr_recovers_ratio_of_ten_thousand():
    exposures = np.geomspace(1, 63, 7)
    bright, faint = 230.0, 230.0 / 1e4
    true = np.array([bright, faint, 0.0])
    values = np.minimum(np.rint(true[None, :] * exposures[:, None]), 255)
    recon = hdr_reconstruct(_two_pixel_stack(values, exposures))
    got = recon.intensity.reshape(3)
    step = 0.5 / exposures[recon.exposure_index.reshape(3)]
    assert abs(got[0] - bright) <= step[0]
    assert abs(got[1] - faint) <= step[1]
    assert got[0] / got[1] > 1e4 * (1 - 0.5)
    assert dynamic_range(recon) >= 1e4


def test_saturated_pixel_excluded():
    exposures = (1.0, 2.0, 4.0)
    values = np.array([[100, 40, 1], [200, 80, 2], [255, 160, 4]], dtype=float)
    recon = hdr_reconstruct(_two_pixel_stack(values, exposures))
    assert recon.exposure_index.reshape(3)[0] == 1
    assert recon.intensity.reshape(3)[0] == 100.0


def test_all_saturated_positions_reported():
    exposures = (1.0, 2.0)
    values = np.array([[255, 40, 1], [255, 80, 2]], dtype=float)
    stack = _two_pixel_stack(values, exposures)
    recon = hdr_reconstruct(stack)
    assert not recon.valid.all()
    with pytest.raises(ParameterError, match="t = 0 mm"):
        hdr_reconstruct(stack, strict=True)
    profile = extract_survival(recon)
    assert profile.dropped == (0.0,)
    assert profile.t.size == 0


def test_fusion_independent_of_exposure_choice():
    stack = synthesize_stack(B_FIT, LabConfig(seed=4))
    f = stack.frames.astype(float)
    tau = stack.exposures
    ok = f < stack.ceiling
    for i in range(len(tau)):
        for j in range(i + 1, len(tau)):
            both = ok[:, i] & ok[:, j]
            diff = np.abs(f[:, i][both] / tau[i] - f[:, j][both] / tau[j])
            assert np.all(diff <= 0.5 / tau[i] + 0.5 / tau[j] + 1e-12)


def test_noiseless_lossy_extraction_is_exact():
    lab = LabConfig(speckle_rel_sigma=0.0, quantize=False, rows_per_window=1)
    stack = synthesize_stack(B_FIT, lab)
    profile = extract_survival(hdr_reconstruct(stack))
    for t in (0.0, 10.0, 40.0, 88.0):
        expected = site_populations(B_FIT, t, lab.n_waveguides)[0]
        assert profile.p[profile.t == t][0] == pytest.approx(expected, rel=1e-12)


def test_first_window_is_unity():
    profile = extract_survival(hdr_reconstruct(synthesize_stack(B_FIT, LabConfig(seed=0))))
    assert profile.t[0] == 0.0
    assert profile.p[0] == pytest.approx(1.0, abs=1e-3)


def test_loss_invariance_exact_without_quantization():
    base = LabConfig(speckle_rel_sigma=0.0, quantize=False)
    p0 = extract_survival(hdr_reconstruct(synthesize_stack(B_FIT, replace(base, loss_db_per_cm=0.0)))).p
    p6 = extract_survival(hdr_reconstruct(synthesize_stack(B_FIT, replace(base, loss_db_per_cm=0.6)))).p
    np.testing.assert_allclose(p6, p0, rtol=1e-12, atol=0)


def test_loss_invariance_within_two_quantization_steps():
    base = LabConfig(speckle_rel_sigma=0.0)
    a = extract_survival(hdr_reconstruct(synthesize_stack(B_FIT, replace(base, loss_db_per_cm=0.0))))
    b = extract_survival(hdr_reconstruct(synthesize_stack(B_FIT, replace(base, loss_db_per_cm=0.6))))
    assert np.all(np.abs(a.p - b.p) <= 2 * (a.quantization_p + b.quantization_p))


def test_sigma_t_uniform_window():
    t = np.linspace(0, 20, 41)
    _, sigma_t, _ = estimate_uncertainty(_profile_from_total(t, np.exp(-0.01 * t), window=0.4))
    assert sigma_t == pytest.approx(0.4 / math.sqrt(12))
    assert sigma_t == pytest.approx(0.1155, abs=1e-4)


def test_noiseless_uncertainty_below_quantization_floor():
    lab = LabConfig(speckle_rel_sigma=0.0)
    profile = extract_survival(hdr_reconstruct(synthesize_stack(B_FIT, lab)))
    assert profile.sigma_p_over_p < 2.0 ** -lab.bit_depth
    np.testing.assert_allclose(profile.sigma_p, profile.p * profile.sigma_p_over_p)


def test_injected_noise_recovered():
    t = np.arange(177) * 0.5
    rng = np.random.default_rng(11)
    estimates = []
    for _ in range(500):
        p_tot = np.exp(-0.0138 * t) * (1 + 0.05 * rng.standard_normal(t.size))
        estimates.append(estimate_uncertainty(_profile_from_total(t, p_tot))[0])
    assert np.mean(estimates) == pytest.approx(0.05, abs=0.01)


def test_non_decaying_total_power_flagged():
    t = np.linspace(0, 20, 41)
    _, _, decaying = estimate_uncertainty(_profile_from_total(t, np.exp(0.01 * t)))
    assert not decaying
    _, _, decaying = estimate_uncertainty(_profile_from_total(t, np.exp(0.01 * t)), loss_configured=False)
    assert decaying


def test_uncertainty_needs_ten_positions():
    t = np.linspace(0, 4, 9)
    with pytest.raises(FitError):
        estimate_uncertainty(_profile_from_total(t, np.exp(-t)))


def test_speckle_unbiased_over_seeds():
    lab = LabConfig(quantize=False, t_max_mm=30.0)
    rel = []
    for seed in range(500):
        stack = synthesize_stack(B_FIT, replace(lab, seed=seed))
        profile = extract_survival(hdr_reconstruct(stack))
        rel.append(profile.p / ground_truth(stack) - 1)
    pixels = lab.pixels_per_waveguide * lab.rows_per_window
    assert np.abs(np.mean(rel, axis=0)).max() < 2 * lab.speckle_rel_sigma / math.sqrt(pixels)


def test_determinism_and_archive(tmp_path):
    a = synthesize_stack(B_FIT, LabConfig(seed=7))
    b = synthesize_stack(B_FIT, LabConfig(seed=7))
    c = synthesize_stack(B_FIT, LabConfig(seed=8))
    np.testing.assert_array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)
    save_stack(a, tmp_path / "a.npz")
    save_stack(b, tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    loaded = load_stack(tmp_path / "a.npz")
    np.testing.assert_array_equal(loaded.frames, a.frames)
    assert loaded.config == a.config and loaded.params == B_FIT and loaded.gain == a.gain
    assert loaded.header()["shape"] == list(a.frames.shape)


@pytest.mark.parametrize("name", ["A", "C-fit"])
def test_round_trip_coverage_other_rows(name):
    params = validate_params(name)
    hits = []
    for seed in range(50):
        stack = synthesize_stack(params, LabConfig(seed=seed))
        profile = extract_survival(hdr_reconstruct(stack))
        truth = ground_truth(stack)[np.isin(stack.t, profile.t)]
        hits.append(np.abs(profile.p - truth) <= 2 * profile.sigma_p)
    assert np.mean(hits) >= 0.95
