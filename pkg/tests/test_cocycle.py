import math

import numpy as np
import pytest

from affine_ifs import cocycle
from affine_ifs.errors import PreconditionError
from affine_ifs.schemas import LyapunovSpectrum
from affine_ifs.shift_measure import sample_word
from affine_ifs.tools.linalg import max_principal_sine

from .conftest import rotation

E2 = np.array([[0.0], [1.0]])


def test_top_exponent_of_conformal_maps(uniform2):
    mats = np.array([rotation(0.3) / 3, rotation(1.1) / 3])
    top, stderr = cocycle.top_exponent(mats, uniform2, n_steps=2000, n_reps=4, seed=0)
    assert top == pytest.approx(math.log(1 / 3), abs=1e-10)
    assert stderr < 1e-10


def test_top_exponent_needs_enough_steps(diagonal_pair, uniform2):
    with pytest.raises(PreconditionError):
        cocycle.top_exponent(diagonal_pair, uniform2, n_steps=500, n_reps=4)


def test_diagonal_spectrum(diagonal_pair, uniform2):
    spec = cocycle.spectrum(diagonal_pair, uniform2, n_steps=100_000, n_reps=16, seed=1)
    assert spec.s == 2
    assert spec.multiplicities == (1, 1)
    assert spec.exponents[0] == pytest.approx(0.5 * math.log(1 / 6), abs=1e-3)
    assert spec.exponents[1] == pytest.approx(0.5 * math.log(1 / 20), abs=1e-3)


def test_exponent_sum_matches_log_determinant(diagonal_pair, uniform2):
    spec = cocycle.spectrum(diagonal_pair, uniform2, n_steps=5000, n_reps=8, seed=2)
    total = sum(lam * k for lam, k in zip(spec.exponents, spec.multiplicities))
    assert abs(total - spec.log_det_average) <= 3 * spec.log_det_stderr + 1e-10


def test_conformal_spectrum_is_one_block(uniform2):
    mats = np.array([rotation(0.3) / 3, rotation(1.1) / 3])
    spec = cocycle.spectrum(mats, uniform2, n_steps=2000, n_reps=4, seed=3)
    assert spec.s == 1
    assert spec.multiplicities == (2,)
    assert spec.exponents[0] == pytest.approx(math.log(1 / 3), abs=1e-10)


def test_rank_collapse_gives_minus_inf(uniform2):
    mats = np.array([np.diag([1 / 2, 0.0]), np.diag([1 / 3, 0.0])])
    spec = cocycle.spectrum(mats, uniform2, n_steps=20_000, n_reps=4, seed=4)
    assert spec.exponents[0] == pytest.approx(0.5 * math.log(1 / 6), abs=0.01)
    assert spec.exponents[1] == -math.inf
    assert spec.log_det_average == -math.inf


def test_rank_collapse_of_non_diagonal_maps_gives_minus_inf(uniform2):
    mats = np.array([[[0.25, 0.25], [0.25, 0.25]], [[0.1, 0.2], [0.2, 0.4]]])
    spec = cocycle.spectrum(mats, uniform2, n_steps=5000, n_reps=4, seed=5)
    assert math.isfinite(spec.exponents[0])
    assert spec.exponents[-1] == -math.inf
    assert spec.log_det_average == -math.inf


def test_top_exponent_matches_the_spectrum(triangular_pair, uniform2):
    spec = cocycle.spectrum(triangular_pair, uniform2, n_steps=20_000, n_reps=8, seed=15)
    top, stderr = cocycle.top_exponent(triangular_pair, uniform2, n_steps=20_000, n_reps=8, seed=15)
    assert abs(spec.exponents[0] - top) <= 3 * math.hypot(spec.stderr[0], stderr)


def test_spectrum_is_invariant_under_orthogonal_conjugation(triangular_pair, uniform2):
    turn = rotation(0.7)
    conjugated = np.array([turn @ m @ turn.T for m in triangular_pair])
    original = cocycle.spectrum(triangular_pair, uniform2, n_steps=20_000, n_reps=4, seed=16)
    rotated = cocycle.spectrum(conjugated, uniform2, n_steps=20_000, n_reps=4, seed=16)
    assert rotated.multiplicities == original.multiplicities
    np.testing.assert_allclose(rotated.exponents, original.exponents, atol=1e-3)
    assert rotated.log_det_average == pytest.approx(original.log_det_average, abs=1e-12)


def test_close_exponents_are_flagged_ambiguous(uniform2):
    mats = np.array([np.diag([0.5, 0.45])] * 2)
    spec = cocycle.spectrum(mats, uniform2, n_steps=1000, n_reps=2, gap_tol=0.07, seed=5)
    assert spec.s == 2
    assert spec.ambiguous


def test_wide_gap_tolerance_merges_exponents(uniform2):
    mats = np.array([np.diag([0.5, 0.45])] * 2)
    spec = cocycle.spectrum(mats, uniform2, n_steps=1000, n_reps=2, gap_tol=0.2, seed=5)
    assert spec.multiplicities == (2,)
    assert spec.exponents[0] == pytest.approx(0.5 * (math.log(0.5) + math.log(0.45)), abs=1e-10)


def test_spectrum_rejects_non_positive_gap_tol(diagonal_pair, uniform2):
    with pytest.raises(PreconditionError):
        cocycle.spectrum(diagonal_pair, uniform2, n_steps=1000, n_reps=2, gap_tol=0.0)


def test_default_gap_tol():
    assert cocycle.default_gap_tol(-1.0) == pytest.approx(0.05)
    assert cocycle.default_gap_tol(-0.001) == pytest.approx(1e-3)


def test_flag_of_a_triangular_family(triangular_pair, uniform2):
    spec = cocycle.spectrum(triangular_pair, uniform2, n_steps=20_000, n_reps=4, seed=6)
    past = sample_word(uniform2, 200, np.random.default_rng(7))
    flag = cocycle.oseledets_flag(triangular_pair, past, spec)
    assert len(flag.bases) == 1
    assert max_principal_sine(flag.bases[0], E2) < 1e-6
    assert not flag.low_confidence


def test_flag_of_a_single_non_normal_matrix(uniform2):
    matrix = np.array([[0.5, 1.0], [0.0, 0.125]])
    spec = LyapunovSpectrum(
        exponents=(math.log(0.5), math.log(0.125)), multiplicities=(1, 1), stderr=(0.0, 0.0), gap_tol=0.05
    )
    flag = cocycle.oseledets_flag(np.array([matrix, matrix]), [0] * 200, spec)
    slow = np.array([[-8 / 3], [1.0]]) / math.hypot(8 / 3, 1.0)
    assert max_principal_sine(flag.bases[0], slow) < 1e-6


def test_flag_is_equivariant(triangular_pair, uniform2):
    turn = rotation(0.7)
    mats = np.array([turn @ m @ turn.T for m in triangular_pair])
    spec = cocycle.spectrum(mats, uniform2, n_steps=20_000, n_reps=4, seed=8)
    past = sample_word(uniform2, 201, np.random.default_rng(9)).symbols
    here = cocycle.oseledets_flag(mats, past[1:], spec).bases[0]
    before = cocycle.oseledets_flag(mats, past[:-1], spec).bases[0]
    assert max_principal_sine(mats[past[-1]] @ here, before) < 1e-6
    assert max_principal_sine(here, turn @ E2) < 1e-6


def test_flag_with_a_narrow_gap_is_low_confidence():
    mats = np.array([np.diag([0.5, 0.45])] * 2)
    spec = LyapunovSpectrum(
        exponents=(math.log(0.5), math.log(0.45)), multiplicities=(1, 1), stderr=(0.0, 0.0), gap_tol=0.5
    )
    flag = cocycle.oseledets_flag(mats, [0, 1] * 25, spec)
    assert flag.low_confidence


def test_flag_needs_a_long_past(triangular_pair):
    spec = LyapunovSpectrum(exponents=(-0.6, -1.5), multiplicities=(1, 1), stderr=(0.0, 0.0), gap_tol=0.03)
    with pytest.raises(PreconditionError):
        cocycle.oseledets_flag(triangular_pair, [0] * 10, spec)


def test_flag_of_a_single_exponent_is_empty(uniform2):
    mats = np.array([rotation(0.3) / 3, rotation(1.1) / 3])
    spec = LyapunovSpectrum(exponents=(math.log(1 / 3),), multiplicities=(2,), stderr=(0.0,), gap_tol=0.05)
    assert cocycle.oseledets_flag(mats, [0, 1] * 30, spec).bases == ()


def test_angle_stats_stay_away_from_zero(triangular_pair, uniform2):
    spec = cocycle.spectrum(triangular_pair, uniform2, n_steps=10_000, n_reps=4, seed=10)
    report = cocycle.angle_stats(
        triangular_pair, uniform2, spec, n_samples=16, past_depth=60, seed=11, orbit_length=200, orbit_points=10
    )
    assert report.samples.shape == (16,)
    assert report.minimum > 0.5
    assert report.minimum <= report.median <= 1.0
    assert abs(report.decay_slope) < 0.01


def test_angle_stats_of_a_rotation_mixed_family(uniform2):
    base = np.diag([1 / 2, 1 / 4])
    turn = rotation(math.radians(10))
    mats = np.array([base, turn @ base @ turn.T])
    spec = cocycle.spectrum(mats, uniform2, n_steps=10_000, n_reps=4, seed=17)
    assert spec.s == 2
    report = cocycle.angle_stats(
        mats, uniform2, spec, n_samples=32, past_depth=60, seed=18, orbit_length=1000, orbit_points=50
    )
    assert report.minimum > 0
    assert abs(report.decay_slope) < 0.01


def test_angle_stats_need_two_exponents(uniform2):
    mats = np.array([rotation(0.3) / 3, rotation(1.1) / 3])
    spec = LyapunovSpectrum(exponents=(math.log(1 / 3),), multiplicities=(2,), stderr=(0.0,), gap_tol=0.05)
    with pytest.raises(PreconditionError):
        cocycle.angle_stats(mats, uniform2, spec, n_samples=4, past_depth=60)


def test_furstenberg_directions_of_a_triangular_family(triangular_pair, uniform2):
    spec = cocycle.spectrum(triangular_pair, uniform2, n_steps=10_000, n_reps=4, seed=12)
    samples = cocycle.furstenberg_samples(triangular_pair, uniform2, spec, n_samples=8, past_depth=100, seed=13)
    assert len(samples.bases) == 8
    np.testing.assert_allclose(samples.directions, math.pi / 2, atol=1e-6)


def test_spectrum_is_reproducible(diagonal_pair, uniform2):
    first = cocycle.spectrum(diagonal_pair, uniform2, n_steps=2000, n_reps=4, seed=14)
    second = cocycle.spectrum(diagonal_pair, uniform2, n_steps=2000, n_reps=4, seed=14)
    assert first == second
