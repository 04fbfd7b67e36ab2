import math

import numpy as np
import pytest
from pydantic import ValidationError

from affine_ifs import estimator
from affine_ifs.async_orchestrator import set_thread_budget
from affine_ifs.dimension import carpet_oracle, carpet_system
from affine_ifs.errors import NonContractingError, PreconditionError
from affine_ifs.schemas import AffineIFS, DimEstimate, EstimatorConfig, ShiftMeasure, SweepRow
from affine_ifs.tools.linalg import operator_norm

CANTOR_DIM = math.log(2) / math.log(3)
E1 = np.array([[1.0], [0.0]])
E2 = np.array([[0.0], [1.0]])


def make_estimate(value, ci=0.01):
    return DimEstimate(value=value, ci_half_width=ci, method="correlation", radius_range=(1e-3, 1e-1))


# ---------------------------------------------------------------- sampling

def test_cantor_cloud_lies_in_the_unit_interval(cantor, uniform2):
    cloud = estimator.sample_points(cantor, uniform2, 20_000, seed=1)
    assert cloud.points.shape == (20_000, 1)
    assert cloud.points.min() >= 0.0
    assert cloud.points.max() <= 1.0
    assert cloud.points.mean() == pytest.approx(0.5, abs=0.0075)
    assert not cloud.tail_warning


def test_sampling_is_reproducible_across_thread_budgets(square, uniform4):
    set_thread_budget(1)
    serial = estimator.sample_points(square, uniform4, 150_000, seed=7)
    set_thread_budget(4)
    threaded = estimator.sample_points(square, uniform4, 150_000, seed=7)
    assert np.array_equal(serial.points, threaded.points)
    assert serial.digest == threaded.digest


def test_lebesgue_square_covariance(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 100_000, seed=2)
    np.testing.assert_allclose(np.cov(cloud.points.T), np.eye(2) / 12, atol=0.004)


def test_atom_has_dimension_zero():
    ifs = AffineIFS.from_arrays([0.5], [1.0])
    cloud = estimator.sample_points(ifs, ShiftMeasure.bernoulli([1.0]), 1000, seed=0)
    assert np.ptp(cloud.points) == 0.0
    assert estimator.local_dimension(cloud).value == 0.0


def test_degenerate_weights_give_an_atom(halves):
    cloud = estimator.sample_points(halves, ShiftMeasure.bernoulli([1.0, 0.0]), 500, seed=0)
    np.testing.assert_array_equal(cloud.points, 0.0)


def test_expanding_system_is_rejected(uniform2):
    ifs = AffineIFS.from_arrays([2.0, 2.0], [0.0, 1.0])
    with pytest.raises(NonContractingError):
        estimator.sample_points(ifs, uniform2, 100, seed=0)


def test_average_contraction_is_enough_with_a_warning(uniform2, caplog):
    ifs = AffineIFS.from_arrays([1.5, 0.2], [0.0, 1.0])
    cloud = estimator.sample_points(ifs, uniform2, 2000, seed=0)
    assert cloud.tail_warning
    assert np.all(np.isfinite(cloud.points))
    assert "tail is statistical" in caplog.text


def test_explicit_depth_must_cover_the_average_contraction(uniform2):
    ifs = AffineIFS.from_arrays([1.5, 0.2], [0.0, 1.0])
    # lambda is about -0.6, so the depth bound is about 39
    with pytest.raises(PreconditionError, match="too shallow"):
        estimator.sample_points(ifs, uniform2, 100, depth=10, seed=0)
    cloud = estimator.sample_points(ifs, uniform2, 100, depth=80, seed=0)
    assert cloud.tail_warning
    assert cloud.depth == 80


def test_sampling_preconditions(cantor, uniform2):
    with pytest.raises(PreconditionError):
        estimator.sample_points(cantor, uniform2, 0)
    with pytest.raises(PreconditionError):
        estimator.sample_points(cantor, ShiftMeasure.bernoulli([0.5, 0.25, 0.25]), 10)


# ---------------------------------------------------------------- local dimension

def test_correlation_integral_is_monotone(cantor, uniform2):
    cloud = estimator.sample_points(cantor, uniform2, 5000, seed=3)
    values = estimator.correlation_integral(cloud.points, np.geomspace(1e-3, 1.0, 10), n_pairs=200_000, seed=3)
    assert np.all(np.diff(values) >= 0)
    assert 0.0 <= values[0] and values[-1] <= 1.0


def test_cantor_correlation_dimension(cantor, uniform2):
    cloud = estimator.sample_points(cantor, uniform2, 50_000, seed=4)
    estimate = estimator.local_dimension(cloud, pair_budget=5_000_000, seed=4)
    assert estimate.value == pytest.approx(CANTOR_DIM, abs=0.05)
    assert estimate.method == "correlation"
    assert estimate.n_pairs == 5_000_000


def test_square_correlation_dimension(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 50_000, seed=5)
    estimate = estimator.local_dimension(cloud, pair_budget=10_000_000, seed=5)
    assert estimate.value == pytest.approx(2.0, abs=0.1)


def test_square_knn_dimension(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 50_000, seed=6)
    estimate = estimator.local_dimension(cloud, method="knn", knn_queries=5000, seed=6)
    assert estimate.value == pytest.approx(2.0, abs=0.15)
    assert estimate.k == 10


def test_estimates_are_reproducible(cantor, uniform2):
    cloud = estimator.sample_points(cantor, uniform2, 20_000, seed=8)
    first = estimator.local_dimension(cloud, pair_budget=1_000_000, seed=8)
    second = estimator.local_dimension(cloud, pair_budget=1_000_000, seed=8)
    assert first == second


def test_estimator_config_rejects_inverted_radii():
    with pytest.raises(ValidationError):
        EstimatorConfig(r_min=0.5, r_max=0.1)


# ---------------------------------------------------------------- projections and slices

def test_projection_of_the_square_onto_an_axis(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 50_000, seed=9)
    estimate = estimator.projected_dimension(cloud, E1, pair_budget=2_000_000, seed=9)
    assert estimate.value == pytest.approx(1.0, abs=0.1)


def test_projection_onto_the_whole_space_changes_nothing(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 20_000, seed=10)
    config = EstimatorConfig(pair_budget=2_000_000, seed=10)
    total = estimator.local_dimension(cloud, config)
    projected = estimator.projected_dimension(cloud, np.eye(2), config)
    assert projected.value == pytest.approx(total.value, rel=1e-12)


def test_projection_does_not_increase_dimension(uniform2):
    ifs = AffineIFS.from_arrays(
        [np.diag([1 / 3, 1 / 2]), np.diag([1 / 3, 1 / 2])], [[0.0, 0.0], [2 / 3, 0.5]]
    )
    cloud = estimator.sample_points(ifs, uniform2, 50_000, seed=11)
    config = EstimatorConfig(pair_budget=5_000_000, seed=11)
    total = estimator.local_dimension(cloud, config)
    projected = estimator.projected_dimension(cloud, E1, config)
    assert projected.value <= total.value + math.hypot(total.ci_half_width, projected.ci_half_width) + 0.02


def test_projection_needs_an_orthonormal_basis(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 100, seed=0)
    with pytest.raises(PreconditionError):
        estimator.projected_dimension(cloud, np.array([[1.0], [1.0]]))


def test_slices_of_the_square_are_segments(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 200_000, seed=12)
    estimate = estimator.slice_dimension(cloud, E2, n_anchors=8, slice_pair_budget=200_000, seed=12)
    assert estimate.value == pytest.approx(1.0, abs=0.1)
    assert estimate.n_points >= 500


def test_conservation_needs_a_proper_subspace(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 100, seed=0)
    with pytest.raises(PreconditionError):
        estimator.conservation_check(cloud, np.eye(2))


# ---------------------------------------------------------------- experiments

def test_translation_sweep_flags_the_atom(caplog):
    config = EstimatorConfig(pair_budget=2_000_000, seed=13)
    rows = estimator.translation_sweep(
        [0.5, 0.5], ShiftMeasure.bernoulli([0.5, 0.5]), [[0.0, 0.5], [0.0, 0.0]],
        config, n_points=20_000, seed=13, spectrum_steps=2000,
    )
    assert len(rows) == 2
    assert rows[0].bound == pytest.approx(1.0, abs=1e-9)
    assert rows[0].estimate.value == pytest.approx(1.0, abs=0.05)
    assert rows[1].estimate.value == 0.0
    assert rows[1].exceptional
    assert "need not apply" in caplog.text


def test_lower_semicontinuity_flags_only_upward_spikes():
    def row(value):
        return SweepRow(translations=((0.0,),), estimate=make_estimate(value), dim_ly=1.0, bound=1.0, exceptional=False)

    assert estimator.lower_semicontinuity_flags([row(1.0), row(1.5), row(1.0)]) == [False, True, False]
    assert estimator.lower_semicontinuity_flags([row(1.0), row(0.0), row(1.0)]) == [False, False, False]


def test_upper_bound_suite_on_small_families():
    families = [
        estimator.SuiteFamily(
            label="overlapping", ifs=AffineIFS.from_arrays([0.6, 0.6], [0.0, 0.4]), mu=ShiftMeasure.bernoulli([0.5, 0.5])
        )
    ]
    for i in range(2):
        ifs, mu = estimator.random_contracting_family(seed=100 + i)
        families.append(estimator.SuiteFamily(label=f"random_{i}", ifs=ifs, mu=mu))
    digits = [(0, 0), (1, 0), (0, 1), (1, 1)]
    ifs, mu = carpet_system(2, 2, digits)
    families.append(estimator.SuiteFamily(label="square", ifs=ifs, mu=mu, h=carpet_oracle(2, 2, digits).h))

    rows = estimator.upper_bound_suite(
        families, EstimatorConfig(pair_budget=5_000_000, seed=14), n_points=20_000, seed=14, spectrum_steps=2000
    )
    assert [row.label for row in rows] == ["overlapping", "random_0", "random_1", "square"]
    assert all(row.passed for row in rows)
    assert rows[0].bound == 1.0
    assert rows[-1].equality_consistent is True


def test_quarter_split_on_the_cantor_set(cantor, uniform2):
    cloud = estimator.sample_points(cantor, uniform2, 40_000, seed=15)
    report = estimator.quarter_split_check(cloud, EstimatorConfig(pair_budget=2_000_000, seed=15))
    assert len(report.estimates) == 4
    assert report.max_pairwise_gap < 0.1


def test_random_contracting_family_respects_the_norm_range():
    ifs, mu = estimator.random_contracting_family(dimension=3, n_maps=4, seed=16, norm_range=(0.2, 0.3))
    norms = operator_norm(ifs.matrices)
    assert np.all((norms >= 0.2 - 1e-12) & (norms <= 0.3 + 1e-12))
    assert mu.probs.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(PreconditionError):
        estimator.random_contracting_family(norm_range=(0.5, 1.2))


# ---------------------------------------------------------------- acceptance runs

@pytest.mark.slow
def test_cantor_at_a_million_points(cantor, uniform2):
    cloud = estimator.sample_points(cantor, uniform2, 1_000_000, seed=100)
    estimate = estimator.local_dimension(cloud, seed=100)
    assert abs(estimate.value - CANTOR_DIM) <= 0.02
    assert estimate.ci_half_width < 0.02


@pytest.mark.slow
def test_square_at_a_million_points(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 1_000_000, seed=101)
    correlation = estimator.local_dimension(cloud, seed=101)
    knn = estimator.local_dimension(cloud, method="knn", seed=101)
    assert abs(correlation.value - 2.0) <= 0.05
    assert abs(knn.value - correlation.value) <= math.hypot(knn.ci_half_width, correlation.ci_half_width) + 0.03


@pytest.mark.slow
def test_square_slope_is_stable_under_a_narrower_band(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 1_000_000, seed=102)
    extent = estimator.cloud_extent(cloud.points)
    wide = estimator.local_dimension(cloud, seed=102)
    narrow = estimator.local_dimension(cloud, seed=102, r_min=1e-3 * extent, r_max=0.05 * extent)
    assert abs(wide.value - narrow.value) <= 0.05


@pytest.mark.slow
def test_carpet_dimensions_at_a_million_points():
    digits = [(0, 0), (1, 0), (2, 1)]
    ifs, mu = carpet_system(3, 2, digits)
    oracle = carpet_oracle(3, 2, digits)
    # deep words keep the 1D projection free of duplicate points at k-NN scales
    cloud = estimator.sample_points(ifs, mu, 1_000_000, depth=40, seed=103)
    config = EstimatorConfig(method="knn", seed=103)

    total = estimator.local_dimension(cloud, config)
    projected = estimator.projected_dimension(cloud, E2, config)
    sliced = estimator.slice_dimension(cloud, E1, config)
    assert abs(total.value - oracle.dim_mu.value) <= 0.05
    assert abs(projected.value - 0.918296) <= 0.05
    assert abs(sliced.value - 0.420620) <= 0.1

    report = estimator.conservation_check(cloud, E1, config)
    assert abs(report.residual) <= 2 * report.residual_ci + 0.1


@pytest.mark.slow
def test_square_conservation(square, uniform4):
    cloud = estimator.sample_points(square, uniform4, 300_000, seed=104)
    report = estimator.conservation_check(cloud, E2, EstimatorConfig(seed=104))
    assert abs(report.residual) <= 0.15


@pytest.mark.slow
def test_upper_bound_suite_on_ten_random_families():
    families = []
    for i in range(10):
        ifs, mu = estimator.random_contracting_family(seed=200 + i)
        families.append(estimator.SuiteFamily(label=f"random_{i}", ifs=ifs, mu=mu))
    rows = estimator.upper_bound_suite(families, EstimatorConfig(pair_budget=10_000_000, seed=105), seed=105)
    assert all(row.passed for row in rows)


@pytest.mark.slow
def test_translation_sweep_generic_points():
    grid = [[0.0, t] for t in np.linspace(0.3, 0.9, 5)]
    rows = estimator.translation_sweep(
        [1 / 3, 1 / 3], ShiftMeasure.bernoulli([0.5, 0.5]), grid, EstimatorConfig(pair_budget=10_000_000, seed=106),
        seed=106,
    )
    for row in rows:
        assert abs(row.estimate.value - row.bound) <= 0.05


@pytest.mark.slow
def test_quarter_split_is_consistent(cantor, uniform2):
    cloud = estimator.sample_points(cantor, uniform2, 1_000_000, seed=107)
    assert estimator.quarter_split_check(cloud, EstimatorConfig(seed=107)).consistent
