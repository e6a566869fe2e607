import numpy as np
import pytest

import correlation
from correlation import (
    chatterjee_xi, generate_test_series, pearson_rho, sample_discrete_joint, self_test,
    xi_decay_study, xi_population_discrete
)
from errors import InvalidArgumentError, UndefinedMetricError
from models import SampleSeries


@pytest.mark.parametrize("n", [4, 10, 100])
def test_strictly_increasing_closed_form(n):
    x = np.arange(n, dtype=float)
    assert chatterjee_xi(SampleSeries(x, x ** 3)) == pytest.approx(1.0 - 3.0 / (n + 1))


def test_decreasing_function_is_also_dependent():
    x = np.arange(50, dtype=float)
    assert chatterjee_xi(SampleSeries(x, -x)) == pytest.approx(1.0 - 3.0 / 51)


def test_constant_y_is_undefined():
    with pytest.raises(UndefinedMetricError):
        chatterjee_xi(SampleSeries(np.arange(5.0), np.ones(5)))


def test_tie_seed_only_matters_with_ties():
    rng = np.random.default_rng(0)
    s = SampleSeries(rng.uniform(size=200), rng.uniform(size=200))
    assert chatterjee_xi(s, tie_seed=1) == chatterjee_xi(s, tie_seed=2)
    tied = SampleSeries(np.repeat([0.0, 1.0], 50), rng.uniform(size=100))
    assert chatterjee_xi(tied, tie_seed=3) == chatterjee_xi(tied, tie_seed=3)


def test_independent_samples_are_near_zero():
    rng = np.random.default_rng(4)
    s = SampleSeries(rng.normal(size=5000), rng.normal(size=5000))
    assert abs(chatterjee_xi(s)) < 0.05


# ========================================
# Discrete population value
# ========================================

def test_population_value_of_identity():
    assert xi_population_discrete([0, 1], [0, 1], [[0.5, 0.0], [0.0, 0.5]]) == pytest.approx(1.0)


def test_population_value_of_independence():
    pmf = np.outer([0.3, 0.7], [0.2, 0.5, 0.3])
    assert xi_population_discrete([0, 1], [1, 2, 3], pmf) == pytest.approx(0.0, abs=1e-12)


def test_sample_converges_to_population_value():
    x_values, y_values = [0, 1, 2], [0, 1, 2]
    pmf = np.array([[0.2, 0.1, 0.0], [0.05, 0.2, 0.1], [0.0, 0.05, 0.3]])
    pmf = pmf / pmf.sum()
    exact = xi_population_discrete(x_values, y_values, pmf)
    assert 0.0 < exact < 1.0
    estimates = [chatterjee_xi(sample_discrete_joint(x_values, y_values, pmf, 4000, seed), tie_seed=seed)
                 for seed in range(10)]
    assert np.mean(estimates) == pytest.approx(exact, abs=0.03)


def test_population_input_validation():
    with pytest.raises(InvalidArgumentError):
        xi_population_discrete([0, 1], [0, 1], [[0.5, 0.5]])
    with pytest.raises(InvalidArgumentError):
        xi_population_discrete([0, 1], [0, 1], [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(UndefinedMetricError):
        xi_population_discrete([0, 1], [7], [[0.5], [0.5]])


# ========================================
# Pearson / test function
# ========================================

def test_pearson_of_a_line():
    x = np.linspace(0, 1, 20)
    assert pearson_rho(SampleSeries(x, 3 * x + 1)) == pytest.approx(1.0)
    with pytest.raises(UndefinedMetricError):
        pearson_rho(SampleSeries(x, np.zeros(20)))


def test_xi_ignores_increasing_transforms():
    s = generate_test_series(n=500, seed=2, n_sub=20)
    transformed = SampleSeries(s.x ** 3, np.exp(s.y))
    assert chatterjee_xi(transformed, tie_seed=5) == pytest.approx(chatterjee_xi(s, tie_seed=5), abs=1e-12)


@pytest.mark.parametrize("a, b, c, d", [(2.0, -1.0, 0.5, 3.0), (0.01, 100.0, 7.0, -2.0)])
def test_pearson_ignores_positive_affine_maps(a, b, c, d):
    s = generate_test_series(n=300, seed=1)
    tilted = SampleSeries(s.x, s.y + 0.2 * s.x)
    rho = pearson_rho(tilted)
    assert pearson_rho(SampleSeries(a * tilted.x + b, c * tilted.y + d)) == pytest.approx(rho, abs=1e-10)
    assert pearson_rho(SampleSeries(-a * tilted.x + b, tilted.y)) == pytest.approx(-rho, abs=1e-10)


def test_test_function_values():
    f = correlation.test_function
    assert f(0.0) == pytest.approx(12.0)
    assert f(10.0) == pytest.approx(2.0 - np.cos(100.0))
    # even function
    x = np.linspace(-9.5, 9.5, 77)
    np.testing.assert_allclose(f(x), f(-x), atol=1e-12)


def test_symmetric_function_has_no_linear_correlation():
    series = generate_test_series(seed=0)
    assert abs(pearson_rho(series)) < 0.1
    assert chatterjee_xi(series) > 0.5


def test_subsample_points_sit_on_the_jumps():
    series = generate_test_series(n=100, seed=1, n_sub=10)
    assert series.n == 120
    tail_x, tail_y = series.x[100:], series.y[100:]
    assert set(np.round(np.abs(tail_x), 12)) == {round(2 * np.pi, 12)}
    assert np.all((tail_y >= 1.0) & (tail_y <= 12.0))


def test_series_arguments():
    with pytest.raises(InvalidArgumentError):
        generate_test_series(n=1)
    with pytest.raises(InvalidArgumentError):
        generate_test_series(n_sub=-1)


@pytest.mark.slow
def test_self_test_reproduces_reference():
    report = self_test()
    assert report['status'] == 'pass'
    assert report['mean_xi'] == pytest.approx(0.824, abs=0.03)


@pytest.mark.slow
def test_discontinuity_subsample_lowers_xi():
    curve = xi_decay_study(seeds=range(10))
    means = [row['mean_xi'] for row in curve]
    assert all(b < a for a, b in zip(means, means[1:]))
    assert curve[0]['relative_cardinality'] == 0.0
