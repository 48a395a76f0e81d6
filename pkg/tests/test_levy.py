import math

import numpy as np
import pytest
from scipy import stats

from errors import InputError
from levy import JumpKind, JumpLaw, LevyConfig, MarkedPointSet, exp_moment, sample_compound_poisson


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@pytest.mark.slow
def test_poisson_count_mean():
    rng = _rng(123)
    law = JumpLaw.point_mass([1.0])
    counts = np.array([sample_compound_poisson(4.0, law, 1.0, rng).count for _ in range(100_000)])
    assert abs(counts.mean() - 4.0) < 3 * math.sqrt(4.0) / math.sqrt(100_000)


def test_point_mass_marks_are_exact():
    v = np.array([0.5, -0.25, 2.0])
    points = sample_compound_poisson(1.0, JumpLaw.point_mass(v), 1.0, _rng(5))
    for mark in points.marks:
        np.testing.assert_array_equal(mark, v)


def test_sampling_is_deterministic_and_ordered():
    law = JumpLaw.gaussian([1.0, 0.5])
    first = sample_compound_poisson(10.0, law, 2.0, _rng(99))
    second = sample_compound_poisson(10.0, law, 2.0, _rng(99))
    np.testing.assert_array_equal(first.times, second.times)
    np.testing.assert_array_equal(first.marks, second.marks)
    assert first.count > 0
    assert np.all(first.times > 0) and np.all(first.times <= 2.0)
    assert np.all(np.diff(first.times) > 0)


def test_sampling_rejects_bad_parameters():
    law = JumpLaw.point_mass([1.0])
    with pytest.raises(InputError):
        sample_compound_poisson(0.0, law, 1.0, _rng(1))
    with pytest.raises(InputError):
        sample_compound_poisson(1.0, law, -1.0, _rng(1))


def test_exp_moment_closed_forms():
    assert exp_moment(JumpLaw.point_mass([0.0]), 3.0, [1.0]) == 1.0
    assert exp_moment(JumpLaw.gaussian([1.0]), 0.25, [1.0]) == pytest.approx(math.sqrt(2.0), rel=1e-14)
    profile = JumpLaw.deterministic([1.0, 2.0])
    assert exp_moment(profile, 0.5, [1.0, 0.25]) == pytest.approx(math.exp(0.5 * (1.0 + 1.0)))


def test_exp_moment_infinite_flags():
    assert exp_moment(JumpLaw.student_t(3.0), 1e-6, [1.0]) == math.inf
    # Gaussian moments blow up at c = 1/(2 q sigma^2)
    assert exp_moment(JumpLaw.gaussian([1.0]), 0.5, [1.0]) == math.inf
    with pytest.raises(InputError):
        exp_moment(JumpLaw.gaussian([1.0]), 0.0, [1.0])
    with pytest.raises(InputError):
        exp_moment(JumpLaw.gaussian([1.0]), 0.1, [1.0, 1.0])


def test_moment_threshold_by_family():
    q = np.array([1.0, 0.25])
    assert JumpLaw.gaussian([1.0, 2.0]).moment_threshold(q) == pytest.approx(0.5)
    assert JumpLaw.deterministic([1.0, 1.0]).moment_threshold(q) == math.inf
    assert JumpLaw.student_t(5.0, dim=2).moment_threshold(q) == 0.0
    assert not JumpLaw.student_t(5.0, dim=2).classify(1e-9, q)


def test_student_t_marks_live_on_first_mode():
    law = JumpLaw.student_t(4.0, dim=3)
    marks = law.sample(_rng(2), 50)
    assert marks.shape == (50, 3)
    assert np.all(marks[:, 1:] == 0)
    assert law.second_moment()[0] == pytest.approx(2.0)
    assert law.kind is JumpKind.STUDENT_T
    with pytest.raises(InputError):
        JumpLaw.student_t(2.0)


def test_levy_config_validation():
    with pytest.raises(InputError):
        LevyConfig(np.zeros(2), rate_lambda=1.0)
    with pytest.raises(InputError):
        LevyConfig(np.zeros(2), rate_lambda=1.0, jump_law=JumpLaw.point_mass([1.0]))
    with pytest.raises(InputError):
        LevyConfig(np.zeros(2), rate_lambda=-1.0)

    gaussian = LevyConfig(np.zeros(2))
    assert not gaussian.is_pure_jump
    with pytest.raises(InputError):
        gaussian.require_pure_jump()
    drifting = LevyConfig(np.ones(2), gaussian_enabled=False)
    assert drifting.has_drift and not drifting.is_pure_jump
    LevyConfig.silent(2).require_pure_jump()


def test_marked_point_set_validation_and_dict():
    with pytest.raises(InputError):
        MarkedPointSet([0.5, 0.5], np.zeros((2, 1)))
    with pytest.raises(InputError):
        MarkedPointSet([0.0], np.zeros((1, 1)))
    with pytest.raises(InputError):
        MarkedPointSet([0.5], np.zeros((2, 1)))
    points = MarkedPointSet([0.2, 0.7], [[1.0, 2.0], [3.0, 4.0]])
    restored = MarkedPointSet.from_dict(points.to_dict())
    np.testing.assert_array_equal(restored.marks, points.marks)
    assert MarkedPointSet.empty(3).dim == 3


def test_gaussian_marks_match_expected_load(m1_arrays_q):
    q, sigma = m1_arrays_q
    loads = np.sum(q * JumpLaw.gaussian(sigma).sample(_rng(17), 100_000) ** 2, axis=1)
    se = loads.std(ddof=1) / math.sqrt(loads.size)
    assert abs(loads.mean() - np.sum(q * sigma ** 2)) < 3 * se


def test_finite_exp_moment_is_stable_under_doubling(m1_arrays_q):
    q, sigma = m1_arrays_q
    law, c = JumpLaw.gaussian(sigma), 0.1
    values = np.exp(c * np.sum(q * law.sample(_rng(8), 20_000) ** 2, axis=1))
    half, full = values[:10_000].mean(), values.mean()
    assert np.isfinite(half) and np.isfinite(full)
    assert abs(full - half) <= 0.1 * half
    assert full == pytest.approx(exp_moment(law, c, q), rel=0.1)


@pytest.mark.smoke
def test_student_t_exponential_moments_exceed_any_cap():

    c, cap = 1.0, 1e10
    marks = JumpLaw.student_t(3.0).sample(_rng(4), 1_000_000)[:, 0]
    # compare in log space: e^{c ξ^2} overflows long before the tail runs out
    running = np.maximum.accumulate(c * marks ** 2)
    assert running[-1] > math.log(cap)
    threshold = math.sqrt(math.log(cap) / c)
    expected = 2.0 * stats.t.sf(threshold, df=3.0)
    observed = float(np.mean(np.abs(marks) > threshold))
    assert abs(observed - expected) < 5 * math.sqrt(expected / marks.size)
