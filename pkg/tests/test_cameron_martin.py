import math

import numpy as np
import pandas as pd
import pytest

from cameron_martin import (
    EXAMPLES,
    CMReport,
    Direction,
    _drift_energy,
    cm_l2_norm,
    cm_norm_for_law,
    cm_reconstruction,
    cm_report,
    cm_report_for_law,
    cm_representative,
    equivalence_verdict,
    example_model,
    factorisation_check,
    jump_drift_discrepancy,
    novikov_bound,
    novikov_monte_carlo,
    reproduce_example,
)
from errors import InputError
from levy import JumpLaw, LevyConfig, MarkedPointSet
from spectral_core import Generator, SeriesVerdict, SpectralModel, decay_integral, hs_perturbation_integral


@pytest.fixture
def three_jumps(m1):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(31)))
    return MarkedPointSet([0.21, 0.48, 0.77], rng.standard_normal((3, m1.dim)) / np.arange(1, m1.dim + 1))


def test_direction_roles():
    forward = Direction.A_TO_A_TILDE
    assert forward.source is Generator.A and forward.target is Generator.A_TILDE
    assert forward.reverse is Direction.A_TILDE_TO_A
    assert Direction("Atilde->A").source is Generator.A_TILDE


@pytest.mark.parametrize("direction", list(Direction))
def test_representative_reproduces_discrepancy(m1, three_jumps, direction):
    b = np.linspace(1.0, 0.2, m1.dim)
    for t in np.linspace(1.0 / 16, 1.0, 16):
        lhs = cm_reconstruction(m1, direction, three_jumps, b, t)
        rhs = jump_drift_discrepancy(m1, direction, three_jumps, b, t)
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-8)


def test_representative_vanishes_without_perturbation(three_jumps):
    dim = three_jumps.dim
    n = np.arange(1, dim + 1, dtype=float)
    model = SpectralModel(a=n ** 2, a_tilde=n ** 2, q=1.0 / n ** 2)
    u = cm_representative(model, Direction.A_TO_A_TILDE, three_jumps, np.ones(dim), np.linspace(0, 1, 11))
    assert u.shape == (11, dim)
    assert np.all(u == 0.0)
    assert cm_l2_norm(model, Direction.A_TO_A_TILDE, three_jumps, np.ones(dim)).value == 0.0


@pytest.mark.parametrize("direction", list(Direction))
def test_single_jump_closed_form_matches_quadrature(m1, direction):
    mark = 1.0 / np.arange(1, m1.dim + 1)
    single = MarkedPointSet([0.3], mark[None, :])
    # a second, zero-mark jump forces the quadrature branch without changing u
    padded = MarkedPointSet([0.3, 0.6], np.vstack([mark, np.zeros(m1.dim)]))
    closed = cm_l2_norm(m1, direction, single, T=1.0)
    quad = cm_l2_norm(m1, direction, padded, T=1.0)
    assert closed.converged and quad.converged
    assert closed.value == pytest.approx(quad.value, rel=1e-8)

    coef = (m1.rates(direction.target) - m1.rates(direction.source)) / np.sqrt(m1.q)
    expected = np.sum(coef ** 2 * mark ** 2 * decay_integral(2.0 * m1.rates(direction.source), 0.7))
    assert closed.value == pytest.approx(expected, rel=1e-12)


def test_profile_norm_is_a_jump_at_time_zero(m1):
    xi = 1.0 / np.arange(1, m1.dim + 1) ** 2
    model = SpectralModel(a=m1.a, a_tilde=m1.a_tilde, q=m1.q, xi=xi)
    from_profile = cm_l2_norm(model, Direction.A_TO_A_TILDE, T=1.0)
    at_origin = cm_l2_norm(m1, Direction.A_TO_A_TILDE, MarkedPointSet([1e-300], xi[None, :]), T=1.0)
    assert from_profile.value == pytest.approx(at_origin.value, rel=1e-12)
    with pytest.raises(InputError):
        cm_l2_norm(m1, Direction.A_TO_A_TILDE, T=1.0)


def test_drift_norm_matches_quadrature(m1):
    b = np.linspace(1.0, 2.0, m1.dim)
    levy = LevyConfig(b, gaussian_enabled=True)
    expected = cm_norm_for_law(m1, Direction.A_TO_A_TILDE, levy, 1.0)
    quad = cm_l2_norm(m1, Direction.A_TO_A_TILDE, MarkedPointSet.empty(m1.dim), b, T=1.0)
    assert expected.value == pytest.approx(quad.value, rel=1e-8)


def test_drift_energy_series_branch_is_continuous():
    below, above = _drift_energy(np.array([0.999e-3, 1.001e-3]), 1.0)
    assert below == pytest.approx(above, rel=2e-6)
    assert float(_drift_energy(0.0, 2.0)) == pytest.approx(8.0 / 3.0)


def test_cm_norm_rejects_late_jump(m1):
    with pytest.raises(InputError):
        cm_l2_norm(m1, Direction.A_TO_A_TILDE, MarkedPointSet([1.5], np.ones((1, m1.dim))), T=1.0)


def test_cm_report_invariant(m1):
    verdict = SeriesVerdict(1.0, True, 8)
    with pytest.raises(ValueError):
        CMReport(Direction.A_TO_A_TILDE, verdict, np.zeros(8), representable=False)


def test_m1_equivalence_is_mutual(m1, m1_levy):
    forward = cm_report_for_law(m1, Direction.A_TO_A_TILDE, m1_levy, 1.0)
    backward = cm_report_for_law(m1, Direction.A_TILDE_TO_A, m1_levy, 1.0)
    hs = hs_perturbation_integral(m1, 1.0)
    assert forward.representable and backward.representable
    assert forward.novikov is not None and forward.novikov.satisfied
    assert "law-expected" in forward.flags
    assert equivalence_verdict(forward, backward, hs) == "mutual"
    assert equivalence_verdict(backward, forward, SeriesVerdict(math.inf, False, 3)) == "undetermined"


def test_pure_jump_noise_is_singular(m1, pure_jump_levy):
    reports = [cm_report_for_law(m1, d, pure_jump_levy, 1.0) for d in Direction]
    hs = hs_perturbation_integral(m1, 1.0)
    assert all(r.representable for r in reports)
    assert equivalence_verdict(*reports, hs) == "mutual"
    assert equivalence_verdict(*reports, hs, pure_jump_levy) == "singular"


def test_verdict_needs_both_directions(m1, m1_levy):
    forward = cm_report_for_law(m1, Direction.A_TO_A_TILDE, m1_levy, 1.0)
    hs = hs_perturbation_integral(m1, 1.0)
    with pytest.raises(InputError):
        equivalence_verdict(forward, forward, hs)


def test_pure_jump_noise_on_untouched_modes_is_equal(m1):
    # generators differ only on mode 8, which the marks never reach
    a_tilde = m1.a.copy()
    a_tilde[-1] += 1.0
    model = SpectralModel(a=m1.a, a_tilde=a_tilde, q=m1.q)
    marks = np.zeros(m1.dim)
    marks[:3] = 1.0
    levy = LevyConfig(np.zeros(m1.dim), gaussian_enabled=False, rate_lambda=2.0, jump_law=JumpLaw.point_mass(marks))
    reports = [cm_report_for_law(model, d, levy, 1.0) for d in Direction]
    assert equivalence_verdict(*reports, hs_perturbation_integral(model, 1.0), levy) == "equal"
    silent = LevyConfig.silent(m1.dim)
    reports = [cm_report_for_law(m1, d, silent, 1.0) for d in Direction]
    assert equivalence_verdict(*reports, hs_perturbation_integral(m1, 1.0), silent) == "equal"


def test_one_sided_verdict(one_sided):
    forward = cm_report(one_sided, Direction.A_TO_A_TILDE, None, None, 1.0)
    backward = cm_report(one_sided, Direction.A_TILDE_TO_A, None, None, 1.0)
    hs = SeriesVerdict(1.0, True, 64)
    assert equivalence_verdict(forward, backward, hs) == "A<<Atilde"
    assert equivalence_verdict(backward, forward, hs) == "A<<Atilde"


def test_novikov_bound_gaussian_marks(m1):
    n = np.arange(1, m1.dim + 1, dtype=float)
    law = JumpLaw.gaussian(1.0 / n)
    report = novikov_bound(m1, 1.0, law, 1.0)
    c_T = (1 - math.exp(-2.0)) / 2.0
    moment = float(np.prod((1 - c_T * m1.q / n ** 2) ** -0.5))
    assert report.C_T == pytest.approx(c_T, rel=1e-14)
    assert report.required_c == pytest.approx(c_T / 2)
    assert report.exp_moment_value == pytest.approx(moment, rel=1e-12)
    assert report.bound_value == pytest.approx(math.exp(moment - 1.0), rel=1e-12)
    assert report.satisfied
    assert report.T_star == math.inf


def test_novikov_monte_carlo_agrees_with_bound(scalar):
    law = JumpLaw.gaussian([0.5])
    report = novikov_bound(scalar, 1.0, law, 1.0)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(20240601)))
    mean, se = novikov_monte_carlo(scalar, 1.0, law, 1.0, 100_000, rng)
    assert abs(mean - report.bound_value) < 3 * se


def test_novikov_bound_heavy_tails():
    model = example_model("novikov-fails")
    report = novikov_bound(model, 1.0, JumpLaw.student_t(3.0), 1.0)
    assert not report.satisfied
    assert report.bound_value == math.inf
    assert report.moment_threshold == 0.0
    assert report.T_star == 0.0
    with pytest.raises(InputError):
        novikov_bound(model, 0.0, JumpLaw.student_t(3.0), 1.0)


def test_factorisation_diagnostic(m1):
    assert factorisation_check(m1, 1.0).converged
    assert not factorisation_check(example_model("no-factorisation"), 1.0).converged


@pytest.mark.parametrize("example_id", sorted(EXAMPLES))
def test_examples_reproduce(example_id):
    result = reproduce_example(example_id)
    assert result.reproduced, result.verdicts
    frame = result.to_frame()
    assert set(frame["criterion"]) == set(result.expected)


def test_example_witnesses():
    no_l2 = reproduce_example("no-l2")
    assert no_l2.witnesses["cm"] is not None
    assert no_l2.witnesses["hs"] is None
    one_sided = reproduce_example("one-sided")
    assert one_sided.witnesses["Atilde->A"]["index"] == 24
    assert reproduce_example("no-factorisation").companions["hs"] == "convergent"


def test_combined_table_keeps_integer_witnesses():
    table = pd.concat([reproduce_example(example_id).to_frame() for example_id in sorted(EXAMPLES)],
                      ignore_index=True)
    assert str(table["witness_n"].dtype) == "Int64"
    assert table["witness_n"].isna().any() and table["witness_n"].notna().any()
    no_l2 = table[(table["example"] == "no-l2") & (table["criterion"] == "hs")]
    assert no_l2["witness_n"].isna().all()


def test_unknown_example():
    with pytest.raises(InputError):
        example_model("nope")
