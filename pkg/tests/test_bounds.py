import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from saddlerb.bounds import (best_constrained_velocity_error, bound_report, check_effectivity_order,
                             delta_babuska, delta_p_general, delta_p_sym, delta_tilde_beta_pair,
                             delta_u_energy, delta_u_general, delta_u_sym, effectivities,
                             effectivity, evaluate, verify_apriori)
from saddlerb.constants import ConstantBounds, ExactConstants
from saddlerb.errors import InfeasibleConstraint, NonpositiveConstant, ZeroError
from saddlerb.online import online_solve


def const(alpha, gamma, beta, gamma_b=1.0, beta_ba=math.nan, tilde=math.nan):
    return ConstantBounds(alpha, alpha, gamma, gamma, gamma_b, beta, beta, beta_ba, tilde)


C = const(0.5, 2.0, 0.1, beta_ba=0.05, tilde=0.08)


def test_bound_formulas_hand_computed():
    r1, r2 = 0.3, 0.02
    assert delta_u_sym(r1, r2, C) == pytest.approx(1.0, rel=1e-14)
    assert delta_p_sym(r1, r2, C) == pytest.approx(13.0, rel=1e-14)
    assert delta_u_energy(r1, r2, C) == pytest.approx(0.5 * math.sqrt(2.0), rel=1e-14)
    assert delta_u_general(r1, r2, C) == pytest.approx(1.6, rel=1e-14)
    assert delta_p_general(r1, r2, C) == pytest.approx(35.0, rel=1e-14)
    assert delta_babuska(r1, r2, 0.05) == pytest.approx(math.hypot(0.3, 0.02) / 0.05, rel=1e-14)
    du, dp = delta_tilde_beta_pair(0.2, r2, 0.08)
    assert du == pytest.approx(0.45) and dp == pytest.approx(5.0 + 3.125)
    rep = bound_report(r1, r2, C, [0.3, 0.3], 1, 3, r1_energy=0.2)
    assert rep.delta_sym == pytest.approx(math.hypot(1.0, 13.0))
    assert rep.delta_br == pytest.approx(math.hypot(1.6, 35.0))
    assert rep.delta_u_tilde == pytest.approx(0.45)


positive = st.floats(1e-3, 1e3)


@given(st.floats(1e-8, 1.0), st.floats(1e-8, 1.0), positive, st.floats(1.0, 50.0), positive)
@settings(max_examples=200, deadline=None)
def test_symmetric_bounds_strictly_below_general_ones(r1, r2, alpha, ratio, beta):
    c = const(alpha, alpha * ratio, beta)
    assert delta_u_sym(r1, r2, c) < delta_u_general(r1, r2, c)
    assert delta_p_sym(r1, r2, c) < delta_p_general(r1, r2, c)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), positive, st.floats(1.0, 50.0), positive)
@settings(max_examples=100, deadline=None)
def test_bounds_scale_linearly_in_residuals(r1, r2, alpha, ratio, beta):
    assume(r1 + r2 > 0)
    c = const(alpha, alpha * ratio, beta)
    for fn in (delta_u_sym, delta_p_sym, delta_u_energy, delta_u_general, delta_p_general):
        assert fn(2 * r1, 2 * r2, c) == pytest.approx(2 * fn(r1, r2, c), rel=1e-12)


@pytest.mark.parametrize("bad", [const(0.0, 1.0, 0.1), const(0.5, 1.0, -0.1), const(0.5, 0.0, 0.1)])
def test_nonpositive_constants_rejected(bad):
    with pytest.raises(NonpositiveConstant):
        delta_u_sym(0.1, 0.1, bad)
    with pytest.raises(NonpositiveConstant):
        delta_babuska(0.1, 0.1, 0.0)


def test_effectivity_zero_error():
    with pytest.raises(ZeroError):
        effectivity(1.0, 0.0)
    assert effectivity(3.0, 1.5) == 2.0


def test_rigor_and_ordering_on_small_space(disc, greedy_v1):
    space, model, _ = greedy_v1
    ev = ExactConstants(disc)
    for mu in disc.domain.sample(4, 11):
        c = ev(mu, babuska=True, tilde=True)
        for n in range(1, model.generations + 1):
            rep = evaluate(model, mu, n, c, disc, space, with_errors=True, energy=True)
            e = rep.errors
            tight = 1 + 1e-10
            assert e.eu_x <= rep.delta_u_sym * tight
            assert e.eu_energy <= rep.delta_u_energy * tight
            assert e.ep_y <= rep.delta_p_sym * tight
            assert e.e_z <= rep.delta_sym * tight
            assert e.e_z <= rep.delta_ba * tight
            assert e.eu_energy <= rep.delta_u_tilde * tight
            assert e.ep_y <= rep.delta_p_tilde * tight
            assert rep.delta_sym < rep.delta_br
            assert check_effectivity_order(rep)
            assert all(v >= 1 - 1e-10 for v in rep.eta.values() if v == v)


def test_effectivities_nan_for_exact_reproduction(disc, greedy_v1):
    space, model, _ = greedy_v1
    mu = space.mus[0]
    rep = evaluate(model, mu, model.generations, ExactConstants(disc)(mu), disc, space,
                   with_errors=True)
    assert all(math.isnan(v) for v in rep.eta.values())
    with pytest.raises(ValueError):
        effectivities(bound_report(0.1, 0.1, C))


def test_apriori_estimates_hold(disc, greedy_v1):
    space, model, _ = greedy_v1
    ev = ExactConstants(disc)
    for mu in disc.domain.sample(3, 21):
        for n in (1, model.generations):
            rec = verify_apriori(disc, space, model, mu, n, ev(mu))
            assert rec.holds, rec


def test_constrained_best_approximation_infeasible(disc, greedy_v1):
    space, _, _ = greedy_v1
    mu = np.array([0.4, 0.4])
    # more pressure than velocity modes: B_N cannot have full row rank
    with pytest.raises(InfeasibleConstraint):
        best_constrained_velocity_error(disc, space, 1, 3, mu, np.zeros(disc.X.shape[0]))


def test_online_evaluation_without_errors(greedy_v1):
    _, model, _ = greedy_v1
    mu = np.array([0.33, 0.44])
    rep = evaluate(model, mu, 2, C)
    sol = online_solve(model, mu, 2)
    assert rep.n_z == sol.n_z and rep.errors is None and rep.eta == {}


@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0), positive, st.floats(1.0, 50.0), positive,
       st.floats(1.01, 4.0))
@settings(max_examples=100, deadline=None)
def test_bounds_monotone_in_constants(r1, r2, alpha, ratio, beta, s):
    c = const(alpha, alpha * ratio, beta)
    worse = [const(alpha / s, alpha * ratio, beta), const(alpha, alpha * ratio * s, beta),
             const(alpha, alpha * ratio, beta / s)]
    for w in worse:
        for fn in (delta_u_sym, delta_p_sym, delta_u_general, delta_p_general):
            assert fn(r1, r2, w) >= fn(r1, r2, c)


def test_energy_bound_dominates_tilde_bound(disc, greedy_v1):
    _, model, _ = greedy_v1
    ev = ExactConstants(disc)
    for mu in disc.domain.sample(4, 13):
        c = ev(mu, tilde=True)
        for n in range(0, model.generations + 1):
            rep = evaluate(model, mu, n, c, disc, greedy_v1[0], energy=True)
            assert rep.delta_u_tilde <= rep.delta_u_energy * (1 + 1e-10)


def test_true_error_components(disc, greedy_v1):
    space, model, _ = greedy_v1
    mu = np.array([0.31, 0.52])
    rep = evaluate(model, mu, 2, ExactConstants(disc)(mu), disc, space, with_errors=True)
    e = rep.errors
    assert e.e_z ** 2 == pytest.approx(e.eu_x ** 2 + e.ep_y ** 2, rel=1e-12)


def test_apriori_factors_use_the_constants(disc, greedy_v1):
    space, model, _ = greedy_v1
    mu = np.array([0.44, 0.29])
    c = ExactConstants(disc)(mu)
    rec = verify_apriori(disc, space, model, mu, model.generations, c)
    assert (rec.alpha, rec.gamma, rec.gamma_b) == (c.alpha_lb, c.gamma_ub, c.gamma_b_ub)
    assert rec.beta_n == pytest.approx(model.infsup(mu, model.generations), rel=1e-10)
    root = math.sqrt(rec.gamma / rec.alpha)
    assert rec.rhs_u == pytest.approx(2 * root * rec.inf_u + rec.gamma_b / rec.alpha * rec.inf_p,
                                      rel=1e-10)
    expected_p = ((1 + rec.gamma_b / rec.beta_n * (1 + root)) * rec.inf_p
                  + 2 * rec.gamma / rec.beta_n * rec.inf_u)
    assert rec.rhs_p == pytest.approx(expected_p, rel=1e-10)
