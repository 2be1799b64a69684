import math

import numpy as np
import pytest

from safecons.errors import ConfigError
from safecons.graph import CommGraph
from safecons.objectives import ObjectiveEnsemble, Quadratic
from safecons.plant import AgentSynthesis, synthesize
from safecons.protocol import (ProtocolParams, compute_beta_functions, control_law, decision_rhs,
                               derive_constants, feasibility_report, plant_constants,
                               standalone_optimizer_rhs)
from safecons.regions import Ball

from helpers import REF_K1, REF_K2_TABLE, ref_agent

REF = ProtocolParams(0.1, 0.1, 5.0, 10.0)


def test_params_validation():
    REF.validate()
    with pytest.raises(ConfigError, match=r"beta must lie in \(0,1\]"):
        ProtocolParams(0.1, 2.0, 5, 10).validate()
    with pytest.raises(ConfigError):
        ProtocolParams(0.0, 0.5, 5, 10).validate()
    with pytest.raises(ConfigError):
        ProtocolParams(float("nan"), 0.5, 5, 10)


def test_equilibrium_has_zero_rates():
    g = CommGraph.cycle(4)
    eta = np.tile([0.3, -0.2], (4, 1))
    dzeta, deta, s = decision_rhs(np.zeros((4, 2)), eta, g, REF, Ball([0, 0], 2))
    np.testing.assert_array_equal(dzeta, 0)
    np.testing.assert_allclose(deta, 0, atol=1e-16)
    np.testing.assert_array_equal(s, eta)


def test_two_agent_tracking_rate_by_hand():
    g = CommGraph.from_edges(2, [(1, 2)])
    z = np.array([[1.0, 0.0], [0.0, 0.0]])
    dzeta, _, _ = decision_rhs(z, np.zeros((2, 2)), g, ProtocolParams(0.1, 0.1, 5, 10),
                               Ball([0, 0], 2))
    np.testing.assert_allclose(dzeta[0], [-100, 0])
    np.testing.assert_allclose(dzeta[1], [100, 0])


def test_eta_rate_includes_projection_pull():
    g = CommGraph.from_edges(2, [(1, 2)])
    eta = np.array([[3.0, 0.0], [3.0, 0.0]])
    _, deta, s = decision_rhs(np.zeros((2, 2)), eta, g, ProtocolParams(1.0, 0.5, 1, 1),
                              Ball([0, 0], 2))
    np.testing.assert_allclose(s, [[2, 0], [2, 0]])
    np.testing.assert_allclose(deta, [[-0.5, 0], [-0.5, 0]])


def test_weight_scaling_invariance():
    rng = np.random.default_rng(0)
    w = rng.uniform(0.5, 1.5, (4, 4))
    w = np.triu(w, 1)
    w = w + w.T
    z, eta = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    reg = Ball([0, 0], 1.0)
    a = decision_rhs(z, eta, CommGraph(w), ProtocolParams(0.3, 0.7, 2.0, 3.0), reg)
    kappa = 4.0
    b = decision_rhs(z, eta, CommGraph(kappa * w), ProtocolParams(0.3, 0.7, 2.0 / kappa, 3.0 / kappa), reg)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, atol=1e-12)


def test_standalone_optimizer_interior_fixed_point():
    g = CommGraph(np.zeros((1, 1)))
    obj = ObjectiveEnsemble([Quadratic([0.5, 0.5])])
    dzeta, deta, s = standalone_optimizer_rhs(np.zeros((1, 2)), np.array([[0.5, 0.5]]), g, REF,
                                              Ball([0, 0], 2), obj)
    np.testing.assert_array_equal(deta, 0)
    np.testing.assert_array_equal(dzeta, 0)


def test_standalone_optimizer_disturbance_added():
    g = CommGraph(np.zeros((1, 1)))
    obj = ObjectiveEnsemble([Quadratic([0.5, 0.5])])
    _, deta, _ = standalone_optimizer_rhs(np.zeros((1, 2)), np.array([[0.5, 0.5]]), g, REF,
                                          Ball([0, 0], 2), obj, disturbance=np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(deta, [[1, 2]])


def test_control_law_examples():
    s = synthesize(ref_agent(1), np.array(REF_K1[0]))
    np.testing.assert_array_equal(control_law(s, np.zeros(3), np.zeros(2)), [0, 0])
    table = AgentSynthesis(s.agent, s.Pi, s.Psi, s.K1, np.array(REF_K2_TABLE[0]), s.P, s.c)
    np.testing.assert_allclose(control_law(table, [1, 0, 0], [1, 1]), [-1.72, 2.51], atol=1e-12)


def test_beta_functions_ref_like_by_hand():
    bf = compute_beta_functions(0.1, 1.0, 1 / 16, 1.0, 5, 0.5, 6.242640687119285)
    assert bf.b1 == pytest.approx(-0.17485281374238571, rel=1e-12)
    assert bf.b2 == pytest.approx(24.48, rel=1e-12)
    assert bf.b3 == pytest.approx(0.48, rel=1e-12)
    assert bf.b4 == pytest.approx(124.0, rel=1e-12)
    assert not bf.feasible


def test_beta_functions_second_set_by_hand():
    bf = compute_beta_functions(0.01, 2.0, 1 / 16, 2.0, 3, 0.0, 0.0)
    assert bf.b1 == pytest.approx(0.0034, rel=1e-10)
    assert bf.b2 == pytest.approx(1668.0, rel=1e-10)
    assert bf.b3 == pytest.approx(4 / 3, rel=1e-10)
    assert bf.b4 == pytest.approx(5004.0, rel=1e-10)
    assert bf.feasible


def test_beta_functions_alpha_zero():
    bf = compute_beta_functions(0.0, 1.0, 1 / 16, 1.0, 5, 0.5, 3.0)
    assert bf.b1 == 0.0 and not bf.feasible
    assert math.isinf(bf.b2) and math.isinf(bf.b4)


@pytest.mark.parametrize("alpha", [1e-3, 0.05, 0.3, 2.0])
def test_beta4_at_least_six(alpha):
    assert compute_beta_functions(alpha, 1.0, 1 / 16, 1.0, 5, 1.0, 1.0).b4 >= 6


def ref_derived(params=REF, **kw):
    syn = [synthesize(ref_agent(i), np.array(REF_K1[i - 1])) for i in range(1, 6)]
    g = CommGraph.cycle(5)
    base = dict(N=5, lambda2=g.lambda2, lambdaN=g.lambda_max, L_max=1.0, sigma=1.0,
                sigma1=1 / 16, grad_bound=6.242640687119285, M1=1 / 1.1,
                plant=plant_constants(syn), theta0_norm=1.0, envelope_gap=0.9,
                envelope_speed=0.45, xi=1.0)
    base.update(kw)
    return derive_constants(params, **base)


def test_derived_constants_hand_values():
    d = ref_derived()
    assert d.gamma["eta_edot"] == pytest.approx(0.4)
    assert d.gamma["eta_star"] == pytest.approx(5 * d.beta_fns.b4 / 2)
    assert d.v == pytest.approx(0.1 * d.gamma["eta"] / 4)
    pc = d.plant
    assert pc.D_max >= pc.P_max  # Pi contains an identity block, so ||Pi|| >= 1
    assert pc.CPi_max == pytest.approx(1.0)


def test_report_ref_uncertified_with_all_items():
    rep = feasibility_report(ref_derived(), schedule_rate=0.5)
    names = [it.name for it in rep.items]
    for n in ("beta_range", "k1", "k2_a", "k2_b", "k2_c", "interconnection_beta", "small_gain",
              "barrier_beta"):
        assert n in names
    assert not rep.certified
    assert not rep["beta1_alpha_positive"].passed
    assert rep.info["schedule_rate_within_v"] is False
    d = rep.to_dict()
    assert d["certified"] is False and len(d["items"]) == len(rep.items)


def test_report_beta_two_and_k1_zero():
    rep = feasibility_report(ref_derived(ProtocolParams(0.1, 2.0, 5, 10)))
    assert not rep["beta_range"].passed
    rep = feasibility_report(ref_derived(ProtocolParams(0.1, 0.1, 0.0, 10)))
    assert rep["k1"].lhs == -3 and not rep["k1"].passed


def test_large_gains_certify():
    rep = feasibility_report(ref_derived(ProtocolParams(1e-3, 1e-30, 1e6, 1e20)))
    assert rep.certified, [(i.name, i.lhs, i.rhs) for i in rep.items if not i.passed]


def test_moderate_large_gains_fail_k2c_for_any_alpha_and_beta():
    """k1 = 1e6, k2 = 1e9 cannot satisfy the third k2 inequality.

    Its left side is at least 8 N (6 lambda_N^2 k1^2) / k2 ~ 3e6 while the
    right side is at most 1/8.
    """
    for alpha in (1e-4, 1e-3, 0.1):
        for beta in (1e-12, 1e-6, 0.5):
            rep = feasibility_report(ref_derived(ProtocolParams(alpha, beta, 1e6, 1e9)))
            assert not rep["k2_c"].passed
            assert rep["k2_c"].lhs > 1e6


def test_report_never_raises_on_degenerate_input():
    rep = feasibility_report(ref_derived(ProtocolParams(0.0, 0.1, 5, 10)))
    assert not rep["beta1_alpha_positive"].passed
    assert not rep.certified
