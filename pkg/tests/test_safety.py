from types import SimpleNamespace

import numpy as np
import pytest

from safecons.regions import Ball
from safecons.safety import (cbf_condition_check, cbf_value, output_safety_check, safety_report,
                             state_zone_check)
from safecons.scenario import bundled_scenario_path, parse_scenario, read_scenario_json
from safecons.simulator import integrate_closed_loop, synthesize_all


def fake_syn(n=2, P=None, C=None):
    P = np.eye(n) if P is None else np.asarray(P, float)
    C = np.eye(n) if C is None else np.asarray(C, float)
    return SimpleNamespace(Pi=np.eye(n), P=P, lambda_min_P=float(np.linalg.eigvalsh(P)[0]),
                           agent=SimpleNamespace(C=C))


def test_cbf_value_by_hand():
    syn = [fake_syn(), fake_syn(P=np.diag([2.0, 1.0]))]
    x = [np.array([0.3162277660168379, 0.0]), np.array([0.5, 0.0])]
    s = [np.zeros(2), np.zeros(2)]
    # 0.5 - 0.1 + 0.5 - 2 * 0.25
    assert cbf_value(x, s, syn, 0.5) == pytest.approx(0.4, abs=1e-12)


def test_state_zone_margin_by_hand():
    inside, m = state_zone_check([0.8, 0.0], [0.0, 0.0], fake_syn(), 1.0)
    assert inside and m == pytest.approx(0.2)
    inside, m = state_zone_check([1.2, 0.0], [0.0, 0.0], fake_syn(), 1.0)
    assert not inside and m == pytest.approx(-0.2)


def test_state_zone_with_zero_radius():
    inside, _ = state_zone_check([1e-12, 0.0], [0.0, 0.0], fake_syn(), 0.0)
    assert not inside
    inside, _ = state_zone_check([0.0, 0.0], [0.0, 0.0], fake_syn(), 0.0)
    assert inside


@pytest.mark.parametrize("y,expected", [([0.0, 0.0], 2.0), ([2.0, 0.0], 0.0), ([2.1, 0.0], -0.1)])
def test_output_margins_by_hand(y, expected):
    out = output_safety_check(y, [0.0, 0.0], Ball([0, 0], 2.0), 3.0)
    assert out.margin_omega == pytest.approx(expected, abs=1e-12)
    assert out.in_omega == (expected >= 0)


def test_ball_margin_by_hand():
    out = output_safety_check([0.3, 0.4], [0.0, 0.0], Ball([0, 0], 2.0), 0.4)
    assert out.margin_ball == pytest.approx(-0.1)
    assert not out.in_ball


def test_cbf_condition_constant_barrier():
    t = np.linspace(0, 1, 11)
    c = cbf_condition_check(t, np.full(11, 2.0), 0.5)
    np.testing.assert_allclose(c.residuals, 1.0)
    assert c.violation_fraction == 0.0


def test_cbf_condition_on_exact_decay_is_near_zero():
    a = 0.7
    t = np.linspace(0, 5, 50001)
    c = cbf_condition_check(t, np.exp(-a * t), a)
    assert abs(c.min_residual) < 1e-4


def test_cbf_condition_detects_faster_decay():
    t = np.linspace(0, 1, 1001)
    c = cbf_condition_check(t, np.exp(-2.0 * t), 0.5)
    assert c.violation_fraction == 1.0
    assert c.min_residual == pytest.approx(-1.5, abs=1e-2)


@pytest.fixture(scope="module")
def short_run():
    raw = read_scenario_json(bundled_scenario_path("five_agent_ball"))
    raw["integration"]["horizon"] = 1.0
    cfg = parse_scenario(raw)
    syn = synthesize_all(cfg)
    return integrate_closed_loop(cfg, syn), syn


def test_corrupted_sample_is_flagged_at_its_time(short_run):
    tr, syn = short_run
    assert safety_report(tr, syn).safe
    k = 37
    tr2 = SimpleNamespace(**vars(tr))
    tr2.margin_omega = tr.margin_omega.copy()
    tr2.margin_omega[k, 2] = -1e-6
    rep = safety_report(tr2, syn)
    assert rep.first_violation_t == pytest.approx(tr.times[k])
    assert not rep.safe


def test_report_summary_keys(short_run):
    tr, syn = short_run
    rep = safety_report(tr, syn)
    s = rep.summary()
    assert set(s) == {"min_margin_omega", "min_margin_ball", "min_margin_zone", "cbf_min",
                      "cbf_condition_min_residual", "first_violation_t"}
    assert rep.cbf.a == pytest.approx(min(x.c for x in syn) / 8)


def test_implication_chain_logic():
    K, N = 3, 2
    ones = np.ones((K, N), bool)
    rep = safety_report.__globals__["SafetyReport"](
        np.arange(K), ones.copy(), ones.copy(), ones.copy(), np.zeros((K, N)),
        np.zeros((K, N)), np.zeros((K, N)), np.zeros(K), None)
    assert rep.implication_chain_holds()
    rep.in_ball[1, 0] = False
    assert not rep.implication_chain_holds()
    rep.in_state_zone[1, 0] = False
    assert rep.implication_chain_holds()
