import copy
import math

import numpy as np
import pytest

from safecons.errors import ConfigError, DivergenceError
from safecons.objectives import ObjectiveEnsemble, Quadratic
from safecons.protocol import standalone_optimizer_rhs
from safecons.regions import Ball, Box
from safecons.scenario import bundled_scenario_path, load_scenario, parse_scenario, read_scenario_json
from safecons.simulator import (_Dynamics, centralized_oracle, convergence_metrics, initial_states,
                                integrate_closed_loop, synthesize_all, theta_norms,
                                time_varying_oracle)


def raw(name):
    return read_scenario_json(bundled_scenario_path(name))


def short(name, horizon, **integ):
    r = raw(name)
    r["integration"].update(horizon=horizon, **integ)
    return parse_scenario(r)


def test_equilibrium_is_stationary():
    r = raw("interior")
    target = [0.3, 0.2]
    r["objectives"] = [{"type": "quadratic", "target": target}] * 5
    r["initial"]["outputs"] = [target] * 5
    r["integration"].update(horizon=100.0, output_stride=250)
    cfg = parse_scenario(r)
    tr = integrate_closed_loop(cfg)
    np.testing.assert_allclose(tr.y_star, target, atol=1e-12)
    assert np.max(np.abs(tr.y - np.array(target))) <= 1e-8
    assert np.max(np.abs(tr.eta - np.array(target))) <= 1e-8
    assert np.max(np.abs(tr.zeta)) <= 1e-8
    for x0, xs in zip(initial_states(cfg, synthesize_all(cfg)), tr.x):
        assert np.max(np.abs(xs - x0)) <= 1e-8


def test_runs_are_bitwise_deterministic():
    a = integrate_closed_loop(short("five_agent_ball", 1.0))
    b = integrate_closed_loop(short("five_agent_ball", 1.0))
    for k in ("y", "z", "eta", "s", "h"):
        assert np.array_equal(getattr(a, k), getattr(b, k))


def test_output_sample_count_with_unaligned_final_step():
    cfg = short("interior", 0.1, step=0.004, output_stride=10)
    tr = integrate_closed_loop(cfg)
    assert cfg.n_steps == 25
    np.testing.assert_allclose(tr.times, [0, 0.04, 0.08, 0.1])


def test_tracking_sum_conserved():
    tr = integrate_closed_loop(short("five_agent_ball", 3.0))
    assert np.max(tr.grad_sum_residual) <= 1e-10
    np.testing.assert_allclose(tr.zeta.sum(axis=1), 0, atol=1e-10)


def test_lean_rhs_matches_reference_rhs():
    cfg = parse_scenario(raw("optimizer_only"))
    dyn = _Dynamics(cfg, None)
    rng = np.random.default_rng(3)
    N, p = cfg.N, cfg.p
    for _ in range(5):
        zeta, eta = rng.normal(size=(N, p)), 2.5 * rng.normal(size=(N, p))
        w = np.concatenate([zeta.ravel(), eta.ravel()])
        dw = dyn(0.0, w)
        dz, de, _ = standalone_optimizer_rhs(zeta, eta, cfg.graph, cfg.params, cfg.region,
                                             cfg.objectives)
        np.testing.assert_allclose(dw[:N * p], dz.ravel(), atol=1e-10)
        np.testing.assert_allclose(dw[N * p:], de.ravel(), atol=1e-10)


def test_substep_flag_changes_boundary_runs_only_slightly():
    base = short("boundary_stress", 2.0)
    r = raw("boundary_stress")
    r["integration"].update(horizon=2.0, substep_on_boundary=True)
    sub = parse_scenario(r)
    a, b = integrate_closed_loop(base), integrate_closed_loop(sub)
    assert a.y.shape == b.y.shape
    assert np.max(np.abs(a.y - b.y)) < 1e-3


def test_zero_padded_initial_state():
    r = raw("five_agent_ball")
    r["initial"]["state_rule"] = "zero_padded"
    cfg = parse_scenario(r)
    xs = initial_states(cfg, synthesize_all(cfg))
    for i, x in enumerate(xs):
        np.testing.assert_allclose(x, np.r_[cfg.y0[i], 0.0], atol=1e-12)


def test_regulator_initial_state_gives_requested_outputs():
    cfg = parse_scenario(raw("five_agent_ball"))
    syn = synthesize_all(cfg)
    for i, (x, s) in enumerate(zip(initial_states(cfg, syn), syn)):
        np.testing.assert_allclose(s.agent.C @ x, cfg.y0[i], atol=1e-12)


def test_divergence_raises_with_time():
    cfg = short("interior", 10.0, step=0.05)
    with pytest.raises(DivergenceError) as info:
        integrate_closed_loop(cfg)
    assert 0 < info.value.t <= 10.0


def test_eta_outside_region_rejected():
    r = raw("five_agent_ball")
    r["initial"]["eta"] = [[5.0, 5.0]] * 5
    with pytest.raises(ConfigError, match="interior"):
        integrate_closed_loop(parse_scenario(r))


def test_oracle_ref_projects_centroid():
    cfg = parse_scenario(raw("five_agent_ball"))
    res = centralized_oracle(cfg.objectives, cfg.region)
    np.testing.assert_allclose(res.y, [math.sqrt(2), math.sqrt(2)], atol=1e-9)
    assert res.residual <= 1e-10


def test_oracle_box_against_grid():
    obj = ObjectiveEnsemble([Quadratic([2.0, 0.0]), Quadratic([0.0, 2.0]), Quadratic([1.0, 1.0])])
    box = Box([-1.0, -1.0], [0.5, 0.5])
    res = centralized_oracle(obj, box)
    np.testing.assert_allclose(res.y, [0.5, 0.5], atol=1e-9)
    g = np.linspace(-1, 0.5, 301)
    G = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    vals = np.array([obj.value(y) for y in G])
    assert res.value <= vals.min() + 1e-12
    np.testing.assert_allclose(G[np.argmin(vals)], res.y, atol=1e-2)


def test_time_varying_oracle_at_start_and_derivative():
    cfg = parse_scenario(raw("five_agent_ball"))
    y, dy = time_varying_oracle(cfg.objectives, cfg.schedule, 0.0)
    np.testing.assert_allclose(y, 1.1 * np.ones(2) / math.sqrt(2), atol=1e-9)
    # radius R - 0.9 e^{-0.5 t}: speed 0.45 along the diagonal
    np.testing.assert_allclose(np.linalg.norm(dy), 0.45, rtol=1e-6)


def test_metrics_on_converging_run():
    cfg = parse_scenario(raw("optimizer_only"))
    cfg.horizon = 10.0
    tr = integrate_closed_loop(cfg)
    m = convergence_metrics(tr)
    assert m["final_gap"] == pytest.approx(tr.max_gap()[-1])
    assert m["log_slope"] < 0
    assert m["min_margin"] >= -1e-9
    th = theta_norms(tr, cfg)
    assert th.shape == tr.times.shape and th[-1] < th[0]


def test_time_to_threshold_semantics():
    from safecons.simulator import _time_to
    t = np.arange(5.0)
    assert _time_to(t, np.array([1, 0.05, 0.2, 0.05, 0.01]), 0.1) == 3.0
    assert _time_to(t, np.array([1, 1, 1, 1, 1.0]), 0.1) is None
    assert _time_to(t, np.full(5, 0.01), 0.1) == 0.0
