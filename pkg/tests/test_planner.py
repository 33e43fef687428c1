import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slungload.evaluation import square_trajectory
from slungload.model import SystemParams, hover_state, linearize_hover, to_deviation
from slungload.planner import (
    PlannerConfig, SparseReference, contouring_weights, plan, plan_open_loop, replan_tick,
    stage_weights,
)
from slungload.simulator import ScenarioConfig, SensorConfig, run_closed_loop

P = SystemParams()
LM = linearize_hover(P)
CFG = PlannerConfig()


def _hover_at(payload):
    return to_deviation(hover_state(P, np.asarray(payload, dtype=float) + [0, 0, P.l]), P)


# ---------------------------------------------------------------- weights

def test_weight_examples():
    assert contouring_weights([3.0], [3.0], 0.25)[0] == 1.0
    assert contouring_weights([3.0], [3.25], 0.25)[0] == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert contouring_weights([3.0], [3.25], 0.25)[0] == pytest.approx(0.606531, abs=1e-6)
    w = contouring_weights([0.0, 2.0], [0.8], 0.25)[0]
    assert w == pytest.approx(np.exp(-5.12), rel=1e-12)
    with pytest.raises(ValueError):
        contouring_weights([0.0], [0.0], 0.0)


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=8), st.floats(-30, 30),
       st.floats(0.01, 5.0))
def test_weights_in_unit_interval(ref_t, t, sigma):
    w = contouring_weights(ref_t, [t], sigma)[0]
    assert 0.0 <= w <= 1.0
    nearest = min(abs(r - t) for r in ref_t)
    assert w == pytest.approx(np.exp(-nearest**2 / (2 * sigma**2)), rel=1e-12, abs=1e-300)


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0.05, 2.0))
def test_weight_decreases_with_distance(a, b, sigma):
    near, far = sorted((a, b))
    w = contouring_weights([0.0], [near, far], sigma)
    assert w[0] >= w[1]


def test_stage_weights_hold_outside_span():
    ref = SparseReference([2.0, 4.0], [[0, 0, 0], [1, 0, 0]])
    w = stage_weights(ref, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 0.25)
    assert np.array_equal(w[[0, 1, 2, 4, 5]], np.ones(5))
    assert w[3] == pytest.approx(np.exp(-8.0))


# ---------------------------------------------------------------- references

def test_sparse_reference_lookup():
    ref = SparseReference([0.0, 2.0, 4.0], [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    assert np.array_equal(ref.zoh([-1.0, 0.0, 1.9, 2.0, 9.0])[:, 0], [0, 0, 0, 1, 2])
    assert np.array_equal(ref.nearest([-1.0, 0.9, 1.0, 1.1, 3.5, 9.0])[:, 0], [0, 0, 0, 1, 2, 2])
    for bad in (([0.0, 0.0], [[0, 0, 0]] * 2), ([0.0, 1.0, 3.0], [[0, 0, 0]] * 3), ([], [])):
        with pytest.raises(ValueError):
            SparseReference(*bad)


def test_config_validation():
    for kw in ({"sigma": 0}, {"N": 0}, {"t_plan": -1}, {"target": "latest"}):
        with pytest.raises(ValueError):
            PlannerConfig(**kw)
    assert CFG.N * CFG.dt == pytest.approx(15.0)


# ---------------------------------------------------------------- plans

def test_hover_plan_is_constant():
    p0 = np.array([1.0, -2.0, 3.0])
    ref = SparseReference([0.0], [p0])
    out = plan(_hover_at(p0), np.zeros(3), ref, CFG, LM)
    assert len(out) == CFG.N + 1
    assert np.max(np.abs(out.positions - p0)) < 1e-3


def test_large_sigma_matches_uniform_weights():
    ref = square_trajectory(2.0)
    cfg = dataclasses.replace(CFG, sigma=10.0)
    x0 = _hover_at(ref.positions[0])
    a = plan(x0, np.zeros(3), ref, cfg, LM, t_start=-1.0)
    b = plan(x0, np.zeros(3), ref, cfg, LM, t_start=-1.0, weights=np.ones(cfg.N + 1))
    assert np.max(np.abs(a.positions - b.positions)) < 1e-3


@pytest.mark.parametrize("dt", [1.5, 2.0, 2.5])
def test_open_loop_plan_respects_soft_bounds(dt):
    ref = square_trajectory(dt)
    ol = plan_open_loop(_hover_at(ref.positions[0]), ref, CFG, LM, t_start=ref.start - 5.0)
    X = ol.states
    assert np.abs(X[:, 5:8]).max() <= CFG.controller.v_bound + 1e-3
    assert np.abs(X[:, 10:12]).max() <= CFG.tilt_bound + 1e-3
    assert np.abs(X[:, 13:15]).max() <= CFG.tilt_bound + 1e-3
    assert ol.end >= ref.end + CFG.tail - 1e-9


def _max_waypoint_miss(sigma):
    ref = SparseReference(3.0 * np.arange(5), [[0, 0, 2], [1, 0, 2], [1, 1, 2], [0, 1, 2], [0, 0, 2]])
    ol = plan_open_loop(_hover_at(ref.positions[0]), ref, dataclasses.replace(CFG, sigma=sigma), LM)
    hit = ol.sample(ref.times).positions
    return np.linalg.norm(hit - ref.positions, axis=1).max()


def test_small_sigma_hits_waypoints():
    small = _max_waypoint_miss(0.05)
    assert small < 0.01
    for sigma in (0.25, 0.5, 1.0):
        assert small < _max_waypoint_miss(sigma)


def test_plan_deterministic():
    ref = square_trajectory(2.0)
    x0 = _hover_at(ref.positions[0])
    a = plan_open_loop(x0, ref, CFG, LM)
    b = plan_open_loop(x0, ref, CFG, LM)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.inputs, b.inputs)


def test_replan_timestamps_and_zero_lead():
    ref = square_trajectory(2.0)
    x0 = _hover_at(ref.positions[0])
    pred = np.concatenate([x0, np.zeros(3)])
    out = replan_tick(pred, 3.0, ref, CFG, LM)
    assert out.start == pytest.approx(4.0)
    assert np.allclose(np.diff(out.times), CFG.dt)
    direct = plan(x0, np.zeros(3), ref, CFG, LM, t_start=3.0)
    same = replan_tick(pred, 3.0, ref, dataclasses.replace(CFG, t_plan=0.0), LM)
    assert np.array_equal(same.positions, direct.positions)


@pytest.mark.slow
def test_consecutive_plans_overlap():
    # slow circle of radius 2 m, one waypoint per second
    t = np.arange(13.0)
    pos = np.column_stack([2 * np.cos(t * np.pi / 6), 2 * np.sin(t * np.pi / 6), 2 + 0 * t])
    sc = ScenarioConfig(reference=SparseReference(t, pos), duration=12.0,
                        sensor=SensorConfig(pos_noise_std=0.0, att_noise_std=0.0), feedback="truth")
    log = run_closed_loop(sc)
    assert len(log.plans) == 13  # t = 0, 1, ..., 12
    for a, b in zip(log.plans, log.plans[1:]):
        shared = b.times[b.times <= a.end]
        gap = np.abs(a.sample(shared).positions - b.sample(shared).positions).max()
        assert gap < 0.5
