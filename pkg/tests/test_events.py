import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventforge.events import (
    EPS_LOG,
    EventStream,
    SimulatorState,
    sample_thresholds,
    simulate_stereo,
    step,
    subdivision_level,
)
from eventforge.geometry import Pose, relative_pose, shifted_eye
from eventforge.render import SceneSpec, flow_from_depth, make_test_scene, render
from eventforge.trajectory import local_trajectory


def gray(values):
    v = np.asarray(values, dtype=np.float64)
    return np.repeat(v[..., None], 3, axis=-1)


def dense_time_oracle(l_ref, l0, l1, c, t0, t1):
    """Sample L(t) every microsecond and fire whenever it has reached the next level."""
    events = []
    ref = l_ref
    for t in range(t0 + 1, t1 + 1):
        lt = l0 + (l1 - l0) * (t - t0) / (t1 - t0)
        while lt >= ref + c - 1e-9 * c:
            ref += c
            events.append((t, 1))
        while lt <= ref - c + 1e-9 * c:
            ref -= c
            events.append((t, -1))
    return events


# ---------------------------------------------------------------- subdivision


@pytest.mark.parametrize("fmax,n", [(0.5, 0), (5.0, 3), (8.0, 3), (1.0, 0), (8.01, 4)])
def test_subdivision_examples(fmax, n):
    flow = np.zeros((4, 4, 2))
    flow[1, 2] = (fmax * 0.6, fmax * 0.8)
    assert subdivision_level(flow) == n


def test_subdivision_ignores_invalid():
    flow = np.full((3, 3, 2), np.nan)
    assert subdivision_level(flow) == 0
    flow[0, 0] = (3.0, 0.0)
    assert subdivision_level(flow) == 2
    assert subdivision_level(np.zeros((0, 0, 2))) == 0


# ---------------------------------------------------------------- step


def ramp_state(i0, c):
    return SimulatorState.from_frame(gray(i0), c)


def test_three_threshold_rise():
    c = 0.2
    i0 = np.full((1, 1), 0.2)
    i1 = (i0 + EPS_LOG) * np.exp(3 * c) - EPS_LOG
    state = ramp_state(i0, c)
    ev = step(state, gray(i0), gray(i1), 0, 300)
    assert ev["t"].tolist() == [100, 200, 300]
    assert ev["p"].tolist() == [1, 1, 1]
    assert state.log_ref[0, 0] == pytest.approx(np.log(0.2 + EPS_LOG) + 3 * c)


def test_three_threshold_fall():
    c = 0.2
    i0 = np.full((1, 1), 0.8)
    i1 = (i0 + EPS_LOG) * np.exp(-3 * c) - EPS_LOG
    ev = step(ramp_state(i0, c), gray(i0), gray(i1), 0, 300)
    assert ev["t"].tolist() == [100, 200, 300]
    assert ev["p"].tolist() == [-1, -1, -1]


def test_no_change_no_events(rng):
    f = rng.uniform(size=(8, 8, 3))
    state = SimulatorState.from_frame(f, 0.2)
    assert len(step(state, f, f, 0, 1000)) == 0


def test_mismatched_shapes_rejected():
    state = SimulatorState.from_frame(gray(np.ones((2, 2))), 0.2)
    with pytest.raises(ValueError):
        step(state, gray(np.ones((2, 2))), gray(np.ones((2, 3))), 0, 10)
    with pytest.raises(ValueError):
        step(state, gray(np.ones((2, 2))), gray(np.ones((2, 2))), 10, 10)


def test_thresholds_must_be_positive():
    with pytest.raises(ValueError):
        SimulatorState(np.zeros((2, 2)), 0.0, 0.1)


def test_matches_dense_time_oracle_64x64(rng):
    shape = (64, 64)
    c = sample_thresholds(rng, shape)
    f0 = rng.uniform(0.02, 1.0, shape)
    f1 = rng.uniform(0.02, 1.0, shape)
    state = SimulatorState.from_frame(gray(f0), c)
    ref0 = state.log_ref.copy()
    t0, t1 = 1000, 1250
    ev = step(state, gray(f0), gray(f1), t0, t1)
    l0, l1 = np.log(f0 + EPS_LOG), np.log(f1 + EPS_LOG)

    got = {}
    for e in ev:
        got.setdefault((int(e["y"]), int(e["x"])), []).append((int(e["t"]), int(e["p"])))
    mismatches = 0
    for y in range(64):
        for x in range(64):
            want = dense_time_oracle(ref0[y, x], l0[y, x], l1[y, x], c[y, x], t0, t1)
            assert len(got.get((y, x), [])) == len(want) == int(abs(l1[y, x] - l0[y, x]) // c[y, x])
            mismatches += got.get((y, x), []) != want
    assert mismatches == 0


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.01, 1.0),
    st.floats(0.01, 1.0),
    st.floats(0.05, 0.5),
    st.integers(1, 5000),
)
def test_count_matches_threshold_oracle(i0, i1, c, dt):
    state = SimulatorState.from_frame(gray([[i0]]), c)
    ev = step(state, gray([[i0]]), gray([[i1]]), 0, dt)
    dl = np.log(i1 + EPS_LOG) - np.log(i0 + EPS_LOG)
    expected = int(np.floor(abs(dl) / c + 1e-9))
    assert len(ev) == expected
    if expected:
        assert np.all(ev["p"] == np.sign(dl))
        assert np.all(np.diff(ev["t"].astype(np.int64)) >= 0)
        assert ev["t"].min() >= 1 and ev["t"].max() <= dt


def test_polarity_swap_under_log_reciprocal():
    c = 0.15
    f0 = np.linspace(0.1, 0.9, 16).reshape(4, 4)
    f1 = np.clip(f0 * 1.9, 0, 1)
    inv = lambda f: 1.0 / (f + EPS_LOG) - EPS_LOG  # negates the log intensity
    a = step(SimulatorState.from_frame(gray(f0), c), gray(f0), gray(f1), 0, 500)
    b = step(SimulatorState.from_frame(gray(inv(f0)), c), gray(inv(f0)), gray(inv(f1)), 0, 500)
    assert len(a) == len(b) > 0
    np.testing.assert_array_equal(a["t"], b["t"])
    np.testing.assert_array_equal(a["x"], b["x"])
    np.testing.assert_array_equal(a["p"], -b["p"])


def test_step_output_order(rng):
    f0 = rng.uniform(size=(16, 16, 3))
    f1 = rng.uniform(size=(16, 16, 3))
    ev = step(SimulatorState.from_frame(f0, 0.1), f0, f1, 0, 50)
    key = ev["t"].astype(np.int64) * 10**6 + ev["y"].astype(np.int64) * 1000 + ev["x"]
    assert np.all(np.diff(key) >= 0)


def test_sample_thresholds_range(rng):
    c = sample_thresholds(rng, (100, 100))
    assert c.min() >= 0.15 and c.max() <= 0.25
    assert abs(c.mean() - 0.2) < 0.005
    with pytest.raises(ValueError):
        sample_thresholds(rng, (2, 2), 0.3, 0.2)


# ---------------------------------------------------------------- simulate_stereo


@pytest.fixture
def sweep():
    return local_trajectory(Pose.identity(), [0.2, 0.0, 0.0])


def test_zero_length_window_no_events(wall, rig, sweep):
    res = simulate_stereo(wall, sweep, rig, 0.03, 10_000, tau_range=(0.5, 0.5))
    assert len(res.left) == 0 and len(res.right) == 0
    assert len(res.keyframes) == 1


def test_wall_keyframe_disparity_constant(wall, rig, sweep):
    res = simulate_stereo(wall, sweep, rig, 0.25, 20_000, keyframes="all", rng=np.random.default_rng(0))
    assert len(res.keyframes) == 4
    expected = rig.baseline * rig.camera.fx / 2.0
    for kf in res.keyframes:
        assert np.all(np.isfinite(kf.disparity))
        np.testing.assert_allclose(kf.disparity, expected, atol=1e-6)


def test_streams_sorted_and_in_span(wall, rig, sweep):
    res = simulate_stereo(wall, sweep, rig, 0.25, 20_000, rng=np.random.default_rng(0))
    for s in (res.left, res.right):
        assert len(s) > 0
        assert s.check() == []
        assert np.all(np.diff(s.t.astype(np.int64)) >= 0)
        assert s.t.min() >= s.t_begin and s.t.max() <= s.t_end


def test_caps_keep_oldest(rig, sweep):
    scene = make_test_scene(SceneSpec("wall", extent=4.0, depths=(1.0,), voxel_size=0.02, checker=1))
    full = simulate_stereo(scene, sweep, rig, 0.5, 10_000, rng=np.random.default_rng(3))
    assert len(full.left) > 2000 and len(full.right) > 3000
    capped = simulate_stereo(scene, sweep, rig, 0.5, 10_000, caps=(2000, 3000), rng=np.random.default_rng(3))
    assert len(capped.left) == 2000 and len(capped.right) == 3000
    assert capped.left.events.tobytes() == full.left.events[:2000].tobytes()
    assert capped.right.events.tobytes() == full.right.events[:3000].tobytes()


def test_zero_cap_rejected(wall, rig, sweep):
    with pytest.raises(ValueError):
        simulate_stereo(wall, sweep, rig, 0.25, 1000, caps=(0, 10))


def test_bad_dtau_rejected(wall, rig, sweep):
    for dtau in (0.0, 1.5):
        with pytest.raises(ValueError):
            simulate_stereo(wall, sweep, rig, dtau, 1000)


def test_determinism(wall, rig, sweep):
    a = simulate_stereo(wall, sweep, rig, 0.5, 5000, rng=np.random.default_rng(11))
    b = simulate_stereo(wall, sweep, rig, 0.5, 5000, rng=np.random.default_rng(11))
    assert a.left.events.tobytes() == b.left.events.tobytes()
    assert a.right.events.tobytes() == b.right.events.tobytes()


def test_subdivision_effectiveness(wall, cam, rig):
    traj = local_trajectory(Pose.identity(), [0.3, 0.05, 0.1])
    ta, tb = 0.0, 0.5
    pa = traj.sample(ta)
    coarse = flow_from_depth(render(wall, pa, cam).depth, relative_pose(pa, traj.sample(tb)), cam)
    n = subdivision_level(coarse)
    assert n >= 2
    fmax = np.nanmax(np.hypot(coarse[..., 0], coarse[..., 1]))
    subs = np.linspace(ta, tb, 2**n + 1)
    for s0, s1 in zip(subs[:-1], subs[1:]):
        for off in (0.0, rig.baseline):
            p0, p1 = shifted_eye(traj.sample(s0), off), shifted_eye(traj.sample(s1), off)
            f = flow_from_depth(render(wall, p0, cam).depth, relative_pose(p0, p1), cam)
            assert np.nanmax(np.hypot(f[..., 0], f[..., 1])) <= 2 * fmax / 2**n + 0.5


def test_levels_reported(wall, rig, sweep):
    res = simulate_stereo(wall, sweep, rig, 0.25, 20_000, rng=np.random.default_rng(0))
    assert len(res.levels) == 4
    # 0.05 m per step at 2 m depth and f=100 moves 2.5 px: n = 2.
    assert res.levels == [2, 2, 2, 2]


def test_event_stream_check():
    ev = np.zeros(2, dtype=[("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
    ev["t"] = [5, 3]
    ev["p"] = [1, 1]
    s = EventStream(ev, 4, 4, 0, 10)
    assert s.check()
