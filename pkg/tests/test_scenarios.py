import numpy as np
import pytest

from vislide.scenarios import (FLAT6_FRICTION, ROCK_FRICTION, ScenarioSpec, TrajectorySpec, make_flat_heterogeneous,
                               make_reference, make_step_terrain, make_step_training, make_terrain,
                               make_whiteboard_sandpaper, preset)
from vislide.terrain import query_surface


def test_default_trajectory_geometry():
    sp = TrajectorySpec()
    assert sp.length == pytest.approx(3.0)
    assert sp.duration == pytest.approx(18.0)
    tr = make_reference(sp)
    # tip sits delta behind the plane once the approach is over
    p, v, _ = tr.tip(sp.approach_time + 1.0)
    assert p[0] == pytest.approx(sp.delta)
    assert v[2] == pytest.approx(sp.speed)
    p_end, _, _ = tr.tip(sp.duration)
    assert p_end[2] == pytest.approx(sp.end_s)
    assert p_end[2] - tr.tip(sp.approach_time)[0][2] == pytest.approx(sp.length)


def test_reference_is_continuous():
    tr = make_reference(TrajectorySpec())
    ts = np.linspace(0, 18, 18001)
    P = np.array([tr.tip(t)[0] for t in ts])
    V = np.array([tr.tip(t)[1] for t in ts])
    assert np.max(np.abs(np.diff(P, axis=0))) < 1e-3
    assert np.max(np.abs(np.diff(V, axis=0))) < 1e-2


def test_reference_com_offset_and_attitude():
    tr = make_reference(TrajectorySpec(), lever=(0.5, 0, 0))
    ref = tr.at(5.0)
    R = tr.attitude_matrix
    p_tip = tr.tip(5.0)[0]
    assert np.allclose(ref.pos_ref + R @ np.array([0.5, 0, 0]), p_tip)
    # body x points into the wall
    assert np.allclose(R[:, 0], [1, 0, 0])
    assert np.allclose(R @ R.T, np.eye(3))


def test_trajectory_validation():
    with pytest.raises(ValueError):
        TrajectorySpec(delta=0.0)
    with pytest.raises(ValueError):
        TrajectorySpec(ramp_time=5.0)


def test_flat_heterogeneous_draws_from_set():
    t = make_flat_heterogeneous(FLAT6_FRICTION, np.random.default_rng(0))
    assert {p.mu for p in t.patches} <= set(FLAT6_FRICTION)
    assert all(p.height == 0.0 for p in t.patches)
    assert all(p.end_s - p.start_s == pytest.approx(0.5) for p in t.patches)
    assert t.span == (-0.5, 4.0)


def test_whiteboard_sandpaper_layout():
    t = make_whiteboard_sandpaper()
    assert query_surface(t, 1.0)[1] == 0.15
    assert query_surface(t, 1.5)[1] == 0.6
    assert query_surface(t, 2.5)[1] == 0.15


def test_step_terrain():
    t = make_step_terrain(0.02, 1.5)
    assert query_surface(t, 1.49)[0] == 0.0
    assert query_surface(t, 1.51)[0] == 0.02
    assert len(make_step_terrain(0.0).patches) == 1
    with pytest.raises(ValueError):
        make_step_terrain(-0.01)


def test_step_training_alternates():
    t = make_step_training(0.01, FLAT6_FRICTION, np.random.default_rng(1))
    hs = [p.height for p in t.patches]
    assert hs[0] == 0.0
    assert all(abs(a - b) == pytest.approx(0.01) for a, b in zip(hs, hs[1:]))


def test_presets_and_seeded_terrain():
    for name in ["flat6", "flat6_eval", "step1cm", "step1cm_eval", "step2cm", "step2cm_eval", "rock", "rock_eval"]:
        sc = preset(name)
        t1 = make_terrain(sc, np.random.default_rng(5))
        t2 = make_terrain(sc, np.random.default_rng(5))
        assert t1.patches == t2.patches
    assert set(preset("rock").friction_set) == set(ROCK_FRICTION)
    with pytest.raises(KeyError):
        preset("nope")
    with pytest.raises(ValueError):
        ScenarioSpec(kind="lava")
