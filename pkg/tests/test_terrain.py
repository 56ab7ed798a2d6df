import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vislide.dynamics import BodyParams, RobotState
from vislide.scenarios import make_rocklike, make_step_terrain
from vislide.terrain import (ContactParams, Heightmap, Patch, Terrain, TerrainOutOfBounds, compute_contact,
                             query_surface)

from conftest import random_quat

FLAT = Terrain.from_triples([(1.0, 0.0, 0.2), (1.0, 0.0, 0.6)], start_s=-0.5)
LEVER = np.array([0.5, 0.0, 0.0])


def tip_state(tip, v_tip, q=(1.0, 0.0, 0.0, 0.0)):
    q = np.asarray(q, float)
    R = RobotState(np.zeros(3), q, np.zeros(3), np.zeros(3)).rotation
    return RobotState(np.asarray(tip, float) - R @ LEVER, q, np.asarray(v_tip, float), np.zeros(3))


@pytest.fixture
def lever_body():
    return BodyParams(4.0, np.diag([0.1, 0.1, 0.1]), np.zeros(3), LEVER)


def test_from_triples_layout():
    assert FLAT.span == (-0.5, 1.5)
    assert [p.mu for p in FLAT.patches] == [0.2, 0.6]
    with pytest.raises(ValueError):
        Terrain((Patch(0, 1, 0, 0.1), Patch(1.5, 2, 0, 0.1)))
    with pytest.raises(ValueError):
        Patch(0, 1, 0, -0.1)
    assert Terrain.from_config(FLAT.to_config()).patches == FLAT.patches


def test_query_surface():
    h, mu, n = query_surface(FLAT, 0.7)
    assert (h, mu) == (0.0, 0.6)
    assert np.allclose(n, [-1, 0, 0])
    with pytest.raises(TerrainOutOfBounds):
        query_surface(FLAT, 1.5)


def test_heightmap_seeded_and_bounded():
    a = Heightmap.generate(7, 0.1, 0.02, (-0.5, 4.0))
    b = Heightmap.generate(7, 0.1, 0.02, (-0.5, 4.0))
    assert np.array_equal(a.values, b.values)
    assert np.max(np.abs(a.values)) <= 0.02
    t = make_rocklike(7, (0.1, 0.9), 4.0)
    hs = [query_surface(t, s, 0.0)[0] for s in np.linspace(0, 3, 50)]
    assert max(abs(h) for h in hs) <= 0.02 + 1e-12


def test_penetration_gives_spring_force(lever_body):
    cp = ContactParams(k_n=5000.0, c_n=0.0)
    c = compute_contact(tip_state([0.01, 0, 0.2], [0, 0, 0]), lever_body, FLAT, cp)
    assert c.in_contact
    assert c.penetration == pytest.approx(0.01)
    assert c.F_perp == pytest.approx(50.0)
    assert np.allclose(c.wrench_body.force, [-50.0, 0, 0])
    # force at the tip on a lever along x produces no torque when purely along x
    assert np.allclose(c.wrench_body.torque, 0.0)


def test_separation_reported(lever_body):
    c = compute_contact(tip_state([-0.03, 0, 0.2], [0, 0, 0]), lever_body, FLAT, ContactParams())
    assert not c.in_contact and c.F_perp == 0.0
    assert c.separation == pytest.approx(0.03)


def test_friction_opposes_sliding(lever_body):
    c = compute_contact(tip_state([0.01, 0, 0.7], [0, 0, 0.2]), lever_body, FLAT, ContactParams(c_n=0.0))
    assert c.mu == 0.6
    assert c.F_par == pytest.approx(0.6 * c.F_perp * np.tanh(0.2 / 0.01))
    assert c.friction[2] < 0 and abs(c.friction[0]) < 1e-12


def _random_query(rng, terrain, body):
    tip = np.array([rng.uniform(-0.02, 0.05), rng.uniform(-0.3, 0.3), rng.uniform(-0.4, 3.9)])
    v = rng.normal(0, 0.5, 3)
    q = random_quat(rng)
    s = tip_state(tip, v, q)
    s.ang_vel = rng.normal(0, 1.0, 3)
    cp = ContactParams(k_n=rng.uniform(100, 1e4), c_n=rng.uniform(0, 100), v_reg=rng.uniform(1e-3, 0.1))
    return compute_contact(s, body, terrain, cp)


@pytest.mark.parametrize("which", ["flat", "step", "rock"])
def test_contact_cone_properties(which, lever_body):
    terrain = {"flat": FLAT.__class__.from_triples([(4.5, 0.0, 0.4)], -0.5),
               "step": make_step_terrain(0.02),
               "rock": make_rocklike(3, (0.1, 0.5, 0.9), 4.0)}[which]
    rng = np.random.default_rng(11)
    for _ in range(2000):
        c = _random_query(rng, terrain, lever_body)
        assert c.F_perp >= 0.0
        assert c.F_par <= c.mu * c.F_perp + 1e-12
        assert np.linalg.norm(c.friction) <= c.mu * c.F_perp * (1 + 1e-9) + 1e-12
        vt = c.tip_velocity - (c.tip_velocity @ c.n_perp) * c.n_perp
        assert c.friction @ vt <= 1e-12
        assert abs(np.linalg.norm(c.n_perp) - 1) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 0.05), st.floats(-2.0, 2.0))
def test_force_is_monotone_in_penetration(pen, vz):
    body = BodyParams(4.0, np.eye(3) * 0.1, np.zeros(3), LEVER)
    cp = ContactParams(c_n=0.0)
    a = compute_contact(tip_state([pen, 0, 0.5], [0, 0, vz]), body, FLAT, cp)
    b = compute_contact(tip_state([pen + 0.001, 0, 0.5], [0, 0, vz]), body, FLAT, cp)
    assert b.F_perp >= a.F_perp


def test_step_face_blocks_then_releases(lever_body):
    t = make_step_terrain(0.02, step_s=1.5)
    cp = ContactParams(c_n=0.0)
    # tip 1 cm proud of the base plane, 2 mm past the edge, still moving into the face
    moving = compute_contact(tip_state([-0.01, 0, 1.502], [0, 0, 0.2]), lever_body, t, cp)
    assert moving.in_contact
    assert np.allclose(moving.n_perp, [0, 0, -1])
    assert moving.penetration == pytest.approx(0.002)
    # same point once the tip has stopped: the top surface pushes it out
    resting = compute_contact(tip_state([-0.01, 0, 1.502], [0, 0, 0.0]), lever_body, t, cp)
    assert np.allclose(resting.n_perp, [-1, 0, 0])
    assert resting.penetration == pytest.approx(0.01)
    # above the step top nothing touches
    above = compute_contact(tip_state([-0.03, 0, 1.6], [0, 0, 0.2]), lever_body, t, cp)
    assert not above.in_contact


def test_outside_span_is_free(lever_body):
    c = compute_contact(tip_state([0.05, 0, 10.0], [0, 0, 0]), lever_body, FLAT, ContactParams())
    assert not c.in_contact
