import numpy as np
import pytest

from vislide.dynamics import Frame, RobotState, Wrench
from vislide.sensing import SensorModel, measure_state, measure_wrench


def test_disabled_noise_is_exact_copy():
    m = SensorModel(wrench_noise_std=np.ones(6), estimate_noise_std=np.ones(12))
    w = Wrench([1, 2, 3], [4, 5, 6])
    out = measure_wrench(w, m, np.random.default_rng(0))
    assert np.array_equal(out.as_array(), w.as_array())
    assert out.force is not w.force
    s = RobotState.at_rest((1, 2, 3))
    e = measure_state(s, m, np.random.default_rng(0))
    assert np.array_equal(e.as_vector(), s.as_vector())


def test_wrench_noise_statistics():
    std = np.array([0.5, 0.5, 1.0, 0.02, 0.02, 0.01])
    m = SensorModel(wrench_noise_std=std, enable_wrench_noise=True)
    rng = np.random.default_rng(1)
    w = Wrench([0, 0, 10], [0, 0, 0])
    X = np.array([measure_wrench(w, m, rng).as_array() for _ in range(20000)])
    assert np.allclose(X.mean(axis=0), w.as_array(), atol=4 * std.max() / np.sqrt(20000))
    assert np.all(np.abs(X.std(axis=0) / std - 1) < 0.1)


def test_bias_random_walk_grows():
    m = SensorModel(wrench_bias_walk_std=np.full(6, 0.1), enable_wrench_noise=True)
    rng = np.random.default_rng(2)
    for _ in range(10000):
        measure_wrench(Wrench.zero(), m, rng, dt=0.01)
    # variance of the walk after T = 100 s is 0.1^2 * T
    assert np.all(np.abs(m.bias) < 6 * 0.1 * 10)
    m.reset()
    assert np.all(m.bias == 0)


def test_state_noise_position_rms_and_unit_quaternion():
    std = np.r_[np.full(3, 1e-3), np.full(3, 2e-3), np.full(3, 0.01), np.full(3, 0.02)]
    m = SensorModel(estimate_noise_std=std, enable_state_noise=True)
    rng = np.random.default_rng(3)
    s = RobotState.at_rest((0.0, 0.0, 1.0))
    E = [measure_state(s, m, rng) for _ in range(5000)]
    dp = np.array([e.position - s.position for e in E])
    assert np.sqrt(np.mean(dp ** 2)) == pytest.approx(1e-3, rel=0.1)
    assert all(abs(np.linalg.norm(e.orientation) - 1) < 1e-12 for e in E)
    dw = np.array([e.ang_vel for e in E])
    assert np.all(np.abs(dw.std(axis=0) / 0.02 - 1) < 0.1)
    # truth is untouched
    assert np.array_equal(s.position, [0, 0, 1.0])


def test_negative_std_rejected():
    with pytest.raises(ValueError):
        SensorModel(wrench_noise_std=-np.ones(6))


def test_world_wrench_rejected():
    with pytest.raises(Exception):
        measure_wrench(Wrench.zero(Frame.WORLD), SensorModel(), np.random.default_rng(0))
