import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vislide.policy import (LOGIT_LIMIT, ContractViolation, Normalizer, PolicyNet, ValueNet, action_output_dim,
                            infer_actions, infer_logits, policy_dims)

import gradcheck


@pytest.mark.parametrize("seed", range(5))
def test_actor_gradients_match_finite_differences(seed):
    assert gradcheck.actor_draw(np.random.default_rng([seed, 1])) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_critic_gradients_match_finite_differences(seed):
    assert gradcheck.critic_draw(np.random.default_rng([seed, 2])) < 1e-4


def test_oracle_forward_agrees_with_net():
    rng = np.random.default_rng(0)
    net = PolicyNet(gradcheck.DIMS, rng=rng)
    z = rng.standard_normal((6, gradcheck.DIMS[0]))
    y, _ = gradcheck.mlp_forward(net.params[None, :net.n_net], net.dims, net.leaky_slope, z)
    assert np.allclose(y[0], net.logits(z), atol=1e-13)


def test_layout_and_dims():
    net = PolicyNet(policy_dims(9, 2), rng=np.random.default_rng(0))
    assert net.dims == [9, 32, 32, 32, 2]
    assert net.n_params == (9 + 1) * 32 + 2 * 33 * 32 + 33 * 2 + 2
    assert np.allclose(net.log_std, np.log(0.2))
    with pytest.raises(ValueError):
        PolicyNet([3, 4, 2], params=np.zeros(5))
    with pytest.raises(ValueError):
        ValueNet([3, 4, 2])
    with pytest.raises(ContractViolation):
        net.forward(np.zeros(8))
    assert action_output_dim((0, 4)) == 2
    with pytest.raises(ValueError):
        action_output_dim((0, 0))


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3))
def test_actions_strictly_inside_unit_interval(scale):
    net = PolicyNet([3, 8, 2], rng=np.random.default_rng(1))
    net.params[:net.n_net] *= 1.0 + abs(scale)
    a = net.forward(np.full((4, 3), scale))
    assert np.all(a > 0.0) and np.all(a < 1.0)
    assert np.all(np.abs(net.logits(np.full((4, 3), scale))) <= LOGIT_LIMIT)


def test_compiled_inference_matches_reference():
    rng = np.random.default_rng(2)
    net = PolicyNet([9, 32, 32, 32, 2], rng=rng)
    X = 3 * rng.standard_normal((50, 9))
    assert np.allclose(infer_actions(net, X), net.forward(X), atol=1e-14)
    assert np.allclose(infer_logits(net, X), net.pre_head(X)[0], atol=1e-12)


def test_normalizer_matches_batch_statistics():
    rng = np.random.default_rng(3)
    X = rng.normal(5.0, 2.0, (1000, 4))
    n = Normalizer(4)
    for chunk in np.array_split(X, 7):
        n.update(chunk)
    assert np.allclose(n.mean, X.mean(axis=0))
    assert np.allclose(n.std, X.std(axis=0) + n.eps)
    n.frozen = True
    n.update(np.zeros((10, 4)))
    assert n.count == 1000
    Z = n(X)
    assert np.allclose(Z.mean(axis=0), 0, atol=1e-12)
    assert np.max(np.abs(n(np.full(4, 1e6)))) == n.clip
    assert Normalizer.from_dict(n.to_dict()).to_dict() == n.to_dict()
