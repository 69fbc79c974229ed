import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from famle.errors import ConfigurationError, DivergedUpdateError, InputError, UsageError
from famle.model import (EmbeddingTable, InnerUpdateConfig, ModelParams, Normalizer, TransitionDataset,
                         forward, grad, init_params, inner_update_U, loss_and_grad, nll_loss,
                         predict_next_state, wrap_angle)

from conftest import random_dataset, zero_params


def fd_grad(params, h, data, eps=1e-5):
    flat = params.flat()
    g = np.empty_like(flat)
    for j in range(len(flat)):
        up, dn = flat.copy(), flat.copy()
        up[j] += eps
        dn[j] -= eps
        g[j] = (nll_loss(params.with_flat(up), h, data) - nll_loss(params.with_flat(dn), h, data)) / (2 * eps)
    gh = np.empty_like(h)
    for j in range(len(h)):
        up, dn = h.copy(), h.copy()
        up[j] += eps
        dn[j] -= eps
        gh[j] = (nll_loss(params, up, data) - nll_loss(params, dn, data)) / (2 * eps)
    return g, gh


def assert_fd_close(analytic, numeric, rel=1e-4, floor=1e-7):
    err = np.abs(analytic - numeric)
    assert np.all(err <= rel * np.maximum(np.abs(numeric), np.abs(analytic)) + floor), err.max()


# ---------------------------------------------------------------- forward

def test_zero_network_predicts_no_change(rng):
    p = zero_params(3, 2, 4)
    s = rng.normal(size=3)
    assert np.array_equal(forward(p, s, rng.normal(size=2), rng.normal(size=4)), np.zeros(3))
    assert np.array_equal(predict_next_state(p, s, np.zeros(2), np.zeros(4)), s)


def test_single_linear_identity_block():
    w = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])   # inputs: s(2), a(1), h(1)
    p = ModelParams([w], [np.zeros(2)], 2, 1, 1)
    assert np.allclose(forward(p, [0.5, -0.2], [0.9], [0.3]), [0.5, -0.2], atol=0)


def test_two_layer_forward_matches_hand_chain():
    rng = np.random.default_rng(7)
    p = init_params(2, 1, 2, (3,), rng)
    p = p.with_tensors([t + 0.1 * rng.normal(size=t.shape) for t in p.tensors()])
    s, a, h = np.array([0.3, -0.4]), np.array([0.7]), np.array([0.1, -0.2])
    x = [*s, *a, *h]
    hidden = [np.tanh(sum(p.weights[0][i][j] * x[j] for j in range(5)) + p.biases[0][i]) for i in range(3)]
    out = [sum(p.weights[1][i][j] * hidden[j] for j in range(3)) + p.biases[1][i] for i in range(2)]
    assert np.allclose(forward(p, s, a, h), out, atol=1e-10, rtol=0)


def test_forward_dimension_mismatch_is_config_error(rng):
    p = zero_params(2, 1, 1)
    with pytest.raises(ConfigurationError):
        forward(p, np.zeros(3), np.zeros(1), np.zeros(1))
    with pytest.raises(ConfigurationError):
        forward(p, np.zeros(2), np.zeros(1), np.zeros(2))


def test_forward_non_finite_is_input_error():
    p = zero_params(2, 1, 1)
    with pytest.raises(InputError):
        forward(p, [np.nan, 0.0], [0.0], [0.0])


def test_forward_batched_matches_rows(rng):
    p = init_params(3, 2, 2, (5,), rng)
    s, a = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    h = rng.normal(size=2)
    batched = forward(p, s, a, h)
    for i in range(4):
        assert np.allclose(batched[i], forward(p, s[i], a[i], h), rtol=0, atol=1e-14)


def test_angle_dims_wrap_prediction():
    w = np.zeros((1, 2))
    p = ModelParams([w], [np.array([0.5])], 1, 1, 0, angle_dims=(0,))
    nxt = predict_next_state(p, [np.pi - 0.1], [0.0], np.zeros(0))
    assert np.isclose(nxt[0], -np.pi + 0.4)


def test_wrap_angle_half_open_interval():
    x = np.array([np.pi, -np.pi, 3 * np.pi, 0.0])
    w = wrap_angle(x)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    assert np.isclose(w[1], np.pi)


# ---------------------------------------------------------------- loss

def test_loss_zero_on_exact_fit(rng):
    p = init_params(2, 1, 1, (4,), rng)
    s, a = rng.normal(size=(5, 2)), rng.normal(size=(5, 1))
    h = np.array([0.2])
    data = TransitionDataset(s, a, predict_next_state(p, s, a, h))
    assert nll_loss(p, h, data) == pytest.approx(0.0, abs=1e-30)


def test_loss_closed_form_single_transition():
    p = zero_params(2, 1, 0)
    data = TransitionDataset([[1.0, 1.0]], [[0.0]], [[4.0, 5.0]])
    assert nll_loss(p, np.zeros(0), data) == 12.5


def test_loss_three_transitions_hand_sum():
    w = np.array([[0.5, -1.0, 2.0]])             # s(1), a(1), h(1)
    b = np.array([0.1])
    p = ModelParams([w], [b], 1, 1, 1)
    h = np.array([0.3])
    rows = [(0.2, 0.5, 0.9), (-1.0, 1.0, -0.4), (0.7, -0.3, 0.7)]
    data = TransitionDataset([[r[0]] for r in rows], [[r[1]] for r in rows], [[r[2]] for r in rows])
    total = 0.0
    for s, a, ns in rows:
        pred = 0.5 * s - 1.0 * a + 2.0 * 0.3 + 0.1
        total += 0.5 * ((ns - s) - pred) ** 2
    assert nll_loss(p, h, data) == pytest.approx(total / 3, abs=1e-14)


def test_empty_batch_is_usage_error():
    p = zero_params(2, 1, 0)
    empty = TransitionDataset(np.zeros((0, 2)), np.zeros((0, 1)), np.zeros((0, 2)))
    with pytest.raises(UsageError):
        nll_loss(p, np.zeros(0), empty)
    with pytest.raises(UsageError):
        grad(p, np.zeros(0), empty)


def test_standardized_targets_scale_the_loss(rng):
    data = random_dataset(rng, 20, 2, 1, scale=0.1)
    norm = Normalizer.fit([data])
    p = init_params(2, 1, 0, (4,), rng, norm)
    pid = ModelParams(p.weights, p.biases, 2, 1, 0, Normalizer(norm.state_mean, norm.state_std,
                                                                 norm.action_mean, norm.action_std))
    # same network output, different sigma: losses differ but both are finite and non-negative
    assert nll_loss(p, np.zeros(0), data) >= 0 and nll_loss(pid, np.zeros(0), data) >= 0
    z = (data.next_states - data.states - norm.delta_mean) / norm.delta_std
    assert np.allclose(z.mean(axis=0), 0, atol=1e-12) and np.allclose(z.std(axis=0), 1)


# ---------------------------------------------------------------- gradients

def test_gradient_zero_at_exact_fit(rng):
    p = init_params(2, 1, 2, (4,), rng)
    s, a = rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
    h = rng.normal(size=2)
    data = TransitionDataset(s, a, predict_next_state(p, s, a, h))
    g, gh = grad(p, h, data)
    assert np.all(np.abs(g.flat()) <= 1e-12) and np.all(np.abs(gh) <= 1e-12)


def test_single_linear_layer_gradient_closed_form():
    w = np.array([[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]])   # s(2), a(1), h(0)
    b = np.array([0.05, -0.1])
    p = ModelParams([w], [b], 2, 1, 0)
    s, a, ns = np.array([0.2, -0.1]), np.array([0.7]), np.array([0.9, 0.3])
    data = TransitionDataset([s], [a], [ns])
    x = np.concatenate([s, a])
    resid = (w @ x + b) - (ns - s)
    g, _ = grad(p, np.zeros(0), data)
    assert np.allclose(g.weights[0], np.outer(resid, x), atol=1e-15)
    assert np.allclose(g.biases[0], resid, atol=1e-15)


def test_gradient_matches_finite_differences_fixed_seed():
    rng = np.random.default_rng(3)
    p = init_params(3, 2, 2, (6, 5), rng)
    h = rng.normal(size=2)
    data = random_dataset(rng, 7, 3, 2)
    g, gh = grad(p, h, data)
    ng, ngh = fd_grad(p, h, data)
    assert_fd_close(g.flat(), ng)
    assert_fd_close(gh, ngh)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), sd=st.integers(1, 3), ad=st.integers(0, 2), ed=st.integers(0, 3),
       hidden=st.lists(st.integers(1, 8), min_size=0, max_size=2))
def test_gradient_finite_difference_property(seed, sd, ad, ed, hidden):
    rng = np.random.default_rng(seed)
    p = init_params(sd, ad, ed, tuple(hidden), rng)
    h = rng.normal(size=ed)
    data = random_dataset(rng, 5, sd, ad)
    g, gh = grad(p, h, data)
    ng, ngh = fd_grad(p, h, data)
    assert_fd_close(g.flat(), ng)
    assert_fd_close(gh, ngh)


def test_loss_and_grad_agrees_with_parts(rng):
    p = init_params(2, 1, 2, (4,), rng)
    h = rng.normal(size=2)
    data = random_dataset(rng, 9, 2, 1)
    loss, g, gh = loss_and_grad(p, h, data)
    g2, gh2 = grad(p, h, data)
    assert loss == nll_loss(p, h, data)
    assert np.array_equal(g.flat(), g2.flat()) and np.array_equal(gh, gh2)


# ---------------------------------------------------------------- inner update

def test_inner_update_zero_rates_is_identity(rng):
    p = init_params(2, 1, 2, (4,), rng)
    h = rng.normal(size=2)
    t, hh = inner_update_U(p, h, random_dataset(rng, 5, 2, 1), InnerUpdateConfig(1, 0.0, 0.0))
    assert t.equals(p) and np.array_equal(hh, h)


def test_inner_update_one_step_matches_manual(rng):
    p = init_params(2, 1, 2, (4,), rng)
    h = rng.normal(size=2)
    data = random_dataset(rng, 5, 2, 1)
    t, hh = inner_update_U(p, h, data, InnerUpdateConfig(1, 0.03, 0.2))
    g, gh = grad(p, h, data)
    assert np.array_equal(t.flat(), p.flat() - 0.03 * g.flat())
    assert np.array_equal(hh, h - 0.2 * gh)


def test_inner_update_geometric_contraction_on_quadratic():
    # one weight, no bias effect: prediction w*x, target c*x, loss 0.5*mean((w-c)^2 x^2)
    x = np.array([[1.0], [2.0], [-1.5]])
    c = 0.8
    data = TransitionDataset(x, np.zeros((3, 0)), x + c * x)
    w0, alpha = -0.4, 0.1
    p = ModelParams([np.array([[w0]])], [np.zeros(1)], 1, 0, 0)
    p_nobias_cfg = InnerUpdateConfig(3, alpha, 0.0)
    t, _ = inner_update_U(p, np.zeros(0), data, p_nobias_cfg)
    m = np.mean(x[:, 0] ** 2)
    # the bias moves too; integrate both exactly as a 2-D linear map
    A = np.array([[m, np.mean(x[:, 0])], [np.mean(x[:, 0]), 1.0]])
    v = np.array([w0 - c, 0.0])
    for _ in range(3):
        v = v - alpha * A @ v
    assert abs(t.weights[0][0, 0] - (c + v[0])) < 1e-10
    assert abs(t.biases[0][0] - v[1]) < 1e-10


def test_inner_update_full_batch_loss_monotone():
    rng = np.random.default_rng(11)
    p = init_params(2, 1, 2, (8,), rng)
    h = rng.normal(size=2)
    data = random_dataset(rng, 30, 2, 1)
    losses = [nll_loss(p, h, data)]
    cfg = InnerUpdateConfig(1, 1e-3, 1e-3)
    for _ in range(20):
        p, h = inner_update_U(p, h, data, cfg)
        losses.append(nll_loss(p, h, data))
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_inner_update_is_pure(rng):
    p = init_params(2, 1, 2, (4,), rng)
    h = rng.normal(size=2)
    before_p, before_h = copy.deepcopy(p), h.copy()
    inner_update_U(p, h, random_dataset(rng, 300, 2, 1), InnerUpdateConfig(3, 0.1, 0.1, 16),
                   np.random.default_rng(0))
    assert p.equals(before_p) and np.array_equal(h, before_h)


def test_inner_update_deterministic_with_minibatches(rng):
    p = init_params(2, 1, 2, (4,), rng)
    h = rng.normal(size=2)
    data = random_dataset(rng, 300, 2, 1)
    cfg = InnerUpdateConfig(4, 0.05, 0.05, 32)
    a = inner_update_U(p, h, data, cfg, np.random.default_rng(5))
    b = inner_update_U(p, h, data, cfg, np.random.default_rng(5))
    assert a[0].equals(b[0]) and np.array_equal(a[1], b[1])


def test_inner_update_divergence_reports_step():
    rng = np.random.default_rng(0)
    p = init_params(1, 0, 0, (), rng)
    data = TransitionDataset([[1e150]], np.zeros((1, 0)), [[-1e150]])
    with pytest.raises(DivergedUpdateError) as info:
        inner_update_U(p, np.zeros(0), data, InnerUpdateConfig(5, 1e10, 0.0))
    assert info.value.step is not None


def test_params_copy_shares_no_storage(rng):
    p = init_params(2, 1, 1, (3,), rng)
    q = p.copy()
    q.weights[0][0, 0] += 1.0
    q.normalizer.state_mean[0] += 1.0
    assert not q.equals(p) and p.normalizer.state_mean[0] == 0.0


def test_params_validate_chain():
    with pytest.raises(ConfigurationError):
        ModelParams([np.zeros((3, 4)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)], 2, 1, 1)


def test_embedding_table_init(rng):
    t = EmbeddingTable.random(2000, 5, rng)
    assert t.entries.shape == (2000, 5)
    assert abs(t.entries.std() - 0.1) < 0.005
    row = t[0]
    row[0] = 99.0
    assert t.entries[0, 0] != 99.0


def test_init_weights_scaled_by_fan_in(rng):
    p = init_params(10, 5, 5, (50,), rng)
    assert np.all(np.abs(p.weights[0]) <= 1 / np.sqrt(20))
    assert np.all(p.biases[0] == 0)
