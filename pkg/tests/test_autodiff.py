"""Reverse-mode gradients against central finite differences, optimizer
single-step oracles, and checkpoint round-trips."""

from __future__ import annotations

import numpy as np
import pytest

from edgesched import autodiff as ad
from edgesched.autodiff import (
    MASKED_LOGP,
    ParamSet,
    Tape,
    Tensor,
    adam_step,
    ema_update,
    init_uniform,
    load_params,
    save_params,
)
from edgesched.errors import CheckpointError

EPS = 1e-5
RTOL = 1e-4
ATOL = 1e-6


def numeric_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central finite difference of the scalar-valued f() wrt array x
    (mutated in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * eps)
        it.iternext()
    return g


def check_grads(build, tensors: list[Tensor]) -> None:
    """build() -> scalar loss Tensor (pure in the tensors' current data)."""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build()
        tape.backward(loss)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]
    for t, a in zip(tensors, analytic):
        num = numeric_grad(lambda: float(build().data), t.data)
        np.testing.assert_allclose(a, num, rtol=RTOL, atol=ATOL)


def leaf(rng, shape, away_from_zero=False) -> Tensor:
    data = rng.uniform(-1.0, 1.0, size=shape)
    if away_from_zero:
        data = np.sign(data) * (np.abs(data) * 0.8 + 0.2)
    return Tensor(data, requires_grad=True)


# -------------------------------------------------------------- elementwise

def test_grad_add_sub_mul():
    rng = np.random.default_rng(0)
    a, b = leaf(rng, (3, 4)), leaf(rng, (3, 4))
    check_grads(lambda: ad.sum_all(ad.add(a, b)), [a, b])
    check_grads(lambda: ad.sum_all(ad.sub(a, b)), [a, b])
    check_grads(lambda: ad.sum_all(ad.mul(a, b)), [a, b])


def test_grad_scale_shift_square():
    rng = np.random.default_rng(1)
    a = leaf(rng, (2, 5))
    check_grads(lambda: ad.sum_all(ad.scale(a, -2.5)), [a])
    check_grads(lambda: ad.sum_all(ad.shift(a, 3.0)), [a])
    check_grads(lambda: ad.sum_all(ad.square(a)), [a])


def test_grad_activations():
    rng = np.random.default_rng(2)
    a = leaf(rng, (4, 3), away_from_zero=True)  # keep clear of the relu kink
    check_grads(lambda: ad.sum_all(ad.sigmoid(a)), [a])
    check_grads(lambda: ad.sum_all(ad.tanh(a)), [a])
    check_grads(lambda: ad.sum_all(ad.relu(a)), [a])
    check_grads(lambda: ad.sum_all(ad.exp(a)), [a])


def test_grad_matmul_affine():
    rng = np.random.default_rng(3)
    x = leaf(rng, (3, 4))
    w = leaf(rng, (5, 4))
    b = leaf(rng, (5,))
    m = leaf(rng, (4, 5))
    check_grads(lambda: ad.sum_all(ad.matmul(x, m)), [x, m])
    check_grads(lambda: ad.sum_all(ad.affine(x, w, b)), [x, w, b])


def test_grad_shape_ops():
    rng = np.random.default_rng(4)
    a, b = leaf(rng, (3, 2)), leaf(rng, (3, 4))
    check_grads(lambda: ad.sum_all(ad.concat_cols(a, b)), [a, b])
    c = leaf(rng, (5, 3))
    check_grads(lambda: ad.sum_all(ad.narrow_rows(c, 2)), [c])
    idx = np.array([1, 0, 2, 1, 0])
    check_grads(lambda: ad.sum_all(ad.gather_cols(c, idx)), [c])
    check_grads(lambda: ad.sum_all(ad.sum_rows(c)), [c])
    check_grads(lambda: ad.mean_all(c), [c])


def test_grad_weighted_reductions():
    # a non-uniform weighting downstream catches transposed backward rules
    rng = np.random.default_rng(5)
    a = leaf(rng, (3, 4))
    w = Tensor(rng.normal(size=(3, 4)))
    check_grads(lambda: ad.sum_all(ad.mul(a, w)), [a])


# --------------------------------------------------------------------- fused

def test_grad_gru_cell_all_inputs():
    rng = np.random.default_rng(6)
    B, IN, H = 3, 4, 5
    x = leaf(rng, (B, IN))
    h = leaf(rng, (B, H))
    w_x = leaf(rng, (3 * H, IN))
    w_h = leaf(rng, (2 * H, H))
    w_c = leaf(rng, (H, H))
    b = leaf(rng, (3 * H,))
    weights = Tensor(rng.normal(size=(B, H)))

    def build():
        out = ad.gru_cell(x, h, w_x, w_h, w_c, b)
        return ad.sum_all(ad.mul(out, weights))

    check_grads(build, [x, h, w_x, w_h, w_c, b])


def test_grad_gru_unrolled_three_steps():
    # shared parameters accumulate gradient across time steps
    rng = np.random.default_rng(7)
    B, IN, H = 2, 3, 4
    xs = [leaf(rng, (B, IN)) for _ in range(3)]
    w_x = leaf(rng, (3 * H, IN))
    w_h = leaf(rng, (2 * H, H))
    w_c = leaf(rng, (H, H))
    b = leaf(rng, (3 * H,))

    def build():
        h = Tensor(np.zeros((B, H)))
        for x in xs:
            h = ad.gru_cell(x, h, w_x, w_h, w_c, b)
        return ad.mean_all(h)

    check_grads(build, [w_x, w_h, w_c, b] + xs)


def test_gru_zero_parameters_halve_hidden():
    # all-zero weights: r = z = 1/2, candidate = 0, so h' = h / 2
    B, IN, H = 4, 3, 6
    h0 = np.random.default_rng(8).normal(size=(B, H))
    out = ad.gru_cell(
        Tensor(np.zeros((B, IN))),
        Tensor(h0),
        Tensor(np.zeros((3 * H, IN))),
        Tensor(np.zeros((2 * H, H))),
        Tensor(np.zeros((H, H))),
        Tensor(np.zeros(3 * H)),
    )
    np.testing.assert_allclose(out.data, 0.5 * h0, rtol=1e-15)


def test_gru_rejects_mismatched_blocks():
    with pytest.raises(ValueError):
        ad.gru_cell(
            Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))),
            Tensor(np.zeros((8, 2))),  # should be 9 rows for H=3
            Tensor(np.zeros((6, 3))), Tensor(np.zeros((3, 3))), Tensor(np.zeros(9)),
        )


def test_grad_masked_log_softmax():
    rng = np.random.default_rng(9)
    logits = leaf(rng, (4, 6))
    mask = rng.random((4, 6)) < 0.6
    mask[np.arange(4), rng.integers(0, 6, 4)] = True  # at least one per row
    weights = np.where(mask, rng.normal(size=(4, 6)), 0.0)

    def build():
        logp = ad.masked_log_softmax(logits, mask)
        return ad.sum_all(ad.mul(logp, Tensor(weights)))

    check_grads(build, [logits])


def test_grad_softmax():
    rng = np.random.default_rng(10)
    logits = leaf(rng, (3, 5))
    weights = Tensor(rng.normal(size=(3, 5)))
    check_grads(lambda: ad.sum_all(ad.mul(ad.softmax(logits), weights)), [logits])


def test_masked_log_softmax_frozen_example():
    logits = Tensor(np.log([[1.0, 2.0, 3.0]]))
    logp = ad.log_softmax(logits)
    np.testing.assert_allclose(np.exp(logp.data), [[1 / 6, 2 / 6, 3 / 6]], rtol=1e-12)


def test_masked_entries_get_sentinel_and_zero_prob():
    logits = Tensor(np.array([[5.0, 1.0, 3.0]]))
    mask = np.array([[True, False, True]])
    logp = ad.masked_log_softmax(logits, mask)
    assert logp.data[0, 1] == MASKED_LOGP
    probs = np.exp(logp.data)
    assert probs[0, 1] == 0.0
    assert probs.sum() == pytest.approx(1.0, rel=1e-12)
    # feasible entries renormalize among themselves
    np.testing.assert_allclose(
        probs[0, [0, 2]],
        np.exp([5.0, 3.0]) / np.exp([5.0, 3.0]).sum(),
        rtol=1e-12,
    )


def test_masked_log_softmax_rejects_dead_row():
    logits = Tensor(np.zeros((2, 3)))
    mask = np.array([[True, True, True], [False, False, False]])
    with pytest.raises(ValueError):
        ad.masked_log_softmax(logits, mask)


def test_nll_loss_uniform_four_ways():
    logp = ad.log_softmax(Tensor(np.zeros((6, 4))))
    loss = ad.nll_loss(logp, np.array([0, 1, 2, 3, 0, 2]))
    assert loss.data == pytest.approx(np.log(4.0), rel=1e-12)


def test_grad_nll_pipeline():
    # two-layer head into masked softmax into NLL: the BC training loss
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(5, 4)))
    w1, b1 = leaf(rng, (8, 4)), leaf(rng, (8,))
    w2, b2 = leaf(rng, (3, 8)), leaf(rng, (3,))
    mask = np.ones((5, 3), dtype=bool)
    mask[0, 2] = mask[3, 0] = False
    targets = np.array([0, 2, 1, 1, 0])

    def build():
        hidden = ad.relu(ad.affine(x, w1, b1))
        logp = ad.masked_log_softmax(ad.affine(hidden, w2, b2), mask)
        return ad.nll_loss(logp, targets)

    check_grads(build, [w1, b1, w2, b2])


def test_grad_actor_loss_pipeline():
    # E[ sum_a pi(a) * (beta*logpi(a) - minQ(a)) ] through exp of the log-probs
    rng = np.random.default_rng(12)
    logits_w, logits_b = leaf(rng, (4, 6)), leaf(rng, (4,))
    x = Tensor(rng.normal(size=(5, 6)))
    mask = rng.random((5, 4)) < 0.7
    mask[np.arange(5), rng.integers(0, 4, 5)] = True
    min_q = rng.normal(size=(5, 4))
    beta = 0.37

    def build():
        logp = ad.masked_log_softmax(ad.affine(x, logits_w, logits_b), mask)
        probs = ad.exp(logp)
        inner = ad.shift(ad.scale(logp, beta), -min_q)
        return ad.mean_all(ad.sum_rows(ad.mul(probs, inner)))

    check_grads(build, [logits_w, logits_b])


def test_grad_critic_loss_pipeline():
    rng = np.random.default_rng(13)
    x = Tensor(rng.normal(size=(6, 5)))
    w, b = leaf(rng, (4, 5)), leaf(rng, (4,))
    actions = np.array([0, 1, 3, 2, 1, 0])
    y = Tensor(rng.normal(size=(6,)))

    def build():
        q = ad.affine(x, w, b)
        picked = ad.gather_cols(q, actions)
        return ad.scale(ad.mean_all(ad.square(ad.sub(picked, y))), 0.5)

    check_grads(build, [w, b])


# ---------------------------------------------------------------------- tape

def test_tapes_do_not_nest():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_backward_requires_scalar():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        out = ad.scale(a, 2.0)
        with pytest.raises(ValueError):
            tape.backward(out)


def test_constants_record_no_nodes():
    a = Tensor(np.ones((2, 2)))  # requires_grad=False
    with Tape() as tape:
        out = ad.sigmoid(ad.scale(a, 3.0))
    assert len(tape) == 0
    assert out.grad is None


def test_ops_without_tape_leave_no_gradients():
    a = Tensor(np.ones(3), requires_grad=True)
    out = ad.sum_all(ad.square(a))
    assert out.grad is None and a.grad is None


# ----------------------------------------------------------------- optimizer

def test_adam_first_step_is_signed_lr():
    params = ParamSet()
    t = params.add("w", np.array([1.0, -2.0, 0.5]))
    t.grad = np.array([0.7, -1.3, 2.0])
    before = t.data.copy()
    adam_step(params, lr=1e-2)
    expected = before - 1e-2 * np.sign(t.grad)
    np.testing.assert_allclose(t.data, expected, atol=1e-2 * 1e-6)


def test_adam_skips_missing_grads():
    params = ParamSet()
    a = params.add("a", np.ones(2))
    b = params.add("b", np.ones(2))
    a.grad = np.ones(2)
    adam_step(params, lr=0.1)
    assert not np.array_equal(a.data, np.ones(2))
    np.testing.assert_array_equal(b.data, np.ones(2))


def test_adam_unbiased_across_steps():
    # constant gradient: every bias-corrected step equals lr exactly
    params = ParamSet()
    t = params.add("w", np.zeros(1))
    for _ in range(5):
        t.grad = np.array([1.0])
        adam_step(params, lr=0.01)
    np.testing.assert_allclose(t.data, [-0.05], rtol=1e-6)


def test_ema_update_frozen_example():
    target, online = ParamSet(), ParamSet()
    target.add("w", np.zeros(3))
    online.add("w", np.ones(3))
    ema_update(target, online, tau=0.005)
    np.testing.assert_allclose(target["w"].data, np.full(3, 0.005), rtol=1e-12)


def test_init_uniform_bounds():
    rng = np.random.default_rng(14)
    w = init_uniform(rng, (200, 50), fan_in=50)
    bound = 1.0 / np.sqrt(50)
    assert np.abs(w).max() <= bound
    assert abs(w.mean()) < bound / 10


# ------------------------------------------------------------------ paramset

def test_paramset_duplicate_name_rejected():
    params = ParamSet()
    params.add("w", np.zeros(1))
    with pytest.raises(ValueError):
        params.add("w", np.zeros(1))


def test_paramset_copy_is_independent():
    params = ParamSet()
    params.add("w", np.zeros(2))
    clone = params.copy()
    clone["w"].data += 1.0
    np.testing.assert_array_equal(params["w"].data, np.zeros(2))


def test_load_state_validates_names_and_shapes():
    params = ParamSet()
    params.add("w", np.zeros((2, 2)))
    with pytest.raises(CheckpointError):
        params.load_state({"v": np.zeros((2, 2))})
    with pytest.raises(CheckpointError):
        params.load_state({"w": np.zeros((2, 3))})


# --------------------------------------------------------------- checkpoints

def make_params():
    rng = np.random.default_rng(15)
    params = ParamSet()
    params.add("layer.w", rng.normal(size=(4, 3)))
    params.add("layer.b", rng.normal(size=4))
    params.add("log_beta", np.array(np.log(0.01)))  # 0-d scalar
    return params


def test_checkpoint_round_trip_bitwise(tmp_path):
    params = make_params()
    path = tmp_path / "p.ckpt"
    save_params(str(path), params, meta={"kind": "actor", "nodes": 5})
    arrays, meta = load_params(str(path))
    assert meta == {"kind": "actor", "nodes": 5}
    assert set(arrays) == set(params.names())
    for name, arr in arrays.items():
        np.testing.assert_array_equal(arr, params[name].data)
        assert arr.shape == params[name].data.shape

    clone = make_params()
    for t in clone._params.values():
        t.data = t.data * 0
    clone.load_state(arrays)
    for name in params.names():
        np.testing.assert_array_equal(clone[name].data, params[name].data)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"something else\n{}\ndata\n")
    with pytest.raises(CheckpointError):
        load_params(str(path))


def test_checkpoint_truncated_payload(tmp_path):
    params = make_params()
    path = tmp_path / "p.ckpt"
    save_params(str(path), params)
    blob = path.read_bytes()
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(blob[:-16])
    with pytest.raises(CheckpointError):
        load_params(str(cut))


def test_checkpoint_trailing_bytes(tmp_path):
    params = make_params()
    path = tmp_path / "p.ckpt"
    save_params(str(path), params)
    padded = tmp_path / "pad.ckpt"
    padded.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load_params(str(padded))


def test_checkpoint_missing_data_section(tmp_path):
    path = tmp_path / "no-data.ckpt"
    path.write_bytes(b"edgesched-params v1\n{}\ntensor w 2,2\n")
    with pytest.raises(CheckpointError):
        load_params(str(path))
