"""Tape engine: forward values, error states, and finite-difference checks."""

from __future__ import annotations

import numpy as np
import pytest

from hmlc import autodiff as ad


def _t(rng, *shape, lo=-1.0, hi=1.0):
    return ad.tensor(rng.uniform(lo, hi, size=shape))


# ---------------------------------------------------------------------------
# forward values and error states


def test_sigmoid_at_zero_value_and_grad():
    x = ad.tensor(0.0)
    with ad.Tape() as tape:
        s = ad.sigmoid(x)
        tape.backward(s)
    assert s.item() == pytest.approx(0.5)
    assert float(x.grad) == pytest.approx(0.25)


def test_concat_shape_rule():
    a = ad.tensor(np.zeros((3, 4)))
    b = ad.tensor(np.ones((3, 4)))
    assert ad.concat([a, b], dim=0).shape == (6, 4)
    assert ad.concat([a, b], dim=1).shape == (3, 8)
    with pytest.raises(ad.ShapeMismatch):
        ad.concat([a, ad.tensor(np.zeros(4))], dim=0)
    with pytest.raises(ad.ShapeMismatch):
        ad.concat([], dim=0)


def test_softmax_constant_row_uniform():
    p = ad.softmax(ad.tensor(np.full((2, 5), 3.7)))
    assert np.allclose(p.data, 0.2)
    assert np.allclose(p.data.sum(axis=1), 1.0, atol=1e-6)


def test_masked_softmax_matches_physical_removal():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 5))
    mask = np.array([True, False, True, True, False])
    masked = ad.softmax(ad.tensor(x), key_mask=mask)
    removed = ad.softmax(ad.tensor(x[:, mask]))
    assert np.allclose(masked.data[:, mask], removed.data, atol=1e-6)
    assert np.all(masked.data[:, ~mask] == 0.0)


def test_softmax_all_masked_raises():
    with pytest.raises(ad.ShapeMismatch):
        ad.softmax(ad.tensor(np.zeros((1, 3))), key_mask=np.zeros(3, dtype=bool))


def test_log_of_nonpositive_raises():
    with pytest.raises(ad.NonFiniteValue):
        ad.log(ad.tensor([1.0, -0.5]))
    with pytest.raises(ad.NonFiniteValue):
        ad.log(ad.tensor([0.0]))


def test_tensor_rejects_nonfinite():
    with pytest.raises(ad.NonFiniteValue):
        ad.tensor([1.0, np.inf])


def test_backward_needs_scalar():
    x = ad.tensor([1.0, 2.0])
    with ad.Tape() as tape:
        y = ad.scale(x, 2.0)
        with pytest.raises(ad.ShapeMismatch):
            tape.backward(y)


def test_no_tape_is_inference_mode():
    x = ad.tensor([1.0, 2.0])
    y = ad.sum_all(ad.mul(x, x))
    assert y.item() == pytest.approx(5.0)
    assert x.grad is None


def test_nested_tapes_record_independently():
    x = ad.tensor(2.0)
    with ad.Tape() as outer:
        a = ad.scale(x, 3.0)
        with ad.Tape() as inner:
            b = ad.scale(x, 5.0)
            inner.backward(b)
        assert len(inner.nodes) == 1
        assert float(x.grad) == pytest.approx(5.0)
        x.grad = None
        outer.backward(a)
    assert len(outer.nodes) == 1
    assert float(x.grad) == pytest.approx(3.0)


def test_constants_collect_no_grad():
    c = ad.const([1.0, 2.0])
    x = ad.tensor([3.0, 4.0])
    with ad.Tape() as tape:
        tape.backward(ad.sum_all(ad.mul(c, x)))
    assert c.grad is None
    assert np.allclose(x.grad, [1.0, 2.0])


def test_clip_grad_zero_outside_bounds():
    x = ad.tensor([-1.0, 0.5, 2.0])
    with ad.Tape() as tape:
        tape.backward(ad.sum_all(ad.clip(x, 0.0, 1.0)))
    assert np.allclose(x.grad, [0.0, 1.0, 0.0])


def test_embed_scatter_add_repeated_ids():
    table = ad.tensor(np.ones((3, 2)))
    with ad.Tape() as tape:
        tape.backward(ad.sum_all(ad.embed(table, [0, 0, 2])))
    assert np.allclose(table.grad, [[2, 2], [0, 0], [1, 1]])
    with pytest.raises(ad.ShapeMismatch):
        ad.embed(table, [3])


def test_row_and_slice_accumulate_in_place():
    x = ad.tensor(np.arange(6.0).reshape(3, 2))
    with ad.Tape() as tape:
        y = ad.add(ad.row(x, 1), ad.row(x, 1))
        tape.backward(ad.sum_all(y))
    assert np.allclose(x.grad, [[0, 0], [2, 2], [0, 0]])


def test_zero_grads_dict_and_list():
    a, b = ad.tensor(1.0), ad.tensor(2.0)
    a.grad = np.ones(())
    b.grad = np.ones(())
    ad.zero_grads({"a": a})
    ad.zero_grads([b])
    assert a.grad is None and b.grad is None


def test_set_default_dtype_validation():
    with pytest.raises(ad.TensorError):
        ad.set_default_dtype("f16")
    ad.set_default_dtype("f64")
    assert ad.tensor([1.0]).data.dtype == np.float64
    ad.set_default_dtype("f32")
    assert ad.tensor([1.0]).data.dtype == np.float32


def test_matmul_shape_errors():
    a = ad.tensor(np.zeros((2, 3)))
    with pytest.raises(ad.ShapeMismatch):
        ad.matmul(a, ad.tensor(np.zeros((4, 2))))
    with pytest.raises(ad.ShapeMismatch):
        ad.matmul_nt(a, ad.tensor(np.zeros((2, 4))))
    with pytest.raises(ad.ShapeMismatch):
        ad.add(a, ad.tensor(np.zeros(2)))


# ---------------------------------------------------------------------------
# gradient oracle


def test_sum_of_squares_grad_exact(f64):
    x = ad.tensor(np.linspace(-2, 2, 7))
    report = ad.grad_check(lambda: ad.sum_all(ad.mul(x, x)), [x])
    assert report.ok
    assert report.max_abs_err < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_every_op_passes_grad_check(f64, seed):
    rng = np.random.default_rng(1000 + seed)
    a = _t(rng, 2, 3)
    b = _t(rng, 3, 2)
    c = _t(rng, 2, 3)
    vec = _t(rng, 3)
    pos = _t(rng, 4, lo=0.3, hi=2.0)      # keep log/pow/l2 away from kinks
    gain = _t(rng, 3, lo=0.5, hi=1.5)
    bias = _t(rng, 3)
    mask = np.array([True, False, True])

    cases = {
        "matmul_22": lambda: ad.sum_all(ad.matmul(a, b)),
        "matmul_21": lambda: ad.sum_all(ad.matmul(a, vec)),
        "matmul_12": lambda: ad.sum_all(ad.matmul(vec, b)),
        "matmul_nt": lambda: ad.sum_all(ad.matmul_nt(a, c)),
        "add": lambda: ad.sum_all(ad.add(a, c)),
        "add_bias": lambda: ad.sum_all(ad.add(a, vec)),
        "sub": lambda: ad.sum_all(ad.sub(a, c)),
        "mul": lambda: ad.sum_all(ad.mul(a, c)),
        "scale_shift": lambda: ad.sum_all(ad.shift(ad.scale(a, -1.7), 0.4)),
        "pow": lambda: ad.sum_all(ad.pow_const(pos, 2.5)),
        "log": lambda: ad.sum_all(ad.log(pos)),
        "clip": lambda: ad.sum_all(ad.clip(pos, 0.01, 10.0)),
        "sigmoid": lambda: ad.sum_all(ad.sigmoid(a)),
        "log_sigmoid": lambda: ad.sum_all(ad.log_sigmoid(a)),
        "relu": lambda: ad.sum_all(ad.relu(ad.shift(pos, 0.05))),
        "tanh": lambda: ad.sum_all(ad.tanh(a)),
        "softmax": lambda: ad.sum_all(ad.mul(ad.softmax(a), c)),
        "softmax_masked": lambda: ad.sum_all(
            ad.mul(ad.softmax(a, key_mask=mask), c)),
        "layer_norm": lambda: ad.sum_all(ad.mul(ad.layer_norm(a, gain, bias), c)),
        "mean_rows": lambda: ad.sum_all(ad.mean_rows(a)),
        "l2_norm_1d": lambda: ad.sum_all(ad.mul(ad.l2_normalize(pos), pos)),
        "l2_norm_2d": lambda: ad.sum_all(ad.mul(ad.l2_normalize(a), c)),
        "concat": lambda: ad.sum_all(ad.mul(ad.concat([a, c], dim=1),
                                            ad.concat([c, a], dim=1))),
        "stack_rows": lambda: ad.sum_all(ad.mul(ad.stack_rows([vec, vec]),
                                                ad.stack_rows([vec, vec]))),
        "slice_rows": lambda: ad.sum_all(ad.slice_rows(a, 0, 1)),
        "row": lambda: ad.sum_all(ad.row(a, 1)),
        "reshape": lambda: ad.sum_all(ad.mul(ad.reshape(a, (3, 2)), b)),
        "flatten": lambda: ad.sum_all(ad.flatten(a)),
        "embed": lambda: ad.sum_all(ad.embed(a, [0, 1, 0])),
    }
    for name, f in cases.items():
        report = ad.grad_check(f, [a, b, c, vec, pos, gain, bias])
        assert report.ok, f"{name} (seed {seed}): {report}"


def test_grad_check_report_assert_ok():
    bad = ad.GradCheckReport(ok=False, max_abs_err=1.0, max_rel_err=1.0, checked=3)
    with pytest.raises(AssertionError):
        bad.assert_ok()
    ad.GradCheckReport(ok=True, max_abs_err=0.0, max_rel_err=0.0, checked=3).assert_ok()
