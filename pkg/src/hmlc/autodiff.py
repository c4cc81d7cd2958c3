"""Dense-array reverse-mode autodiff on numpy, define-by-run.

Ops executed while a ``Tape`` is active append their backward closures to
it in creation order, which is already a topological order of the compute
graph; ``Tape.backward`` therefore replays the list once, in reverse.
Without an active tape the same ops run forward-only (inference mode).

Every op validates that its result is finite and raises ``NonFiniteValue``
otherwise; numerical trouble is an error state here, never a silent NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TensorError(ValueError):
    pass


class ShapeMismatch(TensorError):
    pass


class NonFiniteValue(TensorError):
    pass


_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.dtype(np.float32)


def set_default_dtype(name: str) -> None:
    """Select the working precision, "f32" (default) or "f64"."""
    global _default_dtype
    if name not in _DTYPES:
        raise TensorError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _default_dtype = np.dtype(_DTYPES[name])


def default_dtype() -> np.dtype:
    return _default_dtype


class Tensor:
    """A dense array plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad", "constant")

    def __init__(self, data: np.ndarray, constant: bool = False):
        self.data = data
        self.grad = None
        self.constant = constant

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def tensor(values, dtype=None, constant: bool = False) -> Tensor:
    data = np.asarray(values, dtype=dtype or _default_dtype)
    _check_finite(data)
    return Tensor(data, constant=constant)


def const(values, dtype=None) -> Tensor:
    """A tensor excluded from gradient accumulation (targets, masks, selectors)."""
    return tensor(values, dtype=dtype, constant=True)


_TAPES: list["Tape"] = []


class Tape:
    """Recording scope for one forward pass. Use as a context manager."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and accumulate grads into every reachable
        input. Each recorded node's closure runs at most once, in reverse
        creation order; nodes off the path to ``loss`` have no gradient and
        are skipped."""
        if loss.data.shape != ():
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for out, fn in reversed(self.nodes):
            if out.grad is not None:
                fn(out.grad)


def _active() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _check_finite(data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("operation produced NaN or Inf")


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.constant:
        return
    if t.grad is None:
        t.grad = np.array(g)  # own a copy; g may alias another node's grad
    else:
        t.grad += g


def _emit(data: np.ndarray, make_backward) -> Tensor:
    _check_finite(data)
    out = Tensor(data)
    tape = _active()
    if tape is not None:
        tape.nodes.append((out, make_backward()))
    return out


def zero_grads(tensors) -> None:
    for t in tensors.values() if isinstance(tensors, dict) else tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
        data = a.data @ b.data

        def bw():
            def fn(g):
                _accum(a, g @ b.data.T)
                _accum(b, a.data.T @ g)
            return fn

    elif a.ndim == 2 and b.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
        data = a.data @ b.data

        def bw():
            def fn(g):
                _accum(a, np.outer(g, b.data))
                _accum(b, a.data.T @ g)
            return fn

    elif a.ndim == 1 and b.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
        data = a.data @ b.data

        def bw():
            def fn(g):
                _accum(a, b.data @ g)
                _accum(b, np.outer(a.data, g))
            return fn

    else:
        raise ShapeMismatch(f"matmul supports 1D/2D operands, got {a.ndim}D @ {b.ndim}D")
    return _emit(data, bw)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T for 2D operands (attention score shortcut)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"matmul_nt {a.shape} @ {b.shape}.T")
    data = a.data @ b.data.T

    def bw():
        def fn(g):
            _accum(a, g @ b.data)
            _accum(b, g.T @ a.data)
        return fn

    return _emit(data, bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def bw():
            def fn(g):
                _accum(a, g)
                _accum(b, g)
            return fn
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        # row-broadcast bias
        def bw():
            def fn(g):
                _accum(a, g)
                _accum(b, g.sum(axis=0))
            return fn
    else:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    return _emit(a.data + b.data, bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub {a.shape} - {b.shape}")

    def bw():
        def fn(g):
            _accum(a, g)
            _accum(b, -g)
        return fn

    return _emit(a.data - b.data, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")

    def bw():
        def fn(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)
        return fn

    return _emit(a.data * b.data, bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw():
        def fn(g):
            _accum(a, g * c)
        return fn

    return _emit(a.data * c, bw)


def shift(a: Tensor, c: float) -> Tensor:
    def bw():
        def fn(g):
            _accum(a, g)
        return fn

    return _emit(a.data + float(c), bw)


def pow_const(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data**p

    def bw():
        def fn(g):
            if p == 0.0:
                return
            _accum(a, g * p * a.data ** (p - 1.0))
        return fn

    return _emit(data, bw)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="raise", invalid="raise"):
        try:
            data = np.log(a.data)
        except FloatingPointError as e:
            raise NonFiniteValue("log of a non-positive value") from e

    def bw():
        def fn(g):
            _accum(a, g / a.data)
        return fn

    return _emit(data, bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)

    def bw():
        inside = (a.data > lo) & (a.data < hi)

        def fn(g):
            _accum(a, g * inside)
        return fn

    return _emit(data, bw)


# ---------------------------------------------------------------------------
# nonlinearities

_SIGMOID_CLAMP = 15.0  # keeps sigmoid outputs away from exact 0/1 in f32


def sigmoid(a: Tensor) -> Tensor:
    x = np.clip(a.data, -_SIGMOID_CLAMP, _SIGMOID_CLAMP)
    s = 1.0 / (1.0 + np.exp(-x))

    def bw():
        inside = np.abs(a.data) < _SIGMOID_CLAMP

        def fn(g):
            _accum(a, g * s * (1.0 - s) * inside)
        return fn

    return _emit(s, bw)


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)), computed stably; note log(1-sigmoid(x)) = log_sigmoid(-x)."""
    data = -np.logaddexp(0.0, -a.data)

    def bw():
        def fn(g):
            _accum(a, g * np.exp(-np.logaddexp(0.0, a.data)))  # sigmoid(-x)
        return fn

    return _emit(data, bw)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bw():
        def fn(g):
            _accum(a, g * (a.data > 0))
        return fn

    return _emit(data, bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw():
        def fn(g):
            _accum(a, g * (1.0 - data * data))
        return fn

    return _emit(data, bw)


def softmax(a: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    """Row softmax of a 2D tensor. ``key_mask`` (bool per column) restricts the
    distribution to valid columns; masked columns get probability exactly 0,
    matching physical removal of those columns."""
    if a.ndim != 2:
        raise ShapeMismatch(f"softmax expects 2D rows, got {a.shape}")
    if key_mask is None:
        x = a.data - a.data.max(axis=1, keepdims=True)
        e = np.exp(x)
    else:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (a.shape[1],):
            raise ShapeMismatch(f"key_mask shape {key_mask.shape} vs {a.shape[1]} columns")
        if not key_mask.any():
            raise ShapeMismatch("softmax with all columns masked")
        valid = a.data[:, key_mask]
        x = a.data - valid.max(axis=1, keepdims=True)
        e = np.exp(x) * key_mask
    p = e / e.sum(axis=1, keepdims=True)

    def bw():
        def fn(g):
            _accum(a, p * (g - (g * p).sum(axis=1, keepdims=True)))
        return fn

    return _emit(p, bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm gain/bias must be ({d},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def bw():
        def fn(g):
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
            _accum(bias, g.reshape(-1, d).sum(axis=0))
            gx = g * gain.data
            _accum(
                a,
                inv
                * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                ),
            )
        return fn

    return _emit(data, bw)


def mean_rows(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatch(f"mean_rows expects 2D, got {a.shape}")
    r = a.shape[0]
    data = a.data.mean(axis=0)

    def bw():
        def fn(g):
            _accum(a, np.broadcast_to(g / r, a.shape))
        return fn

    return _emit(data, bw)


def l2_normalize(a: Tensor) -> Tensor:
    """Scale rows (2D) or the whole vector (1D) to unit Euclidean norm."""
    if a.ndim == 1:
        n = np.linalg.norm(a.data)
        y = a.data / n

        def bw():
            def fn(g):
                _accum(a, (g - y * (y @ g)) / n)
            return fn

    elif a.ndim == 2:
        n = np.linalg.norm(a.data, axis=1, keepdims=True)
        y = a.data / n

        def bw():
            def fn(g):
                _accum(a, (g - y * (y * g).sum(axis=1, keepdims=True)) / n)
            return fn

    else:
        raise ShapeMismatch(f"l2_normalize expects 1D or 2D, got {a.shape}")
    return _emit(y, bw)


# ---------------------------------------------------------------------------
# structure

def concat(parts: list[Tensor], dim: int = 0) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat of nothing")
    nd = parts[0].ndim
    if any(p.ndim != nd for p in parts) or dim >= nd:
        raise ShapeMismatch("concat rank/dim mismatch")
    data = np.concatenate([p.data for p in parts], axis=dim)

    def bw():
        sizes = [p.shape[dim] for p in parts]

        def fn(g):
            start = 0
            for p, size in zip(parts, sizes):
                sl = [slice(None)] * nd
                sl[dim] = slice(start, start + size)
                _accum(p, g[tuple(sl)])
                start += size
        return fn

    return _emit(data, bw)


def stack_rows(parts: list[Tensor]) -> Tensor:
    """Stack 1D tensors into a 2D matrix, one per row."""
    if not parts or any(p.ndim != 1 for p in parts):
        raise ShapeMismatch("stack_rows needs a nonempty list of 1D tensors")
    data = np.stack([p.data for p in parts])

    def bw():
        def fn(g):
            for i, p in enumerate(parts):
                _accum(p, g[i])
        return fn

    return _emit(data, bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatch(f"slice_rows expects 2D, got {a.shape}")
    data = a.data[start:stop].copy()

    def bw():
        def fn(g):
            if not a.constant and a.grad is None:
                a.grad = np.zeros_like(a.data)
            if not a.constant:
                a.grad[start:stop] += g
        return fn

    return _emit(data, bw)


def row(a: Tensor, i: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatch(f"row expects 2D, got {a.shape}")
    data = a.data[i].copy()

    def bw():
        def fn(g):
            if not a.constant and a.grad is None:
                a.grad = np.zeros_like(a.data)
            if not a.constant:
                a.grad[i] += g
        return fn

    return _emit(data, bw)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bw():
        def fn(g):
            _accum(a, g.reshape(a.shape))
        return fn

    return _emit(data, bw)


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.data.size,))


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def bw():
        def fn(g):
            _accum(a, np.broadcast_to(g, a.shape))
        return fn

    return _emit(data, bw)


def embed(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds into it."""
    ids = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeMismatch(f"embed table must be 2D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch("token id outside embedding table")
    data = table.data[ids]

    def bw():
        def fn(g):
            if table.constant:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)
        return fn

    return _emit(data, bw)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    ok: bool
    max_abs_err: float
    max_rel_err: float
    checked: int

    def assert_ok(self):
        if not self.ok:
            raise AssertionError(
                f"gradient check failed: max_abs_err={self.max_abs_err:.3e} "
                f"max_rel_err={self.max_rel_err:.3e} over {self.checked} coords"
            )


def grad_check(f, wrt: list[Tensor], rtol: float = 1e-3, atol: float = 1e-5,
               step: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` against central finite
    differences over every coordinate of the ``wrt`` tensors. ``f`` must be a
    pure function of the current tensor values. Run in f64 for headroom."""
    zero_grads(wrt)
    with Tape() as tape:
        out = f()
        tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]
    zero_grads(wrt)

    ok = True
    max_abs = 0.0
    max_rel = 0.0
    checked = 0
    for t, a in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            h = step * max(1.0, abs(float(orig)))
            flat[j] = orig + h
            fp = f().item()
            flat[j] = orig - h
            fm = f().item()
            flat[j] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(float(aflat[j]) - num)
            rel = err / max(abs(num), 1e-12)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, rel)
            if err > atol + rtol * abs(num):
                ok = False
            checked += 1
    return GradCheckReport(ok=ok, max_abs_err=max_abs, max_rel_err=max_rel, checked=checked)
