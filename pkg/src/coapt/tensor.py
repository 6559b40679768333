"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Everything in this package computes in 64-bit floats. Tensors are plain
numpy arrays wrapped with two flags: ``requires_grad`` (participates in
differentiation) and ``frozen`` (must never be updated by an optimizer).
Scalars are represented as 1x1 tensors.

Operations record themselves on the active :class:`GradTape` whenever one
is open and the result requires a gradient. Replaying the tape in reverse
execution order yields gradients for every reachable ``requires_grad``
tensor. Distinct tapes over shared read-only parameters may run on
different threads; the active tape is thread-local.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    DeterminismError,
    DimensionError,
    BudgetOverflowError,
    ParameterError,
)

Array = np.ndarray


class Tensor:
    """A 2-D float64 array plus differentiation/freeze flags."""

    __slots__ = ("data", "requires_grad", "frozen", "name")

    def __init__(self, data, requires_grad: bool = False, frozen: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.frozen = frozen
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def freeze(self) -> "Tensor":
        self.frozen = True
        self.requires_grad = False
        return self

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flags = []
        if self.requires_grad:
            flags.append("grad")
        if self.frozen:
            flags.append("frozen")
        tag = f" {self.name}" if self.name else ""
        return f"Tensor({self.shape}{tag}{' ' + ','.join(flags) if flags else ''})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

GradFn = Callable[[Array], Sequence[Array | None]]


@dataclass
class _OpRecord:
    output: Tensor
    inputs: tuple[Tensor, ...]
    grad_fn: GradFn


_tls = threading.local()


def _tape_stack() -> list["GradTape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of executed operations, replayed backward for gradients."""

    def __init__(self):
        self._records: list[_OpRecord] = []
        self._output_ids: set[int] = set()

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape stack corrupted: exiting a non-active tape")
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: Iterable[Tensor], grad_fn: GradFn) -> None:
        self._records.append(_OpRecord(output, tuple(inputs), grad_fn))
        self._output_ids.add(id(output))

    def backward(self, loss: Tensor) -> dict[Tensor, Array]:
        """Gradient of ``loss`` w.r.t. every requires_grad tensor reachable from it.

        The tape is cleared afterwards; tensors with ``requires_grad=False``
        never accumulate a gradient.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._output_ids:
            raise ContractError("loss tensor was not produced on this tape")
        grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self._records):
            out_grad = grads.get(id(rec.output))
            if out_grad is None:
                continue
            input_grads = rec.grad_fn(out_grad)
            for inp, g in zip(rec.inputs, input_grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    holders[key] = inp
        result = {holders[k]: v for k, v in grads.items() if holders[k].requires_grad}
        self._records.clear()
        self._output_ids.clear()
        return result


def _register(output: Tensor, inputs: tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    output.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and output.requires_grad:
        tape.record(output, inputs, grad_fn)
    return output


# --------------------------------------------------------------------------
# Elementwise and structural operations
# --------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a single row broadcast over ``a``'s rows."""
    if a.shape == b.shape:
        out = Tensor(a.data + b.data)

        def grad_fn(g):
            return g, g

    elif b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        out = Tensor(a.data + b.data)

        def grad_fn(g):
            return g, g.sum(axis=0, keepdims=True)

    else:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _register(out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors (rows broadcast like add)."""
    if a.shape == b.shape:
        out = Tensor(a.data * b.data)

        def grad_fn(g):
            return g * b.data, g * a.data

    elif b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        out = Tensor(a.data * b.data)

        def grad_fn(g):
            return g * b.data, (g * a.data).sum(axis=0, keepdims=True)

    else:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    return _register(out, (a, b), grad_fn)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)

    def grad_fn(g):
        return (g * s,)

    return _register(out, (a,), grad_fn)


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data + s)

    def grad_fn(g):
        return (g,)

    return _register(out, (a,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with the standard dA = dC B^T, dB = A^T dC rules."""
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _register(out, (a, b), grad_fn)


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy())

    def grad_fn(g):
        return (g.T,)

    return _register(out, (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0

    def grad_fn(g):
        return (g * mask,)

    return _register(out, (a,), grad_fn)


def log_clamped(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with a lower clamp; gradient is zero in the clamped region."""
    clamped = np.maximum(a.data, floor)
    out = Tensor(np.log(clamped))
    active = a.data > floor

    def grad_fn(g):
        return (np.where(active, g / clamped, 0.0),)

    return _register(out, (a,), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.array([[a.data.sum()]]))

    def grad_fn(g):
        return (np.full_like(a.data, float(g[0, 0])),)

    return _register(out, (a,), grad_fn)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows, returning a single row."""
    m = a.shape[0]
    out = Tensor(a.data.mean(axis=0, keepdims=True))

    def grad_fn(g):
        return (np.repeat(g / m, m, axis=0),)

    return _register(out, (a,), grad_fn)


def row_select(a: Tensor, index: int) -> Tensor:
    if not 0 <= index < a.shape[0]:
        raise DimensionError(f"row {index} out of range for shape {a.shape}")
    out = Tensor(a.data[index : index + 1].copy())

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[index] = g[0]
        return (full,)

    return _register(out, (a,), grad_fn)


def col_slice(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"column slice [{start}:{stop}] out of range for shape {a.shape}")
    out = Tensor(a.data[:, start:stop].copy())

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _register(out, (a,), grad_fn)


def vstack(parts: Sequence[Tensor]) -> Tensor:
    """Stack blocks of rows; gradients split back along the same boundaries."""
    if not parts:
        raise ContractError("vstack of zero parts")
    width = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != width:
            raise DimensionError(f"vstack width mismatch: {p.shape[1]} vs {width}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.shape[0] for p in parts]

    def grad_fn(g):
        grads = []
        at = 0
        for n in sizes:
            grads.append(g[at : at + n])
            at += n
        return grads

    return _register(out, tuple(parts), grad_fn)


def hconcat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate blocks of columns; inverse split in the gradient."""
    if not parts:
        raise ContractError("hconcat of zero parts")
    height = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != height:
            raise DimensionError(f"hconcat height mismatch: {p.shape[0]} vs {height}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.shape[1] for p in parts]

    def grad_fn(g):
        grads = []
        at = 0
        for n in sizes:
            grads.append(g[:, at : at + n])
            at += n
        return grads

    return _register(out, tuple(parts), grad_fn)


# --------------------------------------------------------------------------
# Normalization, softmax, similarity
# --------------------------------------------------------------------------


def softmax_rows(x: Tensor, temperature: float = 1.0, key_mask: Array | None = None) -> Tensor:
    """Row-wise softmax of ``x / temperature`` with max-subtraction.

    ``key_mask`` is an optional boolean vector over columns; masked columns
    get probability exactly zero and receive no gradient (used for PAD keys
    in attention). Every row must keep at least one unmasked column.
    """
    if not (isinstance(temperature, (int, float)) and math.isfinite(temperature) and temperature > 0):
        raise ParameterError(f"softmax temperature must be a positive finite scalar, got {temperature!r}")
    z = x.data / float(temperature)
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool).reshape(-1)
        if key_mask.shape[0] != x.shape[1]:
            raise DimensionError(f"mask length {key_mask.shape[0]} != column count {x.shape[1]}")
        if not key_mask.any():
            raise ParameterError("softmax mask excludes every column")
        z = np.where(key_mask, z, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    if key_mask is not None:
        e = np.where(key_mask, e, 0.0)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def grad_fn(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return ((p * (g - inner)) / float(temperature),)

    return _register(out, (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    if not (isinstance(eps, (int, float)) and eps > 0):
        raise ParameterError(f"layer_norm eps must be positive, got {eps!r}")
    n = x.shape[1]
    if gain.shape != (1, n) or shift.shape != (1, n):
        raise DimensionError(
            f"layer_norm gain/shift must be rows of width {n}, got {gain.shape} and {shift.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + shift.data)

    def grad_fn(g):
        dxhat = g * gain.data
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dshift = g.sum(axis=0, keepdims=True)
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dshift

    return _register(out, (x, gain, shift), grad_fn)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """cos(a, b) = a.b / (|a||b|) for two single-row tensors, as a 1x1 tensor."""
    if a.shape != b.shape or a.shape[0] != 1:
        raise DimensionError(f"cosine expects matching single rows, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    dot = float(a.data.reshape(-1) @ b.data.reshape(-1))
    c = dot / (na * nb)
    out = Tensor(np.array([[c]]))

    def grad_fn(g):
        s = float(g[0, 0])
        da = s * (b.data / (na * nb) - c * a.data / (na * na))
        db = s * (a.data / (na * nb) - c * b.data / (nb * nb))
        return da, db

    return _register(out, (a, b), grad_fn)


# --------------------------------------------------------------------------
# Transformer block
# --------------------------------------------------------------------------


@dataclass
class AttentionBlockParams:
    """Weights of one pre-norm self-attention + feed-forward block."""

    ln1_gain: Tensor
    ln1_shift: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    heads: int
    max_len: int | None = None
    eps: float = 1e-5

    def tensors(self) -> list[Tensor]:
        return [
            self.ln1_gain, self.ln1_shift,
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.ln2_gain, self.ln2_shift, self.w1, self.b1, self.w2, self.b2,
        ]


def attention_block(x: Tensor, params: AttentionBlockParams, key_mask: Array | None = None) -> Tensor:
    """Multi-head self-attention plus feed-forward, both with residuals.

    Full (non-causal) attention over all unmasked positions; ``key_mask``
    removes PAD rows from the key/value side.
    """
    length, dim = x.shape
    if params.max_len is not None and length > params.max_len:
        raise BudgetOverflowError(f"sequence length {length} exceeds context length {params.max_len}")
    heads = params.heads
    if dim % heads != 0:
        raise DimensionError(f"model width {dim} not divisible by {heads} heads")
    head_dim = dim // heads

    h = layer_norm(x, params.ln1_gain, params.ln1_shift, params.eps)
    q = add(matmul(h, params.wq), params.bq)
    k = add(matmul(h, params.wk), params.bk)
    v = add(matmul(h, params.wv), params.bv)
    outputs = []
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    for i in range(heads):
        lo, hi = i * head_dim, (i + 1) * head_dim
        qi = col_slice(q, lo, hi)
        ki = col_slice(k, lo, hi)
        vi = col_slice(v, lo, hi)
        scores = scale(matmul(qi, transpose(ki)), inv_sqrt)
        weights = softmax_rows(scores, 1.0, key_mask=key_mask)
        outputs.append(matmul(weights, vi))
    attended = add(matmul(hconcat(outputs), params.wo), params.bo)
    x = add(x, attended)

    h2 = layer_norm(x, params.ln2_gain, params.ln2_shift, params.eps)
    hidden = relu(add(matmul(h2, params.w1), params.b1))
    ff = add(matmul(hidden, params.w2), params.b2)
    return add(x, ff)


# --------------------------------------------------------------------------
# Gradient verification
# --------------------------------------------------------------------------


def finite_diff_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` must be a deterministic scalar-valued function of ``params`` (it is
    evaluated twice up front and must agree bitwise). Relative error uses the
    denominator max(|numeric gradient|, 1e-8) per coordinate.
    """
    if not (isinstance(h, (int, float)) and h > 0):
        raise ParameterError(f"finite difference step must be positive, got {h!r}")
    first = f(params).data.copy()
    second = f(params).data.copy()
    if not np.array_equal(first, second):
        raise DeterminismError("function under test returned differing values on repeat evaluation")

    tape = GradTape()
    with tape:
        loss = f(params)
    grads = tape.backward(loss)

    worst = 0.0
    for p in params:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = f(params).item()
            flat[idx] = orig - h
            fm = f(params).item()
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(numeric), 1e-8)
            err = abs(analytic.reshape(-1)[idx] - numeric) / denom
            worst = max(worst, err)
    return worst
