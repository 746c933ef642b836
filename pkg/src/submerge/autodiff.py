"""Minimal reverse-mode autodiff over float64 numpy arrays.

A Tape records every primitive application (output, inputs, backward rule)
while active; backward() replays it in reverse, accumulating gradients by
tensor identity. Only the primitives the model needs exist, each with an
explicit backward closure, and every one is checked against central finite
differences in the tests. Everything is float64; there is no implicit
broadcasting beyond what each primitive states.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels


class Tensor:
    """A named float64 array. Identity (not value) keys gradient accumulation."""

    __slots__ = ("data", "name")

    def __init__(self, data, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"


class Tape:
    """Context manager recording primitive applications in execution order."""

    _active = None

    def __init__(self):
        self._entries = []

    def __enter__(self):
        self._prev = Tape._active
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = self._prev
        return False

    def __len__(self):
        return len(self._entries)


def record(out, inputs, grad_fn):
    """Append one application to the active tape (no-op when none is active).

    grad_fn(grad_out) must return one gradient array (or None) per input, in
    order. Exposed so composite ops (e.g. the merge layer) can register a
    custom backward.
    """
    tape = Tape._active
    if tape is not None:
        tape._entries.append((out, tuple(inputs), grad_fn))


def backward(loss, tape, wrt):
    """Gradients of scalar loss w.r.t. each tensor in wrt.

    Returns {tensor: array}; tensors the loss never touched get zeros. The
    loss must be scalar (shape ()).
    """
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    grads = {id(loss): np.ones((), dtype=np.float64)}
    for out, inputs, grad_fn in reversed(tape._entries):
        g_out = grads.get(id(out))
        if g_out is None:
            continue
        for tensor, g_in in zip(inputs, grad_fn(g_out)):
            if g_in is None:
                continue
            slot = grads.get(id(tensor))
            grads[id(tensor)] = g_in if slot is None else slot + g_in
    return {t: grads.get(id(t), np.zeros_like(t.data)) for t in wrt}


# ---------------------------------------------------------------------------
# matmul FLOP instrumentation


class FlopCounter:
    """Accumulates 2*m*k*p per recorded matmul (multiply + add convention)."""

    def __init__(self):
        self.total = 0


_counters = []


@contextmanager
def count_matmul_flops():
    """Count matmul FLOPs of every matmul() run inside the block."""
    counter = FlopCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.pop()


def _note_matmul(batch_shape, m, k, p):
    if _counters:
        cost = 2 * m * k * p
        for dim in batch_shape:
            cost *= dim
        for counter in _counters:
            counter.total += cost


# ---------------------------------------------------------------------------
# primitives


def _unbroadcast(grad, shape):
    """Reduce grad back to shape, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a, b):
    """Matrix product over the last two axes with numpy batch broadcasting."""
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {A.shape} @ {B.shape}")
    if A.shape[-1] != B.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {A.shape} @ {B.shape}")
    batch = np.broadcast_shapes(A.shape[:-2], B.shape[:-2])
    _note_matmul(batch, A.shape[-2], A.shape[-1], B.shape[-1])
    out = Tensor(A @ B)

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape)
        gb = _unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape)
        return ga, gb

    record(out, (a, b), grad_fn)
    return out


def add(a, b):
    A, B = a.data, b.data
    out = Tensor(A + B)

    def grad_fn(g):
        return _unbroadcast(g, A.shape), _unbroadcast(g, B.shape)

    record(out, (a, b), grad_fn)
    return out


def mul(a, b):
    A, B = a.data, b.data
    out = Tensor(A * B)

    def grad_fn(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    record(out, (a, b), grad_fn)
    return out


def scale(a, factor):
    """Multiply by a python float (not differentiated through)."""
    factor = float(factor)
    out = Tensor(a.data * factor)
    record(out, (a,), lambda g: (g * factor,))
    return out


def relu(a):
    A = a.data
    out = Tensor(np.maximum(A, 0.0))
    record(out, (a,), lambda g: (g * (A > 0.0),))
    return out


def reduce_sum(a):
    """Sum all elements to a scalar."""
    A = a.data
    out = Tensor(A.sum())
    record(out, (a,), lambda g: (np.full_like(A, float(g)),))
    return out


def transpose_last2(a):
    out = Tensor(np.swapaxes(a.data, -1, -2))
    record(out, (a,), lambda g: (np.swapaxes(g, -1, -2),))
    return out


def softmax_lastdim(a):
    A = a.data
    shifted = A - A.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def grad_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    record(out, (a,), grad_fn)
    return out


def masked_fill(a, mask, value):
    """Where mask is True, replace by the constant value."""
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, float(value), a.data))
    record(out, (a,), lambda g: (np.where(mask, 0.0, g),))
    return out


def layernorm_lastdim(x, gamma, beta, eps=1e-5):
    """Layer normalization over the last axis with affine parameters."""
    X, G = x.data, gamma.data
    if G.shape != (X.shape[-1],) or beta.data.shape != (X.shape[-1],):
        raise ValueError(
            f"layernorm affine shapes {G.shape}/{beta.data.shape} do not match "
            f"feature dim {X.shape[-1]}"
        )
    mean = X.mean(axis=-1, keepdims=True)
    var = X.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (X - mean) * inv
    out = Tensor(xhat * G + beta.data)

    def grad_fn(g):
        d = X.shape[-1]
        g_beta = g.reshape(-1, d).sum(axis=0)
        g_gamma = (g * xhat).reshape(-1, d).sum(axis=0)
        g_xhat = g * G
        g_x = inv * (
            g_xhat
            - g_xhat.mean(axis=-1, keepdims=True)
            - xhat * (g_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        return g_x, g_gamma, g_beta

    record(out, (x, gamma, beta), grad_fn)
    return out


def embedding_lookup(table, ids):
    """Gather rows of a (V, d) table by an integer id array."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"ids must be integers, got dtype {ids.dtype}")
    T = table.data
    if T.ndim != 2:
        raise ValueError(f"embedding table must be 2-D, got {T.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= T.shape[0]):
        raise ValueError(
            f"ids out of range [0, {T.shape[0]}): [{ids.min()}, {ids.max()}]"
        )
    out = Tensor(T[ids])

    def grad_fn(g):
        gt = np.zeros_like(T)
        np.add.at(gt, ids.ravel(), g.reshape(-1, T.shape[1]))
        return (gt,)

    record(out, (table,), grad_fn)
    return out


def split_heads(a, num_heads):
    """(B, N, d) -> (B, num_heads, N, d // num_heads)."""
    A = a.data
    b, n, d = A.shape
    if d % num_heads:
        raise ValueError(f"d_model {d} not divisible by {num_heads} heads")
    dk = d // num_heads
    out = Tensor(A.reshape(b, n, num_heads, dk).transpose(0, 2, 1, 3))
    record(
        out,
        (a,),
        lambda g: (g.transpose(0, 2, 1, 3).reshape(b, n, d),),
    )
    return out


def join_heads(a):
    """(B, h, N, dk) -> (B, N, h * dk). Inverse of split_heads."""
    A = a.data
    b, h, n, dk = A.shape
    out = Tensor(A.transpose(0, 2, 1, 3).reshape(b, n, h * dk))
    record(
        out,
        (a,),
        lambda g: (g.reshape(b, n, h, dk).transpose(0, 2, 1, 3),),
    )
    return out


def concat_lastdim(a, b):
    A, B = a.data, b.data
    if A.shape[:-1] != B.shape[:-1]:
        raise ValueError(f"concat shapes disagree: {A.shape} vs {B.shape}")
    out = Tensor(np.concatenate([A, B], axis=-1))
    record(
        out,
        (a, b),
        lambda g: (g[..., : A.shape[-1]], g[..., A.shape[-1] :]),
    )
    return out


def select_position(a, index):
    """Pick one sequence position: (B, N, d) -> (B, d)."""
    A = a.data
    if not (0 <= index < A.shape[1]):
        raise ValueError(f"position {index} out of range for N={A.shape[1]}")

    out = Tensor(A[:, index, :])

    def grad_fn(g):
        gx = np.zeros_like(A)
        gx[:, index, :] = g
        return (gx,)

    record(out, (a,), grad_fn)
    return out


def segment_sum(a, segments, num_segments):
    """Per-row segmented sum: (B, N, d) -> (B, num_segments, d)."""
    segments = np.ascontiguousarray(segments, dtype=np.int64)
    out = Tensor(kernels.segment_sum(a.data, segments, num_segments))

    def grad_fn(g):
        return (np.take_along_axis(g, segments[:, :, None], axis=1),)

    record(out, (a,), grad_fn)
    return out


def segment_max(a, segments, num_segments):
    """Per-row segmented max; backward routes to the first argmax member."""
    segments = np.ascontiguousarray(segments, dtype=np.int64)
    vals, arg = kernels.segment_max(a.data, segments, num_segments)
    out = Tensor(vals)

    def grad_fn(g):
        gx = np.zeros_like(a.data)
        bi, si, ki = np.nonzero(arg >= 0)
        ji = arg[bi, si, ki]
        np.add.at(gx, (bi, ji, ki), g[bi, si, ki])
        return (gx,)

    record(out, (a,), grad_fn)
    return out


def cross_entropy_with_logits(logits, targets, valid_mask=None):
    """Mean cross entropy over valid positions.

    logits: (..., C); targets: integer array of the leading shape; valid_mask
    (optional, same leading shape) selects the positions that contribute. The
    mean is over valid positions; an all-invalid mask is an error.
    """
    L = logits.data
    C = L.shape[-1]
    targets = np.asarray(targets)
    if not np.issubdtype(targets.dtype, np.integer):
        raise ValueError(f"targets must be integers, got dtype {targets.dtype}")
    if targets.shape != L.shape[:-1]:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits {L.shape}"
        )
    flat = L.reshape(-1, C)
    t = targets.ravel()
    if valid_mask is None:
        m = np.ones(t.shape, dtype=bool)
    else:
        m = np.asarray(valid_mask, dtype=bool).ravel()
        if m.shape != t.shape:
            raise ValueError("valid_mask shape does not match targets")
    if t[m].size and (t[m].min() < 0 or t[m].max() >= C):
        raise ValueError(f"targets out of range [0, {C})")
    count = int(m.sum())
    if count == 0:
        raise ValueError("cross entropy over zero valid positions")
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + flat.max(axis=1)
    picked = flat[np.arange(flat.shape[0]), np.where(m, t, 0)]
    nll = lse - picked
    out = Tensor((nll * m).sum() / count)

    def grad_fn(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(flat.shape[0]), np.where(m, t, 0)] -= 1.0
        p *= (m / count)[:, None] * float(g)
        return (p.reshape(L.shape),)

    record(out, (logits,), grad_fn)
    return out


def check_gradients(build, params, eps=1e-5, rtol=1e-4, atol=1e-7, sample=None, rng=None):
    """Compare tape gradients against central finite differences.

    build() must run the forward pass using the live data of the tensors in
    params and return the scalar loss Tensor; it is re-run with perturbed
    parameter entries for the finite-difference side. When sample is given,
    only that many randomly chosen coordinates per parameter are probed.
    Raises AssertionError on the first mismatch, returns the largest relative
    error otherwise (relative to max(|fd|, |grad|, 1)).
    """
    with Tape() as tape:
        loss = build()
    grads = backward(loss, tape, params)

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        flat = p.data.reshape(-1)
        idx = range(flat.size)
        if sample is not None and flat.size > sample:
            idx = rng.choice(flat.size, size=sample, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            up = float(build().data)
            flat[i] = keep - eps
            down = float(build().data)
            flat[i] = keep
            fd = (up - down) / (2 * eps)
            got = grads[p].reshape(-1)[i]
            err = abs(got - fd) / max(abs(fd), abs(got), 1.0)
            if err > worst:
                worst = err
            if err > rtol and abs(got - fd) > atol:
                raise AssertionError(
                    f"gradient mismatch for {p.name or 'tensor'}[{i}]: "
                    f"tape {got:.10g} vs fd {fd:.10g} (rel {err:.3g})"
                )
    return worst


def finite(t):
    """True when every element of the tensor is finite."""
    return bool(np.isfinite(t.data).all())
