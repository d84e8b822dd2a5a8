"""Dense f64 tensors with a reverse-mode gradient tape.

The tape is define-by-run: each training step builds a fresh ``Tape``,
``watch()``es the trainable parameters, runs the forward computation through
the ops in this module, and calls ``Tape.backward`` on a scalar loss. Ops on
tensors that are not attached to a tape return plain constants, so inference
pays no tracking cost.

Everything is float64. Gradients accumulate additively across fan-out, and a
second identical forward+backward pass reproduces gradients bit for bit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySelectionError, ShapeError, SingularityError

# Debug-mode guard: verify every op output is finite. Off by default (hot path).
_CHECK_FINITE = os.environ.get("DMBA_DEBUG", "") not in ("", "0", "false")


def set_debug_checks(enabled: bool) -> None:
    """Enable/disable NaN/Inf checking after every forward op."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def debug_checks_enabled() -> bool:
    return _CHECK_FINITE


class Tape:
    """Ordered record of one forward pass.

    Nodes are appended in execution order, so parents always precede their
    consumers and the reverse sweep is a valid topological order.
    """

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._backwards: list = []
        self._watched: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._parents)

    def watch(self, *tensors: "Tensor") -> None:
        """Register leaf tensors whose gradients should be collected."""
        for t in tensors:
            t.tape = self
            t.node_id = self._append((), None)
            self._watched.append(t)

    def _append(self, parents: tuple[int, ...], backward) -> int:
        self._parents.append(parents)
        self._backwards.append(backward)
        return len(self._parents) - 1

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every watched tensor."""
        if loss.tape is not self:
            raise ValueError("loss tensor is not recorded on this tape")
        if loss.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        grads: list = [None] * len(self._parents)
        grads[loss.node_id] = np.ones((), dtype=np.float64)
        for nid in range(loss.node_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            bw = self._backwards[nid]
            if bw is None:
                continue  # leaf: keep gradient for collection below
            for pid, pg in zip(self._parents[nid], bw(g)):
                if pg is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
            grads[nid] = None  # free intermediate gradient memory early
        for leaf in self._watched:
            g = grads[leaf.node_id]
            leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64)


class Tensor:
    """Row-major float64 buffer, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node_id", "grad")

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.tape = tape
        self.node_id = node_id
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        if self.tape is None:
            raise ValueError("tensor is not attached to a tape")
        self.tape.backward(self)

    def __repr__(self):
        tag = "" if self.tape is None else f", node={self.node_id}"
        return f"Tensor(shape={self.data.shape}{tag})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tracked(x) -> bool:
    return isinstance(x, Tensor) and x.tape is not None


def record(out: np.ndarray, inputs: Sequence, backward) -> Tensor:
    """Attach ``out`` to the tape of whichever inputs are tracked.

    ``backward(grad_out)`` must return one gradient per entry of ``inputs``
    (``None`` allowed); record() keeps only the tracked positions.
    """
    if _CHECK_FINITE and not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite values produced by a forward op")
    tape = None
    for t in inputs:
        if _tracked(t):
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operands belong to different tapes")
    if tape is None:
        return Tensor(out)
    pos = [i for i, t in enumerate(inputs) if _tracked(t)]
    parents = tuple(inputs[i].node_id for i in pos)

    def bw(g, _backward=backward, _pos=pos):
        full = _backward(g)
        return [full[i] for i in _pos]

    node_id = tape._append(parents, bw)
    return Tensor(out, tape=tape, node_id=node_id)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    A, B = _data(a), _data(b)
    if A.ndim < 2 or B.ndim < 2:
        raise ShapeError(f"matmul requires >=2-D operands, got {A.shape} and {B.shape}")
    if A.shape[-1] != B.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {A.shape} @ {B.shape}")
    out = A @ B
    need_a, need_b = _tracked(a), _tracked(b)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape) if need_a else None
        gb = _unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape) if need_b else None
        return ga, gb

    return record(out, (a, b), backward)


def add(a, b) -> Tensor:
    A, B = _data(a), _data(b)
    out = A + B

    def backward(g):
        return _unbroadcast(g, A.shape), _unbroadcast(g, B.shape)

    return record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    A, B = _data(a), _data(b)
    out = A * B

    def backward(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return record(out, (a, b), backward)


def neg(a) -> Tensor:
    A = _data(a)

    def backward(g):
        return (-g,)

    return record(-A, (a,), backward)


def exp(a) -> Tensor:
    out = np.exp(_data(a))

    def backward(g):
        return (g * out,)

    return record(out, (a,), backward)


def expm1(a) -> Tensor:
    """exp(x) - 1, accurate near zero; d/dx = exp(x) = out + 1."""
    out = np.expm1(_data(a))

    def backward(g):
        return (g * (out + 1.0),)

    return record(out, (a,), backward)


def softplus(a) -> Tensor:
    A = _data(a)
    out = np.logaddexp(0.0, A)

    def backward(g):
        return (g * _sigmoid(A),)

    return record(out, (a,), backward)


def silu(a) -> Tensor:
    A = _data(a)
    s = _sigmoid(A)
    out = A * s

    def backward(g):
        return (g * (s * (1.0 + A * (1.0 - s))),)

    return record(out, (a,), backward)


def reciprocal(a) -> Tensor:
    A = _data(a)
    if np.any(A == 0.0):
        raise SingularityError("reciprocal of zero")
    out = 1.0 / A

    def backward(g):
        return (-g * out * out,)

    return record(out, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def where_mask(mask: np.ndarray, a, b) -> Tensor:
    """Select elementwise by a constant boolean mask (mask itself is not differentiable)."""
    mask = np.asarray(mask, dtype=bool)
    A, B = _data(a), _data(b)
    out = np.where(mask, A, B)

    def backward(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), A.shape),
            _unbroadcast(np.where(mask, 0.0, g), B.shape),
        )

    return record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    A = _data(a)
    out = A.reshape(shape)

    def backward(g):
        return (g.reshape(A.shape),)

    return record(out.copy(), (a,), backward)


def flip(a, axis: int) -> Tensor:
    A = _data(a)
    out = np.flip(A, axis=axis).copy()

    def backward(g):
        return (np.flip(g, axis=axis),)

    return record(out, (a,), backward)


def take_index(a, axis: int, index: int) -> Tensor:
    """Select a single slice along ``axis`` (e.g. the last scan step)."""
    A = _data(a)
    out = np.take(A, index, axis=axis).copy()

    def backward(g):
        full = np.zeros_like(A)
        sl = [slice(None)] * A.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return record(out, (a,), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along ``axis``."""
    A = _data(a)
    sl = [slice(None)] * A.ndim
    sl[axis] = slice(start, start + length)
    out = A[tuple(sl)].copy()

    def backward(g):
        full = np.zeros_like(A)
        full[tuple(sl)] = g
        return (full,)

    return record(out, (a,), backward)


def stack(tensors: Sequence, axis: int) -> Tensor:
    datas = [_data(t) for t in tensors]
    out = np.stack(datas, axis=axis)

    def backward(g):
        pieces = np.split(g, len(datas), axis=axis)
        return [p.reshape(d.shape) for p, d in zip(pieces, datas)]

    return record(out, tuple(tensors), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    A = _data(a)
    out = A.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, A.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, A.shape).copy(),)

    return record(out, (a,), backward)


def tmean(a) -> Tensor:
    A = _data(a)
    return mul(tsum(a), 1.0 / A.size)


# ---------------------------------------------------------------------------
# fused ops
# ---------------------------------------------------------------------------

def cross_entropy(logits, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-softmax over the masked rows.

    Stabilized by per-row max subtraction. ``labels`` and ``mask`` are
    constants; only ``logits`` receives a gradient.
    """
    Z = _data(logits)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    n, c = Z.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits rows {n}")
    if mask.shape != (n,):
        raise ShapeError(f"mask shape {mask.shape} does not match logits rows {n}")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise EmptySelectionError("cross_entropy mask selects no rows")
    y = labels[idx]
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"labels out of range [0, {c})")
    zs = Z[idx]
    m = zs.max(axis=1, keepdims=True)
    shifted = zs - m
    lse = np.log(np.exp(shifted).sum(axis=1))
    out = np.float64((lse - shifted[np.arange(idx.size), y]).mean())

    def backward(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(idx.size), y] -= 1.0
        full = np.zeros_like(Z)
        full[idx] = p * (float(g) / idx.size)
        return (full,)

    return record(np.asarray(out), (logits,), backward)


def ssm_scan(p_bar, q_bar, r, x, h0=None) -> tuple[Tensor, np.ndarray]:
    """Linear state-space recurrence over the time axis.

        h_t = p_bar_t * h_{t-1} + q_bar_t * x_t          (x broadcast over states)
        y_t[c] = sum_s r_t[s] * h_t[c, s]

    Shapes: p_bar, q_bar [B,T,C,S]; r [B,T,S]; x [B,T,C]; h0 [B,C,S] or None.
    Returns (y [B,T,C], final state [B,C,S]). The final state is returned as a
    plain array and does not carry gradients; all of y does.

    The backward pass runs the adjoint recurrence in reverse time and is the
    single tape node for the whole scan.
    """
    P, Q, R, X = _data(p_bar), _data(q_bar), _data(r), _data(x)
    if P.ndim != 4:
        raise ShapeError(f"ssm_scan expects [B,T,C,S] parameters, got {P.shape}")
    B, T, C, S = P.shape
    if Q.shape != (B, T, C, S) or R.shape != (B, T, S) or X.shape != (B, T, C):
        raise ShapeError(
            f"ssm_scan shape mismatch: p={P.shape} q={Q.shape} r={R.shape} x={X.shape}"
        )
    H0 = np.zeros((B, C, S)) if h0 is None else _data(h0)
    if H0.shape != (B, C, S):
        raise ShapeError(f"h0 shape {H0.shape} != {(B, C, S)}")

    tracked = any(_tracked(t) for t in (p_bar, q_bar, r, x, h0))
    y = np.empty((B, T, C))
    h = H0.copy()
    hs = np.empty((B, T, C, S)) if tracked else None
    for t in range(T):
        h *= P[:, t]
        h += Q[:, t] * X[:, t, :, None]
        if tracked:
            hs[:, t] = h
        np.einsum("bcs,bs->bc", h, R[:, t], out=y[:, t])
    h_final = h

    def backward(g):
        lam = np.zeros((B, C, S))
        gP = np.empty_like(P)
        gQ = np.empty_like(Q)
        gR = np.empty_like(R)
        gX = np.empty_like(X)
        for t in range(T - 1, -1, -1):
            lam += g[:, t, :, None] * R[:, t, None, :]
            h_prev = hs[:, t - 1] if t > 0 else H0
            gP[:, t] = lam * h_prev
            qlam = lam * Q[:, t]
            gX[:, t] = qlam.sum(axis=2)
            gQ[:, t] = lam * X[:, t, :, None]
            gR[:, t] = np.einsum("bc,bcs->bs", g[:, t], hs[:, t])
            lam *= P[:, t]
        return gP, gQ, gR, gX, lam  # final lam is d/d(h0)

    out = record(y, (p_bar, q_bar, r, x, h0), backward)
    return out, h_final


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One Adam update with L2 weight decay folded into the gradient.

    Returns (new_param, new_m, new_v); ``t`` is the 1-based step count.
    """
    if param.shape != grad.shape:
        raise ShapeError(f"param/grad shape mismatch: {param.shape} vs {grad.shape}")
    g = grad + weight_decay * param if weight_decay else grad
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a list of leaf tensors, reading ``.grad`` set by backward()."""

    def __init__(self, params: Sequence[Tensor], lr=0.01, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError("parameter has no gradient; run backward() first")
            p.data, self._m[i], self._v[i] = adam_step(
                p.data, p.grad, self._m[i], self._v[i], self.t,
                self.lr, self.beta1, self.beta2, self.eps, self.weight_decay,
            )


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckFailure:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    passed: bool
    n_checked: int
    worst_rel_err: float
    worst_name: str
    failures: list[GradCheckFailure] = field(default_factory=list)


def gradcheck(loss_fn: Callable[[], Tensor], params: Sequence[tuple[str, Tensor]],
              h: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-8,
              max_per_param: int | None = None, rng: np.random.Generator | None = None,
              ) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` must build a fresh tape over the current parameter values and
    return the scalar loss tensor. An entry passes when
    |analytic - numeric| < rtol * max(|analytic|, |numeric|), with an absolute
    floor ``atol`` for gradients that are themselves near zero.
    """
    rng = rng or np.random.default_rng(0)
    loss = loss_fn()
    loss.tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params}

    failures: list[GradCheckFailure] = []
    n_checked = 0
    worst = (0.0, "")
    for name, p in params:
        idxs = list(np.ndindex(p.data.shape))
        if max_per_param is not None and len(idxs) > max_per_param:
            chosen = rng.choice(len(idxs), size=max_per_param, replace=False)
            idxs = [idxs[i] for i in sorted(chosen)]
        for idx in idxs:
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = loss_fn().item()
            p.data[idx] = orig - h
            down = loss_fn().item()
            p.data[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[name][idx])
            diff = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            rel = diff / scale if scale > 0 else 0.0
            n_checked += 1
            if rel > worst[0]:
                worst = (rel, name)
            if diff >= atol and rel >= rtol:
                failures.append(GradCheckFailure(name, idx, a, numeric, rel))
    return GradCheckReport(
        passed=not failures,
        n_checked=n_checked,
        worst_rel_err=worst[0],
        worst_name=worst[1],
        failures=failures,
    )
