"""Selective state-space block: the shared recurrence core of both model branches.

A block owns a log-parameterized diagonal continuous state matrix (strictly
negative, so the discrete transition exp(dt * p) stays in (0, 1)) and small
projections that generate the input/output mixing vectors and the step size
from each sequence element — the input-dependent ("selective") part. The
zero-order-hold discretization uses the expm1 form, which is the stable
rewrite of (dt*p)^{-1} (exp(dt*p) - 1) * dt for diagonal state.

``kernel_oracle`` evaluates the same recurrence as an unrolled quadratic-time
convolution sum; it exists purely as a correctness reference for the scan.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

DT_SOFTPLUS_MIN = 0.001
DT_SOFTPLUS_MAX = 0.1


class SsmBlock:
    """One selective SSM block with input/output mixers and a SiLU gate.

    Parameters (all trainable tensors):
      a_log  [C,S]  state matrix is p = -exp(a_log), elementwise negative
      w_q    [C,S]  per-step input-mixing vector q_t = seq_t @ w_q
      w_r    [C,S]  per-step output-mixing vector r_t = seq_t @ w_r
      w_dt   [C,C], b_dt [C]  per-step, per-channel step size via softplus
      w_in   [C,2C] input mixer producing the scan path and the gate path
      w_out  [C,C]  output mixer
      d_skip [C]    per-channel passthrough y += d_skip * x (init ones), the
                    standard block's direct path; without it the scan output
                    starts at step-size scale and the block barely trains
    """

    def __init__(self, d_model: int, d_state: int, params: dict[str, Tensor]):
        self.d_model = d_model
        self.d_state = d_state
        self.a_log = params["a_log"]
        self.w_q = params["w_q"]
        self.w_r = params["w_r"]
        self.w_dt = params["w_dt"]
        self.b_dt = params["b_dt"]
        self.w_in = params["w_in"]
        self.w_out = params["w_out"]
        self.d_skip = params["d_skip"]
        # Test hook: emulate the p -> -inf limit (transition forced to zero).
        self.force_zero_retention = False

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [
            ("a_log", self.a_log),
            ("w_q", self.w_q),
            ("w_r", self.w_r),
            ("w_dt", self.w_dt),
            ("b_dt", self.b_dt),
            ("w_in", self.w_in),
            ("w_out", self.w_out),
            ("d_skip", self.d_skip),
        ]

    def state_matrix(self) -> Tensor:
        """Continuous diagonal state matrix p < 0, shape [C,S]."""
        return T.neg(T.exp(self.a_log))


def init_hippo(d_model: int, d_state: int, seed: int = 0) -> SsmBlock:
    """Long-memory initialization: state index n gets p_n = -(n+1), replicated
    across channels; projections are small random (std 1/sqrt(d_model)); the
    step-size bias targets softplus output in [0.001, 0.1] at zero input."""
    if d_model < 1 or d_state < 1:
        raise ValueError("d_model and d_state must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_model)
    a_log = np.tile(np.log(np.arange(1, d_state + 1, dtype=np.float64)), (d_model, 1))
    dt_init = np.exp(rng.uniform(np.log(DT_SOFTPLUS_MIN), np.log(DT_SOFTPLUS_MAX),
                                 size=d_model))
    params = {
        "a_log": Tensor(a_log),
        "w_q": Tensor(rng.normal(scale=scale, size=(d_model, d_state))),
        "w_r": Tensor(rng.normal(scale=scale, size=(d_model, d_state))),
        "w_dt": Tensor(rng.normal(scale=scale, size=(d_model, d_model))),
        # inverse softplus so that softplus(b_dt) == dt_init exactly
        "b_dt": Tensor(np.log(np.expm1(dt_init))),
        "w_in": Tensor(rng.normal(scale=scale, size=(d_model, 2 * d_model))),
        "w_out": Tensor(rng.normal(scale=scale, size=(d_model, d_model))),
        "d_skip": Tensor(np.ones(d_model)),
    }
    return SsmBlock(d_model, d_state, params)


def generate_params(block: SsmBlock, seq) -> tuple[Tensor, Tensor, Tensor]:
    """Per-step parameters from the sequence itself: q, r [..,T,S]; dt [..,T,C] > 0."""
    q = T.matmul(seq, block.w_q)
    r = T.matmul(seq, block.w_r)
    dt = T.softplus(T.add(T.matmul(seq, block.w_dt), block.b_dt))
    return q, r, dt


def discretize(p, q, dt) -> tuple[Tensor, Tensor]:
    """Zero-order-hold discretization for diagonal state.

        p_bar = exp(dt * p)
        q_bar = (expm1(dt * p) / p) * q,  with q_bar = dt * q when |dt * p| < 1e-8

    Shapes: p [C,S]; dt [..,T,C]; q [..,T,S] -> p_bar, q_bar [..,T,C,S].
    """
    dt_e = T.reshape(dt, dt.shape + (1,))           # [..,T,C,1]
    z = T.mul(dt_e, p)                              # [..,T,C,S]
    p_bar = T.exp(z)
    q_e = T.reshape(q, q.shape[:-1] + (1, q.shape[-1]))  # [..,T,1,S]
    taylor = T.mul(dt_e, q_e)
    small = np.abs(z.data) < 1e-8
    p_data = p.data if hasattr(p, "data") else np.asarray(p, dtype=np.float64)
    zeros = p_data == 0.0
    if zeros.any():
        # p can underflow to -0.0 in extreme training; those lanes always take
        # the Taylor branch, so give the reciprocal a harmless denominator
        p = T.where_mask(zeros, np.full(p_data.shape, -1.0), p)
    exact = T.mul(T.mul(T.expm1(z), T.reciprocal(p)), q_e)
    q_bar = T.where_mask(small, taylor, exact) if small.any() else exact
    return p_bar, q_bar


def selective_scan(block: SsmBlock, seq, h0=None) -> tuple[Tensor, np.ndarray]:
    """Full block forward over ``seq`` [B,T,C] (or [T,C], auto-batched).

    Mixes the input into a scan path and a gate path, generates per-step
    parameters from the scan path, runs the discretized recurrence, applies the
    SiLU gate, and mixes the output. Returns (outputs [B,T,C], final state
    [B,C,S]); the final state is a detached diagnostic.
    """
    squeeze = False
    if isinstance(seq, np.ndarray):
        seq = Tensor(seq)
    if seq.ndim == 2:
        seq = T.reshape(seq, (1,) + seq.shape)
        squeeze = True
    if seq.ndim != 3 or seq.shape[-1] != block.d_model:
        raise ShapeError(f"expected sequence [B,T,{block.d_model}], got {seq.shape}")

    u = T.matmul(seq, block.w_in)                       # [B,T,2C]
    x_path = T.narrow(u, axis=2, start=0, length=block.d_model)
    gate = T.narrow(u, axis=2, start=block.d_model, length=block.d_model)

    q, r, dt = generate_params(block, x_path)
    p = block.state_matrix()
    p_bar, q_bar = discretize(p, q, dt)
    if block.force_zero_retention:
        p_bar = T.mul(p_bar, np.zeros(p_bar.shape))
    y, h_final = T.ssm_scan(p_bar, q_bar, r, x_path, h0)
    y = T.add(y, T.mul(x_path, block.d_skip))
    out = T.matmul(T.mul(y, T.silu(gate)), block.w_out)
    if squeeze:
        out = T.reshape(out, out.shape[1:])
        h_final = h_final[0]
    return out, h_final


def kernel_oracle(p_bar: np.ndarray, q_bar: np.ndarray, r: np.ndarray,
                  x: np.ndarray) -> np.ndarray:
    """Quadratic-time unrolled reference for the scan recurrence.

        y_t = sum_{j<=t} r_t * (prod_{k=j+1..t} p_bar_k) * q_bar_j * x_j

    For constant parameters this reduces to convolution with the kernel
    (r q_bar, r p_bar q_bar, r p_bar^2 q_bar, ...). Test-only; frozen inputs,
    shapes [T,C,S], [T,C,S], [T,S], [T,C] -> [T,C].
    """
    p_bar = np.asarray(p_bar, dtype=np.float64)
    q_bar = np.asarray(q_bar, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    Tn, C, S = p_bar.shape
    y = np.zeros((Tn, C))
    for t in range(Tn):
        acc = np.zeros((C, S))
        for j in range(t + 1):
            term = q_bar[j] * x[j][:, None]
            for k in range(j + 1, t + 1):
                term = term * p_bar[k]
            acc += term
        y[t] = acc @ r[t]
    return y
