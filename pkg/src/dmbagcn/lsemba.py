"""Local branch: a selective scan over each node's own depth-ordered hop sequence.

Features are projected to model width, propagated ``depth`` times, and the
resulting per-node sequences [x_i^(0), ..., x_i^(L)] are scanned from shallow
to deep hops by one shared block. The last-step output is the node's local
representation, letting the gates decide how much of each neighborhood order
to retain instead of averaging everything together.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .graph import Graph, NormalizedPropagator, build_layer_sequence
from .ssm import SsmBlock, init_hippo, selective_scan
from .tensor import GradCheckReport, Tape, Tensor, gradcheck


class LsembaLayer:
    def __init__(self, input_proj: Tensor, block: SsmBlock, depth: int):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.input_proj = input_proj
        self.block = block
        self.depth = depth

    @property
    def d_model(self) -> int:
        return self.block.d_model

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("input_proj", self.input_proj)] + [
            (f"block.{n}", p) for n, p in self.block.parameters()
        ]


def init_lsemba(d_in: int, d_model: int, d_state: int, depth: int,
                seed: int = 0) -> LsembaLayer:
    rng = np.random.default_rng(seed)
    proj = Tensor(rng.normal(scale=1.0 / np.sqrt(d_in), size=(d_in, d_model)))
    return LsembaLayer(proj, init_hippo(d_model, d_state, seed=seed + 1), depth)


def lsemba_forward(layer: LsembaLayer, graph: Graph,
                   prop: NormalizedPropagator) -> Tensor:
    """Per-node local representation [N, d_model] from the hop-sequence scan."""
    if prop.n_nodes != graph.n_nodes:
        raise ShapeError("propagator and graph disagree on node count")
    if graph.n_features != layer.input_proj.shape[0]:
        raise ShapeError(
            f"features width {graph.n_features} != projection input "
            f"{layer.input_proj.shape[0]}"
        )
    x0 = T.matmul(Tensor(graph.features), layer.input_proj)
    seq = build_layer_sequence(prop, x0, layer.depth)
    stacked = T.stack(seq.per_hop, axis=1)  # [N, L+1, d_model]
    outputs, _ = selective_scan(layer.block, stacked)
    return T.take_index(outputs, axis=1, index=layer.depth)


def lsemba_gradcheck(layer: LsembaLayer, graph: Graph, prop: NormalizedPropagator,
                     max_per_param: int = 4,
                     rng: np.random.Generator | None = None) -> GradCheckReport:
    """Finite-difference check of every parameter group on a small graph."""
    if graph.n_nodes > 16 or layer.depth > 4:
        raise ValueError("gradcheck is meant for graphs with N <= 16 and depth <= 4")
    params = layer.parameters()
    weights = np.random.default_rng(99).normal(size=(graph.n_nodes, layer.d_model))

    def loss_fn():
        tape = Tape()
        tape.watch(*[p for _, p in params])
        out = lsemba_forward(layer, graph, prop)
        return T.tsum(T.mul(out, Tensor(weights)))

    return gradcheck(loss_fn, params, max_per_param=max_per_param, rng=rng)
