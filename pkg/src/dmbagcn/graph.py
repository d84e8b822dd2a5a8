"""Graph container, symmetric-normalized propagation, and the smoothing diagnostic.

The propagation operator is D^{-1/2} (A + I) D^{-1/2} with D the degree matrix
of the self-loop-augmented adjacency. Repeated application drives node
representations toward each other; ``oversmoothing_metric`` quantifies how
distinguishable a set of representations still is as the mean pairwise
Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

from .errors import ShapeError, ValidationError
from .tensor import Tensor, record

# At most this many nodes for the exact all-pairs metric; beyond it, sample.
EXACT_METRIC_MAX_NODES = 2000
DEFAULT_SAMPLE_PAIRS = 100_000


@dataclass
class Graph:
    """Undirected graph with node features, labels, and split masks.

    ``adjacency`` stores the edge set only: symmetric, binary, zero diagonal
    (self-loops are added during normalization, not here).
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray = None
    val_mask: np.ndarray = None
    test_mask: np.ndarray = None
    name: str = "graph"

    def __post_init__(self):
        self.adjacency = sp.csr_matrix(self.adjacency)
        self.adjacency.sort_indices()
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ValidationError(f"adjacency must be square, got {self.adjacency.shape}")
        if (self.adjacency != self.adjacency.T).nnz != 0:
            raise ValidationError("adjacency must be symmetric")
        if self.adjacency.diagonal().any():
            raise ValidationError("adjacency must not contain self-loops")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValidationError(
                f"features must be [{n} x d], got {self.features.shape}"
            )
        if self.labels.shape != (n,):
            raise ValidationError(f"labels must have {n} entries, got {self.labels.shape}")
        for attr in ("train_mask", "val_mask", "test_mask"):
            m = getattr(self, attr)
            if m is None:
                m = np.zeros(n, dtype=bool)
            setattr(self, attr, np.asarray(m, dtype=bool))
            if getattr(self, attr).shape != (n,):
                raise ValidationError(f"{attr} must have {n} entries")
        overlap = (self.train_mask & self.val_mask) | (self.train_mask & self.test_mask) \
            | (self.val_mask & self.test_mask)
        if overlap.any():
            raise ValidationError("split masks must be disjoint")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def permuted(self, perm: np.ndarray) -> "Graph":
        """Relabel nodes: new node i is old node perm[i]."""
        perm = np.asarray(perm)
        adj = self.adjacency[perm][:, perm]
        return Graph(
            adjacency=adj,
            features=self.features[perm],
            labels=self.labels[perm],
            train_mask=self.train_mask[perm],
            val_mask=self.val_mask[perm],
            test_mask=self.test_mask[perm],
            name=self.name,
        )


@dataclass
class NormalizedPropagator:
    """Symmetric-normalized, self-loop-augmented propagation matrix (CSR)."""

    matrix: sp.csr_matrix
    degrees: np.ndarray  # augmented degrees d_i = 1 + deg(i)

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


def normalize(graph: Graph) -> NormalizedPropagator:
    """Build D^{-1/2} (A + I) D^{-1/2} from the graph's adjacency."""
    n = graph.n_nodes
    if n < 1:
        raise ValidationError("graph must have at least one node")
    a_hat = graph.adjacency + sp.identity(n, format="csr")
    degrees = np.asarray(a_hat.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(degrees)
    norm = sp.diags(d_inv_sqrt) @ a_hat @ sp.diags(d_inv_sqrt)
    norm = sp.csr_matrix(norm)
    norm.sort_indices()
    return NormalizedPropagator(matrix=norm, degrees=degrees)


def propagate(prop: NormalizedPropagator, x) -> Tensor:
    """One propagation hop: norm_adj @ x, differentiable in x.

    The matrix is symmetric, so the backward rule is another application of
    the same matrix to the incoming gradient.
    """
    X = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if X.shape[0] != prop.n_nodes:
        raise ShapeError(
            f"propagate expects {prop.n_nodes} rows, got {X.shape[0]}"
        )
    out = prop.matrix @ X

    def backward(g):
        return (prop.matrix @ g,)

    return record(out, (x,), backward)


@dataclass
class LayerSequence:
    """Hop-indexed representations [x^(0), x^(1), ..., x^(L)] for all nodes."""

    per_hop: list = field(default_factory=list)
    depth: int = 0


def build_layer_sequence(prop: NormalizedPropagator, x0, depth: int) -> LayerSequence:
    """Repeatedly propagate: per_hop[l] = norm_adj^l @ x0, l = 0..depth."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
    hops = [x0]
    for _ in range(depth):
        hops.append(propagate(prop, hops[-1]))
    return LayerSequence(per_hop=hops, depth=depth)


def oversmoothing_metric(h: np.ndarray, sample_pairs: int | None = None,
                         seed: int = 0) -> float:
    """Mean pairwise Euclidean distance between node representations.

    Exact over all pairs when ``sample_pairs`` is None and the input has at
    most EXACT_METRIC_MAX_NODES rows; otherwise estimated from uniformly
    sampled (i, j), i != j pairs with a fixed seed. Approaches zero as
    representations collapse onto each other.
    """
    h = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if n < 2:
        raise ValueError("oversmoothing metric needs at least two nodes")
    if sample_pairs is None and n <= EXACT_METRIC_MAX_NODES:
        return float(pdist(h).mean())
    k = sample_pairs or DEFAULT_SAMPLE_PAIRS
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=k)
    j = rng.integers(0, n - 1, size=k)
    j = np.where(j >= i, j + 1, j)  # uniform over j != i
    return float(np.linalg.norm(h[i] - h[j], axis=1).mean())
