"""Sweeps, depth studies, reference baselines, and the scaling benchmark."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import TrainingDivergedError
from .gcamba import gcamba_forward, init_gcamba
from .graph import Graph, normalize, oversmoothing_metric
from .model import TrainConfig, init_model, train
from .tensor import Tensor

log = logging.getLogger("dmbagcn")


def features_logreg_accuracy(graph: Graph, max_iter: int = 1000) -> float:
    """Features-only logistic-regression reference (graph structure unused)."""
    from sklearn.linear_model import LogisticRegression

    clf = LogisticRegression(max_iter=max_iter).fit(
        graph.features[graph.train_mask], graph.labels[graph.train_mask]
    )
    return float(clf.score(graph.features[graph.test_mask],
                           graph.labels[graph.test_mask]))


def propagation_baseline_accuracy(graph: Graph, depth: int,
                                  max_iter: int = 2000) -> float:
    """Plain propagation + linear head: logistic regression on norm_adj^L X."""
    from sklearn.linear_model import LogisticRegression

    prop = normalize(graph)
    h = graph.features
    for _ in range(depth):
        h = prop.matrix @ h
    clf = LogisticRegression(max_iter=max_iter).fit(
        h[graph.train_mask], graph.labels[graph.train_mask]
    )
    return float(clf.score(h[graph.test_mask], graph.labels[graph.test_mask]))


# ---------------------------------------------------------------------------
# hyperparameter sweep (alpha x beta grid)
# ---------------------------------------------------------------------------

@dataclass
class SweepCell:
    alpha: float
    beta: float
    test_accuracy: float | None  # None marks a failed cell
    error: str = ""


def sweep(graph: Graph, alphas, betas, config: TrainConfig) -> list[SweepCell]:
    """One seeded train/evaluate per (alpha, beta) cell; failures don't abort."""
    cells = []
    for alpha in alphas:
        for beta in betas:
            cfg = replace(config, alpha=float(alpha), beta=float(beta))
            try:
                model = init_model(graph.n_features, graph.n_classes, cfg)
                report = train(model, graph, cfg)
                cells.append(SweepCell(cfg.alpha, cfg.beta, report.test_accuracy))
            except (TrainingDivergedError, ValueError) as e:
                log.warning("sweep cell alpha=%s beta=%s failed: %s", alpha, beta, e)
                cells.append(SweepCell(float(alpha), float(beta), None, str(e)))
    return cells


# ---------------------------------------------------------------------------
# depth study
# ---------------------------------------------------------------------------

@dataclass
class DepthRow:
    depth: int
    test_accuracy: float | None
    oversmooth_model: float | None
    oversmooth_plain: float | None
    baseline_accuracy: float | None
    error: str = ""


def depth_study(graph: Graph, depths, config: TrainConfig) -> list[DepthRow]:
    """Train one model per depth; record accuracy, the smoothing metric of the
    learned representation and of plain propagation, and the propagation +
    linear-head baseline accuracy. Per-depth failures are recorded, not raised."""
    rows = []
    for depth in depths:
        if depth < 1:
            rows.append(DepthRow(depth, None, None, None, None,
                                 "depth must be >= 1"))
            continue
        cfg = replace(config, depth=int(depth))
        try:
            model = init_model(graph.n_features, graph.n_classes, cfg)
            report = train(model, graph, cfg)
            baseline = propagation_baseline_accuracy(graph, int(depth))
            rows.append(DepthRow(int(depth), report.test_accuracy,
                                 report.oversmoothing_model,
                                 report.oversmoothing_plain, baseline))
        except (TrainingDivergedError, ValueError) as e:
            log.warning("depth %s failed: %s", depth, e)
            rows.append(DepthRow(int(depth), None, None, None, None, str(e)))
    return rows


# ---------------------------------------------------------------------------
# scaling benchmark: linear-time scan vs quadratic dense attention
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    n_nodes: int
    gcamba_ms: float
    dense_attention_ms: float | None  # None when the memory guard skipped it
    peak_mem_estimate_mb: float


def _dense_attention_reference(x: np.ndarray, wq: np.ndarray, wk: np.ndarray,
                               wv: np.ndarray) -> np.ndarray:
    """O(N^2) all-pairs aggregator built from matmul, the quadratic contrast."""
    q = T.matmul(Tensor(x), Tensor(wq)).data
    k = T.matmul(Tensor(x), Tensor(wk)).data
    v = T.matmul(Tensor(x), Tensor(wv)).data
    scores = T.matmul(Tensor(q), Tensor(k.T)).data / np.sqrt(x.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    return T.matmul(Tensor(scores), Tensor(v)).data


def bench(sizes, d_model: int = 16, d_state: int = 16, seed: int = 0,
          repeats: int = 3, attention_mem_guard_mb: float = 4096.0,
          feat_dim: int = 32) -> list[BenchRow]:
    """Time the global-branch forward pass and the dense-attention reference
    over synthetic node sets of increasing size.

    The scan is sequential but constant-work per node; attention allocates an
    N x N score matrix and is skipped above the memory guard.
    """
    rng = np.random.default_rng(seed)
    layer = init_gcamba(feat_dim, d_model, d_state, beta=0.5, seed=seed)
    wq, wk, wv = (rng.normal(scale=1.0 / np.sqrt(feat_dim),
                             size=(feat_dim, d_model)) for _ in range(3))
    rows = []
    for n in sizes:
        n = int(n)
        features = rng.normal(size=(n, feat_dim))
        graph = _featureless_graph(features)
        reps = repeats if n <= 16384 else 1
        scan_s = np.inf
        for _ in range(reps):
            t0 = time.perf_counter()
            gcamba_forward(layer, graph)
            scan_s = min(scan_s, time.perf_counter() - t0)

        attn_bytes = 2 * n * n * 8 + 4 * n * d_model * 8
        attn_ms = None
        if attn_bytes / 1e6 <= attention_mem_guard_mb:
            attn_s = np.inf
            for _ in range(reps):
                t0 = time.perf_counter()
                _dense_attention_reference(features, wq, wk, wv)
                attn_s = min(attn_s, time.perf_counter() - t0)
            attn_ms = attn_s * 1000.0
        else:
            log.info("bench: skipping dense attention at N=%d (memory guard)", n)

        scan_bytes = n * d_model * (6 * d_state + 10) * 8
        peak_mb = (max(attn_bytes, scan_bytes) if attn_ms is not None
                   else scan_bytes) / 1e6
        rows.append(BenchRow(n, scan_s * 1000.0, attn_ms, round(peak_mb, 3)))
    return rows


def _featureless_graph(features: np.ndarray) -> Graph:
    """Edgeless carrier graph; the global branch only reads features."""
    import scipy.sparse as sp

    n = features.shape[0]
    return Graph(adjacency=sp.csr_matrix((n, n)), features=features,
                 labels=np.zeros(n, dtype=np.int64))
