"""Dataset serialization, synthetic block-model graphs, and split management.

Dataset directory layout (all text, UTF-8, LF):
    manifest.json   name, counts, format version, file names
    edges.csv       header "src,dst"; one undirected edge per line, 0-based ids
    features.csv    N rows x d comma-separated decimals (no header)
    labels.csv      N rows, one integer class per line
    splits.json     {"<seed>": {"train": [...], "val": [...], "test": [...]}}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DatasetError, ValidationError
from .graph import Graph

FORMAT_VERSION = 1
FILE_NAMES = {
    "edges": "edges.csv",
    "features": "features.csv",
    "labels": "labels.csv",
    "splits": "splits.json",
}


@dataclass
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValidationError("split ratios must sum to 1")
        if min(self.train, self.val, self.test) <= 0:
            raise ValidationError("each split ratio must be positive")


def make_splits(graph: Graph, spec: SplitSpec) -> dict[str, np.ndarray]:
    """Disjoint, exhaustive boolean masks; stratified by class when requested."""
    n = graph.n_nodes
    if n < 10:
        raise ValidationError(f"need at least 10 nodes to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    masks = {k: np.zeros(n, dtype=bool) for k in ("train", "val", "test")}

    def assign(idx: np.ndarray) -> None:
        idx = rng.permutation(idx)
        n_train = int(round(spec.train * len(idx)))
        n_val = int(round(spec.val * len(idx)))
        masks["train"][idx[:n_train]] = True
        masks["val"][idx[n_train:n_train + n_val]] = True
        masks["test"][idx[n_train + n_val:]] = True

    if spec.stratified:
        for c in np.unique(graph.labels):
            members = np.flatnonzero(graph.labels == c)
            if len(members) < 3:
                raise ValidationError(
                    f"class {c} has {len(members)} nodes; stratified split needs >= 3"
                )
            assign(members)
    else:
        assign(np.arange(n))
    for name in ("train", "val", "test"):
        if not masks[name].any():
            raise ValidationError(f"{name} split came out empty")
    return masks


def _block_sizes(n: int, blocks: int) -> list[int]:
    return [n // blocks + (1 if i < n % blocks else 0) for i in range(blocks)]


def _class_features(labels: np.ndarray, feat_dim: int, sigma: float,
                    rng: np.random.Generator) -> np.ndarray:
    k = int(labels.max()) + 1
    if feat_dim < k:
        raise ValidationError(f"feat_dim must be >= number of blocks ({k})")
    means = np.eye(feat_dim)[:k]  # orthogonal unit vectors
    return means[labels] + sigma * rng.normal(size=(labels.size, feat_dim))


def _bernoulli_edges(labels: np.ndarray, p_in: float, p_out: float,
                     rng: np.random.Generator) -> sp.csr_matrix:
    n = labels.size
    probs = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, k=1)
    adj = (upper | upper.T).astype(np.float64)
    return sp.csr_matrix(adj)


def _regular_edges(labels: np.ndarray, p_in: float, p_out: float,
                   rng: np.random.Generator) -> sp.csr_matrix:
    """Exact-degree block graph: within-block random regular, cross-block
    unions of cyclic matchings. Every node ends with identical degree."""
    import networkx as nx

    n = labels.size
    blocks = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    sizes = {len(b) for b in blocks}
    if len(sizes) != 1:
        raise ValidationError("regular block model needs equal block sizes")
    m = sizes.pop()
    r_in = int(round(p_in * (m - 1)))
    r_out = int(round(p_out * m))
    if r_in < 1:
        raise ValidationError("regular block model needs p_in*(block_size-1) >= 1")
    if (r_in * m) % 2 == 1:
        r_in -= 1  # random_regular_graph needs even degree*size
    rows, cols = [], []
    for b in blocks:
        gb = nx.random_regular_graph(r_in, m, seed=int(rng.integers(2**31)))
        for u, v in gb.edges:
            rows += [b[u], b[v]]
            cols += [b[v], b[u]]
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            left, right = blocks[i], rng.permutation(blocks[j])
            for k in range(r_out):
                for t in range(m):
                    u, v = left[t], right[(t + k) % m]
                    rows += [u, v]
                    cols += [v, u]
    data = np.ones(len(rows))
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    adj.data[:] = 1.0
    return adj


def generate_sbm(n: int, blocks: int, p_in: float, p_out: float, feat_dim: int,
                 feat_sigma: float, seed: int = 0, regular: bool = False,
                 name: str = "sbm") -> Graph:
    """Stochastic block model with class-mean Gaussian features.

    ``regular=True`` builds the exact-degree variant (each node gets the same
    number of within- and cross-block edges), on which repeated propagation
    collapses representations completely rather than plateauing at a
    degree-spread floor. Retries up to 10 seeds for connectivity; with
    p_out = 0 the blocks are intentionally disconnected and the check is
    skipped.
    """
    if blocks < 2:
        raise ValidationError("need at least 2 blocks")
    if not (0 <= p_out <= p_in <= 1):
        raise ValidationError("need 0 <= p_out <= p_in <= 1")
    sizes = _block_sizes(n, blocks)
    labels = np.repeat(np.arange(blocks), sizes)
    for attempt in range(10):
        rng = np.random.default_rng(seed + attempt)
        adj = (_regular_edges if regular else _bernoulli_edges)(
            labels, p_in, p_out, rng
        )
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp == 1 or p_out == 0:
            features = _class_features(labels, feat_dim, feat_sigma, rng)
            return Graph(adjacency=adj, features=features, labels=labels, name=name)
    raise ValidationError(
        f"could not generate a connected graph in 10 attempts (seed {seed})"
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_dataset(graph: Graph, out_dir: str, split_seed: int = 0,
                 overwrite: bool = False) -> dict:
    """Write the dataset directory; returns the manifest dict."""
    if graph.n_features < 1:
        raise ValidationError("graph must have at least one feature column")
    manifest_path = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest_path) and not overwrite:
        raise FileExistsError(f"{manifest_path} exists; pass overwrite to replace")
    os.makedirs(out_dir, exist_ok=True)

    src, dst = sp.triu(graph.adjacency, k=1).nonzero()
    with open(os.path.join(out_dir, FILE_NAMES["edges"]), "w", newline="\n") as f:
        f.write("src,dst\n")
        for s, d in zip(src, dst):
            f.write(f"{s},{d}\n")
    with open(os.path.join(out_dir, FILE_NAMES["features"]), "w", newline="\n") as f:
        for row in graph.features:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(os.path.join(out_dir, FILE_NAMES["labels"]), "w", newline="\n") as f:
        for lab in graph.labels:
            f.write(f"{lab}\n")
    splits = {
        str(split_seed): {
            "train": np.flatnonzero(graph.train_mask).tolist(),
            "val": np.flatnonzero(graph.val_mask).tolist(),
            "test": np.flatnonzero(graph.test_mask).tolist(),
        }
    }
    with open(os.path.join(out_dir, FILE_NAMES["splits"]), "w", newline="\n") as f:
        json.dump(splits, f, indent=2, sort_keys=True)
        f.write("\n")
    manifest = {
        "name": graph.name,
        "version": FORMAT_VERSION,
        "n_nodes": graph.n_nodes,
        "n_edges": graph.n_edges,
        "n_features": graph.n_features,
        "n_classes": graph.n_classes,
        "files": dict(FILE_NAMES),
    }
    with open(manifest_path, "w", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def _read_edges(path: str, n: int) -> sp.csr_matrix:
    rows, cols = [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != "src,dst":
            raise DatasetError(f"{path}:1: expected header 'src,dst', got {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                s, d = (int(v) for v in line.split(","))
            except ValueError as e:
                raise DatasetError(f"{path}:{lineno}: bad edge line {line!r}") from e
            if not (0 <= s < n and 0 <= d < n):
                raise DatasetError(f"{path}:{lineno}: node id out of range")
            if s == d:
                raise DatasetError(f"{path}:{lineno}: self-loop not allowed")
            rows += [s, d]
            cols += [d, s]
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj.data[:] = 1.0  # either-orientation duplicates collapse to one edge
    return adj


def load_dataset(dataset_dir: str, split_seed: int | None = None) -> Graph:
    """Parse a dataset directory into a Graph; validates counts against the manifest."""
    manifest_path = os.path.join(dataset_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no manifest.json in {dataset_dir}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    n = manifest["n_nodes"]
    files = manifest.get("files", FILE_NAMES)

    feats_path = os.path.join(dataset_dir, files["features"])
    try:
        features = np.loadtxt(feats_path, delimiter=",", ndmin=2)
    except OSError:
        raise FileNotFoundError(f"missing features file {feats_path}")
    except ValueError as e:
        raise DatasetError(f"{feats_path}: {e}") from e

    labels_path = os.path.join(dataset_dir, files["labels"])
    labels = []
    with open(labels_path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError as e:
                raise DatasetError(
                    f"{labels_path}:{lineno}: non-integer label {line!r}"
                ) from e
    labels = np.asarray(labels, dtype=np.int64)

    adj = _read_edges(os.path.join(dataset_dir, files["edges"]), n)

    if features.shape[0] != n:
        raise DatasetError(
            f"manifest says {n} nodes but features has {features.shape[0]} rows"
        )
    if labels.shape[0] != n:
        raise DatasetError(
            f"manifest says {n} nodes but labels has {labels.shape[0]} rows"
        )
    if manifest.get("n_features") not in (None, features.shape[1]):
        raise DatasetError("manifest n_features disagrees with features.csv")
    if manifest.get("n_edges") not in (None, adj.nnz // 2):
        raise DatasetError("manifest n_edges disagrees with edges.csv")

    masks = {}
    splits_path = os.path.join(dataset_dir, files["splits"])
    if os.path.exists(splits_path):
        with open(splits_path) as f:
            splits = json.load(f)
        if splits:
            key = str(split_seed) if split_seed is not None else sorted(splits)[0]
            if key in splits:
                chosen = splits[key]
                for part in ("train", "val", "test"):
                    m = np.zeros(n, dtype=bool)
                    m[np.asarray(chosen[part], dtype=int)] = True
                    masks[f"{part}_mask"] = m
    return Graph(adjacency=adj, features=features, labels=labels,
                 name=manifest.get("name", "graph"), **masks)
