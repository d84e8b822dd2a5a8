"""Dataset IO, block-model generation, and split management."""

import json
import os

import numpy as np
import pytest
import scipy.sparse as sp

from dmbagcn.data import (
    SplitSpec,
    generate_sbm,
    load_dataset,
    make_splits,
    save_dataset,
)
from dmbagcn.errors import DatasetError, ValidationError
from dmbagcn.graph import Graph


def graph_with_splits(n=50, seed=0):
    g = generate_sbm(n, 2, 0.4, 0.05, feat_dim=4, feat_sigma=0.7, seed=seed)
    masks = make_splits(g, SplitSpec(seed=seed))
    g.train_mask, g.val_mask, g.test_mask = masks["train"], masks["val"], masks["test"]
    return g


class TestGenerateSbm:
    def test_two_cliques(self):
        g = generate_sbm(10, 2, 1.0, 0.0, feat_dim=2, feat_sigma=0.1, seed=1)
        assert g.n_edges == 20  # two complete 5-blocks: 2 * C(5,2)
        sub0 = g.adjacency[:5, :5].toarray()
        np.testing.assert_array_equal(sub0, np.ones((5, 5)) - np.eye(5))
        assert g.adjacency[:5, 5:].nnz == 0

    def test_disconnected_with_positive_pout_errors(self):
        with pytest.raises(ValidationError):
            generate_sbm(200, 2, 0.02, 0.0001, feat_dim=2, feat_sigma=0.1, seed=1)

    def test_seed_determinism(self):
        g1 = generate_sbm(30, 3, 0.5, 0.1, feat_dim=4, feat_sigma=0.5, seed=5)
        g2 = generate_sbm(30, 3, 0.5, 0.1, feat_dim=4, feat_sigma=0.5, seed=5)
        assert (g1.adjacency != g2.adjacency).nnz == 0
        assert np.array_equal(g1.features, g2.features)
        assert np.array_equal(g1.labels, g2.labels)

    def test_edge_count_in_binomial_range(self):
        n, k, p_in, p_out = 120, 2, 0.3, 0.05
        g = generate_sbm(n, k, p_in, p_out, feat_dim=4, feat_sigma=0.5, seed=7)
        sizes = [60, 60]
        mean = p_in * sum(s * (s - 1) / 2 for s in sizes) + p_out * 60 * 60
        var = p_in * (1 - p_in) * sum(s * (s - 1) / 2 for s in sizes) \
            + p_out * (1 - p_out) * 3600
        assert abs(g.n_edges - mean) <= 3 * np.sqrt(var)

    def test_invalid_probabilities(self):
        with pytest.raises(ValidationError):
            generate_sbm(20, 2, 0.1, 0.5, feat_dim=4, feat_sigma=0.5)

    def test_regular_variant_has_constant_degree(self):
        g = generate_sbm(80, 4, 0.5, 0.05, feat_dim=8, feat_sigma=0.5, seed=9,
                         regular=True)
        degrees = np.asarray(g.adjacency.sum(axis=1)).ravel()
        assert degrees.min() == degrees.max()

    def test_features_are_class_means_plus_noise(self):
        g = generate_sbm(200, 2, 0.5, 0.1, feat_dim=6, feat_sigma=0.1, seed=11)
        for c in range(2):
            centroid = g.features[g.labels == c].mean(axis=0)
            expected = np.eye(6)[c]
            assert np.linalg.norm(centroid - expected) < 0.1


class TestMakeSplits:
    def test_exact_sizes_n10(self):
        g = generate_sbm(10, 2, 0.9, 0.3, feat_dim=2, feat_sigma=0.5, seed=13)
        masks = make_splits(g, SplitSpec(seed=0, stratified=False))
        assert masks["train"].sum() == 6
        assert masks["val"].sum() == 2
        assert masks["test"].sum() == 2

    def test_partition(self):
        g = graph_with_splits(60, seed=2)
        total = g.train_mask.astype(int) + g.val_mask.astype(int) + g.test_mask.astype(int)
        assert np.all(total == 1)

    def test_stratified_balance(self):
        g = generate_sbm(100, 2, 0.4, 0.05, feat_dim=4, feat_sigma=0.5, seed=17)
        masks = make_splits(g, SplitSpec(seed=3, stratified=True))
        train_labels = g.labels[masks["train"]]
        counts = np.bincount(train_labels)
        assert abs(int(counts[0]) - int(counts[1])) <= 1

    def test_seed_determinism(self):
        g = graph_with_splits(40, seed=4)
        m1 = make_splits(g, SplitSpec(seed=9))
        m2 = make_splits(g, SplitSpec(seed=9))
        for k in m1:
            assert np.array_equal(m1[k], m2[k])

    def test_small_class_rejected_under_stratification(self):
        adj = sp.csr_matrix((np.ones(2), ([0, 1], [1, 0])), shape=(12, 12))
        labels = np.zeros(12, dtype=int)
        labels[0] = 1  # class 1 has a single node
        g = Graph(adjacency=adj, features=np.ones((12, 2)), labels=labels)
        with pytest.raises(ValidationError):
            make_splits(g, SplitSpec(stratified=True))

    def test_bad_ratios_rejected(self):
        with pytest.raises(ValidationError):
            SplitSpec(train=0.5, val=0.2, test=0.2)

    def test_test_masks_cover_most_nodes_over_seeds(self):
        g = generate_sbm(200, 2, 0.3, 0.05, feat_dim=4, feat_sigma=0.5, seed=19)
        covered = np.zeros(200, dtype=bool)
        for seed in range(10):
            covered |= make_splits(g, SplitSpec(seed=seed))["test"]
        assert covered.mean() > 0.85


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        g = graph_with_splits(50, seed=6)
        save_dataset(g, str(tmp_path / "ds"), split_seed=6)
        g2 = load_dataset(str(tmp_path / "ds"), split_seed=6)
        assert (g.adjacency != g2.adjacency).nnz == 0
        assert np.array_equal(g.features, g2.features)
        assert np.array_equal(g.labels, g2.labels)
        for attr in ("train_mask", "val_mask", "test_mask"):
            assert np.array_equal(getattr(g, attr), getattr(g2, attr))

    def test_two_node_fixture(self, tmp_path):
        adj = sp.csr_matrix((np.ones(2), ([0, 1], [1, 0])), shape=(2, 2))
        g = Graph(adjacency=adj, features=np.array([[1.0], [2.0]]),
                  labels=np.array([0, 1]))
        save_dataset(g, str(tmp_path / "tiny"))
        g2 = load_dataset(str(tmp_path / "tiny"))
        assert g2.n_nodes == 2 and g2.n_edges == 1

    def test_duplicate_orientation_collapses(self, tmp_path):
        d = tmp_path / "dup"
        g = Graph(adjacency=sp.csr_matrix((np.ones(2), ([0, 1], [1, 0])), shape=(2, 2)),
                  features=np.ones((2, 1)), labels=np.array([0, 1]))
        save_dataset(g, str(d))
        edges = d / "edges.csv"
        edges.write_text("src,dst\n0,1\n1,0\n")
        g2 = load_dataset(str(d))
        assert g2.n_edges == 1

    def test_overwrite_requires_flag(self, tmp_path):
        g = graph_with_splits(50, seed=8)
        save_dataset(g, str(tmp_path / "ds"))
        with pytest.raises(FileExistsError):
            save_dataset(g, str(tmp_path / "ds"))
        save_dataset(g, str(tmp_path / "ds"), overwrite=True)

    def test_missing_file_reported(self, tmp_path):
        g = graph_with_splits(50, seed=10)
        save_dataset(g, str(tmp_path / "ds"))
        os.remove(tmp_path / "ds" / "features.csv")
        with pytest.raises(FileNotFoundError):
            load_dataset(str(tmp_path / "ds"))

    def test_count_mismatch_reported(self, tmp_path):
        g = graph_with_splits(50, seed=12)
        save_dataset(g, str(tmp_path / "ds"))
        mpath = tmp_path / "ds" / "manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["n_nodes"] = 49
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(DatasetError):
            load_dataset(str(tmp_path / "ds"))

    def test_non_integer_label_reported(self, tmp_path):
        g = graph_with_splits(50, seed=14)
        save_dataset(g, str(tmp_path / "ds"))
        labels = tmp_path / "ds" / "labels.csv"
        lines = labels.read_text().splitlines()
        lines[3] = "banana"
        labels.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError) as exc:
            load_dataset(str(tmp_path / "ds"))
        assert ":4:" in str(exc.value)  # line number surfaced
