"""scikit-learn style front door: fit on a Graph, predict node labels.

The estimator follows sklearn conventions (constructor stores hyperparameters
verbatim, ``get_params``/``set_params``/``clone`` work, fitted attributes get a
trailing underscore) so it drops into sklearn tooling, while the graph-shaped
input keeps the semantics of transductive node classification: ``fit`` trains
on the graph's train/val masks and ``predict`` scores any node of that graph.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .graph import Graph, normalize
from .model import TrainConfig, forward, init_model, train


class DMbaGCNClassifier(BaseEstimator):
    """Dual selective-state-space GCN for transductive node classification.

    Parameters mirror TrainConfig; ``fit(graph)`` trains with the graph's own
    split masks and stores the best-validation checkpoint.
    """

    def __init__(self, depth: int = 4, d_model: int = 16, d_state: int = 16,
                 alpha: float = 0.5, beta: float = 0.5, lr: float = 0.01,
                 weight_decay: float = 5e-4, epochs: int = 1000,
                 patience: int = 100, dropout: float = 0.5, seed: int = 0,
                 tied_directions: bool = True, bidirectional: bool = True):
        self.depth = depth
        self.d_model = d_model
        self.d_state = d_state
        self.alpha = alpha
        self.beta = beta
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.patience = patience
        self.dropout = dropout
        self.seed = seed
        self.tied_directions = tied_directions
        self.bidirectional = bidirectional

    def _config(self) -> TrainConfig:
        return TrainConfig(
            depth=self.depth, d_model=self.d_model, d_state=self.d_state,
            alpha=self.alpha, beta=self.beta, lr=self.lr,
            weight_decay=self.weight_decay, epochs=self.epochs,
            patience=self.patience, dropout=self.dropout, seed=self.seed,
            tied_directions=self.tied_directions,
            bidirectional=self.bidirectional,
        )

    def fit(self, graph: Graph, y=None) -> "DMbaGCNClassifier":
        """Train on the graph's train mask; y is ignored (labels live in the graph)."""
        config = self._config()
        self.model_ = init_model(graph.n_features, graph.n_classes, config)
        self.report_ = train(self.model_, graph, config)
        self.classes_ = np.arange(graph.n_classes)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() before predicting")

    def decision_function(self, graph: Graph) -> np.ndarray:
        self._check_fitted()
        _, logits = forward(self.model_, graph, normalize(graph), training=False)
        return logits.data

    def predict_proba(self, graph: Graph) -> np.ndarray:
        logits = self.decision_function(graph)
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, graph: Graph) -> np.ndarray:
        return np.argmax(self.decision_function(graph), axis=1)

    def score(self, graph: Graph, y=None, mask: np.ndarray | None = None) -> float:
        """Accuracy on ``mask`` (default: the graph's test mask)."""
        mask = graph.test_mask if mask is None else np.asarray(mask, dtype=bool)
        pred = self.predict(graph)
        return float((pred[mask] == graph.labels[mask]).mean())
