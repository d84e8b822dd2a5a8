"""Full model: fusion of the local and global branches, classifier, training loop.

The forward pass is Z = alpha * local + (1 - alpha) * global followed by a
linear classifier; alpha = 1 or 0 skips the unused branch entirely so the
ablation limits are bitwise exact. Training is Adam on the train-mask
cross-entropy with patience-based early stopping on validation accuracy, and
is fully deterministic under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import EmptySelectionError, ShapeError, TrainingDivergedError
from .gcamba import GcambaLayer, gcamba_forward, init_gcamba
from .graph import Graph, NormalizedPropagator, normalize, oversmoothing_metric
from .lsemba import LsembaLayer, init_lsemba, lsemba_forward
from .tensor import Adam, Tape, Tensor
from .validation import check_graph_for_training, check_unit_interval


@dataclass
class TrainConfig:
    depth: int = 4
    d_model: int = 16
    d_state: int = 16
    alpha: float = 0.5
    beta: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 1000
    patience: int = 100
    dropout: float = 0.5
    seed: int = 0
    tied_directions: bool = True
    bidirectional: bool = True

    def __post_init__(self):
        check_unit_interval("alpha", self.alpha)
        check_unit_interval("beta", self.beta)
        check_unit_interval("dropout", self.dropout)
        for name in ("depth", "d_model", "d_state", "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class RunReport:
    config: dict
    dataset: dict
    curves: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    test_accuracy: float = float("nan")
    oversmoothing_depth: int = 0
    oversmoothing_model: float = float("nan")
    oversmoothing_plain: float = float("nan")
    peak_mem_estimate_mb: float = 0.0
    wall_clock_sec: float = 0.0  # volatile; excluded from deterministic output
    diverged: bool = False

    def to_json(self, include_volatile: bool = False) -> str:
        d = asdict(self)
        if not include_volatile:
            d.pop("wall_clock_sec")
        return json.dumps(d, sort_keys=True, indent=2) + "\n"


class DmbaModel:
    """Local branch + global branch + alpha fusion + linear classifier."""

    def __init__(self, lsemba: LsembaLayer, gcamba: GcambaLayer, alpha: float,
                 classifier_w: Tensor, classifier_b: Tensor):
        check_unit_interval("alpha", alpha)
        if lsemba.d_model != gcamba.d_model:
            raise ShapeError("branches must share d_model")
        self.lsemba = lsemba
        self.gcamba = gcamba
        self.alpha = float(alpha)
        self.classifier_w = classifier_w
        self.classifier_b = classifier_b

    @property
    def depth(self) -> int:
        return self.lsemba.depth

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"lsemba.{n}", p) for n, p in self.lsemba.parameters()]
        out += [(f"gcamba.{n}", p) for n, p in self.gcamba.parameters()]
        out += [("classifier.weight", self.classifier_w),
                ("classifier.bias", self.classifier_b)]
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            p.data = np.asarray(state[name], dtype=np.float64).copy()


def init_model(n_features: int, n_classes: int, config: TrainConfig) -> DmbaModel:
    rng = np.random.default_rng(config.seed)
    lsemba = init_lsemba(n_features, config.d_model, config.d_state, config.depth,
                         seed=config.seed * 10 + 1)
    gcamba = init_gcamba(n_features, config.d_model, config.d_state, config.beta,
                         seed=config.seed * 10 + 2,
                         bidirectional=config.bidirectional,
                         tied_directions=config.tied_directions)
    w = Tensor(rng.normal(scale=1.0 / np.sqrt(config.d_model),
                          size=(config.d_model, n_classes)))
    b = Tensor(np.zeros(n_classes))
    return DmbaModel(lsemba, gcamba, config.alpha, w, b)


def forward(model: DmbaModel, graph: Graph, prop: NormalizedPropagator,
            training: bool = False, dropout: float = 0.0,
            rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Fused representation Z [N, d_model] and classifier logits [N, c].

    alpha = 1 and alpha = 0 evaluate only the corresponding branch, so the
    ablation limits are bitwise identical to single-branch models. Dropout is
    applied to Z in training mode only.
    """
    expected = model.lsemba.input_proj.shape[0]
    if graph.n_features != expected:
        raise ShapeError(
            f"graph has {graph.n_features} features, model expects {expected}"
        )
    if model.alpha == 1.0:
        z = lsemba_forward(model.lsemba, graph, prop)
    elif model.alpha == 0.0:
        z = gcamba_forward(model.gcamba, graph)
    else:
        y_local = lsemba_forward(model.lsemba, graph, prop)
        y_global = gcamba_forward(model.gcamba, graph)
        z = T.add(T.mul(y_local, model.alpha), T.mul(y_global, 1.0 - model.alpha))
    h = z
    if training and dropout > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = (rng.random(z.shape) >= dropout) / (1.0 - dropout)
        h = T.mul(z, keep)
    logits = T.add(T.matmul(h, model.classifier_w), model.classifier_b)
    return z, logits


def evaluate(model: DmbaModel, graph: Graph, mask: np.ndarray,
             prop: NormalizedPropagator | None = None,
             logits: np.ndarray | None = None) -> float:
    """Argmax accuracy over the masked nodes (ties go to the lowest class)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptySelectionError("evaluation mask selects no nodes")
    if logits is None:
        prop = prop or normalize(graph)
        _, out = forward(model, graph, prop, training=False)
        logits = out.data
    pred = np.argmax(logits[mask], axis=1)
    return float((pred == graph.labels[mask]).mean())


def _masked_loss_value(logits: np.ndarray, labels: np.ndarray,
                       mask: np.ndarray) -> float:
    if not mask.any():
        return float("nan")
    return T.cross_entropy(Tensor(logits), labels, mask).item()


def _param_memory_mb(model: DmbaModel, graph: Graph, config: TrainConfig) -> float:
    """Deterministic rough estimate of peak working-set size."""
    param_bytes = sum(p.data.nbytes for _, p in model.parameters())
    scan_bytes = 8 * graph.n_nodes * (config.depth + 1) * config.d_model * config.d_state
    seq_bytes = 8 * graph.n_nodes * config.d_model * (config.depth + 1)
    return (param_bytes * 3 + 6 * scan_bytes + 4 * seq_bytes) / 1e6


def train(model: DmbaModel, graph: Graph, config: TrainConfig) -> RunReport:
    """Optimize on the train mask; early-stop on validation accuracy.

    Each epoch rebuilds the hop sequences from the current projections,
    regenerates the input-dependent scan parameters, evaluates both branches,
    fuses, and backpropagates the masked cross-entropy. The reported test
    accuracy is computed once, at the best-validation checkpoint.
    """
    import time

    t_start = time.perf_counter()
    check_graph_for_training(graph)
    prop = normalize(graph)
    params = model.parameters()
    opt = Adam([p for _, p in params], lr=config.lr,
               weight_decay=config.weight_decay)
    drop_rng = np.random.default_rng(config.seed + 12345)

    report = RunReport(
        config=asdict(config),
        dataset={"name": graph.name, "n_nodes": graph.n_nodes,
                 "n_edges": graph.n_edges, "n_features": graph.n_features,
                 "n_classes": graph.n_classes},
        oversmoothing_depth=config.depth,
        peak_mem_estimate_mb=round(_param_memory_mb(model, graph, config), 3),
    )

    best_val = -1.0
    best_state: dict[str, np.ndarray] | None = None
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        tape = Tape()
        tape.watch(*[p for _, p in params])
        _, logits = forward(model, graph, prop, training=True,
                            dropout=config.dropout, rng=drop_rng)
        loss = T.cross_entropy(logits, graph.labels, graph.train_mask)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            report.diverged = True
            report.epochs_run = epoch - 1
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch}; last finite epoch "
                f"{epoch - 1}", last_finite_epoch=epoch - 1, partial_report=report,
            )
        tape.backward(loss)
        opt.step()

        _, eval_logits = forward(model, graph, prop, training=False)
        ev = eval_logits.data
        train_acc = evaluate(model, graph, graph.train_mask, logits=ev)
        val_acc = evaluate(model, graph, graph.val_mask, logits=ev) \
            if graph.val_mask.any() else train_acc
        val_loss = _masked_loss_value(ev, graph.labels, graph.val_mask)
        report.curves.append(EpochRecord(epoch, loss_val, train_acc, val_loss,
                                         val_acc))
        report.epochs_run = epoch
        # ties refresh the checkpoint (later epochs are better converged) but
        # only strict improvement resets the patience counter
        if val_acc >= best_val:
            if val_acc > best_val:
                since_best = 0
            else:
                since_best += 1
            best_val = val_acc
            report.best_epoch = epoch
            best_state = model.state_dict()
        else:
            since_best += 1
        if since_best >= config.patience:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    z, final_logits = forward(model, graph, prop, training=False)
    if graph.test_mask.any():
        report.test_accuracy = evaluate(model, graph, graph.test_mask,
                                        logits=final_logits.data)
    if graph.n_nodes >= 2:
        report.oversmoothing_model = oversmoothing_metric(z.data)
        plain = graph.features
        for _ in range(config.depth):
            plain = prop.matrix @ plain
        report.oversmoothing_plain = oversmoothing_metric(plain)
    report.wall_clock_sec = time.perf_counter() - t_start
    return report
