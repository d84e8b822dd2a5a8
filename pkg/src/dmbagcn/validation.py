"""Small input-validation helpers shared by the estimator, model, and CLI."""

from __future__ import annotations

from .errors import ValidationError


def check_unit_interval(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must be in [0, 1], got {value}")
    return value


def check_positive(name: str, value, strict: bool = True):
    if (value <= 0) if strict else (value < 0):
        bound = "positive" if strict else "non-negative"
        raise ValidationError(f"{name} must be {bound}, got {value}")
    return value


def check_graph_for_training(graph) -> None:
    """Training preconditions: non-empty train mask spanning >= 2 classes."""
    if not graph.train_mask.any():
        raise ValidationError("train mask selects no nodes")
    train_classes = set(graph.labels[graph.train_mask].tolist())
    if len(train_classes) < 2:
        raise ValidationError(
            f"train labels must cover >= 2 classes, got {sorted(train_classes)}"
        )
