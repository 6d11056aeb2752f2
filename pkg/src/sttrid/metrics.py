"""Identification metrics: accuracy and macro one-vs-rest mean average precision."""
from __future__ import annotations

import numpy as np

MAP_DEFINITION = (
    "macro mean over classes of one-vs-rest average precision; test clips ranked by descending "
    "softmax score for the class (ties by clip order); AP = sum over positives of "
    "(recall increment x precision at that rank)"
)


def predictions(scores: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(scores, axis=1)


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return int((predictions(scores) == labels).sum()) / labels.size


def average_precision(scores: np.ndarray, positive: np.ndarray) -> float:
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    hits = positive[order]
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, n_pos + 1) / ranks
    return float(precision_at_hits.sum() / n_pos)


def per_class_average_precision(scores: np.ndarray, labels: np.ndarray) -> list[float]:
    labels = np.asarray(labels)
    return [average_precision(scores[:, k], labels == k) for k in range(scores.shape[1])]


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean of per-class AP over classes that have at least one positive."""
    aps = [ap for ap in per_class_average_precision(scores, labels) if not np.isnan(ap)]
    if not aps:
        raise ValueError("no class has a positive example")
    return float(np.mean(aps))


def confusion_matrix(labels: np.ndarray, predicted: np.ndarray, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predicted)), 1)
    return cm


def per_class_precision(cm: np.ndarray) -> list[float]:
    predicted = cm.sum(axis=0)
    return [float(cm[k, k] / predicted[k]) if predicted[k] else 0.0 for k in range(cm.shape[0])]
