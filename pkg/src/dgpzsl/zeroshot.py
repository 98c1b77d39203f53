"""Scoring features with predicted classifiers and Hit@k evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

UNSEEN_ONLY = "unseen-only"
GENERALIZED = "generalized"
DEFAULT_K = (1, 2, 5, 10, 20)


@dataclass(frozen=True)
class FeatureBatch:
    """Feature vectors (classifier length minus the bias) with node-index labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64).ravel()
        if f.ndim != 2 or f.shape[0] != y.size:
            raise ValidationError(f"{f.shape[0] if f.ndim == 2 else '?'} feature rows but {y.size} labels")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return int(self.labels.size)

    def subset(self, classes) -> "FeatureBatch":
        keep = np.isin(self.labels, np.asarray(list(classes), dtype=np.int64))
        return FeatureBatch(self.features[keep], self.labels[keep])


@dataclass(frozen=True)
class EvalProtocol:
    """``candidate_classes`` are the unseen node indices scored against.

    In generalized mode the seen classes are added on top, so an empty
    unseen list is allowed there.
    """

    candidate_classes: tuple[int, ...]
    mode: str = UNSEEN_ONLY
    k_values: tuple[int, ...] = DEFAULT_K

    def __post_init__(self):
        cands = tuple(int(c) for c in self.candidate_classes)
        if self.mode not in (UNSEEN_ONLY, GENERALIZED):
            raise ValidationError(f"mode must be {UNSEEN_ONLY!r} or {GENERALIZED!r}, got {self.mode!r}")
        if len(set(cands)) != len(cands):
            raise ValidationError("candidate classes must be distinct")
        if self.mode == UNSEEN_ONLY and not cands:
            raise ValidationError("unseen-only evaluation needs at least one candidate class")
        if not self.k_values or min(self.k_values) < 1:
            raise ValidationError(f"k values must be >= 1, got {self.k_values}")
        object.__setattr__(self, "candidate_classes", cands)
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))


def class_logits(classifiers, features) -> np.ndarray:
    """Logistic-regression scores; the last classifier column is the bias."""
    classifiers = np.asarray(classifiers, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if classifiers.ndim != 2 or features.ndim != 2 or classifiers.shape[1] != features.shape[1] + 1:
        raise ValidationError(
            f"classifier width {classifiers.shape[-1]} must be feature width {features.shape[-1]} + 1"
        )
    return features @ classifiers[:, :-1].T + classifiers[:, -1]


def classify_topk(classifiers, batch: FeatureBatch, k: int) -> np.ndarray:
    """Row i lists the top-``k`` classifier row indices for example i,
    highest logit first; ties go to the lower index."""
    classifiers = np.asarray(classifiers, dtype=np.float64)
    C = classifiers.shape[0]
    if not 1 <= k <= C:
        raise ValidationError(f"k={k} not in [1, {C}]")
    logits = class_logits(classifiers, batch.features)
    order = np.argsort(-logits, axis=1, kind="stable")
    return order[:, :k]


def hit_at_k(topk, labels, k_values: Sequence[int]) -> dict[int, float]:
    """Percentage of examples whose label shows up in the first k entries."""
    topk = np.asarray(topk)
    labels = np.asarray(labels).ravel()
    if len(labels) == 0:
        return {int(k): float("nan") for k in k_values}
    if max(k_values) > topk.shape[1]:
        raise ValidationError(f"top-k lists have length {topk.shape[1]}, need {max(k_values)}")
    hits = topk == labels[:, None]
    return {int(k): 100.0 * float(np.mean(hits[:, :k].any(axis=1))) for k in k_values}


def evaluate(classifiers, class_ids: Sequence[int], batch: FeatureBatch, k_values: Sequence[int]) -> dict[int, float]:
    """Hit@k with classifier row r standing for node ``class_ids[r]``.

    k values above the candidate count are clipped to it.
    """
    class_ids = np.asarray(class_ids, dtype=np.int64)
    pos = {int(c): r for r, c in enumerate(class_ids)}
    missing = sorted(set(batch.labels.tolist()) - pos.keys())
    if missing:
        raise ValidationError(f"labels {missing[:5]} are not among the candidate classes")
    kmax = min(max(k_values), len(class_ids))
    topk = classify_topk(classifiers, batch, kmax)
    rows = np.array([pos[int(c)] for c in batch.labels], dtype=np.int64)
    padded = np.pad(topk, ((0, 0), (0, max(k_values) - kmax)), constant_values=-1)
    return hit_at_k(padded, rows, k_values)


def generalized_eval(predicted, true_seen, seen_indices, batch: FeatureBatch, protocol: EvalProtocol) -> dict[int, float]:
    """Hit@k under either protocol.

    Unseen-only scores against the predicted classifiers of the candidate
    classes. Generalized mode keeps the ground-truth classifiers of the seen
    classes and appends the predicted unseen ones, so seen-class test
    examples can be scored the same way.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    seen = np.asarray(seen_indices, dtype=np.int64).ravel()
    unseen = np.asarray(protocol.candidate_classes, dtype=np.int64)
    overlap = np.intersect1d(seen, unseen)
    if overlap.size:
        raise ValidationError(f"classes {overlap[:5].tolist()} are both seen and unseen candidates")
    if protocol.mode == UNSEEN_ONLY:
        return evaluate(predicted[unseen], unseen, batch, protocol.k_values)
    true_seen = np.asarray(true_seen, dtype=np.float64)
    if true_seen.shape[0] != seen.size:
        raise ValidationError(f"{true_seen.shape[0]} seen classifiers for {seen.size} seen classes")
    classifiers = np.vstack([true_seen, predicted[unseen]]) if unseen.size else true_seen
    return evaluate(classifiers, np.concatenate([seen, unseen]), batch, protocol.k_values)


def report_csv(hits: dict[int, float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "hit_percent"])
    for k, v in hits.items():
        w.writerow([k, f"{v:.2f}"])
    return buf.getvalue()
