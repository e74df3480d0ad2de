"""Threshold-free and thresholded evaluation, plus the ablation runner.

AUC is the rank statistic (probability a random positive outscores a
random negative, ties half-weighted). EER sweeps every decision
threshold with accept defined as score >= threshold and linearly
interpolates between the two operating points where the false-accept
and false-reject rates cross.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateLabels

SCORES_HEADER = "score,label"


@dataclass(frozen=True)
class ScoredSet:
    """Parallel score and binary label arrays."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        if scores.ndim != 1 or labels.shape != scores.shape:
            raise ValueError(
                f"scores {scores.shape} and labels {labels.shape} must be"
                " equal-length vectors"
            )
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def size(self) -> int:
        return self.scores.shape[0]

    def require_both_classes(self):
        if not np.any(self.labels == 1) or not np.any(self.labels == 0):
            raise DegenerateLabels("need at least one positive and one negative")


@dataclass(frozen=True)
class RocCurve:
    """Operating points (false positive rate, true positive rate, threshold)."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the mean rank of the tie group."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    sorted_values = values[order]
    i = 0
    while i < values.shape[0]:
        j = i
        while j + 1 < values.shape[0] and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scored: ScoredSet) -> float:
    """Rank-based area under the ROC curve; ties count one half."""
    scored.require_both_classes()
    ranks = _midranks(scored.scores)
    num_pos = int(np.sum(scored.labels == 1))
    num_neg = scored.size - num_pos
    pos_rank_sum = float(ranks[scored.labels == 1].sum())
    return (pos_rank_sum - num_pos * (num_pos + 1) / 2.0) / (num_pos * num_neg)


def _operating_points(scored: ScoredSet):
    """FAR and FRR at every distinct threshold, plus one above the maximum.

    Accept means score >= threshold. Thresholds ascend, so FAR falls
    from 1 to 0 while FRR climbs from 0 to 1.
    """
    thresholds = np.concatenate([np.unique(scored.scores), [np.inf]])
    pos = np.sort(scored.scores[scored.labels == 1])
    neg = np.sort(scored.scores[scored.labels == 0])
    far = 1.0 - np.searchsorted(neg, thresholds, side="left") / neg.shape[0]
    frr = np.searchsorted(pos, thresholds, side="left") / pos.shape[0]
    return thresholds, far, frr


def eer(scored: ScoredSet) -> float:
    """Rate at the crossing of false-accept and false-reject rates."""
    scored.require_both_classes()
    _, far, frr = _operating_points(scored)
    gap = frr - far
    crossing = int(np.searchsorted(gap >= 0.0, True))
    if gap[crossing] == 0.0:
        return float(far[crossing])
    j = crossing - 1
    span = gap[j + 1] - gap[j]
    fraction = -gap[j] / span
    return float(far[j] + fraction * (far[j + 1] - far[j]))


def roc_curve(scored: ScoredSet) -> RocCurve:
    """ROC operating points from threshold +inf down to the minimum score."""
    scored.require_both_classes()
    thresholds, far, frr = _operating_points(scored)
    order = np.arange(thresholds.shape[0])[::-1]
    return RocCurve(fpr=far[order], tpr=1.0 - frr[order],
                    thresholds=thresholds[order])


def f1_at(scored: ScoredSet, threshold: float) -> float:
    """F1 with accept defined as score >= threshold; 0 when P + R = 0."""
    if scored.size == 0:
        raise ValueError("cannot compute F1 of an empty set")
    predicted = scored.scores >= threshold
    tp = int(np.sum(predicted & (scored.labels == 1)))
    fp = int(np.sum(predicted & (scored.labels == 0)))
    fn = int(np.sum(~predicted & (scored.labels == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def write_scores(path, scored: ScoredSet) -> None:
    lines = [SCORES_HEADER]
    for score, label in zip(scored.scores, scored.labels):
        lines.append(f"{float(score)!r},{int(label)}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def read_scores(path) -> ScoredSet:
    scores = []
    labels = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line == SCORES_HEADER:
                continue
            score_text, label_text = line.split(",")
            scores.append(float(score_text))
            labels.append(int(label_text))
    return ScoredSet(np.array(scores), np.array(labels))


@dataclass(frozen=True)
class AblationRow:
    """One grid cell: the swept configuration and its evaluation metrics."""

    d: int
    k: int
    auc: float
    eer: float


ABLATION_HEADER = "d,k,auc,eer"


def ablation_grid(manifest_train, manifest_eval, d_values, k_values, base_cfg,
                  epochs: int, log=None) -> list:
    """Train and evaluate one model per swept shift or block count.

    Sweeps are one-at-a-time: every d in d_values with the base k, then
    every k in k_values with the base d. Each cell derives its own seed
    from the base seed and its coordinates, so the grid is
    deterministic and cells are independent.
    """
    from . import model as model_module

    cells = [(d, base_cfg.sdc.k) for d in d_values]
    cells += [(base_cfg.sdc.d, k) for k in k_values]
    rows = []
    for d, k in cells:
        sdc_cfg = replace(base_cfg.sdc, d=d, k=k)
        cfg = replace(base_cfg, sdc=sdc_cfg,
                      seed=int(base_cfg.seed) * 10000 + d * 100 + k)
        trained, _, _ = model_module.train(manifest_train, cfg, epochs)
        scored = model_module.evaluate(trained, manifest_eval)
        row = AblationRow(d=d, k=k, auc=auc(scored), eer=eer(scored))
        rows.append(row)
        if log is not None:
            log(row)
    return rows


def ablation_csv(rows) -> str:
    lines = [ABLATION_HEADER]
    for row in rows:
        lines.append(f"{row.d},{row.k},{row.auc!r},{row.eer!r}")
    return "\n".join(lines) + "\n"
