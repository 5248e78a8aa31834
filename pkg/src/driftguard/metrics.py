"""Binary OOD-classification metrics.

ID is the positive class throughout: TPR is measured on ID samples and FPR on
OOD samples. All functions resolve the score orientation first, so callers may
pass either convention. AUROC uses the rank-statistic identity with average
ranks for ties; AUPR is average precision with no interpolation; the FPR95
threshold counts ``score >= t`` as an ID prediction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .core import SampleLabel, ScoreOrientation, ScoreSet
from .errors import DegenerateInputError, MetricError, ParameterError


def _split_by_label(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    """Oriented (higher-is-ID) scores split into (id, ood) arrays."""
    if scores.labels is None:
        raise MetricError("score set has no labels")
    oriented = scores.oriented()
    mask = np.fromiter(
        (label is SampleLabel.ID for label in scores.labels),
        dtype=bool,
        count=len(scores),
    )
    id_scores = oriented[mask]
    ood_scores = oriented[~mask]
    if id_scores.size == 0 or ood_scores.size == 0:
        raise MetricError("both classes must be present")
    return id_scores, ood_scores


def auroc(scores: ScoreSet) -> float:
    """Area under the ROC curve.

    Equals the Mann-Whitney statistic P(ID > OOD) + 0.5 P(ID == OOD),
    computed via average ranks so ties are exact.

    Raises:
        MetricError: labels missing or one class absent.
    """
    id_scores, ood_scores = _split_by_label(scores)
    n_id, n_ood = id_scores.size, ood_scores.size
    ranks = rankdata(np.concatenate([id_scores, ood_scores]), method="average")
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * n_ood))


def aupr(scores: ScoreSet) -> float:
    """Average precision over descending unique thresholds, ID positive.

    Raises:
        MetricError: labels missing or one class absent.
    """
    id_scores, ood_scores = _split_by_label(scores)
    n_pos = id_scores.size
    values = np.concatenate([id_scores, ood_scores])
    is_pos = np.zeros(values.size, dtype=bool)
    is_pos[:n_pos] = True

    order = np.argsort(-values, kind="stable")
    values = values[order]
    is_pos = is_pos[order]

    tp = np.cumsum(is_pos)
    fp = np.cumsum(~is_pos)
    # evaluate only at the last occurrence of each unique threshold,
    # which is where all samples >= t have been counted
    last = np.r_[values[1:] != values[:-1], True]
    tp = tp[last].astype(float)
    fp = fp[last].astype(float)

    precision = tp / (tp + fp)
    recall = tp / n_pos
    recall_steps = np.diff(recall, prepend=0.0)
    # fsum keeps the result independent of summation order, so independent
    # enumeration routes land on the identical float
    return math.fsum(recall_steps * precision)


def fpr_at_tpr(scores: ScoreSet, tpr_target: float = 0.95) -> tuple[float, float]:
    """FPR on OOD at the loosest threshold achieving the ID TPR target.

    The threshold is the largest t such that at least ``tpr_target`` of the ID
    scores satisfy ``score >= t``; that supremum is the m-th largest ID score
    with m = ceil(tpr_target * n_id).

    Returns:
        ``(fpr, threshold)``.

    Raises:
        ParameterError: ``tpr_target`` outside (0, 1].
        MetricError: labels missing or one class absent.
    """
    if not (0.0 < tpr_target <= 1.0):
        raise ParameterError(f"tpr_target must be in (0, 1], got {tpr_target}")
    id_scores, ood_scores = _split_by_label(scores)
    m = math.ceil(tpr_target * id_scores.size)
    threshold = float(np.sort(id_scores)[::-1][m - 1])
    fpr = float(np.mean(ood_scores >= threshold))
    return fpr, threshold


def normalize_minmax(scores: ScoreSet, reference: ScoreSet) -> ScoreSet:
    """Affine map sending the reference min/max to [0, 1], clamped outside.

    Orientation and labels carry over unchanged.

    Raises:
        DegenerateInputError: the reference scores are constant.
    """
    lo = float(reference.scores.min())
    hi = float(reference.scores.max())
    if hi <= lo:
        raise DegenerateInputError("reference scores are constant")
    mapped = np.clip((scores.scores - lo) / (hi - lo), 0.0, 1.0)
    return ScoreSet(mapped, scores.orientation, labels=scores.labels)


def roc_points(
    scores: ScoreSet, max_points: int = 10_000
) -> list[tuple[float, float, float, float, float]]:
    """ROC/PR curve samples as (threshold, fpr, tpr, precision, recall) rows.

    Thresholds sweep the unique score values descending; when there are more
    than ``max_points`` of them, an even quantile subsample is taken.
    """
    id_scores, ood_scores = _split_by_label(scores)
    thresholds = np.unique(np.concatenate([id_scores, ood_scores]))[::-1]
    if thresholds.size > max_points:
        idx = np.linspace(0, thresholds.size - 1, max_points).round().astype(int)
        thresholds = thresholds[np.unique(idx)]
    points = []
    for t in thresholds:
        tp = float(np.sum(id_scores >= t))
        fp = float(np.sum(ood_scores >= t))
        points.append(
            (
                float(t),
                fp / ood_scores.size,
                tp / id_scores.size,
                tp / (tp + fp),
                tp / id_scores.size,
            )
        )
    return points


@dataclass(frozen=True)
class EvalReport:
    """Bundle of the three detection metrics for one labeled score set."""

    auroc: float
    aupr: float
    fpr95: float
    tpr95_threshold: float
    n_id: int
    n_ood: int
    curve_points: list[tuple[float, float, float, float, float]] | None = None

    def to_json(self) -> dict:
        doc = {
            "auroc": self.auroc,
            "aupr": self.aupr,
            "fpr95": self.fpr95,
            "tpr95_threshold": self.tpr95_threshold,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
        }
        if self.curve_points is not None:
            doc["curve_points"] = [list(p) for p in self.curve_points]
        return doc

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def evaluate(
    scores: ScoreSet,
    tpr_target: float = 0.95,
    with_curve: bool = False,
) -> EvalReport:
    """Compute AUROC, AUPR, and FPR at the TPR target in one pass."""
    fpr, threshold = fpr_at_tpr(scores, tpr_target)
    id_scores, ood_scores = _split_by_label(scores)
    return EvalReport(
        auroc=auroc(scores),
        aupr=aupr(scores),
        fpr95=fpr,
        tpr95_threshold=threshold,
        n_id=int(id_scores.size),
        n_ood=int(ood_scores.size),
        curve_points=roc_points(scores) if with_curve else None,
    )
