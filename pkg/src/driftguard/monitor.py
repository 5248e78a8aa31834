"""Monitor assembly: one fit/score surface over the five scorer families,
threshold calibration, binary ID/OOD decisions, and quantile filtering.

A monitor pairs a fitted scorer with a decision threshold in the oriented
(higher-is-ID) score domain. Queries scoring strictly above the threshold
are declared ID; a score exactly at the threshold is OOD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import gmm as _gmm
from . import nflow as _nflow
from . import ocsvm as _ocsvm
from . import similarity as _similarity
from .core import FeatureMatrix, SampleLabel, ScoreOrientation, ScoreSet
from .errors import ParameterError
from .metrics import fpr_at_tpr

SCORER_KINDS = ("aps", "mfs", "ocsvm", "gmm", "nf")


@dataclass(frozen=True)
class FittedScorer:
    """A trained model of one of the five kinds behind a uniform score call."""

    kind: str
    model: object

    def __post_init__(self) -> None:
        if self.kind not in SCORER_KINDS:
            raise ParameterError(
                f"kind must be one of {SCORER_KINDS}, got {self.kind!r}"
            )

    def score(self, query: FeatureMatrix) -> ScoreSet:
        if self.kind == "aps":
            return _similarity.score_aps(self.model, query)
        if self.kind == "mfs":
            return _similarity.score_mfs(self.model, query)
        if self.kind == "ocsvm":
            return _ocsvm.score_ocsvm(self.model, query)
        if self.kind == "gmm":
            return _gmm.score_gmm(self.model, query)
        return _nflow.score_flow(self.model, query)


def fit_scorer(kind: str, train: FeatureMatrix, **options) -> FittedScorer:
    """Fit one scorer family on the monitor set.

    Options by kind: ``ocsvm`` takes ``grid`` ("full"/"minimal") and
    ``selection``; ``gmm`` takes ``grid`` (component counts, default 1..4)
    and ``config`` (EmConfig); ``nf`` takes ``grid`` ("minimal"/"full") and
    ``config`` (TrainConfig). ``aps`` and ``mfs`` take none.

    Raises:
        ParameterError: unknown kind or an option the kind does not accept.
    """
    if kind == "aps":
        model = _similarity.fit_aps(train)
    elif kind == "mfs":
        model = _similarity.fit_mfs(train)
    elif kind == "ocsvm":
        result = _ocsvm.grid_search_ocsvm(
            train,
            grid=options.pop("grid", "full"),
            selection=options.pop("selection", "train-mean"),
        )
        model = result.best
    elif kind == "gmm":
        selection = _gmm.select_components(
            train,
            options.pop("grid", (1, 2, 3, 4)),
            config=options.pop("config", None),
        )
        model = selection.model
    elif kind == "nf":
        model = _nflow.fit_flow(
            train,
            config=options.pop("config", None),
            grid=options.pop("grid", "minimal"),
        )
    else:
        raise ParameterError(f"kind must be one of {SCORER_KINDS}, got {kind!r}")
    if options:
        raise ParameterError(
            f"unknown options for scorer {kind!r}: {sorted(options)}"
        )
    return FittedScorer(kind=kind, model=model)


@dataclass(frozen=True)
class CalibrationMeta:
    target_tpr: float
    n_id: int
    n_ood: int


@dataclass(frozen=True)
class Monitor:
    """Scorer plus decision threshold in the oriented score domain.

    ``threshold = -inf`` is the documented disabled sentinel: every query is
    declared ID. NaN and +inf are rejected.
    """

    scorer: object
    threshold: float
    orientation: ScoreOrientation
    calibration: CalibrationMeta

    def __post_init__(self) -> None:
        if math.isnan(self.threshold) or self.threshold == math.inf:
            raise ParameterError(f"bad threshold: {self.threshold!r}")


def calibrate(
    scorer,
    id_samples: FeatureMatrix,
    ood_samples: FeatureMatrix | None = None,
    target_tpr: float = 0.95,
) -> Monitor:
    """Pick the decision threshold from a small calibration set.

    Without OOD samples the threshold sits just below the k-th lowest ID
    score, k = max(1, floor((1 - target_tpr) * n)): at least target_tpr of
    the calibration ID set is classified ID, and at target_tpr = 1.0 nothing
    is rejected. With OOD samples the threshold comes from the fpr_at_tpr
    scan instead, nudged just below so the strict decision rule keeps the
    score at the threshold on the ID side of the >= scan.

    Raises:
        ParameterError: target_tpr outside (0, 1].
    """
    if not 0.0 < target_tpr <= 1.0:
        raise ParameterError(f"target_tpr must be in (0, 1], got {target_tpr}")
    id_set = scorer.score(id_samples)
    id_scores = id_set.oriented()
    if ood_samples is None:
        k = max(1, math.floor((1.0 - target_tpr) * id_scores.size))
        at = float(np.sort(id_scores)[k - 1])
        n_ood = 0
    else:
        ood_scores = scorer.score(ood_samples).oriented()
        labels = (SampleLabel.ID,) * id_scores.size + (
            SampleLabel.OOD,
        ) * ood_scores.size
        combined = ScoreSet(
            np.concatenate([id_scores, ood_scores]),
            ScoreOrientation.HIGHER_IS_ID,
            labels=labels,
        )
        _, at = fpr_at_tpr(combined, target_tpr)
        n_ood = ood_samples.n
    threshold = float(np.nextafter(at, -math.inf))
    return Monitor(
        scorer=scorer,
        threshold=threshold,
        orientation=id_set.orientation,
        calibration=CalibrationMeta(target_tpr, id_samples.n, n_ood),
    )


def decide(monitor: Monitor, query: FeatureMatrix) -> tuple[SampleLabel, ...]:
    """Binary label per query row: ID iff oriented score > threshold."""
    oriented = monitor.scorer.score(query).oriented()
    return tuple(
        SampleLabel.ID if s > monitor.threshold else SampleLabel.OOD
        for s in oriented
    )


class FilterLevel(Enum):
    """Quantile filtering levels and their retention fractions."""

    NONE = "none"
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def retention(self) -> float:
        return _RETENTION[self]


_RETENTION = {
    FilterLevel.NONE: 1.0,
    FilterLevel.LOW: 0.75,
    FilterLevel.MEDIUM: 0.5,
    FilterLevel.HIGH: 0.25,
}


def filter_scores(scores: ScoreSet, level: FilterLevel) -> np.ndarray:
    """Indices of the ceil(retention * n) highest-scoring samples, ascending.

    Ties break toward the lower index, so the retained sets nest as the
    level tightens.

    Raises:
        ParameterError: level is not a FilterLevel.
    """
    if not isinstance(level, FilterLevel):
        raise ParameterError(f"level must be a FilterLevel, got {level!r}")
    n = len(scores)
    m = math.ceil(level.retention * n)
    order = np.argsort(-scores.oriented(), kind="stable")
    return np.sort(order[:m])
