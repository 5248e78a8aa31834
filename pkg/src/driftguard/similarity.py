"""Instance-based similarity scorers.

APS scores a query by its average cosine similarity to every monitor-training
feature vector; MFS collapses the training set to its mean vector first, which
drops per-query cost from O(n*d) to O(d) at some loss of fidelity on
multimodal training sets. Both are scale-invariant and emit scores in [-1, 1]
with the higher-is-ID orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureMatrix, ScoreOrientation, ScoreSet
from .errors import DegenerateInputError, ShapeError


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, clamped into [-1, 1].

    Raises:
        ShapeError: dimensions differ or inputs are not 1-D.
        DegenerateInputError: either vector is zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError("cosine expects 1-D vectors")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateInputError("cosine undefined for the zero vector")
    # rounding can push the quotient past +/-1 by ~1e-16
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


@dataclass(frozen=True)
class ApsModel:
    """Full reference matrix plus precomputed row norms."""

    reference: FeatureMatrix
    reference_norms: np.ndarray

    @property
    def d(self) -> int:
        return self.reference.d


@dataclass(frozen=True)
class MfsModel:
    """Mean feature vector of the training set."""

    mean_vector: np.ndarray
    mean_norm: float

    @property
    def d(self) -> int:
        return self.mean_vector.shape[0]


def _row_norms(matrix: FeatureMatrix, what: str) -> np.ndarray:
    norms = np.linalg.norm(matrix.data, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateInputError(f"{what} row {bad} is the zero vector")
    return norms


def fit_aps(train: FeatureMatrix) -> ApsModel:
    """Store the training matrix and its row norms.

    Raises:
        DegenerateInputError: some training row is zero.
    """
    norms = _row_norms(train, "training")
    norms.flags.writeable = False
    return ApsModel(reference=train, reference_norms=norms)


def score_aps(model: ApsModel, query: FeatureMatrix) -> ScoreSet:
    """Average cosine similarity of each query row to all reference rows.

    Raises:
        ShapeError: query dimension differs from the reference.
        DegenerateInputError: some query row is zero.
    """
    if query.d != model.reference.d:
        raise ShapeError(
            f"query dimension {query.d} != reference dimension {model.reference.d}"
        )
    query_norms = _row_norms(query, "query")
    sims = (query.data @ model.reference.data.T) / np.outer(
        query_norms, model.reference_norms
    )
    np.clip(sims, -1.0, 1.0, out=sims)
    return ScoreSet(sims.mean(axis=1), ScoreOrientation.HIGHER_IS_ID)


def fit_mfs(train: FeatureMatrix) -> MfsModel:
    """Average the training rows into a single mean feature vector.

    Raises:
        DegenerateInputError: the rows cancel to a zero mean.
    """
    mean = train.data.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise DegenerateInputError("training rows average to the zero vector")
    mean = mean.copy()
    mean.flags.writeable = False
    return MfsModel(mean_vector=mean, mean_norm=norm)


def score_mfs(model: MfsModel, query: FeatureMatrix) -> ScoreSet:
    """Cosine similarity of each query row to the mean feature vector.

    Raises:
        ShapeError: dimension mismatch.
        DegenerateInputError: some query row is zero.
    """
    if query.d != model.d:
        raise ShapeError(f"query dimension {query.d} != model dimension {model.d}")
    query_norms = _row_norms(query, "query")
    sims = (query.data @ model.mean_vector) / (query_norms * model.mean_norm)
    np.clip(sims, -1.0, 1.0, out=sims)
    return ScoreSet(sims, ScoreOrientation.HIGHER_IS_ID)
