"""Domain types and the feature interchange format.

Every scorer in this package consumes feature vectors through the two types
defined here: :class:`FeatureMatrix` (validated, immutable, float64) and
:class:`ScoreSet` (per-sample scores with an explicit orientation and optional
ID/OOD labels). Features move between tools through the VFMF binary format:

    magic ``VFMF`` | version byte 0x01 | u32 n | u32 d | n*d float32

with all integers and floats little-endian and the payload row-major. An
optional JSON sidecar ``<path>.meta.json`` carries provenance fields
(``name``, ``dimension``, ``normalization``, ``source``). Arithmetic inside
the package is float64; the on-disk payload is float32, so ingest is the one
place precision is dropped and a write/read round-trip after ingest is exact.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DegenerateInputError,
    FormatError,
    IoError,
    ShapeError,
)

VFMF_MAGIC = b"VFMF"
VFMF_VERSION = 1

_HEADER = struct.Struct("<4sBII")  # magic, version, n, d


class SampleLabel(enum.Enum):
    """Ground-truth or decided class of a single sample."""

    ID = "ID"
    OOD = "OOD"


class ScoreOrientation(enum.Enum):
    """Whether larger scores indicate in-distribution or out-of-distribution."""

    HIGHER_IS_ID = "higher_is_id"
    HIGHER_IS_OOD = "higher_is_ood"


class Normalization(enum.Enum):
    """Feature preprocessing recorded in metadata and model files."""

    NONE = "none"
    L2 = "l2"


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out is arr or out.base is arr:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FeatureMatrix:
    """Immutable n x d matrix of feature vectors, one sample per row.

    Raises:
        ShapeError: if ``data`` is not 2-D or has a zero-length axis.
        DataError: if any entry is NaN or infinite.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"feature matrix must be at least 1x1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", _as_readonly(arr))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ScoreSet:
    """Per-sample scores plus the convention needed to interpret them.

    ``labels``, when present, aligns with ``scores`` and enables the binary
    ID-vs-OOD metrics.
    """

    scores: np.ndarray
    orientation: ScoreOrientation
    labels: tuple[SampleLabel, ...] | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError(f"scores must be 1-D, got ndim={arr.ndim}")
        if not np.isfinite(arr).all():
            raise DataError("scores contain non-finite values")
        if not isinstance(self.orientation, ScoreOrientation):
            raise DataError(f"bad orientation: {self.orientation!r}")
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != arr.shape[0]:
                raise ShapeError(
                    f"{len(labels)} labels for {arr.shape[0]} scores"
                )
            if not all(isinstance(l, SampleLabel) for l in labels):
                raise DataError("labels must be SampleLabel values")
            object.__setattr__(self, "labels", labels)
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "scores", arr)

    def __len__(self) -> int:
        return self.scores.shape[0]

    def oriented(self) -> np.ndarray:
        """Scores mapped to the higher-is-ID convention."""
        if self.orientation is ScoreOrientation.HIGHER_IS_ID:
            return self.scores
        return -self.scores


@dataclass(frozen=True)
class FeatureSetMetadata:
    """Provenance sidecar for a feature file."""

    name: str = "features"
    dimension: int = 0
    normalization: Normalization = Normalization.NONE
    source: str = "unknown"

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "normalization": self.normalization.value,
            "source": self.source,
        }

    @classmethod
    def from_json(cls, doc: dict) -> FeatureSetMetadata:
        try:
            return cls(
                name=str(doc["name"]),
                dimension=int(doc["dimension"]),
                normalization=Normalization(doc["normalization"]),
                source=str(doc["source"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad metadata sidecar: {exc}") from exc


def _sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def read_features(path: str | Path) -> tuple[FeatureMatrix, FeatureSetMetadata]:
    """Read a VFMF file and its sidecar if present.

    Args:
        path: VFMF file location.

    Returns:
        The decoded matrix and its metadata (defaults when no sidecar exists).

    Raises:
        FormatError: bad magic, version, or header.
        DataError: truncated payload, non-finite values, or empty dimensions.
        IoError: the file cannot be read.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the VFMF header")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != VFMF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {VFMF_MAGIC!r}")
    if version != VFMF_VERSION:
        raise FormatError(f"{path}: unsupported VFMF version {version}")
    if n < 1 or d < 1:
        raise DataError(f"{path}: header declares empty matrix ({n}x{d})")

    expected = n * d * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise DataError(
            f"{path}: truncated payload, expected {expected} bytes, "
            f"got {len(payload)}"
        )
    values = np.frombuffer(payload[:expected], dtype="<f4").astype(np.float64)
    matrix = values.reshape(n, d)
    if not np.isfinite(matrix).all():
        raise DataError(f"{path}: payload contains non-finite values")

    meta = FeatureSetMetadata(name=path.stem, dimension=d)
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        try:
            doc = json.loads(sidecar.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad metadata sidecar {sidecar}: {exc}") from exc
        meta = FeatureSetMetadata.from_json(doc)
        if meta.dimension != d:
            raise DataError(
                f"{sidecar}: sidecar dimension {meta.dimension} does not match "
                f"file dimension {d}"
            )
    return FeatureMatrix(matrix), meta


def write_features(
    matrix: FeatureMatrix,
    meta: FeatureSetMetadata,
    path: str | Path,
) -> None:
    """Write ``matrix`` as VFMF plus its JSON sidecar.

    Raises:
        DataError: metadata dimension disagrees with the matrix.
        IoError: the file cannot be written.
    """
    if meta.dimension != matrix.d:
        raise DataError(
            f"metadata dimension {meta.dimension} does not match matrix d={matrix.d}"
        )
    path = Path(path)
    header = _HEADER.pack(VFMF_MAGIC, VFMF_VERSION, matrix.n, matrix.d)
    payload = matrix.data.astype("<f4").tobytes(order="C")
    try:
        path.write_bytes(header + payload)
        _sidecar_path(path).write_text(json.dumps(meta.to_json(), indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_features_csv(path: str | Path) -> tuple[FeatureMatrix, FeatureSetMetadata]:
    """Read one-sample-per-line comma-separated features.

    Raises:
        FormatError: unparsable or ragged rows.
        DataError: empty file or non-finite values.
        IoError: the file cannot be read.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise FormatError(
                f"{path}:{lineno}: expected {width} columns, got {len(fields)}"
            )
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    matrix = FeatureMatrix(np.asarray(rows, dtype=np.float64))
    return matrix, FeatureSetMetadata(name=path.stem, dimension=matrix.d)


def l2_normalize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Scale every row to unit Euclidean norm.

    Raises:
        DegenerateInputError: some row is the zero vector.
    """
    norms = np.linalg.norm(matrix.data, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateInputError(f"row {bad} is the zero vector")
    return FeatureMatrix(matrix.data / norms[:, None])
