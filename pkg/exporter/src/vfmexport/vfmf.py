"""Minimal VFMF writer.

The format is the interchange point with the monitoring pipeline: a 13-byte
header (magic "VFMF", version byte, little-endian uint32 row and column
counts) followed by row-major float32 data, plus a JSON sidecar at
``<path>.meta.json``. Readers tolerate extra sidecar keys, so provenance
fields ride along with the required name/dimension/normalization/source.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ExportError

MAGIC = b"VFMF"
VERSION = 1
_HEADER = struct.Struct("<4sBII")


def write_vfmf(rows: np.ndarray, path: str | Path, sidecar: dict) -> None:
    """Write ``rows`` as a VFMF file and ``sidecar`` as its metadata.

    Raises:
        ExportError: rows are not a finite, nonempty 2-D array, the sidecar
            dimension disagrees, or the destination is not writable.
    """
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
        raise ExportError(f"feature rows must be a nonempty 2-D array, got {rows.shape}")
    if not np.isfinite(rows).all():
        raise ExportError("feature rows contain non-finite values")
    if sidecar.get("dimension") != rows.shape[1]:
        raise ExportError(
            f"sidecar dimension {sidecar.get('dimension')} does not match "
            f"d={rows.shape[1]}"
        )
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, rows.shape[0], rows.shape[1])
    try:
        path.write_bytes(header + rows.astype("<f4").tobytes(order="C"))
        Path(str(path) + ".meta.json").write_text(
            json.dumps(sidecar, indent=2) + "\n"
        )
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
