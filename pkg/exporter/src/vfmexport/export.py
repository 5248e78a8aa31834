"""Extraction job: image directory in, VFMF feature file out.

Row order is a pure function of the filenames (lexicographic), never of the
directory enumeration order. Every regular file in the directory is a
candidate; files Pillow cannot decode are skipped with a warning and listed
in the sidecar, and a job with zero usable images fails outright.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import get_encoder
from .errors import ExportError, JobError
from .vfmf import write_vfmf

# PIL decodes lazily, so failures can surface inside the encoder's convert
# call; the loop treats any per-file Exception as an undecodable image.
from PIL import Image


@dataclass(frozen=True)
class ExtractionJob:
    """One export run over a directory of images.

    ``concat_last_3`` mean-pools each of the encoder's last three stages
    spatially and concatenates the pooled vectors; without it only the
    final stage is pooled. ``batch_size`` chunks the iteration for
    encoders that batch internally, and ``device`` is a hint passed to the
    plugin; the built-in hash encoder ignores both.
    """

    images: Path
    encoder: str
    out: Path
    batch_size: int = 32
    device: str = "cpu"
    concat_last_3: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", Path(self.images))
        object.__setattr__(self, "out", Path(self.out))
        if not self.images.is_dir():
            raise ExportError(f"image directory not found: {self.images}")
        if self.batch_size < 1:
            raise ExportError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class ExportResult:
    out: Path
    n: int
    d: int
    encoder: str
    skipped: tuple[str, ...]


def _pool(layers: tuple[np.ndarray, ...], concat_last_3: bool) -> np.ndarray:
    if concat_last_3 and len(layers) < 3:
        raise ExportError(
            f"encoder exposes {len(layers)} stages, --concat-last-3 needs 3"
        )
    maps = layers[-3:] if concat_last_3 else layers[-1:]
    pooled = [m.reshape(m.shape[0], -1).mean(axis=1) for m in maps]
    return np.concatenate(pooled).astype(np.float32)


def extract(job: ExtractionJob) -> ExportResult:
    """Encode every decodable image and write the feature file.

    Returns:
        Counts, the output path, and the names of skipped files.

    Raises:
        JobError: no image in the directory could be decoded.
        ExportError: unknown encoder, inconsistent plugin output, or an
            unwritable destination.
    """
    plugin = get_encoder(job.encoder, job.device)
    names = sorted(p.name for p in job.images.iterdir() if p.is_file())
    rows: list[np.ndarray] = []
    kept: list[str] = []
    skipped: list[str] = []
    for start in range(0, len(names), job.batch_size):
        for name in names[start : start + job.batch_size]:
            try:
                with Image.open(job.images / name) as image:
                    layers = plugin.encode(image)
            except Exception as exc:  # noqa: BLE001 - per-file isolation
                warnings.warn(f"skipped {name}: {exc}", RuntimeWarning, stacklevel=2)
                skipped.append(name)
                continue
            rows.append(_pool(layers, job.concat_last_3))
            kept.append(name)
    if not rows:
        raise JobError(
            f"no usable images in {job.images} ({len(skipped)} skipped)"
        )
    widths = {row.shape[0] for row in rows}
    if len(widths) != 1:
        raise ExportError(f"encoder produced mixed dimensions: {sorted(widths)}")
    matrix = np.stack(rows)
    sidecar = {
        "name": job.out.stem,
        "dimension": int(matrix.shape[1]),
        "normalization": "none",
        "source": str(job.images),
        "encoder": plugin.name,
        "preprocess": plugin.preprocess,
        "pooling": "spatial mean per stage, last three concatenated"
        if job.concat_last_3
        else "spatial mean over the final stage",
        "skipped": skipped,
    }
    write_vfmf(matrix, job.out, sidecar)
    return ExportResult(
        out=job.out,
        n=int(matrix.shape[0]),
        d=int(matrix.shape[1]),
        encoder=plugin.name,
        skipped=tuple(skipped),
    )
