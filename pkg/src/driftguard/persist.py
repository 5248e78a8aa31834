"""Single-file model container (DGMF) for scorers and calibrated monitors.

Layout: magic ``DGMF``, version byte 0x01, a little-endian u32 header
length, a UTF-8 JSON header, then the array payload: every array named in
the header, concatenated in order as IEEE-754 binary64 little-endian,
row-major. The header carries the model kind, its scalar fields, the array
manifest, and a free-form ``pipeline`` dict for provenance (for example the
normalization applied before fitting, which scoring must reapply).

Flow models are stored as their topology plus parameter arrays; loading
rebuilds the identity-initialized skeleton from the stored seed and copies
the trained parameters and batch-norm statistics over it. Training history
is a fit-time diagnostic and is not persisted.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gmm as _gmm
from . import nflow as _nflow
from . import ocsvm as _ocsvm
from . import similarity as _similarity
from .core import FeatureMatrix, ScoreOrientation
from .errors import DataError, FormatError, IoError, ParameterError
from .monitor import CalibrationMeta, FittedScorer, Monitor

MAGIC = b"DGMF"
VERSION = 1

_F8 = np.dtype("<f8")


def _encode_float(x: float):
    return float(x) if math.isfinite(x) else str(x)


def _pack_scorer(fitted: FittedScorer):
    """Return (fields, named arrays) for one fitted scorer."""
    model = fitted.model
    if fitted.kind == "aps":
        return {}, [
            ("reference", model.reference.data),
            ("reference_norms", model.reference_norms),
        ]
    if fitted.kind == "mfs":
        return {"mean_norm": model.mean_norm}, [
            ("mean_vector", model.mean_vector),
        ]
    if fitted.kind == "ocsvm":
        kernel = model.kernel
        if isinstance(kernel.gamma, str):
            raise ParameterError(
                f"kernel gamma must be resolved before saving, got "
                f"{kernel.gamma!r}"
            )
        fields = {
            "rho": model.rho,
            "nu": model.nu,
            "kernel": {
                "kind": kernel.kind,
                "gamma": kernel.gamma,
                "degree": kernel.degree,
                "coef0": kernel.coef0,
            },
        }
        return fields, [
            ("support_vectors", model.support_vectors.data),
            ("alphas", model.alphas),
        ]
    if fitted.kind == "gmm":
        fields = {
            "structure": model.structure,
            "log_likelihood": model.log_likelihood,
            "n_iter": model.n_iter,
            "converged": model.converged,
        }
        return fields, [
            ("weights", model.weights),
            ("means", model.means),
            ("covariances", model.covariances),
            ("cholesky", model.cholesky),
            ("ll_path", np.asarray(model.ll_path, dtype=np.float64)),
        ]
    fields = {
        "d": model.d,
        "hidden": list(model.hidden),
        "n_steps": len(model.blocks),
        "seed": model.seed,
        "s_cap": model.s_cap,
    }
    arrays = []
    for i, p in enumerate(_nflow._parameters(model)):
        arrays.append((f"p{i}", p))
    for i, block in enumerate(model.blocks):
        arrays.append((f"bn{i}_mean", block.bn.running_mean))
        arrays.append((f"bn{i}_var", block.bn.running_var))
    return fields, arrays


def _unpack_scorer(kind: str, fields: dict, arrays: list) -> FittedScorer:
    it = iter(arrays)
    if kind == "aps":
        reference = FeatureMatrix(next(it))
        model = _similarity.ApsModel(reference, next(it))
    elif kind == "mfs":
        model = _similarity.MfsModel(next(it), float(fields["mean_norm"]))
    elif kind == "ocsvm":
        k = fields["kernel"]
        kernel = _ocsvm.KernelSpec(
            kind=k["kind"], gamma=k["gamma"], degree=int(k["degree"]),
            coef0=float(k["coef0"]),
        )
        model = _ocsvm.OcSvmModel(
            support_vectors=FeatureMatrix(next(it)),
            alphas=next(it),
            rho=float(fields["rho"]),
            kernel=kernel,
            nu=float(fields["nu"]),
        )
    elif kind == "gmm":
        model = _gmm.GmmModel(
            weights=next(it),
            means=next(it),
            covariances=next(it),
            cholesky=next(it),
            structure=str(fields["structure"]),
            log_likelihood=float(fields["log_likelihood"]),
            ll_path=tuple(float(v) for v in next(it)),
            n_iter=int(fields["n_iter"]),
            converged=bool(fields["converged"]),
        )
    else:
        model = _nflow.init_flow(
            d=int(fields["d"]),
            hidden=tuple(int(h) for h in fields["hidden"]),
            n_steps=int(fields["n_steps"]),
            seed=int(fields["seed"]),
            s_cap=float(fields["s_cap"]),
        )
        params = _nflow._parameters(model)
        stats = [
            arr
            for block in model.blocks
            for arr in (block.bn.running_mean, block.bn.running_var)
        ]
        slots = params + stats
        if len(arrays) != len(slots):
            raise FormatError(
                f"flow payload has {len(arrays)} arrays, topology needs "
                f"{len(slots)}"
            )
        for slot, stored in zip(slots, arrays):
            if slot.shape != stored.shape:
                raise FormatError(
                    f"flow array shape {stored.shape} does not match "
                    f"topology slot {slot.shape}"
                )
            slot[...] = stored
    return FittedScorer(kind, model)


@dataclass(frozen=True)
class LoadedModel:
    """Deserialized container: a scorer or a monitor, plus provenance."""

    kind: str
    obj: object
    pipeline: dict

    @property
    def is_monitor(self) -> bool:
        return self.kind == "monitor"


def save_model(obj, path: str | Path, *, pipeline: dict | None = None) -> None:
    """Write a FittedScorer or Monitor to a DGMF container file.

    Args:
        obj: the model to store.
        path: destination file.
        pipeline: optional provenance dict stored verbatim in the header
            (must be JSON-serializable).

    Raises:
        ParameterError: unsupported object, or a monitor whose scorer is
            not a FittedScorer.
        IoError: the file cannot be written.
    """
    if isinstance(obj, Monitor):
        if not isinstance(obj.scorer, FittedScorer):
            raise ParameterError(
                "only monitors holding a FittedScorer can be saved"
            )
        inner_fields, arrays = _pack_scorer(obj.scorer)
        kind = "monitor"
        fields = {
            "threshold": _encode_float(obj.threshold),
            "orientation": obj.orientation.name,
            "calibration": {
                "target_tpr": obj.calibration.target_tpr,
                "n_id": obj.calibration.n_id,
                "n_ood": obj.calibration.n_ood,
            },
            "scorer": {"kind": obj.scorer.kind, "fields": inner_fields},
        }
    elif isinstance(obj, FittedScorer):
        kind = obj.kind
        fields, arrays = _pack_scorer(obj)
    else:
        raise ParameterError(
            f"cannot save object of type {type(obj).__name__!r}"
        )
    manifest = [
        {"name": name, "shape": list(arr.shape)} for name, arr in arrays
    ]
    header = {
        "kind": kind,
        "fields": fields,
        "arrays": manifest,
        "pipeline": dict(pipeline) if pipeline else {},
    }
    blob = json.dumps(header, allow_nan=False).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(bytes([VERSION]))
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, arr in arrays:
                fh.write(np.ascontiguousarray(arr, dtype=_F8).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write model file {path}: {exc}") from exc


def load_model(path: str | Path) -> LoadedModel:
    """Read a DGMF container back into a FittedScorer or Monitor.

    Raises:
        FormatError: bad magic, unsupported version, malformed header, or
            a payload inconsistent with the declared topology.
        DataError: truncated or oversized payload, or non-finite array
            values.
        IoError: the file cannot be read.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read model file {path}: {exc}") from exc
    if len(raw) < 9 or raw[:4] != MAGIC:
        raise FormatError(f"{path} is not a DGMF model file")
    if raw[4] != VERSION:
        raise FormatError(f"unsupported DGMF version {raw[4]}")
    (header_len,) = struct.unpack_from("<I", raw, 5)
    if 9 + header_len > len(raw):
        raise DataError("header extends past end of file")
    try:
        header = json.loads(raw[9 : 9 + header_len].decode("utf-8"))
        kind = header["kind"]
        fields = header["fields"]
        manifest = header["arrays"]
        pipeline = header["pipeline"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed DGMF header: {exc!r}") from exc

    offset = 9 + header_len
    arrays = []
    for entry in manifest:
        try:
            shape = tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed array manifest: {entry!r}") from exc
        if any(s < 0 for s in shape):
            raise FormatError(f"negative dimension in manifest: {entry!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * _F8.itemsize
        if offset + nbytes > len(raw):
            raise DataError(
                f"payload truncated in array {entry.get('name')!r}"
            )
        arr = np.frombuffer(raw, dtype=_F8, count=count, offset=offset)
        arrays.append(arr.reshape(shape).copy())
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{len(raw) - offset} trailing bytes after payload")
    for entry, arr in zip(manifest, arrays):
        if not np.isfinite(arr).all():
            raise DataError(
                f"array {entry.get('name')!r} contains non-finite values"
            )

    try:
        if kind == "monitor":
            scorer_doc = fields["scorer"]
            scorer = _unpack_scorer(
                scorer_doc["kind"], scorer_doc["fields"], arrays
            )
            cal = fields["calibration"]
            obj: object = Monitor(
                scorer=scorer,
                threshold=float(fields["threshold"]),
                orientation=ScoreOrientation[fields["orientation"]],
                calibration=CalibrationMeta(
                    target_tpr=float(cal["target_tpr"]),
                    n_id=int(cal["n_id"]),
                    n_ood=int(cal["n_ood"]),
                ),
            )
        elif kind in ("aps", "mfs", "ocsvm", "gmm", "nf"):
            obj = _unpack_scorer(kind, fields, arrays)
        else:
            raise FormatError(f"unknown model kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed DGMF header: {exc!r}") from exc
    return LoadedModel(kind=kind, obj=obj, pipeline=dict(pipeline))
