"""Command-line frontend: fit, score, eval, calibrate, decide, filter, synth.

Reports are JSON on stdout; per-sample dumps (scores, decisions, retained
rows) are CSV, written to ``--out`` or to stdout when no path is given.
Errors print a machine-readable JSON object to stderr and exit with the
code carried by the exception: 2 for bad input, 3 for numerical failure.

Heavy imports happen inside the command handlers so that the
``DRIFTGUARD_THREADS`` cap can be exported to the BLAS thread-pool
environment variables before numpy first loads.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

from .errors import DriftGuardError, FormatError, IoError, ParameterError

METHODS = ("aps", "mfs", "ocsvm", "gmm", "nf")

# Similarity scorers are scale-invariant already; the kernel and density
# models normalize by default. On the unit sphere every stock kernel becomes
# a bounded function of cosine similarity, which keeps the grid search away
# from degenerate unbounded-score solutions on far-from-origin embeddings.
_DEFAULT_NORMALIZE = {
    "aps": "none",
    "mfs": "none",
    "ocsvm": "l2",
    "gmm": "l2",
    "nf": "l2",
}

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _cap_threads() -> None:
    value = os.environ.get("DRIFTGUARD_THREADS")
    if value is None:
        return
    try:
        n = int(value)
    except ValueError:
        raise ParameterError(
            f"DRIFTGUARD_THREADS must be a positive integer, got {value!r}"
        ) from None
    if n < 1:
        raise ParameterError(
            f"DRIFTGUARD_THREADS must be a positive integer, got {n}"
        )
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(n))


def _json_float(x: float):
    return float(x) if math.isfinite(x) else None


def _read(path: str, fmt: str):
    from . import core

    if fmt == "csv":
        return core.read_features_csv(path)
    return core.read_features(path)


def _maybe_normalize(matrix, normalize: str):
    if normalize == "l2":
        from . import core

        return core.l2_normalize(matrix)
    return matrix


def _load_scorer(path: str):
    """Load a model file; unwrap the scorer if it holds a monitor."""
    from .persist import load_model

    loaded = load_model(path)
    scorer = loaded.obj.scorer if loaded.is_monitor else loaded.obj
    return loaded, scorer


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _parse_k_grid(text: str) -> tuple[int, ...]:
    lo_text, sep, hi_text = text.partition("..")
    try:
        if not sep:
            k = int(lo_text)
            lo, hi = k, k
        else:
            lo, hi = int(lo_text), int(hi_text)
    except ValueError:
        raise ParameterError(
            f"k-grid must look like A..B or a single integer, got {text!r}"
        ) from None
    if lo < 1 or hi < lo:
        raise ParameterError(f"k-grid bounds must satisfy 1 <= A <= B, got {text!r}")
    return tuple(range(lo, hi + 1))


def _kernel_doc(spec) -> dict:
    doc = {"kind": spec.kind, "gamma": spec.gamma}
    if spec.kind == "poly":
        doc["degree"] = spec.degree
        doc["coef0"] = spec.coef0
    return doc


def _fit_diagnostics(method: str, args, train):
    """Run the method-specific fit and return (model, diagnostics)."""
    if method == "aps":
        from .similarity import fit_aps

        model = fit_aps(train)
        return model, {"reference_rows": model.reference.n}
    if method == "mfs":
        from .similarity import fit_mfs

        model = fit_mfs(train)
        return model, {"mean_norm": model.mean_norm}
    if method == "ocsvm":
        from .ocsvm import grid_search_ocsvm

        result = grid_search_ocsvm(train, grid=args.grid or "full")
        diagnostics = {
            "best_mean_score": _json_float(result.best_mean_score),
            "trials": [
                {
                    "kernel": _kernel_doc(spec),
                    "nu": nu,
                    "selection_score": _json_float(value),
                }
                for spec, nu, value in result.trials
            ],
            "failures": [
                {"kernel": _kernel_doc(spec), "nu": nu, "error": msg}
                for spec, nu, msg in result.failures
            ],
        }
        return result.best, diagnostics
    if method == "gmm":
        from .gmm import EmConfig, select_components

        selection = select_components(
            train,
            _parse_k_grid(args.k_grid),
            config=EmConfig(seed=args.seed),
        )
        diagnostics = {
            "selected_k": selection.selected_k,
            "aic_table": [
                {"k": k, "aic": _json_float(a), "log_likelihood": _json_float(ll)}
                for k, a, ll in selection.tested
            ],
            "failures": [
                {"k": k, "error": msg} for k, msg in selection.failures
            ],
        }
        return selection.model, diagnostics
    from .nflow import TrainConfig, fit_flow

    model = fit_flow(
        train,
        config=TrainConfig(seed=args.seed),
        grid=args.grid or "minimal",
    )
    history = model.history
    diagnostics = {
        "selected_trial": history.selected,
        "trials": [
            {
                "hidden": list(t.hidden),
                "n_steps": t.n_steps,
                "batch_size": t.batch_size,
                "epochs": t.epochs,
                "val_nll": _json_float(t.val_nll),
                "diverged": t.diverged,
                "train_curve": [_json_float(v) for v in t.train_curve],
            }
            for t in history.trials
        ],
    }
    return model, diagnostics


def cmd_fit(args) -> dict:
    from .monitor import FittedScorer
    from .persist import save_model

    matrix, _ = _read(args.features, args.format)
    normalize = args.normalize or _DEFAULT_NORMALIZE[args.method]
    train = _maybe_normalize(matrix, normalize)
    started = time.perf_counter()
    model, diagnostics = _fit_diagnostics(args.method, args, train)
    elapsed = time.perf_counter() - started
    save_model(
        FittedScorer(args.method, model),
        args.out,
        pipeline={"normalize": normalize},
    )
    return {
        "command": "fit",
        "method": args.method,
        "n": train.n,
        "d": train.d,
        "normalize": normalize,
        "elapsed_seconds": elapsed,
        "model": args.out,
        "diagnostics": diagnostics,
    }


def _scores_csv(scores) -> str:
    lines = ["index,score"]
    lines.extend(f"{i},{float(s)!r}" for i, s in enumerate(scores))
    return "\n".join(lines) + "\n"


def cmd_score(args):
    loaded, scorer = _load_scorer(args.model)
    matrix, _ = _read(args.features, args.format)
    query = _maybe_normalize(matrix, loaded.pipeline.get("normalize", "none"))
    scores = scorer.score(query)
    text = _scores_csv(scores.scores)
    if args.out is None:
        sys.stdout.write(text)
        return None
    _write_text(args.out, text)
    return {"command": "score", "n": query.n, "out": args.out}


def cmd_eval(args) -> dict:
    import numpy as np

    from .core import SampleLabel, ScoreSet
    from .metrics import evaluate

    loaded, scorer = _load_scorer(args.model)
    normalize = loaded.pipeline.get("normalize", "none")
    id_matrix, _ = _read(args.id, args.format)
    ood_matrix, _ = _read(args.ood, args.format)
    id_scores = scorer.score(_maybe_normalize(id_matrix, normalize))
    ood_scores = scorer.score(_maybe_normalize(ood_matrix, normalize))
    labeled = ScoreSet(
        np.concatenate([id_scores.scores, ood_scores.scores]),
        id_scores.orientation,
        (SampleLabel.ID,) * id_matrix.n + (SampleLabel.OOD,) * ood_matrix.n,
    )
    report = evaluate(labeled, tpr_target=args.target_tpr)
    doc = {"command": "eval", "model": args.model, **report.to_json()}
    doc["tpr95_threshold"] = _json_float(report.tpr95_threshold)
    if args.out is not None:
        _write_text(args.out, json.dumps(doc, indent=2) + "\n")
    return doc


def cmd_calibrate(args) -> dict:
    from .monitor import calibrate
    from .persist import save_model

    loaded, scorer = _load_scorer(args.model)
    normalize = loaded.pipeline.get("normalize", "none")
    id_matrix, _ = _read(args.id, args.format)
    id_features = _maybe_normalize(id_matrix, normalize)
    ood_features = None
    if args.ood is not None:
        ood_matrix, _ = _read(args.ood, args.format)
        ood_features = _maybe_normalize(ood_matrix, normalize)
    monitor = calibrate(
        scorer, id_features, ood_features, target_tpr=args.target_tpr
    )
    save_model(monitor, args.out, pipeline=loaded.pipeline)
    return {
        "command": "calibrate",
        "threshold": _json_float(monitor.threshold),
        "target_tpr": monitor.calibration.target_tpr,
        "n_id": monitor.calibration.n_id,
        "n_ood": monitor.calibration.n_ood,
        "orientation": monitor.orientation.name,
        "model": args.out,
    }


def cmd_decide(args):
    from .monitor import decide
    from .persist import load_model

    loaded = load_model(args.model)
    if not loaded.is_monitor:
        raise ParameterError(
            f"decide needs a calibrated monitor file, got kind {loaded.kind!r}"
        )
    matrix, _ = _read(args.features, args.format)
    query = _maybe_normalize(matrix, loaded.pipeline.get("normalize", "none"))
    labels = decide(loaded.obj, query)
    lines = ["index,label"]
    lines.extend(f"{i},{label.name}" for i, label in enumerate(labels))
    text = "\n".join(lines) + "\n"
    counts = {
        "n": len(labels),
        "n_id": sum(1 for x in labels if x.name == "ID"),
        "n_ood": sum(1 for x in labels if x.name == "OOD"),
    }
    if args.out is None:
        sys.stdout.write(text)
        return None
    _write_text(args.out, text)
    return {"command": "decide", "out": args.out, **counts}


def cmd_filter(args) -> dict:
    from .monitor import FilterLevel, filter_scores

    loaded, scorer = _load_scorer(args.model)
    matrix, _ = _read(args.features, args.format)
    query = _maybe_normalize(matrix, loaded.pipeline.get("normalize", "none"))
    scores = scorer.score(query)
    retained = filter_scores(scores, FilterLevel[args.level.upper()])
    kept = scores.scores[retained]
    if args.out is not None:
        lines = ["index,score"]
        lines.extend(
            f"{int(i)},{float(s)!r}" for i, s in zip(retained, kept)
        )
        _write_text(args.out, "\n".join(lines) + "\n")
    return {
        "command": "filter",
        "level": args.level,
        "count": int(retained.size),
        "mean_score": _json_float(float(kept.mean())),
        "retained": [int(i) for i in retained],
    }


def cmd_synth(args) -> dict:
    from .core import FeatureSetMetadata, Normalization, write_features
    from .synth import generate, preset_scenario, scenario_from_json, scenario_to_json

    if args.preset is not None:
        scenario = preset_scenario(args.preset)
        source = f"driftguard synth --preset {args.preset}"
    else:
        try:
            doc = json.loads(Path(args.scenario).read_text())
        except OSError as exc:
            raise IoError(f"cannot read {args.scenario}: {exc}") from exc
        except ValueError as exc:
            raise FormatError(
                f"scenario file is not valid JSON: {exc}"
            ) from exc
        scenario = scenario_from_json(doc)
        source = f"driftguard synth --scenario {args.scenario}"
    if args.seed is not None:
        import dataclasses

        scenario = dataclasses.replace(scenario, seed=args.seed)
    monitor, id_set, ood_set, _ = generate(scenario)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    files = {}
    for name, matrix in (
        ("monitor", monitor), ("id", id_set), ("ood", ood_set),
    ):
        path = out_dir / f"{name}.vfmf"
        meta = FeatureSetMetadata(
            name=name,
            dimension=matrix.d,
            normalization=Normalization.NONE,
            source=source,
        )
        write_features(matrix, meta, path)
        files[name] = str(path)
    _write_text(
        str(out_dir / "scenario.json"),
        json.dumps(scenario_to_json(scenario), indent=2) + "\n",
    )
    return {
        "command": "synth",
        "out": str(out_dir),
        "files": files,
        "scenario": str(out_dir / "scenario.json"),
        "d": scenario.d,
        "n_monitor": scenario.n_monitor,
        "n_id": scenario.n_id,
        "n_ood": scenario.n_ood,
        "seed": scenario.seed,
    }


def _add_format(parser) -> None:
    parser.add_argument(
        "--format", choices=("vfmf", "csv"), default="vfmf",
        help="input feature file format",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftguard",
        description="Feature-space out-of-distribution monitoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="train a scorer on monitor features")
    fit.add_argument("--method", required=True, choices=METHODS)
    fit.add_argument("--features", required=True, help="training feature file")
    fit.add_argument("--out", required=True, help="model file to write")
    fit.add_argument(
        "--normalize", choices=("none", "l2"), default=None,
        help="feature preprocessing (default: l2 for ocsvm/gmm/nf, "
        "none for aps/mfs)",
    )
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument(
        "--k-grid", default="1..4", metavar="A..B",
        help="gmm component counts to sweep",
    )
    fit.add_argument(
        "--grid", choices=("full", "minimal"), default=None,
        help="search grid size for ocsvm/nf (default: full for ocsvm, "
        "minimal for nf)",
    )
    _add_format(fit)
    fit.set_defaults(func=cmd_fit)

    score = sub.add_parser("score", help="score samples with a fitted model")
    score.add_argument("--model", required=True)
    score.add_argument("--features", required=True)
    score.add_argument("--out", default=None, help="scores CSV (default: stdout)")
    _add_format(score)
    score.set_defaults(func=cmd_score)

    ev = sub.add_parser("eval", help="AUROC/AUPR/FPR95 on labeled ID/OOD files")
    ev.add_argument("--model", required=True)
    ev.add_argument("--id", required=True, help="in-distribution feature file")
    ev.add_argument("--ood", required=True, help="out-of-distribution feature file")
    ev.add_argument("--target-tpr", type=float, default=0.95)
    ev.add_argument("--out", default=None, help="also write the report JSON here")
    _add_format(ev)
    ev.set_defaults(func=cmd_eval)

    cal = sub.add_parser("calibrate", help="pick a decision threshold")
    cal.add_argument("--model", required=True, help="fitted scorer file")
    cal.add_argument("--id", required=True, help="calibration ID feature file")
    cal.add_argument("--ood", default=None, help="optional OOD feature file")
    cal.add_argument("--target-tpr", type=float, default=0.95)
    cal.add_argument("--out", required=True, help="monitor file to write")
    _add_format(cal)
    cal.set_defaults(func=cmd_calibrate)

    dec = sub.add_parser("decide", help="label samples with a monitor")
    dec.add_argument("--model", required=True, help="calibrated monitor file")
    dec.add_argument("--features", required=True)
    dec.add_argument("--out", default=None, help="decisions CSV (default: stdout)")
    _add_format(dec)
    dec.set_defaults(func=cmd_decide)

    filt = sub.add_parser("filter", help="retain the top scoring fraction")
    filt.add_argument("--model", required=True)
    filt.add_argument("--features", required=True)
    filt.add_argument(
        "--level", required=True, choices=("none", "low", "medium", "high"),
    )
    filt.add_argument("--out", default=None, help="retained rows CSV")
    _add_format(filt)
    filt.set_defaults(func=cmd_filter)

    synth = sub.add_parser("synth", help="write synthetic scenario feature files")
    which = synth.add_mutually_exclusive_group(required=True)
    which.add_argument(
        "--preset",
        choices=("covariate-mild", "covariate-strong", "semantic", "joint"),
        default=None,
    )
    which.add_argument("--scenario", default=None, help="scenario JSON file")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument(
        "--seed", type=int, default=None, help="override the scenario seed"
    )
    synth.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _cap_threads()
        report = args.func(args)
    except DriftGuardError as exc:
        doc = {
            "error": type(exc).__name__,
            "message": str(exc),
            "exit_code": exc.exit_code,
        }
        print(json.dumps(doc), file=sys.stderr)
        return exc.exit_code
    if report is not None:
        print(json.dumps(report, indent=2, allow_nan=False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
