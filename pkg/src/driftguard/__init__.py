"""Feature-space out-of-distribution monitoring.

Five interchangeable ID scorers (average pairwise similarity, mean-feature
similarity, one-class SVM, Gaussian mixture, Real-NVP normalizing flow),
binary OOD metrics, threshold calibration, and quantile filtering, all over a
small binary feature interchange format.

Submodules are imported lazily so that the command-line entry point can cap
BLAS thread pools through environment variables before numpy first loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # core
    "FeatureMatrix": "core",
    "ScoreSet": "core",
    "SampleLabel": "core",
    "ScoreOrientation": "core",
    "Normalization": "core",
    "FeatureSetMetadata": "core",
    "read_features": "core",
    "write_features": "core",
    "read_features_csv": "core",
    "l2_normalize": "core",
    # similarity
    "cosine": "similarity",
    "ApsModel": "similarity",
    "MfsModel": "similarity",
    "fit_aps": "similarity",
    "score_aps": "similarity",
    "fit_mfs": "similarity",
    "score_mfs": "similarity",
    # ocsvm
    "KernelSpec": "ocsvm",
    "OcSvmModel": "ocsvm",
    "GridSearchResult": "ocsvm",
    "kernel_eval": "ocsvm",
    "fit_ocsvm": "ocsvm",
    "score_ocsvm": "ocsvm",
    "grid_search_ocsvm": "ocsvm",
    # gmm
    "GmmModel": "gmm",
    "EmConfig": "gmm",
    "AicSelection": "gmm",
    "log_gaussian": "gmm",
    "fit_gmm": "gmm",
    "aic": "gmm",
    "select_components": "gmm",
    "score_gmm": "gmm",
    # nflow
    "FlowModel": "nflow",
    "TrainConfig": "nflow",
    "init_flow": "nflow",
    "forward": "nflow",
    "inverse": "nflow",
    "log_prob": "nflow",
    "fit_flow": "nflow",
    "score_flow": "nflow",
    "gradient_check": "nflow",
    # metrics
    "EvalReport": "metrics",
    "auroc": "metrics",
    "aupr": "metrics",
    "fpr_at_tpr": "metrics",
    "normalize_minmax": "metrics",
    "evaluate": "metrics",
    # monitor
    "Monitor": "monitor",
    "FilterLevel": "monitor",
    "FittedScorer": "monitor",
    "fit_scorer": "monitor",
    "calibrate": "monitor",
    "decide": "monitor",
    "filter_scores": "monitor",
    # synth
    "ShiftScenario": "synth",
    "GaussianSpec": "synth",
    "MixtureSpec": "synth",
    "MeanShift": "synth",
    "ScaleShift": "synth",
    "ExtraMode": "synth",
    "Rotation": "synth",
    "PortableRng": "synth",
    "generate": "synth",
    "preset_scenario": "synth",
    "scenario_to_json": "synth",
    "scenario_from_json": "synth",
    "oracle_auroc": "synth",
    "oracle_numeric_jacobian": "synth",
    "oracle_gmm_density": "synth",
    # persistence
    "LoadedModel": "persist",
    "save_model": "persist",
    "load_model": "persist",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module 'driftguard' has no attribute {name!r}")
    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value


def __dir__() -> list[str]:
    return __all__
