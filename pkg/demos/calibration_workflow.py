"""Calibrate a monitor, label a mixed stream, and filter by confidence.

Three stages of the deployment workflow:

1. fit a GMM scorer on monitor features and calibrate its threshold so that
   95% of held-out in-distribution samples pass,
2. apply the binary decision to a stream that mixes ID and shifted samples,
3. replace the hard decision with quantile filtering and watch the OOD
   contamination of the retained set drop as the level tightens.

Run: python3 demos/calibration_workflow.py
"""

from __future__ import annotations

import numpy as np

from driftguard.core import FeatureMatrix, SampleLabel, ScoreSet, l2_normalize
from driftguard.monitor import FilterLevel, calibrate, decide, filter_scores, fit_scorer
from driftguard.synth import generate, preset_scenario


def main() -> None:
    scenario = preset_scenario("covariate-strong")
    monitor_set, id_set, ood_set, _ = generate(scenario)
    monitor_set, id_set, ood_set = (
        l2_normalize(m) for m in (monitor_set, id_set, ood_set)
    )

    # hold out part of the ID set to pick the threshold
    calib = FeatureMatrix(id_set.data[:250])
    id_eval = FeatureMatrix(id_set.data[250:])

    scorer = fit_scorer("gmm", monitor_set)
    monitor = calibrate(scorer, calib, target_tpr=0.95)
    print(f"calibrated threshold: {monitor.threshold:.3f} "
          f"({monitor.calibration.target_tpr:.0%} target TPR, "
          f"n={monitor.calibration.n_id})")

    stream = FeatureMatrix(np.vstack([id_eval.data, ood_set.data]))
    truth = (SampleLabel.ID,) * id_eval.n + (SampleLabel.OOD,) * ood_set.n
    labels = decide(monitor, stream)
    accepted_id = sum(
        1 for got, want in zip(labels, truth)
        if got is SampleLabel.ID and want is SampleLabel.ID
    )
    accepted_ood = sum(
        1 for got, want in zip(labels, truth)
        if got is SampleLabel.ID and want is SampleLabel.OOD
    )
    print(f"\ndecide on mixed stream ({id_eval.n} id + {ood_set.n} ood):")
    print(f"  accepted {accepted_id}/{id_eval.n} id samples "
          f"(tpr {accepted_id / id_eval.n:.3f})")
    print(f"  accepted {accepted_ood}/{ood_set.n} ood samples "
          f"(fpr {accepted_ood / ood_set.n:.3f})")

    raw = monitor.scorer.score(stream)
    scores = ScoreSet(raw.scores, raw.orientation)
    print(f"\nquantile filtering the same stream:")
    print(f"{'level':>8} {'retained':>9} {'ood kept':>9}")
    for level in (FilterLevel.NONE, FilterLevel.LOW, FilterLevel.MEDIUM,
                  FilterLevel.HIGH):
        kept = filter_scores(scores, level)
        ood_kept = sum(1 for i in kept if truth[i] is SampleLabel.OOD)
        print(f"{level.value:>8} {len(kept):>9} {ood_kept:>9}")


if __name__ == "__main__":
    main()
