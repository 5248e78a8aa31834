"""Binary OOD metrics against hand values and brute-force enumeration."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _brute import brute_auroc, brute_average_precision, brute_fpr_at_tpr
from driftguard.core import SampleLabel, ScoreOrientation, ScoreSet
from driftguard.errors import DegenerateInputError, MetricError, ParameterError
from driftguard.metrics import (
    EvalReport,
    aupr,
    auroc,
    evaluate,
    fpr_at_tpr,
    normalize_minmax,
    roc_points,
)

ID, OOD = SampleLabel.ID, SampleLabel.OOD


def labeled(id_scores, ood_scores, orientation=ScoreOrientation.HIGHER_IS_ID):
    scores = np.concatenate([np.asarray(id_scores, float), np.asarray(ood_scores, float)])
    labels = (ID,) * len(id_scores) + (OOD,) * len(ood_scores)
    return ScoreSet(scores, orientation, labels=labels)


def random_instance(rng):
    n_id = int(rng.integers(1, 26))
    n_ood = int(rng.integers(1, 26))
    # mix of continuous scores and deliberate ties on a small integer lattice
    if rng.random() < 0.5:
        id_s = rng.normal(size=n_id)
        ood_s = rng.normal(loc=-0.5, size=n_ood)
    else:
        id_s = rng.integers(0, 8, size=n_id).astype(float)
        ood_s = rng.integers(0, 8, size=n_ood).astype(float)
    return id_s, ood_s


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc(labeled([2, 3], [0, 1])) == 1.0

    def test_inverted_separation(self):
        assert auroc(labeled([0, 1], [2, 3])) == 0.0

    def test_all_ties(self):
        assert auroc(labeled([1, 1, 1], [1, 1])) == 0.5

    def test_hand_computed_crossing(self):
        # pairs: 2>1, 2<3, 4>1, 4>3 -> 3/4
        assert auroc(labeled([2, 4], [1, 3])) == 0.75

    def test_orientation_flip(self):
        s = labeled([2, 4], [1, 3])
        flipped = ScoreSet(
            -s.scores, ScoreOrientation.HIGHER_IS_OOD, labels=s.labels
        )
        assert auroc(flipped) == auroc(s)

    def test_single_class_rejected(self):
        only_id = ScoreSet(
            np.array([1.0, 2.0]), ScoreOrientation.HIGHER_IS_ID, labels=(ID, ID)
        )
        with pytest.raises(MetricError):
            auroc(only_id)

    def test_missing_labels_rejected(self):
        with pytest.raises(MetricError):
            auroc(ScoreSet(np.array([1.0]), ScoreOrientation.HIGHER_IS_ID))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(123)
        for _ in range(300):
            id_s, ood_s = random_instance(rng)
            got = auroc(labeled(id_s, ood_s))
            want = brute_auroc(id_s, ood_s)
            assert abs(got - want) < 1e-12


class TestAupr:
    def test_perfect_separation(self):
        assert aupr(labeled([2, 3], [0, 1])) == 1.0

    def test_hand_computed_interleaved(self):
        # descending sweep of {4 ID, 3 OOD, 2 ID, 1 OOD} -> 0.5 + 1/3
        got = aupr(labeled([4, 2], [3, 1]))
        assert abs(got - (0.5 + 1.0 / 3.0)) < 1e-15

    def test_random_scores_approach_id_fraction(self):
        rng = np.random.default_rng(42)
        n = 10_000
        n_id = 3_000
        scores = rng.random(n)
        got = aupr(labeled(scores[:n_id], scores[n_id:]))
        assert abs(got - n_id / n) < 0.05

    def test_matches_brute_force(self):
        rng = np.random.default_rng(321)
        for _ in range(300):
            id_s, ood_s = random_instance(rng)
            got = aupr(labeled(id_s, ood_s))
            want = brute_average_precision(id_s, ood_s)
            assert got == want

    def test_single_class_rejected(self):
        with pytest.raises(MetricError):
            aupr(
                ScoreSet(
                    np.array([1.0]), ScoreOrientation.HIGHER_IS_ID, labels=(OOD,)
                )
            )


class TestFprAtTpr:
    def test_hand_enumerated_22_values(self):
        s = labeled(np.arange(1.0, 21.0), [0.0, 5.0])
        fpr, threshold = fpr_at_tpr(s, 0.95)
        assert threshold == 2.0  # 19/20 ID at or above it
        assert fpr == 0.5

    def test_perfect_separation(self):
        fpr, _ = fpr_at_tpr(labeled([10, 11, 12], [1, 2, 3]), 0.95)
        assert fpr == 0.0

    def test_identical_multisets(self):
        vals = np.arange(100.0)
        fpr, _ = fpr_at_tpr(labeled(vals, vals), 0.95)
        assert fpr >= 0.9

    def test_target_one_uses_min(self):
        s = labeled([3.0, 7.0, 5.0], [4.0, 1.0])
        fpr, threshold = fpr_at_tpr(s, 1.0)
        assert threshold == 3.0
        assert fpr == 0.5  # only 4.0 >= 3.0

    def test_bad_target_rejected(self):
        s = labeled([1.0], [0.0])
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ParameterError):
                fpr_at_tpr(s, bad)

    def test_monotone_in_target(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            id_s, ood_s = random_instance(rng)
            s = labeled(id_s, ood_s)
            fprs = [fpr_at_tpr(s, t)[0] for t in (0.5, 0.8, 0.9, 0.95, 1.0)]
            assert all(a <= b + 1e-15 for a, b in zip(fprs, fprs[1:]))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            id_s, ood_s = random_instance(rng)
            target = float(rng.choice([0.5, 0.8, 0.9, 0.95, 1.0]))
            got_fpr, got_t = fpr_at_tpr(labeled(id_s, ood_s), target)
            want_fpr, want_t = brute_fpr_at_tpr(id_s, ood_s, target)
            assert got_t == want_t
            assert got_fpr == want_fpr


class TestNormalizeMinmax:
    def test_midpoint(self):
        ref = ScoreSet(np.array([0.0, 10.0]), ScoreOrientation.HIGHER_IS_ID)
        s = ScoreSet(np.array([5.0]), ScoreOrientation.HIGHER_IS_ID)
        assert normalize_minmax(s, ref).scores[0] == 0.5

    def test_clamping(self):
        ref = ScoreSet(np.array([0.0, 10.0]), ScoreOrientation.HIGHER_IS_ID)
        s = ScoreSet(np.array([-3.0, 12.0]), ScoreOrientation.HIGHER_IS_ID)
        out = normalize_minmax(s, ref)
        assert np.array_equal(out.scores, [0.0, 1.0])

    def test_constant_reference_rejected(self):
        ref = ScoreSet(np.array([2.0, 2.0]), ScoreOrientation.HIGHER_IS_ID)
        s = ScoreSet(np.array([1.0]), ScoreOrientation.HIGHER_IS_ID)
        with pytest.raises(DegenerateInputError):
            normalize_minmax(s, ref)

    def test_orientation_and_labels_preserved(self):
        ref = ScoreSet(np.array([0.0, 4.0]), ScoreOrientation.HIGHER_IS_OOD)
        s = ScoreSet(
            np.array([1.0, 3.0]),
            ScoreOrientation.HIGHER_IS_OOD,
            labels=(ID, OOD),
        )
        out = normalize_minmax(s, ref)
        assert out.orientation is ScoreOrientation.HIGHER_IS_OOD
        assert out.labels == s.labels

    def test_auroc_invariant_without_clamping(self):
        rng = np.random.default_rng(17)
        id_s = rng.normal(size=20)
        ood_s = rng.normal(size=15)
        s = labeled(id_s, ood_s)
        lo = min(s.scores) - 1.0
        hi = max(s.scores) + 1.0
        ref = ScoreSet(np.array([lo, hi]), ScoreOrientation.HIGHER_IS_ID)
        assert auroc(normalize_minmax(s, ref)) == auroc(s)


class TestEvaluateAndReport:
    def test_report_fields(self):
        s = labeled(np.arange(1.0, 21.0), [0.0, 5.0])
        report = evaluate(s, tpr_target=0.95)
        assert isinstance(report, EvalReport)
        assert report.n_id == 20
        assert report.n_ood == 2
        assert report.fpr95 == 0.5
        assert report.tpr95_threshold == 2.0
        assert 0.0 <= report.auroc <= 1.0
        assert 0.0 <= report.aupr <= 1.0

    def test_report_round_trips_json(self):
        s = labeled([2.0, 3.0], [0.0, 1.0])
        doc = evaluate(s).to_json()
        assert doc["auroc"] == 1.0
        assert doc["n_id"] == 2 and doc["n_ood"] == 2

    def test_curve_points_capped(self):
        rng = np.random.default_rng(33)
        s = labeled(rng.normal(size=4000), rng.normal(size=4000))
        pts = roc_points(s, max_points=100)
        assert len(pts) <= 100
        fprs = [p[1] for p in pts]
        tprs = [p[2] for p in pts]
        assert fprs == sorted(fprs)
        assert tprs == sorted(tprs)

    def test_curve_spans_endpoints(self):
        s = labeled([2.0, 3.0], [0.0, 1.0])
        pts = roc_points(s)
        assert pts[-1][1] == 1.0 and pts[-1][2] == 1.0


@settings(max_examples=200, deadline=None)
@given(
    id_s=st.lists(st.integers(-5, 5), min_size=1, max_size=12),
    ood_s=st.lists(st.integers(-5, 5), min_size=1, max_size=12),
)
def test_auroc_property_vs_brute(id_s, ood_s):
    got = auroc(labeled(id_s, ood_s))
    assert abs(got - brute_auroc(id_s, ood_s)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(
    id_s=st.lists(st.integers(-5, 5), min_size=2, max_size=12),
    ood_s=st.lists(st.integers(-5, 5), min_size=2, max_size=12),
)
def test_rank_metrics_invariant_under_monotone_transform(id_s, ood_s):
    # exp on a small integer lattice cannot create ties, so ranks are identical
    s = labeled(id_s, ood_s)
    transformed = labeled(
        np.exp(0.3 * np.asarray(id_s, float)), np.exp(0.3 * np.asarray(ood_s, float))
    )
    assert auroc(s) == auroc(transformed)
    assert fpr_at_tpr(s, 0.9)[0] == fpr_at_tpr(transformed, 0.9)[0]
