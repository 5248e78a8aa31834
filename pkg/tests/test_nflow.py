"""Flow tests: exactness at identity init, invertibility, log-det against a
finite-difference Jacobian, gradient engine against central differences, and
the training loop's selection and failure behavior."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from driftguard import nflow
from driftguard.core import FeatureMatrix, ScoreOrientation
from driftguard.errors import NumericalError, ParameterError, TrainError
from driftguard.nflow import (
    STEP_GRID,
    TOPOLOGY_GRID,
    TrainConfig,
    TrialRecord,
    fit_flow,
    forward,
    gradient_check,
    init_flow,
    inverse,
    log_prob,
    parameter_count,
    score_flow,
)

LOG_2PI_E = math.log(2.0 * math.pi * math.e)


def randomize(model, rng, scale=0.5, stats=True):
    """Perturb parameters (and optionally running stats) away from identity."""
    for block in model.blocks:
        for net in (block.coupling.s_net, block.coupling.t_net):
            for arr in (*net.weights, *net.biases):
                arr += rng.normal(0.0, scale, size=arr.shape)
        if stats:
            block.bn.running_mean += rng.normal(0.0, 0.3, size=model.d)
            block.bn.running_var[:] = rng.uniform(0.7, 1.4, size=model.d)
    return model


def composite_perm(model):
    comp = np.arange(model.d)
    for block in model.blocks:
        comp = comp[block.perm]
    return comp


def fd_log_det(model, x, h=1e-5):
    """log|det J| of the forward map from a central-difference Jacobian."""
    d = x.size
    jac = np.empty((d, d))
    for j in range(d):
        up = x.copy()
        up[j] += h
        down = x.copy()
        down[j] -= h
        zu, _ = forward(model, up)
        zd, _ = forward(model, down)
        jac[:, j] = (zu - zd) / (2.0 * h)
    sign, logdet = np.linalg.slogdet(jac)
    assert sign > 0
    return logdet


def moons(rng, n, noise=0.08):
    t = rng.uniform(0.0, math.pi, size=n)
    half = n // 2
    x = np.empty((n, 2))
    x[:half, 0] = np.cos(t[:half])
    x[:half, 1] = np.sin(t[:half])
    x[half:, 0] = 1.0 - np.cos(t[half:])
    x[half:, 1] = 0.5 - np.sin(t[half:])
    return x + rng.normal(0.0, noise, size=(n, 2))


def gaussian_mle_nll(x):
    """Mean NLL of the maximum-likelihood single Gaussian on its own data."""
    d = x.shape[1]
    cov = np.cov(x, rowvar=False, bias=True)
    _, logdet = np.linalg.slogdet(cov)
    # Mean Mahalanobis distance under the MLE covariance is exactly d.
    return 0.5 * (d * math.log(2.0 * math.pi) + logdet + d)


@pytest.fixture(scope="module")
def normal_fit():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((2000, 2))
    model = fit_flow(FeatureMatrix(data), TrainConfig(seed=1), grid="minimal")
    return data, model


@pytest.fixture(scope="module")
def moons_fit():
    rng = np.random.default_rng(11)
    data = moons(rng, 2000)
    model = fit_flow(FeatureMatrix(data), TrainConfig(seed=3), grid="minimal")
    return data, model


class TestIdentityInit:
    def test_forward_permutes_exactly_with_zero_logdet(self):
        model = init_flow(7, hidden=(8, 8), n_steps=3, seed=5)
        x = np.random.default_rng(0).standard_normal((5, 7))
        z, ld = forward(model, x)
        assert np.array_equal(z, x[:, composite_perm(model)])
        assert np.all(ld == 0.0)

    def test_log_prob_origin_d1(self):
        model = init_flow(1, hidden=(8, 8), n_steps=2, seed=0)
        assert log_prob(model, np.zeros(1)) == pytest.approx(-0.91893853, abs=1e-8)

    def test_log_prob_origin_d2(self):
        model = init_flow(2, hidden=(8, 8), n_steps=2, seed=0)
        assert log_prob(model, np.zeros(2)) == pytest.approx(-1.83787707, abs=1e-8)

    def test_log_prob_is_standard_normal(self):
        model = init_flow(5, hidden=(8, 8), n_steps=4, seed=2)
        x = np.random.default_rng(3).standard_normal((40, 5))
        want = multivariate_normal(np.zeros(5), np.eye(5)).logpdf(x)
        np.testing.assert_allclose(log_prob(model, x), want, rtol=1e-12)

    def test_inverse_roundtrip_exact(self):
        model = init_flow(6, hidden=(8, 8), n_steps=2, seed=1)
        x = np.random.default_rng(4).standard_normal((10, 6))
        z, _ = forward(model, x)
        assert np.array_equal(inverse(model, z), x)

    def test_zero_vector_roundtrip(self):
        model = init_flow(4, hidden=(8, 8), n_steps=2, seed=1)
        z, ld = forward(model, np.zeros(4))
        assert np.array_equal(z, np.zeros(4))
        assert ld == 0.0
        assert np.array_equal(inverse(model, z), np.zeros(4))


class TestConstantScale:
    def test_logdet_is_k_times_c(self):
        # d=5 passes 3 coordinates through and transforms 2, so a constant
        # scale c on the transformed half gives log_det = 2c.
        model = init_flow(5, hidden=(8, 8), n_steps=1, seed=0)
        c = 0.7
        cap = model.s_cap
        model.blocks[0].coupling.s_net.biases[-1][:] = cap * math.atanh(c / cap)
        x = np.random.default_rng(1).standard_normal((6, 5))
        _, ld = forward(model, x)
        np.testing.assert_allclose(ld, 2.0 * c, rtol=1e-12)


class TestForwardInverse:
    def test_roundtrip_randomized_d8(self):
        # Keep scales off the tanh cap: each saturated step multiplies the
        # round-trip float error by e^5.
        rng = np.random.default_rng(8)
        model = randomize(init_flow(8, hidden=(16, 16), n_steps=4, seed=8), rng,
                          scale=0.15)
        x = rng.standard_normal((100, 8)) * 1.5
        rec = inverse(model, forward(model, x)[0])
        assert np.max(np.abs(rec - x)) < 1e-6

    @pytest.mark.parametrize("hidden", TOPOLOGY_GRID)
    @pytest.mark.parametrize("n_steps", (STEP_GRID[0], STEP_GRID[-1]))
    def test_roundtrip_grid_topologies_d64(self, hidden, n_steps):
        rng = np.random.default_rng(hash((hidden, n_steps)) % 2**32)
        model = randomize(
            init_flow(64, hidden=hidden, n_steps=n_steps, seed=9), rng,
            scale=0.3 / math.sqrt(hidden[0]),
        )
        x = rng.standard_normal((1000, 64))
        rec = inverse(model, forward(model, x)[0])
        assert np.max(np.abs(rec - x)) < 1e-6

    def test_single_vector_shapes(self):
        model = init_flow(3, hidden=(8, 8), n_steps=2, seed=0)
        z, ld = forward(model, np.ones(3))
        assert z.shape == (3,) and isinstance(ld, float)
        assert inverse(model, z).shape == (3,)

    def test_dimension_mismatch_rejected(self):
        model = init_flow(4, hidden=(8, 8), n_steps=2, seed=0)
        with pytest.raises(ParameterError):
            forward(model, np.ones(5))
        with pytest.raises(ParameterError):
            inverse(model, np.ones((2, 3)))
        with pytest.raises(ParameterError):
            forward(model, np.ones((2, 2, 2)))

    def test_nonfinite_intermediate_raises(self):
        model = init_flow(4, hidden=(8, 8), n_steps=2, seed=0)
        model.blocks[0].coupling.t_net.weights[0][:] = 1e308
        model.blocks[0].coupling.t_net.weights[1][:] = 1e308
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalError):
                forward(model, np.ones((3, 4)) * 10.0)

    def test_init_flow_validation(self):
        with pytest.raises(ParameterError):
            init_flow(0)
        with pytest.raises(ParameterError):
            init_flow(4, n_steps=0)
        with pytest.raises(ParameterError):
            init_flow(4, hidden=(8, 0))


class TestLogDet:
    def test_matches_numeric_jacobian(self):
        rng = np.random.default_rng(12)
        model = randomize(init_flow(4, hidden=(8, 8), n_steps=2, seed=12), rng,
                          scale=0.3)
        for _ in range(3):
            x = rng.standard_normal(4)
            _, ld = forward(model, x)
            want = fd_log_det(model, x)
            assert abs(ld - want) / max(abs(want), 1e-6) < 1e-4


class TestScoreFlow:
    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(13)
        model = randomize(init_flow(5, hidden=(8, 8), n_steps=2, seed=13), rng)
        query = FeatureMatrix(rng.standard_normal((20, 5)))
        a = score_flow(model, query)
        b = score_flow(model, query)
        assert np.array_equal(a.scores, b.scores)
        assert a.orientation is ScoreOrientation.HIGHER_IS_ID

    def test_mode_scores_above_far_point(self):
        model = init_flow(3, hidden=(8, 8), n_steps=2, seed=0)
        scores = score_flow(
            model, FeatureMatrix([[0.0, 0.0, 0.0], [6.0, 0.0, 0.0]])
        ).scores
        assert scores[0] > scores[1]

    def test_density_normalizes_d2(self):
        rng = np.random.default_rng(14)
        model = randomize(init_flow(2, hidden=(8, 8), n_steps=2, seed=14), rng,
                          scale=0.1)
        box = rng.uniform(-6.0, 6.0, size=(1_000_000, 2))
        mass = float(np.mean(np.exp(log_prob(model, box)))) * 144.0
        assert mass == pytest.approx(1.0, abs=0.02)

    def test_dimension_mismatch_rejected(self):
        model = init_flow(4, hidden=(8, 8), n_steps=2, seed=0)
        with pytest.raises(ParameterError):
            score_flow(model, FeatureMatrix(np.ones((2, 3))))


class TestGradientCheck:
    def test_identity_model(self):
        model = init_flow(4, hidden=(8, 8), n_steps=2, seed=21)
        batch = FeatureMatrix(np.random.default_rng(21).standard_normal((8, 4)))
        assert gradient_check(model, batch) < 1e-4

    def test_randomized_model(self):
        rng = np.random.default_rng(22)
        model = randomize(init_flow(4, hidden=(8, 8), n_steps=2, seed=22), rng,
                          scale=0.4, stats=False)
        batch = FeatureMatrix(rng.standard_normal((8, 4)))
        assert gradient_check(model, batch) < 1e-4

    def test_parameter_count_excludes_state(self):
        # Per net: 2*8 + 8 + 8*8 + 8 + 8*2 + 2 = 114; two nets per coupling,
        # two blocks. Batch-norm statistics and permutations are state, not
        # parameters, and contribute no gradient entries.
        model = init_flow(4, hidden=(8, 8), n_steps=2, seed=0)
        assert parameter_count(model) == 456

    def test_empty_transform_half_skipped_exactly(self):
        # At d=1 the coupling output is empty: no parameter influences the
        # loss, both gradient routes are identically zero.
        model = init_flow(1, hidden=(4, 4), n_steps=2, seed=0)
        batch = FeatureMatrix(np.random.default_rng(1).standard_normal((8, 1)))
        assert gradient_check(model, batch) == 0.0

    def test_dimension_mismatch_rejected(self):
        model = init_flow(4, hidden=(8, 8), n_steps=2, seed=0)
        with pytest.raises(ParameterError):
            gradient_check(model, FeatureMatrix(np.ones((4, 3))))


class TestFitFlow:
    def test_insufficient_samples(self):
        data = FeatureMatrix(np.random.default_rng(0).standard_normal((9, 2)))
        with pytest.raises(ParameterError):
            fit_flow(data)

    def test_unknown_grid(self):
        data = FeatureMatrix(np.random.default_rng(0).standard_normal((50, 2)))
        with pytest.raises(ParameterError):
            fit_flow(data, grid="huge")

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ParameterError):
            TrainConfig(batch_size=1)
        with pytest.raises(ParameterError):
            TrainConfig(val_fraction=1.0)
        with pytest.raises(ParameterError):
            TrainConfig(beta1=1.0)

    def test_standard_normal_reaches_analytic_nll(self, normal_fit):
        _, model = normal_fit
        hist = model.history
        assert len(hist.trials) == 1 and hist.selected == 0
        record = hist.trials[0]
        assert record.hidden == (64, 64) and record.n_steps == 2
        assert len(record.train_curve) == 100
        assert record.val_nll == pytest.approx(LOG_2PI_E, abs=0.1)

    def test_train_vs_inference_scoring_agrees(self, normal_fit):
        data, model = normal_fit
        train_mode = nflow._loss_and_grads(model, data, update_stats=False)[0]
        infer_mode = float(np.mean(-log_prob(model, data)))
        assert abs(train_mode - infer_mode) <= 0.05

    def test_loss_decreases_over_first_ten_epochs(self, moons_fit):
        _, model = moons_fit
        curve = model.history.trials[model.history.selected].train_curve
        assert curve[9] < curve[0]

    def test_moons_beat_single_gaussian(self, moons_fit):
        data, model = moons_fit
        val_nll = model.history.trials[model.history.selected].val_nll
        assert val_nll < gaussian_mle_nll(data)

    def test_fit_deterministic(self):
        rng = np.random.default_rng(31)
        data = FeatureMatrix(rng.standard_normal((80, 2)))
        query = FeatureMatrix(rng.standard_normal((15, 2)))
        config = TrainConfig(seed=5, epochs=3)
        a = score_flow(fit_flow(data, config), query)
        b = score_flow(fit_flow(data, config), query)
        assert np.array_equal(a.scores, b.scores)

    def test_divergent_trial_skipped(self, monkeypatch):
        def fake_trial(train, val, hidden, steps, batch, epochs, config, idx):
            if idx == 0:
                return None, TrialRecord(hidden, steps, batch, epochs, (),
                                         None, True)
            model = init_flow(train.shape[1], (4, 4), 1, seed=idx)
            return model, TrialRecord(hidden, steps, batch, epochs, (),
                                      float(idx), False)

        monkeypatch.setattr(nflow, "_train_trial", fake_trial)
        data = FeatureMatrix(np.random.default_rng(0).standard_normal((40, 2)))
        model = fit_flow(data, TrainConfig(seed=0), grid="full")
        assert model.history.trials[0].diverged
        assert model.history.selected == 1
        assert len(model.history.trials) == 36

    def test_all_divergent_raises(self, monkeypatch):
        def fake_trial(train, val, hidden, steps, batch, epochs, config, idx):
            return None, TrialRecord(hidden, steps, batch, epochs, (), None, True)

        monkeypatch.setattr(nflow, "_train_trial", fake_trial)
        data = FeatureMatrix(np.random.default_rng(0).standard_normal((40, 2)))
        with pytest.raises(TrainError):
            fit_flow(data, TrainConfig(seed=0))
