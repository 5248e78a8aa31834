"""Real-NVP normalizing flow with a self-contained gradient engine.

Each flow step is Permutation -> BatchNorm -> Coupling. Couplings pass the
first ceil(d/2) coordinates through and affine-transform the rest with
scale/translation MLPs of the passed half; scales are squashed to
[-s_cap, s_cap]. Batch norm is an invertible affine layer: batch statistics
during training, running statistics at inference, contributing
-0.5 * sum(log(var + eps)) to the log-determinant.

Forward, inverse, log-density, and the full reverse-mode parameter gradients
are written out layer by layer; training is mini-batch adaptive-moment
descent on mean negative log-likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMatrix, ScoreOrientation, ScoreSet
from .errors import NumericalError, ParameterError, TrainError

_LOG_2PI = math.log(2.0 * math.pi)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

TOPOLOGY_GRID = ((64, 64), (128, 128), (256, 256))
STEP_GRID = (2, 4, 6)
BATCH_GRID = (16, 32)
EPOCH_GRID = (100, 200)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule knobs shared by every grid trial."""

    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    val_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 2 or self.epochs < 1:
            raise ParameterError("learning rate, batch size, epochs must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ParameterError("val_fraction must be in (0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ParameterError("moment parameters must be in [0, 1)")


class _Mlp:
    """Two-hidden-layer ReLU perceptron, parameters held as plain arrays."""

    def __init__(self, sizes: tuple[int, ...], rng: np.random.Generator):
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if i == last:
                # Zero final layer: the flow starts as the identity map.
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / math.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray):
        pre = []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            pre.append((a, z))
            a = np.maximum(z, 0.0)
        out = a @ self.weights[-1] + self.biases[-1]
        pre.append((a, out))
        return out, pre

    def backward(self, pre, dout: np.ndarray):
        """Returns (dx, [dW1, db1, dW2, db2, ...])."""
        grads: list[np.ndarray] = []
        d = dout
        for i in range(len(self.weights) - 1, -1, -1):
            a, z = pre[i]
            grads.append(d.sum(axis=0))  # db
            grads.append(a.T @ d)  # dW
            d = d @ self.weights[i].T
            if i > 0:
                d = d * (pre[i - 1][1] > 0.0)
        grads.reverse()  # appended (db, dW) backwards, so this is [dW1, db1, ...]
        return d, grads

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


class _BatchNorm:
    """Invertible normalization; no learnable parameters."""

    def __init__(self, d: int):
        self.running_mean = np.zeros(d)
        # 1 - eps so the inference transform is exactly the identity at init.
        self.running_var = np.full(d, 1.0 - BN_EPS)

    def forward_train(self, x: np.ndarray, update_stats: bool):
        mu = x.mean(axis=0)
        centered = x - mu
        var = np.mean(centered * centered, axis=0)
        if update_stats:
            self.running_mean += BN_MOMENTUM * (mu - self.running_mean)
            self.running_var += BN_MOMENTUM * (var - self.running_var)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        y = centered * inv
        ldj = -0.5 * float(np.sum(np.log(var + BN_EPS)))
        return y, ldj, (centered, var, inv)

    def backward(self, cache, dy: np.ndarray, ldj_weight: float):
        """Training-mode gradient, including the log-det path through var."""
        centered, var, inv = cache
        b = dy.shape[0]
        dvar = np.sum(dy * centered, axis=0) * (-0.5) * inv**3
        dvar += ldj_weight * (-0.5) / (var + BN_EPS)
        dmu = -np.sum(dy, axis=0) * inv - dvar * 2.0 * centered.mean(axis=0)
        dx = dy * inv + dvar * 2.0 * centered / b + dmu / b
        return dx

    def forward_eval(self, x: np.ndarray):
        inv = 1.0 / np.sqrt(self.running_var + BN_EPS)
        y = (x - self.running_mean) * inv
        ldj = -0.5 * float(np.sum(np.log(self.running_var + BN_EPS)))
        return y, ldj

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y * np.sqrt(self.running_var + BN_EPS) + self.running_mean


class _Coupling:
    """y1 = x1, y2 = x2 * exp(s(x1)) + t(x1) with s capped by a scaled tanh."""

    def __init__(self, d: int, hidden: tuple[int, ...], s_cap: float,
                 rng: np.random.Generator):
        self.k = (d + 1) // 2
        self.m = d - self.k
        self.s_cap = s_cap
        sizes = (self.k, *hidden, self.m)
        self.s_net = _Mlp(sizes, rng)
        self.t_net = _Mlp(sizes, rng)

    def _scale(self, x1: np.ndarray):
        s_raw, s_pre = self.s_net.forward(x1)
        th = np.tanh(s_raw / self.s_cap)
        return self.s_cap * th, th, s_pre

    def forward(self, x: np.ndarray):
        x1, x2 = x[:, : self.k], x[:, self.k :]
        s, th, s_pre = self._scale(x1)
        t, t_pre = self.t_net.forward(x1)
        es = np.exp(s)
        y = np.concatenate([x1, x2 * es + t], axis=1)
        ldj = s.sum(axis=1)
        return y, ldj, (x2, s, th, es, s_pre, t_pre)

    def backward(self, cache, dy: np.ndarray, ldj_w: np.ndarray):
        """ldj_w is the per-sample weight on this layer's log-det output."""
        x2, s, th, es, s_pre, t_pre = cache
        dy1, dy2 = dy[:, : self.k], dy[:, self.k :]
        ds = dy2 * x2 * es + ldj_w[:, None]
        ds_raw = ds * (1.0 - th * th)
        dt = dy2
        dx2 = dy2 * es
        dx1_s, s_grads = self.s_net.backward(s_pre, ds_raw)
        dx1_t, t_grads = self.t_net.backward(t_pre, dt)
        dx = np.concatenate([dy1 + dx1_s + dx1_t, dx2], axis=1)
        return dx, s_grads + t_grads

    def inverse(self, y: np.ndarray) -> np.ndarray:
        y1, y2 = y[:, : self.k], y[:, self.k :]
        s, _, _ = self._scale(y1)
        t, _ = self.t_net.forward(y1)
        return np.concatenate([y1, (y2 - t) * np.exp(-s)], axis=1)

    def parameters(self) -> list[np.ndarray]:
        return self.s_net.parameters() + self.t_net.parameters()


@dataclass(frozen=True)
class _Block:
    perm: np.ndarray
    bn: _BatchNorm
    coupling: _Coupling


@dataclass(frozen=True)
class TrialRecord:
    hidden: tuple[int, ...]
    n_steps: int
    batch_size: int
    epochs: int
    train_curve: tuple[float, ...]
    val_nll: float | None
    diverged: bool


@dataclass(frozen=True)
class TrainHistory:
    trials: tuple[TrialRecord, ...]
    selected: int


@dataclass(frozen=True)
class FlowModel:
    """Stacked flow blocks over a standard normal base."""

    blocks: tuple[_Block, ...]
    d: int
    hidden: tuple[int, ...]
    s_cap: float
    seed: int
    history: TrainHistory | None = field(default=None, compare=False)

    @property
    def n_steps(self) -> int:
        return len(self.blocks)


def init_flow(
    d: int,
    hidden: tuple[int, ...] = (64, 64),
    n_steps: int = 2,
    seed: int = 0,
    s_cap: float = 5.0,
) -> FlowModel:
    """Identity-initialized flow: permutations drawn from ``seed``.

    At d = 1 the transformed half is empty and couplings are identity maps;
    the flow is still a valid (trivial) density model.

    Raises:
        ParameterError: non-positive dimension, step count, or hidden size.
    """
    if d < 1:
        raise ParameterError(f"flow dimension must be >= 1, got {d}")
    if n_steps < 1 or any(h < 1 for h in hidden):
        raise ParameterError("n_steps and hidden sizes must be positive")
    rng = np.random.default_rng(seed)
    blocks = tuple(
        _Block(
            perm=rng.permutation(d),
            bn=_BatchNorm(d),
            coupling=_Coupling(d, tuple(hidden), s_cap, rng),
        )
        for _ in range(n_steps)
    )
    return FlowModel(blocks=blocks, d=d, hidden=tuple(hidden), s_cap=s_cap, seed=seed)


def _parameters(model: FlowModel) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for block in model.blocks:
        out.extend(block.coupling.parameters())
    return out


def parameter_count(model: FlowModel) -> int:
    """Learnable parameter count; running statistics and permutations are
    state, not parameters, and are excluded."""
    return sum(p.size for p in _parameters(model))


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ParameterError(f"expected a vector or matrix, got ndim={arr.ndim}")


def _check_dim(model: FlowModel, arr: np.ndarray) -> None:
    if arr.shape[1] != model.d:
        raise ParameterError(
            f"input dimension {arr.shape[1]} != flow dimension {model.d}"
        )


def _forward_eval(model: FlowModel, x: np.ndarray):
    ldj = np.zeros(x.shape[0])
    for block in model.blocks:
        x = x[:, block.perm]
        x, bn_ldj = block.bn.forward_eval(x)
        x, c_ldj, _ = block.coupling.forward(x)
        ldj += bn_ldj + c_ldj
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(ldj))):
        raise NumericalError("non-finite value in flow forward pass")
    return x, ldj


def forward(model: FlowModel, x):
    """Map data to latent: (z, log_det), inference-mode batch norm.

    Accepts a single vector or a matrix of rows; the return shapes follow.

    Raises:
        ParameterError: dimension mismatch.
        NumericalError: non-finite intermediate.
    """
    batch, single = _as_batch(x)
    _check_dim(model, batch)
    z, ldj = _forward_eval(model, batch)
    if single:
        return z[0], float(ldj[0])
    return z, ldj


def inverse(model: FlowModel, z):
    """Latent to data, exact inverse of ``forward``.

    Raises:
        ParameterError: dimension mismatch.
        NumericalError: non-finite intermediate.
    """
    batch, single = _as_batch(z)
    _check_dim(model, batch)
    x = batch
    for block in reversed(model.blocks):
        x = block.coupling.inverse(x)
        x = block.bn.inverse(x)
        undo = np.empty_like(x)
        undo[:, block.perm] = x
        x = undo
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite value in flow inverse pass")
    return x[0] if single else x


def _log_prob_rows(model: FlowModel, x: np.ndarray) -> np.ndarray:
    z, ldj = _forward_eval(model, x)
    return -0.5 * np.sum(z * z, axis=1) - 0.5 * model.d * _LOG_2PI + ldj


def log_prob(model: FlowModel, x):
    """log N(forward(x).z | 0, I) + forward(x).log_det."""
    batch, single = _as_batch(x)
    _check_dim(model, batch)
    out = _log_prob_rows(model, batch)
    return float(out[0]) if single else out


def score_flow(model: FlowModel, query: FeatureMatrix) -> ScoreSet:
    """Exact log-density of each query row, higher-is-ID.

    Raises:
        ParameterError: dimension mismatch.
    """
    _check_dim(model, query.data)
    return ScoreSet(_log_prob_rows(model, query.data), ScoreOrientation.HIGHER_IS_ID)


def _forward_train(model: FlowModel, x: np.ndarray, update_stats: bool):
    caches = []
    ldj = np.zeros(x.shape[0])
    for block in model.blocks:
        x = x[:, block.perm]
        x, bn_ldj, bn_cache = block.bn.forward_train(x, update_stats)
        x, c_ldj, c_cache = block.coupling.forward(x)
        ldj += bn_ldj + c_ldj
        caches.append((bn_cache, c_cache))
    return x, ldj, caches


def _loss_and_grads(model: FlowModel, x: np.ndarray, update_stats: bool):
    """Mean NLL over the batch and gradients for every learnable parameter."""
    b = x.shape[0]
    z, ldj, caches = _forward_train(model, x, update_stats)
    loss = float(np.mean(0.5 * np.sum(z * z, axis=1) - ldj)) + 0.5 * model.d * _LOG_2PI
    dz = z / b
    ldj_w = -1.0 / b  # d(loss)/d(ldj_b), identical for every sample
    grads_rev: list[np.ndarray] = []
    d = dz
    for block, (bn_cache, c_cache) in zip(reversed(model.blocks), reversed(caches)):
        d, c_grads = block.coupling.backward(c_cache, d, np.full(b, ldj_w))
        grads_rev.extend(reversed(c_grads))
        # The batch-norm log-det is one scalar shared by every sample's row,
        # so its total loss weight is b * ldj_w.
        d = block.bn.backward(bn_cache, d, b * ldj_w)
        undo = np.empty_like(d)
        undo[:, block.perm] = d
        d = undo
    grads_rev.reverse()
    return loss, grads_rev


class _Adam:
    def __init__(self, params: list[np.ndarray], config: TrainConfig):
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.config = config

    def step(self, grads: list[np.ndarray]) -> None:
        c = self.config
        self.t += 1
        bias1 = 1.0 - c.beta1**self.t
        bias2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m += (1.0 - c.beta1) * (g - m)
            v += (1.0 - c.beta2) * (g * g - v)
            p -= c.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + c.adam_eps)


def _train_trial(
    train: np.ndarray,
    val: np.ndarray,
    hidden: tuple[int, ...],
    n_steps: int,
    batch_size: int,
    epochs: int,
    config: TrainConfig,
    trial_idx: int,
) -> tuple[FlowModel | None, TrialRecord]:
    rng = np.random.default_rng([config.seed, trial_idx])
    model = init_flow(
        train.shape[1], hidden, n_steps, seed=int(rng.integers(2**31))
    )
    opt = _Adam(_parameters(model), config)
    curve: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(train.shape[0])
        losses = []
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            if len(chunk) < 2:
                continue  # batch statistics need at least two rows
            try:
                loss, grads = _loss_and_grads(model, train[chunk], update_stats=True)
            except NumericalError:
                loss = math.nan
            if not math.isfinite(loss):
                record = TrialRecord(hidden, n_steps, batch_size, epochs,
                                     tuple(curve), None, True)
                return None, record
            opt.step(grads)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    try:
        val_nll = float(np.mean(-_log_prob_rows(model, val)))
    except NumericalError:
        val_nll = math.nan
    if not math.isfinite(val_nll):
        record = TrialRecord(hidden, n_steps, batch_size, epochs,
                             tuple(curve), None, True)
        return None, record
    record = TrialRecord(hidden, n_steps, batch_size, epochs,
                         tuple(curve), val_nll, False)
    return model, record


def fit_flow(
    train: FeatureMatrix,
    config: TrainConfig | None = None,
    grid: str = "minimal",
) -> FlowModel:
    """Grid-search flow training; returns the lowest-validation-NLL model.

    The minimal grid is the single smallest point ([64, 64] hidden, 2 steps,
    the config's batch size and epochs). The full grid crosses topologies
    {[64,64],[128,128],[256,256]} x steps {2,4,6} x batch {16,32} x epochs
    {100,200}: 36 trials. The 80-20 split is drawn once from the config seed
    and shared by every trial.

    Raises:
        ParameterError: n < 10, or unknown grid name.
        TrainError: every trial diverged.
    """
    config = config or TrainConfig()
    if train.n < 10:
        raise ParameterError(f"insufficient samples: need n >= 10, got {train.n}")
    if grid == "minimal":
        cells = [((64, 64), 2, config.batch_size, config.epochs)]
    elif grid == "full":
        cells = [
            (hidden, steps, batch, epochs)
            for hidden in TOPOLOGY_GRID
            for steps in STEP_GRID
            for batch in BATCH_GRID
            for epochs in EPOCH_GRID
        ]
    else:
        raise ParameterError(f"grid must be 'minimal' or 'full', got {grid!r}")

    split_rng = np.random.default_rng([config.seed, 0x5917])
    order = split_rng.permutation(train.n)
    n_val = max(1, int(round(train.n * config.val_fraction)))
    val = train.data[order[:n_val]]
    fit = train.data[order[n_val:]]

    best: FlowModel | None = None
    best_nll = math.inf
    records: list[TrialRecord] = []
    selected = -1
    for idx, (hidden, steps, batch, epochs) in enumerate(cells):
        model, record = _train_trial(fit, val, hidden, steps, batch, epochs,
                                     config, idx)
        records.append(record)
        if model is not None and record.val_nll < best_nll:
            best, best_nll, selected = model, record.val_nll, idx
    if best is None:
        raise TrainError(f"all {len(cells)} trials diverged")
    return FlowModel(
        blocks=best.blocks,
        d=best.d,
        hidden=best.hidden,
        s_cap=best.s_cap,
        seed=best.seed,
        history=TrainHistory(trials=tuple(records), selected=selected),
    )


def gradient_check(model: FlowModel, batch: FeatureMatrix) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Runs in training mode with frozen running statistics so both routes see
    the same function. Only learnable parameters are perturbed; batch-norm
    state and permutations carry no gradient entries.
    """
    _check_dim(model, batch.data)
    x = batch.data
    _, grads = _loss_and_grads(model, x, update_stats=False)
    params = _parameters(model)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            theta = flat[i]
            h = 1e-5 * max(1.0, abs(theta))
            flat[i] = theta + h
            up, _ = _loss_and_grads(model, x, update_stats=False)
            flat[i] = theta - h
            down, _ = _loss_and_grads(model, x, update_stats=False)
            flat[i] = theta
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(numeric))
            if denom < 1e-6:
                err = abs(gflat[i] - numeric)
            else:
                err = abs(gflat[i] - numeric) / denom
            worst = max(worst, err)
    return worst
