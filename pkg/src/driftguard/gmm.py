"""Gaussian mixture density scorer.

EM with full (default) or diagonal covariances, k-means++ seeded restarts, a
relative covariance ridge after every M-step, and AIC-driven selection of the
component count. Scores are mixture log-likelihoods, higher-is-ID.

All densities go through Cholesky factors: both the numerically stable route
(solve against the factor, accumulate the log-determinant from its diagonal)
and the only representation serialized to disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .core import FeatureMatrix, ScoreOrientation, ScoreSet
from .errors import (
    DegenerateFitError,
    NumericalError,
    ParameterError,
    SelectionError,
    ShapeError,
)

_LOG_2PI = math.log(2.0 * math.pi)

STRUCTURES = ("full", "diag")


@dataclass(frozen=True)
class EmConfig:
    """Knobs for one EM fit.

    ``tol`` is relative: the loop stops once the per-iteration log-likelihood
    improvement drops below ``tol * |previous|``. ``ridge`` scales the
    relative covariance ridge eps = ridge * trace(cov) / d applied after every
    M-step.
    """

    max_iter: int = 200
    tol: float = 1e-6
    n_restarts: int = 3
    ridge: float = 1e-6
    seed: int = 0
    structure: str = "full"

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ParameterError("tol must be positive")
        if self.n_restarts < 1:
            raise ParameterError("n_restarts must be >= 1")
        if self.structure not in STRUCTURES:
            raise ParameterError(
                f"structure must be one of {STRUCTURES}, got {self.structure!r}"
            )


@dataclass(frozen=True)
class GmmModel:
    """Fitted mixture with cached Cholesky factors of the covariances."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    cholesky: np.ndarray
    structure: str
    log_likelihood: float
    ll_path: tuple[float, ...]
    n_iter: int
    converged: bool

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class AicSelection:
    """Outcome of an AIC sweep over candidate component counts."""

    tested: tuple[tuple[int, float, float], ...]  # (K, AIC, log-likelihood)
    selected_k: int
    model: GmmModel
    failures: tuple[tuple[int, str], ...] = field(default_factory=tuple)


def log_gaussian(x, mu, sigma) -> float:
    """Multivariate normal log-density, evaluated through a Cholesky solve.

    Raises:
        ShapeError: dimensions disagree.
        NumericalError: ``sigma`` is not symmetric positive definite.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if x.ndim != 1 or mu.ndim != 1 or sigma.ndim != 2:
        raise ShapeError("log_gaussian expects a vector, a vector, and a matrix")
    d = x.shape[0]
    if mu.shape[0] != d or sigma.shape != (d, d):
        raise ShapeError(
            f"dimension mismatch: x has d={d}, mu {mu.shape}, sigma {sigma.shape}"
        )
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance is not SPD: {exc}") from exc
    y = solve_triangular(chol, x - mu, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (d * _LOG_2PI + log_det + y @ y))


def _component_log_density(X: np.ndarray, mean: np.ndarray, chol: np.ndarray):
    """Rows of X under N(mean, chol cholT), vectorized."""
    d = X.shape[1]
    y = solve_triangular(chol, (X - mean).T, lower=True)
    maha = np.einsum("ij,ij->j", y, y)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * _LOG_2PI + log_det + maha)


def _log_densities(X: np.ndarray, means, chols) -> np.ndarray:
    """n x K matrix of log N(x | mu_k, Sigma_k), weights not yet applied."""
    cols = [_component_log_density(X, m, c) for m, c in zip(means, chols)]
    return np.stack(cols, axis=1)


def _mixture_eval(log_dens: np.ndarray, weights: np.ndarray, exact: bool):
    """Mixture log-likelihood per row plus the responsibility matrix.

    Keeps weights in the linear domain: score = m + log(sum_k pi_k e^(l_k - m))
    with m the row max of the unweighted log-densities. With ``exact`` the
    inner sum goes through fsum, which is exactly rounded: the result is then
    independent of component order, and equal-weight duplicate components
    collapse to the single-component score with no rounding drift (the inner
    sum is exactly 1). The EM loop skips that and takes the vectorized sum.
    """
    m = log_dens.max(axis=1)
    scaled = weights * np.exp(log_dens - m[:, None])
    if exact:
        sums = np.fromiter(
            (math.fsum(row) for row in scaled), dtype=np.float64, count=len(scaled)
        )
    else:
        sums = scaled.sum(axis=1)
    return m + np.log(sums), scaled / sums[:, None]


def _kmeanspp_centers(X: np.ndarray, k: int, rng: np.random.Generator):
    centers = [X[rng.integers(X.shape[0])]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((X - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total == 0.0:
            centers.append(X[rng.integers(X.shape[0])])
            continue
        centers.append(X[rng.choice(X.shape[0], p=d2 / total)])
    return np.stack(centers)


def _m_step(X, resp, ridge: float, structure: str):
    n, d = X.shape
    nk = resp.sum(axis=0)
    if np.any(nk < 1e-10):
        raise DegenerateFitError("a component lost all responsibility mass")
    weights = nk / n
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((resp.shape[1], d, d))
    chols = np.empty_like(covs)
    for k in range(resp.shape[1]):
        diff = X - means[k]
        cov = (resp[:, k, None] * diff).T @ diff / nk[k]
        cov = (cov + cov.T) / 2.0
        if structure == "diag":
            cov = np.diag(np.diag(cov))
        cov += (ridge * np.trace(cov) / d) * np.eye(d)
        try:
            chols[k] = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DegenerateFitError(
                f"component {k} covariance singular despite ridge"
            ) from exc
        covs[k] = cov
    return weights, means, covs, chols


def _fit_once(X, k: int, config: EmConfig, rng: np.random.Generator):
    centers = _kmeanspp_centers(X, k, rng)
    assignment = np.argmin(
        [np.sum((X - c) ** 2, axis=1) for c in centers], axis=0
    )
    resp = np.zeros((X.shape[0], k))
    resp[np.arange(X.shape[0]), assignment] = 1.0

    weights, means, covs, chols = _m_step(X, resp, config.ridge, config.structure)
    ll_path: list[float] = []
    converged = False
    for _ in range(config.max_iter):
        log_dens = _log_densities(X, means, chols)
        row_ll, resp = _mixture_eval(log_dens, weights, exact=False)
        ll = float(row_ll.sum())
        ll_path.append(ll)
        if len(ll_path) >= 2:
            prev = ll_path[-2]
            if ll - prev < config.tol * max(abs(prev), 1e-12):
                converged = True
                break
        weights, means, covs, chols = _m_step(
            X, resp, config.ridge, config.structure
        )
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        cholesky=chols,
        structure=config.structure,
        log_likelihood=ll_path[-1],
        ll_path=tuple(ll_path),
        n_iter=len(ll_path),
        converged=converged,
    )


def fit_gmm(train: FeatureMatrix, k: int, config: EmConfig | None = None) -> GmmModel:
    """EM fit with ``config.n_restarts`` k-means++ restarts, best kept.

    Raises:
        ParameterError: K < 1 or fewer samples than components.
        DegenerateFitError: every restart collapsed.
    """
    config = config or EmConfig()
    if k < 1:
        raise ParameterError(f"K must be >= 1, got {k}")
    if train.n < k:
        raise ParameterError(f"need at least K={k} samples, got n={train.n}")
    best: GmmModel | None = None
    last_failure: DegenerateFitError | None = None
    for restart in range(config.n_restarts):
        rng = np.random.default_rng(config.seed + restart)
        try:
            model = _fit_once(train.data, k, config, rng)
        except DegenerateFitError as exc:
            last_failure = exc
            continue
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    if best is None:
        raise DegenerateFitError(
            f"all {config.n_restarts} restarts collapsed: {last_failure}"
        )
    return best


def aic(k: int, d: int, log_likelihood: float, structure: str = "full") -> float:
    """Akaike information criterion 2*k(K) - 2*lnL for a K-component fit.

    Full covariance: k(K) = K(d + d(d+1)/2) - 1. Diagonal: k(K) = 2Kd - 1.
    """
    if k < 1 or d < 1:
        raise ParameterError("K and d must be >= 1")
    if structure == "full":
        n_params = k * (d + d * (d + 1) // 2) - 1
    elif structure == "diag":
        n_params = k * 2 * d - 1
    else:
        raise ParameterError(f"structure must be one of {STRUCTURES}")
    return 2.0 * n_params - 2.0 * log_likelihood


def select_components(
    train: FeatureMatrix,
    k_grid,
    config: EmConfig | None = None,
) -> AicSelection:
    """Fit one GMM per K in the grid and keep the AIC argmin.

    Ties break toward the smaller K. Individual fit failures are recorded and
    skipped.

    Raises:
        SelectionError: empty grid, some K > n, or every K failed to fit.
    """
    config = config or EmConfig()
    k_grid = [int(k) for k in k_grid]
    if not k_grid:
        raise SelectionError("component grid is empty")
    if min(k_grid) < 1:
        raise SelectionError("component grid contains K < 1")
    if max(k_grid) > train.n:
        raise SelectionError(
            f"grid K={max(k_grid)} exceeds sample count n={train.n}"
        )
    tested: list[tuple[int, float, float]] = []
    failures: list[tuple[int, str]] = []
    models: dict[int, GmmModel] = {}
    for k in k_grid:
        try:
            model = fit_gmm(train, k, config)
        except DegenerateFitError as exc:
            failures.append((k, str(exc)))
            continue
        models[k] = model
        tested.append((k, aic(k, train.d, model.log_likelihood, config.structure), model.log_likelihood))
    if not tested:
        raise SelectionError(f"every K in {k_grid} failed to fit")
    selected_k = min(tested, key=lambda row: (row[1], row[0]))[0]
    return AicSelection(
        tested=tuple(tested),
        selected_k=selected_k,
        model=models[selected_k],
        failures=tuple(failures),
    )


def score_gmm(model: GmmModel, query: FeatureMatrix) -> ScoreSet:
    """Mixture log-likelihood of each query row, higher-is-ID.

    Raises:
        ShapeError: dimension mismatch.
    """
    if query.d != model.d:
        raise ShapeError(f"query dimension {query.d} != model dimension {model.d}")
    log_dens = _log_densities(query.data, model.means, model.cholesky)
    scores, _ = _mixture_eval(log_dens, model.weights, exact=True)
    return ScoreSet(scores, ScoreOrientation.HIGHER_IS_ID)
