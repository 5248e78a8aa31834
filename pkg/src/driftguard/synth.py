"""Synthetic feature-shift scenarios and brute-force test oracles.

The random source is pinned down to the bit level so other implementations
can reproduce streams: a SplitMix64 state sequence supplies 64-bit words,
uniforms take the top 53 bits mapped into (0, 1], and normals come from the
Box-Muller transform in pairs. Sampling consumes the stream row-major, one
component-selection uniform per row when the spec has several components,
then ceil(d/2) Box-Muller pairs with the last value dropped for odd d.

Scenarios describe an in-distribution Gaussian (or mixture) plus a shift:
mean translation, scale inflation, rotation, or a novel mode. The OOD set
for a novel-mode shift is drawn from the novel component itself; the weight
field records the nominal prevalence of the novel class but never dilutes
the OOD sample, which would otherwise cap every detector's measurable AUROC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FeatureMatrix, SampleLabel
from .errors import FormatError, ParameterError
from .gmm import GmmModel
from .nflow import FlowModel, forward

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_M64 = (1 << 64) - 1

PRESET_NAMES = ("covariate-mild", "covariate-strong", "semantic", "joint")


class PortableRng:
    """SplitMix64 generator with Box-Muller normal variates.

    Word update: state += 0x9E3779B97F4A7C15 (mod 2^64); the output mixes
    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
    z *= 0x94D049BB133111EB; z ^= z >> 31.
    Uniforms are ((word >> 11) + 1) * 2^-53, in (0, 1]. A normal pair is
    (r cos a, r sin a) with r = sqrt(-2 ln u1), a = 2 pi u2.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _M64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _M64
        z = ((z ^ (z >> 27)) * _MIX2) & _M64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return ((self.next_u64() >> 11) + 1) * 2.0**-53

    def normal_pair(self) -> tuple[float, float]:
        r = math.sqrt(-2.0 * math.log(self.uniform()))
        a = 2.0 * math.pi * self.uniform()
        return r * math.cos(a), r * math.sin(a)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(2 * ((n + 1) // 2))
        for i in range(0, out.size, 2):
            out[i], out[i + 1] = self.normal_pair()
        return out[:n]


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GaussianSpec:
    """Mean vector and SPD covariance of one Gaussian component."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ParameterError(
                f"mean must be d-vector and cov d x d, got {mean.shape} "
                f"and {cov.shape}"
            )
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise ParameterError("spec contains non-finite values")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ParameterError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ParameterError("covariance must be positive definite") from exc
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "cov", _readonly(cov))
        object.__setattr__(self, "_chol", _readonly(chol))

    @property
    def d(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class MixtureSpec:
    """Convex combination of Gaussian components over a shared dimension."""

    weights: tuple[float, ...]
    components: tuple[GaussianSpec, ...]

    def __post_init__(self) -> None:
        weights = tuple(float(w) for w in self.weights)
        components = tuple(self.components)
        if len(weights) != len(components) or not components:
            raise ParameterError("need one weight per component")
        if any(w <= 0.0 for w in weights):
            raise ParameterError("mixture weights must be positive")
        if abs(math.fsum(weights) - 1.0) > 1e-9:
            raise ParameterError("mixture weights must sum to 1")
        if len({c.d for c in components}) != 1:
            raise ParameterError("components disagree on dimension")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)

    @property
    def d(self) -> int:
        return self.components[0].d


@dataclass(frozen=True)
class MeanShift:
    """Translate every component mean by delta along each coordinate."""

    delta: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.delta):
            raise ParameterError(f"delta must be finite, got {self.delta}")


@dataclass(frozen=True)
class ScaleShift:
    """Multiply every component's standard deviations by a factor."""

    factor: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.factor) and self.factor > 0.0):
            raise ParameterError(f"factor must be positive, got {self.factor}")


@dataclass(frozen=True)
class ExtraMode:
    """A novel mode: the OOD draw comes from this component alone.

    ``weight`` records the nominal prevalence of the novel class in the
    shifted deployment mixture; it is provenance, not a sampling knob.
    ``cov`` defaults to the identity.
    """

    weight: float
    mean: np.ndarray
    cov: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.weight) and 0.0 < self.weight <= 1.0):
            raise ParameterError(f"weight must be in (0, 1], got {self.weight}")
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or not np.isfinite(mean).all():
            raise ParameterError("novel mean must be a finite vector")
        object.__setattr__(self, "mean", _readonly(mean))
        if self.cov is not None:
            object.__setattr__(self, "cov", _readonly(self.cov))


@dataclass(frozen=True)
class Rotation:
    """Givens rotations (i, j, theta) applied to the distribution in order."""

    planes: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        planes = tuple(
            (int(i), int(j), float(t)) for i, j, t in self.planes
        )
        for i, j, theta in planes:
            if i < 0 or j < 0 or i == j or not math.isfinite(theta):
                raise ParameterError(f"bad rotation plane {(i, j, theta)}")
        object.__setattr__(self, "planes", planes)

    def matrix(self, d: int) -> np.ndarray:
        r = np.eye(d)
        for i, j, theta in self.planes:
            if i >= d or j >= d:
                raise ParameterError(f"rotation plane ({i}, {j}) outside d={d}")
            g = np.eye(d)
            c, s = math.cos(theta), math.sin(theta)
            g[i, i] = c
            g[j, j] = c
            g[i, j] = -s
            g[j, i] = s
            r = g @ r
        return r


_SHIFT_KINDS = (MeanShift, ScaleShift, ExtraMode, Rotation)


@dataclass(frozen=True)
class ShiftScenario:
    """Deterministic recipe for monitor/ID/OOD feature sets."""

    d: int
    id_spec: GaussianSpec | MixtureSpec
    ood_spec: tuple
    n_monitor: int
    n_id: int
    n_ood: int
    seed: int

    def __post_init__(self) -> None:
        if isinstance(self.ood_spec, _SHIFT_KINDS):
            object.__setattr__(self, "ood_spec", (self.ood_spec,))
        else:
            object.__setattr__(self, "ood_spec", tuple(self.ood_spec))
        if not all(isinstance(s, _SHIFT_KINDS) for s in self.ood_spec):
            raise ParameterError("ood_spec must contain shift descriptors")
        if min(self.n_monitor, self.n_id, self.n_ood) < 1:
            raise ParameterError("sample counts must be >= 1")
        if not isinstance(self.id_spec, (GaussianSpec, MixtureSpec)):
            raise ParameterError("id_spec must be a Gaussian or mixture spec")
        if self.id_spec.d != self.d:
            raise ParameterError(
                f"id_spec dimension {self.id_spec.d} != scenario d {self.d}"
            )
        for shift in self.ood_spec:
            if isinstance(shift, ExtraMode) and shift.mean.size != self.d:
                raise ParameterError("novel mean dimension mismatch")


def _as_mixture(spec) -> MixtureSpec:
    if isinstance(spec, GaussianSpec):
        return MixtureSpec((1.0,), (spec,))
    return spec


def _apply_shifts(mix: MixtureSpec, shifts, d: int) -> MixtureSpec:
    for shift in shifts:
        if isinstance(shift, MeanShift):
            mix = MixtureSpec(
                mix.weights,
                tuple(
                    GaussianSpec(c.mean + shift.delta, c.cov)
                    for c in mix.components
                ),
            )
        elif isinstance(shift, ScaleShift):
            f2 = shift.factor**2
            mix = MixtureSpec(
                mix.weights,
                tuple(GaussianSpec(c.mean, c.cov * f2) for c in mix.components),
            )
        elif isinstance(shift, Rotation):
            r = shift.matrix(d)
            mix = MixtureSpec(
                mix.weights,
                tuple(
                    GaussianSpec(r @ c.mean, r @ c.cov @ r.T)
                    for c in mix.components
                ),
            )
        else:  # ExtraMode: the draw comes from the novel component alone
            cov = shift.cov if shift.cov is not None else np.eye(d)
            mix = MixtureSpec((1.0,), (GaussianSpec(shift.mean, cov),))
    return mix


def _sample(mix: MixtureSpec, n: int, rng: PortableRng) -> np.ndarray:
    d = mix.d
    cum = np.cumsum(mix.weights)
    out = np.empty((n, d))
    for row in range(n):
        k = 0
        if len(mix.components) > 1:
            k = int(np.searchsorted(cum, rng.uniform()))
            k = min(k, len(mix.components) - 1)
        comp = mix.components[k]
        z = rng.normals(d)
        out[row] = comp.mean + getattr(comp, "_chol") @ z
    return out


def generate(
    scenario: ShiftScenario,
) -> tuple[FeatureMatrix, FeatureMatrix, FeatureMatrix, tuple[SampleLabel, ...]]:
    """Draw (monitor, id, ood) sets plus eval labels for id+ood, in that
    stream order, deterministically from the scenario seed."""
    rng = PortableRng(scenario.seed)
    id_mix = _as_mixture(scenario.id_spec)
    ood_mix = _apply_shifts(id_mix, scenario.ood_spec, scenario.d)
    monitor = FeatureMatrix(_sample(id_mix, scenario.n_monitor, rng))
    id_set = FeatureMatrix(_sample(id_mix, scenario.n_id, rng))
    ood_set = FeatureMatrix(_sample(ood_mix, scenario.n_ood, rng))
    labels = (SampleLabel.ID,) * scenario.n_id + (
        SampleLabel.OOD,
    ) * scenario.n_ood
    return monitor, id_set, ood_set, labels


def preset_scenario(name: str) -> ShiftScenario:
    """The four named scenarios used throughout the documentation and the
    acceptance runs: features mimic embedding geometry (a tight cone far
    from the origin) so that angular scorers have signal.

    Raises:
        ParameterError: unknown preset name.
    """
    d = 16
    mean = np.zeros(d)
    mean[0] = 10.0
    id_spec = GaussianSpec(mean, np.eye(d))
    novel_dir = np.ones(d) / math.sqrt(d - 1)
    novel_dir[0] = 0.0
    novel = ExtraMode(weight=0.5, mean=mean + 5.0 * novel_dir)
    shifts = {
        "covariate-mild": (MeanShift(1.0),),
        "covariate-strong": (MeanShift(3.0),),
        "semantic": (novel,),
        "joint": (novel, ScaleShift(1.5)),
    }
    if name not in shifts:
        raise ParameterError(
            f"preset must be one of {PRESET_NAMES}, got {name!r}"
        )
    return ShiftScenario(
        d=d,
        id_spec=id_spec,
        ood_spec=shifts[name],
        n_monitor=2000,
        n_id=500,
        n_ood=500,
        seed=42,
    )


def _spec_to_json(spec) -> dict:
    if isinstance(spec, GaussianSpec):
        return {
            "kind": "gaussian",
            "mean": spec.mean.tolist(),
            "cov": spec.cov.tolist(),
        }
    return {
        "kind": "mixture",
        "weights": list(spec.weights),
        "components": [_spec_to_json(c) for c in spec.components],
    }


def _shift_to_json(shift) -> dict:
    if isinstance(shift, MeanShift):
        return {"kind": "mean-shift", "delta": shift.delta}
    if isinstance(shift, ScaleShift):
        return {"kind": "scale-shift", "factor": shift.factor}
    if isinstance(shift, ExtraMode):
        doc = {"kind": "extra-mode", "weight": shift.weight,
               "mean": shift.mean.tolist()}
        if shift.cov is not None:
            doc["cov"] = shift.cov.tolist()
        return doc
    return {"kind": "rotation", "planes": [list(p) for p in shift.planes]}


def scenario_to_json(scenario: ShiftScenario) -> dict:
    return {
        "d": scenario.d,
        "id_spec": _spec_to_json(scenario.id_spec),
        "ood_spec": [_shift_to_json(s) for s in scenario.ood_spec],
        "n_monitor": scenario.n_monitor,
        "n_id": scenario.n_id,
        "n_ood": scenario.n_ood,
        "seed": scenario.seed,
    }


def _spec_from_json(doc: dict):
    if doc["kind"] == "gaussian":
        return GaussianSpec(np.asarray(doc["mean"]), np.asarray(doc["cov"]))
    if doc["kind"] == "mixture":
        return MixtureSpec(
            tuple(doc["weights"]),
            tuple(_spec_from_json(c) for c in doc["components"]),
        )
    raise FormatError(f"unknown spec kind {doc['kind']!r}")


def _shift_from_json(doc: dict):
    kind = doc["kind"]
    if kind == "mean-shift":
        return MeanShift(float(doc["delta"]))
    if kind == "scale-shift":
        return ScaleShift(float(doc["factor"]))
    if kind == "extra-mode":
        cov = np.asarray(doc["cov"]) if "cov" in doc else None
        return ExtraMode(float(doc["weight"]), np.asarray(doc["mean"]), cov)
    if kind == "rotation":
        return Rotation(tuple(tuple(p) for p in doc["planes"]))
    raise FormatError(f"unknown shift kind {kind!r}")


def scenario_from_json(doc: dict) -> ShiftScenario:
    """Inverse of scenario_to_json.

    Raises:
        FormatError: missing fields or unknown kinds.
        ParameterError: well-formed but invalid values.
    """
    try:
        return ShiftScenario(
            d=int(doc["d"]),
            id_spec=_spec_from_json(doc["id_spec"]),
            ood_spec=tuple(_shift_from_json(s) for s in doc["ood_spec"]),
            n_monitor=int(doc["n_monitor"]),
            n_id=int(doc["n_id"]),
            n_ood=int(doc["n_ood"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad scenario document: {exc!r}") from exc


def oracle_auroc(id_scores, ood_scores) -> float:
    """Direct pairwise P(ID > OOD) + half ties, O(n*m); scores higher-is-ID.

    Raises:
        ParameterError: either side empty.
    """
    ids = np.asarray(id_scores, dtype=np.float64).ravel()
    oods = np.asarray(ood_scores, dtype=np.float64).ravel()
    if ids.size == 0 or oods.size == 0:
        raise ParameterError("both score sets must be nonempty")
    wins = (ids[:, None] > oods[None, :]).sum()
    ties = (ids[:, None] == oods[None, :]).sum()
    return float((wins + 0.5 * ties) / (ids.size * oods.size))


def oracle_numeric_jacobian(flow: FlowModel, x, h: float) -> np.ndarray:
    """Central-difference Jacobian of the flow's forward z-output.

    Raises:
        ParameterError: d > 8 or h outside [1e-7, 1e-4].
    """
    if flow.d > 8:
        raise ParameterError(f"numeric Jacobian limited to d <= 8, got {flow.d}")
    if not 1e-7 <= h <= 1e-4:
        raise ParameterError(f"h must be in [1e-7, 1e-4], got {h}")
    x = np.asarray(x, dtype=np.float64)
    jac = np.empty((flow.d, flow.d))
    for j in range(flow.d):
        up = x.copy()
        up[j] += h
        down = x.copy()
        down[j] -= h
        zu, _ = forward(flow, up)
        zd, _ = forward(flow, down)
        jac[:, j] = (zu - zd) / (2.0 * h)
    return jac


def oracle_gmm_density(model: GmmModel, x) -> float:
    """Naive direct-formula mixture density with explicit inverses.

    No log-domain tricks: far-tail densities underflow to exactly 0.0 where
    the log-domain scorer stays finite; that divergence is the point of the
    cross-check.

    Raises:
        ParameterError: d > 16 or dimension mismatch.
    """
    if model.d > 16:
        raise ParameterError(f"naive density limited to d <= 16, got {model.d}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d,):
        raise ParameterError(f"x must be a {model.d}-vector, got {x.shape}")
    total = 0.0
    for w, mean, cov in zip(model.weights, model.means, model.covariances):
        diff = x - mean
        quad = float(diff @ np.linalg.inv(cov) @ diff)
        norm = math.sqrt(((2.0 * math.pi) ** model.d) * np.linalg.det(cov))
        total += w * math.exp(-0.5 * quad) / norm
    return float(total)
