"""Seeded synthetic feature distributions with closed-form densities.

Used by property tests and by the desk-scale quantile-vs-mean ablation.
Supported kinds: standard-normal, gaussian-mixture with diagonal
covariances, uniform-box, and iid per-dimension student-t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import FeatureSet
from .seeding import check_seed, stream

STANDARD_NORMAL = "standard-normal"
GAUSSIAN_MIXTURE = "gaussian-mixture"
UNIFORM_BOX = "uniform-box"
STUDENT_T = "student-t"

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MixtureComponent:
    mean: np.ndarray
    var: np.ndarray
    weight: float


@dataclass(frozen=True)
class DistSpec:
    kind: str
    dim: int
    seed: int = 0
    components: tuple[MixtureComponent, ...] = ()
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    dof: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        check_seed(self.seed)
        if self.dim < 2 or self.dim % 2 != 0:
            raise ConfigError(f"dim must be even and >= 2, got {self.dim}")
        if self.kind == STANDARD_NORMAL:
            pass
        elif self.kind == GAUSSIAN_MIXTURE:
            if not self.components:
                raise ConfigError("gaussian-mixture needs at least one component")
            total = 0.0
            for c in self.components:
                mean = np.asarray(c.mean, dtype=np.float64)
                var = np.asarray(c.var, dtype=np.float64)
                if mean.shape != (self.dim,) or var.shape != (self.dim,):
                    raise ConfigError("component mean/var must have length dim")
                if np.any(var <= 0) or c.weight <= 0:
                    raise ConfigError("component variances and weights must be positive")
                total += c.weight
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"mixture weights must sum to 1, got {total}")
        elif self.kind == UNIFORM_BOX:
            lo = np.asarray(self.lo, dtype=np.float64)
            hi = np.asarray(self.hi, dtype=np.float64)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise ConfigError("uniform-box lo/hi must have length dim")
            if np.any(lo >= hi):
                raise ConfigError("uniform-box requires lo < hi in every dimension")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        elif self.kind == STUDENT_T:
            if self.dof <= 0:
                raise ConfigError(f"student-t dof must be positive, got {self.dof}")
            if self.scale <= 0:
                raise ConfigError(f"student-t scale must be positive, got {self.scale}")
        else:
            raise ConfigError(f"unknown distribution kind {self.kind!r}")


def standard_normal(dim: int, seed: int = 0) -> DistSpec:
    return DistSpec(kind=STANDARD_NORMAL, dim=dim, seed=seed)


def gaussian_mixture(components, dim: int, seed: int = 0) -> DistSpec:
    comps = tuple(
        MixtureComponent(
            mean=np.asarray(m, dtype=np.float64),
            var=np.asarray(v, dtype=np.float64),
            weight=float(w),
        )
        for m, v, w in components
    )
    return DistSpec(kind=GAUSSIAN_MIXTURE, dim=dim, seed=seed, components=comps)


def uniform_box(lo, hi, dim: int, seed: int = 0) -> DistSpec:
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (dim,)).copy()
    return DistSpec(kind=UNIFORM_BOX, dim=dim, seed=seed, lo=lo, hi=hi)


def student_t(dof: float, scale: float, dim: int, seed: int = 0) -> DistSpec:
    return DistSpec(kind=STUDENT_T, dim=dim, seed=seed, dof=dof, scale=scale)


def sample(spec: DistSpec, n: int, name: str | None = None) -> FeatureSet:
    """Draw n samples; deterministic given spec.seed."""
    if n < 0:
        raise ConfigError(f"sample count must be >= 0, got {n}")
    rng = stream(spec.seed)
    if spec.kind == STANDARD_NORMAL:
        data = rng.standard_normal((n, spec.dim))
    elif spec.kind == GAUSSIAN_MIXTURE:
        weights = np.array([c.weight for c in spec.components])
        picks = rng.choice(len(spec.components), size=n, p=weights)
        data = rng.standard_normal((n, spec.dim))
        for i, c in enumerate(spec.components):
            sel = picks == i
            data[sel] = data[sel] * np.sqrt(c.var) + c.mean
    elif spec.kind == UNIFORM_BOX:
        data = rng.uniform(spec.lo, spec.hi, size=(n, spec.dim))
    elif spec.kind == STUDENT_T:
        data = rng.standard_t(spec.dof, size=(n, spec.dim)) * spec.scale
    else:  # unreachable after validation
        raise ConfigError(f"unknown distribution kind {spec.kind!r}")
    return FeatureSet(data=data.astype(np.float32), name=name or f"{spec.kind}(m={spec.dim})")


def analytic_log_prob(spec: DistSpec, r) -> np.ndarray | float:
    """Exact log-density of the spec at r (rows); -inf outside a uniform box."""
    x = np.asarray(r, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != spec.dim:
        raise ConfigError(f"expected dimension {spec.dim}, got {x.shape[1]}")
    if spec.kind == STANDARD_NORMAL:
        ll = -0.5 * (spec.dim * LOG_2PI + (x * x).sum(axis=1))
    elif spec.kind == GAUSSIAN_MIXTURE:
        parts = []
        for c in spec.components:
            z2 = ((x - c.mean) ** 2 / c.var).sum(axis=1)
            logdet = np.log(c.var).sum()
            parts.append(math.log(c.weight) - 0.5 * (spec.dim * LOG_2PI + logdet + z2))
        stacked = np.stack(parts)
        peak = stacked.max(axis=0)
        ll = peak + np.log(np.exp(stacked - peak).sum(axis=0))
    elif spec.kind == UNIFORM_BOX:
        inside = np.all((x >= spec.lo) & (x <= spec.hi), axis=1)
        density = -np.log(spec.hi - spec.lo).sum()
        ll = np.where(inside, density, -np.inf)
    elif spec.kind == STUDENT_T:
        nu, s = spec.dof, spec.scale
        const = (
            math.lgamma((nu + 1.0) / 2.0)
            - math.lgamma(nu / 2.0)
            - 0.5 * math.log(nu * math.pi)
            - math.log(s)
        )
        ll = (const - (nu + 1.0) / 2.0 * np.log1p((x / s) ** 2 / nu)).sum(axis=1)
    else:
        raise ConfigError(f"unknown distribution kind {spec.kind!r}")
    return float(ll[0]) if single else ll


@dataclass(frozen=True)
class AblationTask:
    """Inlier/outlier data for the quantile-vs-mean comparison."""

    train: FeatureSet
    held_out: FeatureSet
    outliers: FeatureSet


def heavy_tailed_task(
    dim: int = 8,
    n_train: int = 10_000,
    n_held_out: int = 2_000,
    n_outliers: int = 2_000,
    seed: int = 0,
    minority_weight: float = 0.15,
    minority_offset: float = 3.0,
    dof: float = 4.0,
) -> AblationTask:
    """Bulk Gaussian inliers plus a heavy-tailed student-t minority mode.

    Outliers are uniform over a box covering three times the inlier
    training support (half-widths tripled around the support center).
    """
    rng = stream(seed)

    def draw_inliers(n, sub):
        gen = stream(seed, sub)
        minority = gen.random(n) < minority_weight
        data = gen.standard_normal((n, dim))
        heavy = gen.standard_t(dof, size=(n, dim))
        heavy[:, 0] += minority_offset
        data[minority] = heavy[minority]
        return data

    train = draw_inliers(n_train, 1)
    held_out = draw_inliers(n_held_out, 2)
    lo, hi = train.min(axis=0), train.max(axis=0)
    center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    box = uniform_box(center - 3.0 * half, center + 3.0 * half, dim=dim, seed=int(rng.integers(2**63)))
    return AblationTask(
        train=FeatureSet(data=train.astype(np.float32), name=f"heavy-tailed-inliers(seed={seed})"),
        held_out=FeatureSet(
            data=held_out.astype(np.float32), name=f"heavy-tailed-held-out(seed={seed})"
        ),
        outliers=sample(box, n_outliers, name=f"uniform-box-outliers(seed={seed})"),
    )
