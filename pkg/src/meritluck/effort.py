"""Worker effort models and the ratio/difference laws derived from them.

Effort is the number of encryptions a worker completes. Two workers drawn
independently from the same law give the relative effort ``e2 / e1`` (used
with multiplicative advantages) and ``e2 - e1`` (used with additive
headstarts). Discrete laws are handled by exact enumeration over their
probability mass function, continuous ones by closed forms or quadrature.
"""

from __future__ import annotations

import csv
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, ClassVar, Iterable

import numpy as np
from scipy import stats

from meritluck.errors import (
    DatasetParseError,
    DomainError,
    InvalidPopulationError,
    ParameterError,
    UnsupportedOperationError,
)

# relative step for finite-difference densities
DENSITY_REL_STEP = 1e-3
_CMP_TOL = 1e-12


class EffortDistribution(ABC):
    kind: ClassVar[str]
    continuous: ClassVar[bool]

    @abstractmethod
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    @abstractmethod
    def to_dict(self) -> dict[str, Any]: ...


class DiscreteEffort(EffortDistribution):
    continuous = False

    @abstractmethod
    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(values, probabilities)`` with values sorted ascending."""


class ContinuousEffort(EffortDistribution):
    continuous = True

    @abstractmethod
    def pdf(self, x: np.ndarray | float) -> np.ndarray | float: ...

    @abstractmethod
    def cdf(self, x: np.ndarray | float) -> np.ndarray | float: ...

    def support_bounds(self) -> tuple[float, float]:
        return 0.0, math.inf


@dataclass(frozen=True)
class TruncatedRoundedNormal(DiscreteEffort):
    """Normal effort rounded to the nearest integer, values below ``min`` excluded."""

    kind: ClassVar[str] = "truncated_rounded_normal"
    mean: float = 18.0
    sd: float = 5.5
    min: int = 5

    def __post_init__(self) -> None:
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise ParameterError(f"sd must be positive, got {self.sd}")
        if self.min < 0:
            raise ParameterError(f"min must be nonnegative, got {self.min}")
        if int(self.min) != self.min:
            raise ParameterError("min must be an integer number of encryptions")
        if self.mean + 8 * self.sd < self.min:
            raise ParameterError("truncation point leaves no probability mass")

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        upper = int(math.ceil(self.mean + 12 * self.sd))
        k = np.arange(int(self.min), max(upper, int(self.min)) + 1)
        mass = stats.norm.cdf((k + 0.5 - self.mean) / self.sd) - stats.norm.cdf(
            (k - 0.5 - self.mean) / self.sd
        )
        keep = mass > 0
        k, mass = k[keep], mass[keep]
        return k.astype(np.int64), mass / mass.sum()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty(0, dtype=np.int64)
        while out.size < n:
            draws = np.floor(rng.normal(self.mean, self.sd, size=2 * (n - out.size) + 8) + 0.5)
            draws = draws[draws >= self.min].astype(np.int64)
            out = np.concatenate([out, draws])
        return out[:n]

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "mean": self.mean, "sd": self.sd, "min": int(self.min)}


@dataclass(frozen=True)
class Empirical(DiscreteEffort):
    """Resampling law over observed effort counts."""

    kind: ClassVar[str] = "empirical"
    samples: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.samples) == 0:
            raise ParameterError("empirical samples must be nonempty")
        if any(s < 0 for s in self.samples):
            raise ParameterError("empirical samples must be nonnegative")
        object.__setattr__(self, "samples", tuple(int(s) for s in self.samples))

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        values, counts = np.unique(np.asarray(self.samples, dtype=np.int64), return_counts=True)
        return values, counts / counts.sum()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(np.asarray(self.samples, dtype=np.int64), size=n, replace=True)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "samples": list(self.samples)}


@dataclass(frozen=True)
class LogNormal(ContinuousEffort):
    kind: ClassVar[str] = "lognormal"
    mu_log: float = math.log(18.0)
    sigma_log: float = 0.3

    def __post_init__(self) -> None:
        if not (self.sigma_log > 0 and math.isfinite(self.sigma_log)):
            raise ParameterError(f"sigma_log must be positive, got {self.sigma_log}")

    def _frozen(self):
        return stats.lognorm(s=self.sigma_log, scale=math.exp(self.mu_log))

    def pdf(self, x):
        return self._frozen().pdf(x)

    def cdf(self, x):
        return self._frozen().cdf(x)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.lognormal(self.mu_log, self.sigma_log, size=n)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "mu_log": self.mu_log, "sigma_log": self.sigma_log}


@dataclass(frozen=True)
class Uniform(ContinuousEffort):
    """Uniform effort on ``[0, upper]``."""

    kind: ClassVar[str] = "uniform"
    upper: float = 1.0

    def __post_init__(self) -> None:
        if not (self.upper > 0 and math.isfinite(self.upper)):
            raise ParameterError(f"upper must be positive, got {self.upper}")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= 0) & (x <= self.upper), 1.0 / self.upper, 0.0)

    def cdf(self, x):
        return np.clip(np.asarray(x, dtype=float) / self.upper, 0.0, 1.0)

    def support_bounds(self) -> tuple[float, float]:
        return 0.0, self.upper

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(0.0, self.upper, size=n)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "lower": 0.0, "upper": self.upper}


@dataclass(frozen=True)
class LogNormalMixture(ContinuousEffort):
    """Finite mixture of lognormals; multimodal efforts for stress-testing the checks."""

    kind: ClassVar[str] = "lognormal_mixture"
    weights: tuple[float, ...] = (0.5, 0.5)
    mu_log: tuple[float, ...] = (0.0, math.log(3.0))
    sigma_log: tuple[float, ...] = (0.05, 0.05)

    def __post_init__(self) -> None:
        for name in ("weights", "mu_log", "sigma_log"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not (len(self.weights) == len(self.mu_log) == len(self.sigma_log) >= 1):
            raise ParameterError("mixture parameter lists must have equal nonzero length")
        if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0):
            raise ParameterError("mixture weights must be nonnegative and sum to 1")
        if any(not (s > 0) for s in self.sigma_log):
            raise ParameterError("mixture sigma_log values must be positive")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return sum(
            w * stats.lognorm.pdf(x, s=s, scale=math.exp(m))
            for w, m, s in zip(self.weights, self.mu_log, self.sigma_log)
        )

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return sum(
            w * stats.lognorm.cdf(x, s=s, scale=math.exp(m))
            for w, m, s in zip(self.weights, self.mu_log, self.sigma_log)
        )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        mu = np.asarray(self.mu_log)[comp]
        sigma = np.asarray(self.sigma_log)[comp]
        return np.exp(rng.normal(mu, sigma))

    def _ratio_components(self):
        # e2 from component j, e1 from component i -> log-ratio ~ N(mu_j - mu_i, s_i^2 + s_j^2)
        for wi, mi, si in zip(self.weights, self.mu_log, self.sigma_log):
            for wj, mj, sj in zip(self.weights, self.mu_log, self.sigma_log):
                yield wi * wj, mj - mi, math.hypot(si, sj)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "weights": list(self.weights),
            "mu_log": list(self.mu_log),
            "sigma_log": list(self.sigma_log),
        }


DEFAULT_EFFORT = TruncatedRoundedNormal(18.0, 5.5, 5)

_KINDS: dict[str, type[EffortDistribution]] = {
    cls.kind: cls
    for cls in (TruncatedRoundedNormal, Empirical, LogNormal, Uniform, LogNormalMixture)
}


def distribution_from_dict(spec: dict[str, Any]) -> EffortDistribution:
    """Build a distribution from its JSON form, e.g. ``{"kind": "lognormal", "mu_log": 2.9, "sigma_log": 0.3}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _KINDS:
        raise ParameterError(f"unknown effort distribution kind {kind!r}; expected one of {sorted(_KINDS)}")
    if kind == "uniform":
        lower = spec.pop("lower", 0.0)
        if lower != 0:
            raise ParameterError("uniform effort must have lower bound 0")
    if kind == "empirical":
        spec["samples"] = tuple(spec.get("samples", ()))
    try:
        return _KINDS[kind](**spec)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {kind}: {exc}") from None


def distribution_from_json(text: str) -> EffortDistribution:
    return distribution_from_dict(json.loads(text))


# --------------------------------------------------------------------------- laws


def _positive_support(dist: DiscreteEffort) -> tuple[np.ndarray, np.ndarray]:
    values, probs = dist.support()
    keep = values > 0
    if not keep.any():
        raise DomainError("ratio undefined: distribution has no positive effort")
    return values[keep], probs[keep] / probs[keep].sum()


def ratio_cdf(dist: EffortDistribution, t: float) -> float:
    """Pr(e2 / e1 <= t) for independent draws; zero-effort ``e1`` draws are excluded."""
    if not t > 0:
        raise DomainError(f"ratio threshold must be positive, got {t}")
    if math.isinf(t):
        return 1.0
    if isinstance(dist, LogNormal):
        return float(stats.norm.cdf(math.log(t) / (dist.sigma_log * math.sqrt(2.0))))
    if isinstance(dist, LogNormalMixture):
        lt = math.log(t)
        return float(sum(w * stats.norm.cdf((lt - loc) / s) for w, loc, s in dist._ratio_components()))
    if isinstance(dist, Uniform):
        return t / 2.0 if t <= 1.0 else 1.0 - 1.0 / (2.0 * t)
    if isinstance(dist, DiscreteEffort):
        v1, p1 = _positive_support(dist)
        v2, p2 = dist.support()
        hit = v2[None, :] <= t * v1[:, None] * (1 + _CMP_TOL)
        return float(min(1.0, (p1[:, None] * p2[None, :] * hit).sum()))
    raise UnsupportedOperationError(f"no ratio law for {type(dist).__name__}")


@lru_cache(maxsize=64)
def _quadrature_nodes(dist: ContinuousEffort, panels: int = 400, order: int = 16):
    """Composite Gauss-Legendre nodes covering all but ~1e-13 of the mass of ``dist``."""
    lo, hi = dist.support_bounds()
    if not math.isfinite(hi):
        hi = max(1.0, lo + 1.0)
        while dist.cdf(hi) < 1 - 1e-13:
            hi *= 2
    g, gw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = np.diff(edges)[:, None] / 2
    mid = (edges[:-1] + edges[1:])[:, None] / 2
    return (mid + half * g).ravel(), (half * gw).ravel()


def diff_cdf(dist: EffortDistribution, d: float) -> float:
    """Pr(e2 - e1 <= d) for independent draws."""
    if isinstance(dist, DiscreteEffort):
        v, p = dist.support()
        hit = v[None, :] - v[:, None] <= d + _CMP_TOL
        return float(min(1.0, (p[:, None] * p[None, :] * hit).sum()))
    if isinstance(dist, Uniform):
        u = d / dist.upper
        if u <= -1:
            return 0.0
        if u >= 1:
            return 1.0
        return 0.5 * (1 + u) ** 2 if u <= 0 else 1.0 - 0.5 * (1 - u) ** 2
    if isinstance(dist, ContinuousEffort):
        x, w = _quadrature_nodes(dist)
        val = float(np.dot(w, dist.pdf(x) * dist.cdf(x + d)))
        return min(1.0, max(0.0, val))
    raise UnsupportedOperationError(f"no difference law for {type(dist).__name__}")


def ratio_density(dist: EffortDistribution, t: float) -> float:
    """Density of ``e2 / e1`` at ``t``."""
    if not dist.continuous:
        raise UnsupportedOperationError("ratio density undefined for a discrete effort law")
    if not t > 0:
        raise DomainError(f"ratio must be positive, got {t}")
    if isinstance(dist, LogNormal):
        s = dist.sigma_log * math.sqrt(2.0)
        return float(stats.norm.pdf(math.log(t) / s) / (s * t))
    if isinstance(dist, LogNormalMixture):
        lt = math.log(t)
        return float(sum(w * stats.norm.pdf((lt - loc) / s) / (s * t) for w, loc, s in dist._ratio_components()))
    h = DENSITY_REL_STEP * t
    return max(0.0, (ratio_cdf(dist, t + h) - ratio_cdf(dist, t - h)) / (2 * h))


def ratio_density_slope(dist: EffortDistribution, t: float) -> float:
    """Central finite difference of :func:`ratio_density` with relative step."""
    h = DENSITY_REL_STEP * t
    return (ratio_density(dist, t + h) - ratio_density(dist, t - h)) / (2 * h)


# --------------------------------------------------------------------- populations


@dataclass(frozen=True)
class Worker:
    id: str
    effort: float

    def __post_init__(self) -> None:
        if not self.effort >= 0:
            raise InvalidPopulationError(f"worker {self.id!r} has negative effort {self.effort}")


@dataclass(frozen=True)
class WorkerPopulation:
    workers: tuple[Worker, ...]
    condition_label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "workers", tuple(self.workers))
        if len(self.workers) < 2:
            raise InvalidPopulationError(f"population needs at least 2 workers, got {len(self.workers)}")
        ids = [w.id for w in self.workers]
        if len(set(ids)) != len(ids):
            raise InvalidPopulationError("worker ids must be unique")

    def __len__(self) -> int:
        return len(self.workers)

    @property
    def efforts(self) -> np.ndarray:
        return np.asarray([w.effort for w in self.workers])

    @classmethod
    def from_efforts(cls, efforts: Iterable[float], label: str = "", prefix: str = "w") -> WorkerPopulation:
        efforts = list(efforts)
        width = max(4, len(str(len(efforts))))
        return cls(tuple(Worker(f"{prefix}{i:0{width}d}", e) for i, e in enumerate(efforts)), label)


def sample_population(dist: EffortDistribution, n: int, seed: int, label: str = "") -> WorkerPopulation:
    if n < 2:
        raise InvalidPopulationError(f"population needs at least 2 workers, got {n}")
    rng = np.random.default_rng(seed)
    draws = dist.sample(rng, n)
    if dist.continuous:
        efforts = [float(x) for x in draws]
    else:
        efforts = [int(x) for x in draws]
    return WorkerPopulation.from_efforts(efforts, label or dist.kind)


def write_population(population: WorkerPopulation, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["worker_id", "effort"])
        for w in population.workers:
            writer.writerow([w.id, repr(w.effort)])


def _parse_number(text: str) -> float:
    return int(text) if text.lstrip("-").isdigit() else float(text)


def read_population(path: str | Path, label: str = "") -> WorkerPopulation:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("worker_id", "effort"):
            if reader.fieldnames is None or col not in reader.fieldnames:
                raise DatasetParseError("missing column", column=col, row=1)
        workers = []
        for row_no, row in enumerate(reader, start=2):
            try:
                workers.append(Worker(row["worker_id"], _parse_number(row["effort"])))
            except (ValueError, TypeError) as exc:
                raise DatasetParseError(f"bad effort value: {exc}", row=row_no, column="effort") from None
    return WorkerPopulation(tuple(workers), label or Path(path).stem)
