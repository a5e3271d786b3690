"""Merit probability: the chance that the winner of a pair exerted at least as much effort.

Under outcome luck this is ``1 - q/2``. Under opportunity luck it depends on
the winner's relative advantage ``m = m_high / m_low`` through the law of the
relative effort ``x = e2 / e1`` of the disadvantaged worker: the advantaged
worker wins when ``x`` falls below the threshold ``x*(m) = m`` and exerted
weakly more effort when ``x`` falls below the equal-effort point ``x = 1``, so

    pi(m) = Pr(x <= 1 | x <= m) = F(1) / F(m) = 0.5 / F(m).

Additive headstarts swap in ``x = e2 - e1`` with threshold ``b`` and
equal-effort point 0. The empirical oracle enumerates every ordered pair of
distinct workers in a population instead of using ``F``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from meritluck.effort import (
    EffortDistribution,
    WorkerPopulation,
    ratio_cdf,
    ratio_density,
    ratio_density_slope,
)
from meritluck.environments import MultiplierModel, round_tenth
from meritluck.errors import (
    BinningError,
    DatasetParseError,
    DomainError,
    InversionError,
    UnsupportedOperationError,
)

AdvantageKind = Literal["multiplicative", "additive"]

_ROUND = 12
_TIE_RTOL = 1e-12


# ------------------------------------------------------------------ outcome luck


def pi_from_q(q: float) -> float:
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"coin-flip chance must lie in [0, 1], got {q}")
    return round(1.0 - q / 2.0, _ROUND)


def q_from_pi(pi: float) -> float:
    if not 0.5 <= pi <= 1.0:
        raise DomainError(f"merit probability must lie in [0.5, 1], got {pi}")
    return round(2.0 * (1.0 - pi), _ROUND)


# -------------------------------------------------------------- opportunity luck


def pi_analytic(dist: EffortDistribution, m: float) -> float:
    """Merit probability for relative multiplier ``m`` from the ratio law of ``dist``."""
    if not m > 0:
        raise DomainError(f"relative multiplier must be positive, got {m}")
    if not dist.continuous:
        raise UnsupportedOperationError("analytic merit probability needs a continuous effort law; use pi_empirical")
    if m <= 1.0:
        return 1.0
    return min(1.0, max(0.5, 0.5 / ratio_cdf(dist, m)))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MERITLUCK_THREADS", "1")))
    except ValueError:
        return 1


def _pair_counts(values: np.ndarray, counts: np.ndarray, rows: slice, m: float, additive: bool, strict: bool):
    """Integer half-counts over ordered pairs whose advantaged member is in ``rows``.

    Returns ``(adv_wins2, adv_merit2, dis_wins2, dis_merit2, n_obs)`` where the
    ``2`` suffix means counts are doubled so score ties contribute 1 (= one half).
    """
    v_adv = values[rows][:, None]
    v_oth = values[None, :]
    c_adv = counts[rows][:, None]
    weight = c_adv * counts[None, :]
    # ordered pairs of distinct workers: same-value cell loses its diagonal
    idx = np.arange(values.size)[rows]
    weight[np.arange(idx.size), idx] -= counts[rows]
    score_adv = v_adv + m if additive else v_adv * m
    tie = np.abs(score_adv - v_oth) <= _TIE_RTOL * np.maximum(np.maximum(np.abs(score_adv), np.abs(v_oth)), 1.0)
    win2 = np.where(tie, 1, np.where(score_adv > v_oth, 2, 0)).astype(np.int64)
    if strict:
        adv_merit = v_adv > v_oth
        dis_merit = v_oth > v_adv
    else:
        adv_merit = v_adv >= v_oth
        dis_merit = v_oth >= v_adv
    adv_w2 = int((weight * win2).sum())
    adv_m2 = int((weight * win2 * adv_merit).sum())
    dis_w2 = int((weight * (2 - win2)).sum())
    dis_m2 = int((weight * (2 - win2) * dis_merit).sum())
    return np.array([adv_w2, adv_m2, dis_w2, dis_m2, int(weight.sum())], dtype=np.int64)


def _enumerate(population: WorkerPopulation, m: float, additive: bool, strict: bool, conditional: bool):
    values, counts = np.unique(population.efforts.astype(float), return_counts=True)
    counts = counts.astype(np.int64)
    block = 256
    slices = [slice(s, min(s + block, values.size)) for s in range(0, values.size, block)]
    threads = min(_threads(), len(slices))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda sl: _pair_counts(values, counts, sl, m, additive, strict), slices))
    else:
        parts = [_pair_counts(values, counts, sl, m, additive, strict) for sl in slices]
    adv_w2, adv_m2, dis_w2, dis_m2, n_obs = np.sum(parts, axis=0)
    if conditional:
        pi = adv_m2 / adv_w2
    else:
        pi = (adv_m2 + dis_m2) / (adv_w2 + dis_w2)
    return float(pi), int(n_obs)


def pi_empirical(
    population: WorkerPopulation, m: float, *, strict: bool = False, conditional: bool = True
) -> tuple[float, int]:
    """All-pairings merit probability for relative multiplier ``m``.

    Every unordered pair is counted twice, once with each worker holding the
    higher multiplier, giving ``n(n-1)`` observations. The returned probability
    is the share of observations won by the advantaged worker in which that
    worker also had weakly more effort (``strict=True`` requires strictly
    more). Score ties count one half towards each side. ``conditional=False``
    instead pools wins by either worker.
    """
    if not m >= 1.0:
        raise DomainError(f"relative multiplier must be >= 1 (normalise to max/min), got {m}")
    return _enumerate(population, float(m), False, strict, conditional)


def pi_headstart(
    population: WorkerPopulation, b: float, *, strict: bool = False, conditional: bool = True
) -> tuple[float, int]:
    """All-pairings merit probability for an additive headstart ``b``."""
    if not b >= 0:
        raise DomainError(f"headstart must be nonnegative, got {b}")
    return _enumerate(population, float(b), True, strict, conditional)


# ------------------------------------------------------------------------ curves


@dataclass(frozen=True)
class PiPoint:
    advantage: float
    pi_hat: float
    n_pairings: int


@dataclass(frozen=True)
class PiCurve:
    points: tuple[PiPoint, ...]
    advantage_kind: AdvantageKind = "multiplicative"

    def __post_init__(self) -> None:
        pts = tuple(sorted(self.points, key=lambda p: p.advantage))
        object.__setattr__(self, "points", pts)
        if not pts:
            raise DomainError("a merit-probability curve needs at least one point")
        if self.advantage_kind not in ("multiplicative", "additive"):
            raise DomainError(f"unknown advantage kind {self.advantage_kind!r}")

    @property
    def advantages(self) -> np.ndarray:
        return np.asarray([p.advantage for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.asarray([p.pi_hat for p in self.points])

    def lookup(self, advantage: float) -> float:
        """Linear interpolation in the advantage; clamps outside the grid."""
        baseline = 1.0 if self.advantage_kind == "multiplicative" else 0.0
        if advantage <= baseline:
            return 1.0
        return float(np.interp(advantage, self.advantages, self.values))

    def nearest(self, pi_target: float) -> PiPoint:
        """Grid point whose value is closest to ``pi_target``; ties go to the smaller advantage."""
        gaps = np.abs(self.values - pi_target)
        best = gaps.min()
        k = int(np.flatnonzero(gaps <= best + 1e-12)[0])
        return self.points[k]


MULTIPLIER_RATIO_GRID = tuple(round(1.0 + 0.1 * k, 1) for k in range(31))
HEADSTART_GRID = tuple(range(16))


def pi_curve(
    population: WorkerPopulation,
    advantage_kind: AdvantageKind = "multiplicative",
    grid: Sequence[float] | None = None,
    *,
    strict: bool = False,
) -> PiCurve:
    if grid is None:
        grid = MULTIPLIER_RATIO_GRID if advantage_kind == "multiplicative" else HEADSTART_GRID
    grid = list(grid)
    if grid != sorted(grid):
        raise DomainError("advantage grid must be sorted")
    fn = pi_empirical if advantage_kind == "multiplicative" else pi_headstart
    points = []
    for a in grid:
        pi, n = fn(population, a, strict=strict)
        points.append(PiPoint(float(a), pi, n))
    return PiCurve(tuple(points), advantage_kind)


def analytic_pi_curve(dist: EffortDistribution, grid: Sequence[float] = MULTIPLIER_RATIO_GRID) -> PiCurve:
    return PiCurve(tuple(PiPoint(float(m), pi_analytic(dist, m), 0) for m in grid), "multiplicative")


def write_curve(curve: PiCurve, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["advantage", "pi_hat", "n_pairings", "kind"])
        for p in curve.points:
            writer.writerow([repr(p.advantage), repr(p.pi_hat), p.n_pairings, curve.advantage_kind])


def read_curve(path: str | Path) -> PiCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("advantage", "pi_hat", "n_pairings", "kind"):
            if col not in (reader.fieldnames or []):
                raise DatasetParseError("missing column", column=col, row=1)
        points, kinds = [], set()
        for row_no, row in enumerate(reader, start=2):
            try:
                points.append(PiPoint(float(row["advantage"]), float(row["pi_hat"]), int(row["n_pairings"])))
            except ValueError as exc:
                raise DatasetParseError(str(exc), row=row_no) from None
            kinds.add(row["kind"])
    if len(kinds) != 1:
        raise DatasetParseError("curve file must carry exactly one advantage kind", column="kind")
    return PiCurve(tuple(points), kinds.pop())


@lru_cache(maxsize=32)
def _pair_table(curve: PiCurve, model: MultiplierModel):
    grid = model.grid()
    hi_idx, lo_idx = np.nonzero(grid[:, None] >= grid[None, :] - 1e-9)
    pis = np.asarray([curve.lookup(grid[h] / grid[l]) for h, l in zip(hi_idx, lo_idx)])
    return hi_idx, lo_idx, pis


def invert_pi_to_multipliers(
    pi_target: float, curve: PiCurve, model: MultiplierModel, rng: np.random.Generator
) -> tuple[float, float]:
    """Pick a multiplier pair ``(m_high, m_low)`` for the grid ratio whose curve value is nearest ``pi_target``."""
    if not 0.5 <= pi_target <= 1.0:
        raise DomainError(f"merit probability must lie in [0.5, 1], got {pi_target}")
    if curve.advantage_kind != "multiplicative":
        raise InversionError("multiplier inversion needs a multiplicative curve")
    ratio = curve.nearest(pi_target).advantage
    grid = model.grid()
    admissible = grid[grid * ratio <= model.high + 1e-9]
    if admissible.size == 0:
        raise InversionError(f"no multiplier pair on the grid realises ratio {ratio}")
    m_low = float(admissible[rng.integers(admissible.size)])
    m_high = float(round_tenth(m_low * ratio))
    return m_high, m_low


def invert_pi_to_pair(
    pi_target: float, curve: PiCurve, model: MultiplierModel, rng: np.random.Generator, tol: float = 0.005
) -> tuple[float, float]:
    """Draw a multiplier pair ``(m_high, m_low)`` whose merit probability matches ``pi_target``.

    Candidates are all grid pairs whose curve value lies within ``tol`` of the
    target (or the closest pairs when none does), drawn with probability
    proportional to how often the multiplier model produces them.
    """
    if not 0.5 <= pi_target <= 1.0:
        raise DomainError(f"merit probability must lie in [0.5, 1], got {pi_target}")
    if curve.advantage_kind != "multiplicative":
        raise InversionError("multiplier inversion needs a multiplicative curve")
    grid, pmf = model.grid(), model.pmf()
    hi_idx, lo_idx, pis = _pair_table(curve, model)
    gaps = np.abs(pis - pi_target)
    ok = gaps <= max(tol, gaps.min()) + 1e-12
    weights = pmf[hi_idx[ok]] * pmf[lo_idx[ok]]
    if weights.sum() <= 0:
        raise InversionError(f"no multiplier pair on the grid realises merit probability {pi_target}")
    k = rng.choice(np.flatnonzero(ok), p=weights / weights.sum())
    return float(grid[hi_idx[k]]), float(grid[lo_idx[k]])


# -------------------------------------------------------------------------- bins


@dataclass(frozen=True)
class PiBin:
    index: int
    low: int
    high: int

    def contains_percent(self, pct: int) -> bool:
        return self.low <= pct <= self.high


@dataclass(frozen=True)
class PiBinning:
    """Twelve bins over merit probability on the integer-percent grid."""

    bins: tuple[PiBin, ...]

    def assign(self, pi: float) -> int:
        pct = int(math.floor(pi * 100 + 0.5 + 1e-9))
        for b in self.bins:
            if b.contains_percent(pct):
                return b.index
        raise BinningError(f"merit probability {pi} falls outside every bin")

    def __len__(self) -> int:
        return len(self.bins)

    def __getitem__(self, index: int) -> PiBin:
        return self.bins[index - 1]


def standard_bins() -> PiBinning:
    edges = [(50, 50), (51, 54)] + [(lo, lo + 4) for lo in range(55, 100, 5)] + [(100, 100)]
    return PiBinning(tuple(PiBin(k + 1, lo, hi) for k, (lo, hi) in enumerate(edges)))


def draw_pi_per_bin(binning: PiBinning, rng: np.random.Generator) -> list[float]:
    """One merit probability per bin, uniform over the bin's percent values."""
    return [int(rng.integers(b.low, b.high + 1)) / 100 for b in binning.bins]


# ---------------------------------------------------------------- shape checks


@dataclass
class ConvexityReport:
    advantages: list[float]
    values: list[float]
    first_differences: list[float]
    second_differences: list[float]
    decreasing_ok: list[bool]
    convex_ok: list[bool]
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.passed = all(self.decreasing_ok) and all(self.convex_ok)

    @property
    def failures(self) -> list[float]:
        """Interior advantages where convexity fails."""
        return [a for a, ok in zip(self.advantages[1:-1], self.convex_ok) if not ok]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def check_convexity(curve: PiCurve, tol: float = 1e-3) -> ConvexityReport:
    """First differences should be <= tol (decreasing), second differences >= -tol (convex)."""
    if len(curve.points) < 3:
        raise DomainError("convexity check needs at least 3 curve points")
    v = curve.values
    d1 = np.diff(v)
    d2 = np.diff(v, 2)
    return ConvexityReport(
        advantages=[float(a) for a in curve.advantages],
        values=[float(x) for x in v],
        first_differences=[float(x) for x in d1],
        second_differences=[float(x) for x in d2],
        decreasing_ok=[bool(x <= tol) for x in d1],
        convex_ok=[bool(x >= -tol) for x in d2],
        tolerance=tol,
    )


@dataclass
class LogConcavityReport:
    grid: list[float]
    cdf: list[float]
    density: list[float]
    density_slope: list[float]
    margin: list[float]
    tolerance: float
    min_margin: float = field(init=False)
    violations: list[float] = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.min_margin = float(min(self.margin))
        self.violations = [t for t, mg in zip(self.grid, self.margin) if mg < -self.tolerance]
        self.passed = not self.violations

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def check_logconcavity(dist: EffortDistribution, grid: Sequence[float], tol: float = 1e-6) -> LogConcavityReport:
    """Evaluate the convexity margin ``2 f(m)^2 - f'(m) F(m)`` of the ratio law on ``grid``."""
    if not dist.continuous:
        raise UnsupportedOperationError("log-concavity check needs a continuous effort law")
    big_f, f, fp, margin = [], [], [], []
    for t in grid:
        F = ratio_cdf(dist, t)
        dens = ratio_density(dist, t)
        slope = ratio_density_slope(dist, t)
        big_f.append(F)
        f.append(dens)
        fp.append(slope)
        margin.append(2 * dens**2 - slope * F)
    return LogConcavityReport([float(t) for t in grid], big_f, f, fp, margin, tol)
