"""Regressions on decision datasets with spectator-clustered standard errors.

All fits use OLS via a QR decomposition and the CR1 cluster-robust sandwich

    V = G/(G-1) * (N-1)/(N-K) * (X'X)^-1 [sum_g X_g' u_g u_g' X_g] (X'X)^-1.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy import stats

from meritluck.errors import BinningError, ContractError, DegreesOfFreedomError, SingularDesignError
from meritluck.experiment import N_DECISIONS, DecisionRecord
from meritluck.meritprob import PiBinning, standard_bins

RANK_TOL = 1e-10


@dataclass
class RegressionFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    n_obs: int
    n_clusters: int
    r_squared: float
    names: tuple[str, ...] = ()
    residuals: np.ndarray = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def pvalues(self) -> np.ndarray:
        """Two-sided p-values from a t distribution with G-1 degrees of freedom."""
        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(se > 0, self.coefficients / se, np.inf)
        return 2 * stats.t.sf(np.abs(t), df=max(self.n_clusters - 1, 1))

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": [float(c) for c in self.coefficients],
            "ses": [float(s) for s in self.se],
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "r_squared": float(self.r_squared),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def ols_clustered(y, X, cluster_ids: Sequence[Hashable], names: Sequence[str] = ()) -> RegressionFit:
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.shape != (n,) or len(cluster_ids) != n:
        raise ValueError("y, X and cluster_ids must have matching lengths")
    _, groups = np.unique(np.asarray([str(c) for c in cluster_ids]), return_inverse=True)
    n_groups = int(groups.max()) + 1 if n else 0
    if n_groups < 2:
        raise DegreesOfFreedomError(f"clustered errors need at least 2 clusters, got {n_groups}")
    if n <= k:
        raise SingularDesignError(f"{n} observations cannot identify {k} coefficients")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_TOL * max(diag.max(), 1.0):
        raise SingularDesignError("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    r_inv = np.linalg.solve(r, np.eye(k))
    bread = r_inv @ r_inv.T
    scores = np.zeros((n_groups, k))
    np.add.at(scores, groups, X * resid[:, None])
    meat = scores.T @ scores
    scale = n_groups / (n_groups - 1) * (n - 1) / (n - k)
    cov = scale * bread @ meat @ bread
    cov = (cov + cov.T) / 2
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    names = tuple(names) if names else tuple(f"x{j}" for j in range(k))
    return RegressionFit(beta, cov, n, n_groups, r2, names, resid)


# ---------------------------------------------------------------- dataset views

Dataset = Sequence[DecisionRecord]


def _col(ds: Dataset, name: str) -> np.ndarray:
    return np.asarray([getattr(r, name) for r in ds], dtype=float)


def _clusters(ds: Dataset, tag: str = "") -> list[str]:
    return [f"{tag}{r.spectator_id}" for r in ds]


def _require(ds: Dataset, what: str) -> None:
    if len(ds) == 0:
        raise ContractError(f"{what} needs a nonempty dataset")


def elasticity_fit(dataset: Dataset, filter: Callable[[DecisionRecord], bool] | None = None) -> RegressionFit:
    """Regress the redistributed share on the luck probability ``1 - pi`` with an intercept."""
    ds = [r for r in dataset if filter(r)] if filter else list(dataset)
    _require(ds, "elasticity_fit")
    luck = 1.0 - _col(ds, "pi_true")
    X = np.column_stack([np.ones(len(ds)), luck])
    return ols_clustered(_col(ds, "r"), X, _clusters(ds), ("alpha", "beta"))


def mean_fit(dataset: Dataset) -> RegressionFit:
    """Average redistribution with a clustered standard error."""
    _require(dataset, "mean_fit")
    return ols_clustered(_col(dataset, "r"), np.ones((len(dataset), 1)), _clusters(dataset), ("mean",))


def level_gap(ds_a: Dataset, ds_b: Dataset) -> RegressionFit:
    """Difference in mean redistribution, ``a - b``; coefficient ``gap``."""
    _require(ds_a, "level_gap")
    _require(ds_b, "level_gap")
    y = np.concatenate([_col(ds_a, "r"), _col(ds_b, "r")])
    arm = np.concatenate([np.ones(len(ds_a)), np.zeros(len(ds_b))])
    X = np.column_stack([np.ones(y.size), arm])
    return ols_clustered(y, X, _clusters(ds_a, "a:") + _clusters(ds_b, "b:"), ("base", "gap"))


def slope_gap(ds_a: Dataset, ds_b: Dataset) -> RegressionFit:
    """Interacted elasticity regression; coefficient ``beta_gap`` is ``beta_a - beta_b``."""
    _require(ds_a, "slope_gap")
    _require(ds_b, "slope_gap")
    y = np.concatenate([_col(ds_a, "r"), _col(ds_b, "r")])
    luck = 1.0 - np.concatenate([_col(ds_a, "pi_true"), _col(ds_b, "pi_true")])
    arm = np.concatenate([np.ones(len(ds_a)), np.zeros(len(ds_b))])
    X = np.column_stack([np.ones(y.size), luck, arm, luck * arm])
    return ols_clustered(y, X, _clusters(ds_a, "a:") + _clusters(ds_b, "b:"),
                         ("alpha_b", "beta_b", "alpha_gap", "beta_gap"))


@dataclass(frozen=True)
class BinEstimate:
    bin: int
    low: float
    high: float
    estimate: float
    se: float
    n: int


def _bin_indices(ds: Dataset, binning: PiBinning) -> np.ndarray:
    try:
        return np.asarray([binning.assign(r.pi_true) for r in ds], dtype=int)
    except BinningError:
        raise
    except (TypeError, ValueError) as exc:
        raise BinningError(str(exc)) from None


def _bin_rows(binning, values, ses, counts) -> list[BinEstimate]:
    return [
        BinEstimate(b.index, b.low / 100, b.high / 100, float(values[k]), float(ses[k]), int(counts[k]))
        for k, b in enumerate(binning.bins)
    ]


def bin_means(dataset: Dataset, binning: PiBinning | None = None) -> list[BinEstimate]:
    """Mean redistribution per bin from a full set of bin dummies without intercept.

    Bins without observations are reported with ``nan`` estimate and ``n = 0``.
    """
    binning = binning or standard_bins()
    _require(dataset, "bin_means")
    idx = _bin_indices(dataset, binning)
    present = sorted(set(idx.tolist()))
    X = np.column_stack([(idx == b).astype(float) for b in present])
    fit = ols_clustered(_col(dataset, "r"), X, _clusters(dataset), [f"bin{b}" for b in present])
    values = np.full(len(binning), np.nan)
    ses = np.full(len(binning), np.nan)
    counts = np.zeros(len(binning), dtype=int)
    for j, b in enumerate(present):
        values[b - 1] = fit.coefficients[j]
        ses[b - 1] = fit.se[j]
        counts[b - 1] = int((idx == b).sum())
    return _bin_rows(binning, values, ses, counts)


def bin_differences(dataset: Dataset, binning: PiBinning | None = None, reference: int = 1) -> list[BinEstimate]:
    """Bin means expressed as differences from the ``reference`` bin (intercept parametrisation)."""
    binning = binning or standard_bins()
    _require(dataset, "bin_differences")
    idx = _bin_indices(dataset, binning)
    if reference not in set(idx.tolist()):
        raise BinningError(f"reference bin {reference} has no observations")
    others = [b for b in sorted(set(idx.tolist())) if b != reference]
    X = np.column_stack([np.ones(len(dataset))] + [(idx == b).astype(float) for b in others])
    fit = ols_clustered(_col(dataset, "r"), X, _clusters(dataset), ["const"] + [f"bin{b}" for b in others])
    values = np.full(len(binning), np.nan)
    ses = np.full(len(binning), np.nan)
    counts = np.zeros(len(binning), dtype=int)
    values[reference - 1], ses[reference - 1] = 0.0, 0.0
    counts[reference - 1] = int((idx == reference).sum())
    for j, b in enumerate(others, start=1):
        values[b - 1] = fit.coefficients[j]
        ses[b - 1] = fit.se[j]
        counts[b - 1] = int((idx == b).sum())
    return _bin_rows(binning, values, ses, counts)


@dataclass(frozen=True)
class BinGap:
    bin: int
    low: float
    high: float
    estimate: float
    se: float
    n_a: int
    n_b: int


def redistribution_gap(ds_a: Dataset, ds_b: Dataset, binning: PiBinning | None = None) -> list[BinGap]:
    """Per-bin difference in mean redistribution ``a - b`` from the bin-by-arm interacted regression.

    Bins empty in either arm are reported as ``nan``.
    """
    binning = binning or standard_bins()
    _require(ds_a, "redistribution_gap")
    _require(ds_b, "redistribution_gap")
    idx = np.concatenate([_bin_indices(ds_a, binning), _bin_indices(ds_b, binning)])
    arm = np.concatenate([np.ones(len(ds_a)), np.zeros(len(ds_b))])
    y = np.concatenate([_col(ds_a, "r"), _col(ds_b, "r")])
    in_a = set(idx[arm == 1].tolist())
    in_b = set(idx[arm == 0].tolist())
    shared = sorted(in_a & in_b)
    keep = np.isin(idx, shared)
    idx, arm, y = idx[keep], arm[keep], y[keep]
    clusters = [c for c, k in zip(_clusters(ds_a, "a:") + _clusters(ds_b, "b:"), keep) if k]
    cols = [(idx == b).astype(float) for b in shared] + [((idx == b) & (arm == 1)).astype(float) for b in shared]
    names = [f"bin{b}" for b in shared] + [f"gap{b}" for b in shared]
    fit = ols_clustered(y, np.column_stack(cols), clusters, names)
    out = []
    for b in binning.bins:
        n_a = int(((idx == b.index) & (arm == 1)).sum())
        n_b = int(((idx == b.index) & (arm == 0)).sum())
        if b.index in shared:
            est, se = fit.coef(f"gap{b.index}"), fit.se_of(f"gap{b.index}")
        else:
            est, se = math.nan, math.nan
        out.append(BinGap(b.index, b.low / 100, b.high / 100, est, se, n_a, n_b))
    return out


# ---------------------------------------------------------------------- margins


def _by_spectator(dataset: Dataset) -> dict[str, list[DecisionRecord]]:
    groups: dict[str, list[DecisionRecord]] = defaultdict(list)
    for r in dataset:
        groups[r.spectator_id].append(r)
    return groups


@dataclass(frozen=True)
class ExtensiveMargin:
    share_never: float
    se: float
    n_spectators: int


def extensive_margin(dataset: Dataset) -> ExtensiveMargin:
    """Share of spectators who redistribute nothing in any of their 12 rounds."""
    _require(dataset, "extensive_margin")
    groups = _by_spectator(dataset)
    for sid, recs in groups.items():
        if sorted(r.round for r in recs) != list(range(1, N_DECISIONS + 1)):
            raise ContractError(f"spectator {sid!r} does not have a complete {N_DECISIONS}-round session")
    flags = np.asarray([all(r.r == 0 for r in recs) for recs in groups.values()], dtype=float)
    p = float(flags.mean())
    return ExtensiveMargin(p, math.sqrt(p * (1 - p) / flags.size), flags.size)


def positive_redistributors(dataset: Dataset) -> list[DecisionRecord]:
    """Records of spectators who redistribute a strictly positive amount at least once."""
    groups = _by_spectator(dataset)
    keep = {sid for sid, recs in groups.items() if any(r.r > 0 for r in recs)}
    return [r for r in dataset if r.spectator_id in keep]


def intensive_margin(dataset: Dataset) -> RegressionFit:
    """Elasticity fit restricted to spectators who ever redistribute."""
    subset = positive_redistributors(dataset)
    if not subset:
        raise ContractError("no spectator redistributes a positive amount")
    return elasticity_fit(subset)


# --------------------------------------------------------------------- residuals


def residualize_on_pi(dataset: Dataset) -> np.ndarray:
    """Residuals of the elasticity regression plus the unconditional mean of ``r``."""
    _require(dataset, "residualize_on_pi")
    y = _col(dataset, "r")
    luck = 1.0 - _col(dataset, "pi_true")
    X = np.column_stack([np.ones(y.size), luck])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return y - X @ beta + y.mean()


# -------------------------------------------------------------- feature models


def feature_regressions(dataset: Dataset) -> dict[str, RegressionFit]:
    """Redistribution on the multiplier difference, the ratio, and both (opportunity data)."""
    ds = [r for r in dataset if r.m_w is not None and r.m_l is not None]
    _require(ds, "feature_regressions")
    r = _col(ds, "r")
    diff = _col(ds, "m_w") - _col(ds, "m_l")
    ratio = _col(ds, "m_w") / _col(ds, "m_l")
    one = np.ones(len(ds))
    cl = _clusters(ds)
    return {
        "difference": ols_clustered(r, np.column_stack([one, diff]), cl, ("const", "difference")),
        "ratio": ols_clustered(r, np.column_stack([one, ratio]), cl, ("const", "ratio")),
        "both": ols_clustered(r, np.column_stack([one, diff, ratio]), cl, ("const", "difference", "ratio")),
    }


# ------------------------------------------------------------ effort accounting


@dataclass(frozen=True)
class GapDecomposition:
    total_gap: float
    accounted_by_effort_gap: float
    elasticity_per_encryption: float
    mean_effort_gap_difference: float

    def to_dict(self) -> dict:
        return {
            "total_gap": self.total_gap,
            "accounted_by_effort_gap": self.accounted_by_effort_gap,
            "elasticity_per_encryption": self.elasticity_per_encryption,
            "mean_effort_gap_difference": self.mean_effort_gap_difference,
        }


def effort_gap_accounting(
    ds_a: Dataset, ds_b: Dataset, elasticity: float | None = None
) -> GapDecomposition:
    """How much of the redistribution gap ``a - b`` the winner-loser effort gap can explain.

    The pooled elasticity of ``r`` to ``effort_w - effort_l`` (estimated unless
    supplied) times the difference in mean effort gaps between the arms.
    """
    _require(ds_a, "effort_gap_accounting")
    _require(ds_b, "effort_gap_accounting")
    gap_a = _col(ds_a, "effort_w") - _col(ds_a, "effort_l")
    gap_b = _col(ds_b, "effort_w") - _col(ds_b, "effort_l")
    if elasticity is None:
        gaps = np.concatenate([gap_a, gap_b])
        y = np.concatenate([_col(ds_a, "r"), _col(ds_b, "r")])
        X = np.column_stack([np.ones(y.size), gaps])
        fit = ols_clustered(y, X, _clusters(ds_a, "a:") + _clusters(ds_b, "b:"), ("const", "effort_gap"))
        elasticity = fit.coef("effort_gap")
    diff = float(gap_a.mean() - gap_b.mean())
    total = float(_col(ds_a, "r").mean() - _col(ds_b, "r").mean())
    return GapDecomposition(total, float(elasticity) * diff, float(elasticity), diff)


# ---------------------------------------------------------------------- export


def write_bin_table(rows: Sequence[BinEstimate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "low", "high", "estimate", "se", "n"])
        for r in rows:
            writer.writerow([r.bin, repr(r.low), repr(r.high), repr(r.estimate), repr(r.se), r.n])


def write_gap_table(rows: Sequence[BinGap], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "low", "high", "estimate", "se", "n_a", "n_b"])
        for r in rows:
            writer.writerow([r.bin, repr(r.low), repr(r.high), repr(r.estimate), repr(r.se), r.n_a, r.n_b])
