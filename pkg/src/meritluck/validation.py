"""Fast self-checks behind ``meritluck validate``.

Each check exercises one structural property on small inputs and returns
``(passed, detail)``. The full suites live in the test tree.
"""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from meritluck.agents import DecisionFeatures, SpectatorModel, decide, optimal_redistribution
from meritluck.calibration import outcomes_mixture
from meritluck.econometrics import ols_clustered, residualize_on_pi
from meritluck.effort import DEFAULT_EFFORT, LogNormal, Uniform, sample_population
from meritluck.environments import opportunity_luck, outcome_luck, resolve_outcome_batch
from meritluck.meritprob import (
    analytic_pi_curve,
    check_convexity,
    check_logconcavity,
    pi_analytic,
    pi_curve,
    pi_empirical,
)
from meritluck.experiment import export_dataset, generate_design, import_dataset, run_study

Check = Callable[[], tuple[bool, str]]


def _q_law() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = 0.0
    for q in np.linspace(0, 1, 11):
        e = rng.lognormal(0, 0.3, size=(20_000, 2))
        a_wins, _ = resolve_outcome_batch(e[:, 0], e[:, 1], q, rng)
        best_loses = np.where(a_wins, e[:, 0] < e[:, 1], e[:, 1] < e[:, 0]).mean()
        worst = max(worst, abs(best_loses - q / 2))
    return worst <= 0.02, f"max |Pr(best loses) - q/2| = {worst:.4f}"


def _enumeration() -> tuple[bool, str]:
    dist = LogNormal(0.0, 0.3)
    pop = sample_population(dist, 300, 5)
    pi, n = pi_empirical(pop, 2.0)
    gap = abs(pi - pi_analytic(dist, 2.0))
    return n == 300 * 299 and gap <= 0.05, f"n_obs={n}, |empirical - analytic|={gap:.4f}"


def _convexity() -> tuple[bool, str]:
    ok = True
    for dist in (LogNormal(0.0, 0.3), Uniform(1.0)):
        curve = analytic_pi_curve(dist)
        ok &= check_convexity(curve).passed
        ok &= check_logconcavity(dist, curve.advantages[1:]).passed
    return ok, "analytic curves decreasing and convex"


def _agents() -> tuple[bool, str]:
    ok = all(optimal_redistribution(f, 1.0) == f and optimal_redistribution(f, 0.5) == 0.5
             for f in np.linspace(0, 0.5, 11))
    h = SpectatorModel("h", "heuristic_opportunities")
    base = decide(h, DecisionFeatures("opportunity", m_w=2.5, m_l=1.5), 0.6)
    shifted = decide(h, DecisionFeatures("opportunity", m_w=3.0, m_l=2.0), 0.6)
    return ok and base == shifted, "Bayesian corner cases exact, heuristic shift invariant"


def _ols() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    x = rng.normal(size=60)
    y = 1 + 2 * x + rng.normal(size=60)
    X = np.column_stack([np.ones(60), x])
    cl = np.repeat(np.arange(12), 5)
    fit = ols_clustered(y, X, cl)
    perm = rng.permutation(60)
    fit_p = ols_clustered(y[perm], X[perm], cl[perm])
    same = np.allclose(fit.coefficients, fit_p.coefficients, atol=1e-12) and np.allclose(
        fit.covariance, fit_p.covariance, atol=1e-12)
    return same, "clustered OLS permutation invariant"


def _pipeline() -> tuple[bool, str]:
    pop = sample_population(DEFAULT_EFFORT, 200, 1)
    curve = pi_curve(pop)
    design = generate_design(opportunity_luck(), pop, curve, 4)
    bins_ok = sorted(d.bin_index for d in design.decisions) == list(range(1, 13))
    ds = run_study(outcomes_mixture(), outcome_luck(), pop, 20, 9)
    res = residualize_on_pi(ds)
    luck = 1 - np.asarray([r.pi_true for r in ds])
    orth = abs(float(np.dot(res - res.mean(), luck - luck.mean()))) < 1e-9
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "d.csv"
        export_dataset(ds, p)
        round_trip = import_dataset(p) == ds
    return bins_ok and orth and round_trip, "design bins, residual orthogonality, CSV round trip"


CHECKS: dict[str, Check] = {
    "coin-flip law": _q_law,
    "pair enumeration": _enumeration,
    "convexity": _convexity,
    "agent rules": _agents,
    "clustered OLS": _ols,
    "pipeline": _pipeline,
}


def run_checks(verbose: bool = False) -> bool:
    all_ok = True
    for name, check in CHECKS.items():
        ok, detail = check()
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
