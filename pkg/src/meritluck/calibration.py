"""Default spectator mixtures for the outcomes and opportunities arms.

Never-redistributor shares are taken as given. The remaining spectators split
between a heuristic and a Bayesian type, with parameter spreads tuned by
simulation so that the arm-level elasticity, mean redistribution and the
intensive-margin mean land on the reported aggregates:

    arm            never   slope   mean r among redistributors
    outcomes       0.096   0.37    0.307
    opportunities  0.159   0.20    0.280
"""

from __future__ import annotations

from meritluck.agents import OUTCOMES_INTERCEPT, OUTCOMES_Q_KINK, ParamDist, SpectatorMixture

NEVER_OUTCOMES = 0.096
NEVER_OPPORTUNITIES = 0.159


def _split(never: float, heuristic_weight: float) -> tuple[float, float, float]:
    rest = 1.0 - never
    h = round(rest * heuristic_weight, 12)
    return never, h, round(rest - h, 12)


def outcomes_mixture(informed: bool = False) -> SpectatorMixture:
    never, h, b = _split(NEVER_OUTCOMES, 0.5)
    return SpectatorMixture(
        never, h, b,
        heuristic_policy="heuristic_outcomes",
        informed=informed,
        fair_share=ParamDist(0.25, 0.10, 0.0, 0.5),
        intercept=ParamDist(OUTCOMES_INTERCEPT, 0.08, 0.0, 0.5),
        slope=ParamDist(0.30, 0.15, 0.0, 2.0),
        q_kink=ParamDist(OUTCOMES_Q_KINK),
    )


def opportunities_mixture(informed: bool = False) -> SpectatorMixture:
    # intercept: the pooled 0.179 rescaled to spectators who redistribute
    never, h, b = _split(NEVER_OPPORTUNITIES, 0.7)
    return SpectatorMixture(
        never, h, b,
        heuristic_policy="heuristic_opportunities",
        informed=informed,
        fair_share=ParamDist(0.30, 0.10, 0.0, 0.5),
        intercept=ParamDist(0.213, 0.08, 0.0, 0.5),
        slope=ParamDist(0.03, 0.03, 0.0, 1.0),
    )


def default_mixture(env_kind: str, informed: bool = False) -> SpectatorMixture:
    if env_kind == "outcome":
        return outcomes_mixture(informed)
    if env_kind == "opportunity":
        return opportunities_mixture(informed)
    raise ValueError(f"no default mixture for {env_kind!r} environments")
