"""Spectator decision rules.

A spectator with fair share ``f`` who believes the winner out-performed the
loser with probability ``pi`` minimises expected quadratic loss
``-pi (r - f)^2 - (1 - pi)(r - (1 - f))^2``, which gives
``r* = pi f + (1 - pi)(1 - f)``. Heuristic spectators skip the inference and
respond linearly to what they see (the coin-flip chance, or the multiplier
difference). Choices are snapped to the $0.50 grid on a $5 prize.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Literal, Sequence

import numpy as np

from meritluck.errors import ContractError, DomainError, ParameterError
from meritluck.meritprob import PiCurve, pi_from_q

Policy = Literal["bayesian", "heuristic_outcomes", "heuristic_opportunities", "never"]
POLICIES: tuple[str, ...] = ("bayesian", "heuristic_outcomes", "heuristic_opportunities", "never")

REDISTRIBUTION_GRID: tuple[float, ...] = tuple(k / 10 for k in range(11))

# merit-certain redistribution and plateau under outcome luck, multiplier-difference slope
OUTCOMES_INTERCEPT = 0.131
OUTCOMES_PLATEAU = 0.345
OUTCOMES_Q_KINK = 0.55
OPPORTUNITIES_INTERCEPT = 0.179
OPPORTUNITIES_SLOPE = 0.04


def _clamp(x: float, lo: float = 0.0, hi: float = 0.5) -> float:
    return lo if x < lo else hi if x > hi else x


def optimal_redistribution(f: float, pi: float) -> float:
    if not 0.0 <= f <= 0.5:
        raise DomainError(f"fair share must lie in [0, 0.5], got {f}")
    if not 0.5 <= pi <= 1.0:
        raise DomainError(f"merit probability must lie in [0.5, 1], got {pi}")
    return pi * f + (1.0 - pi) * (1.0 - f)


def heuristic_opportunities(a0: float, a1: float, m_w: float, m_l: float) -> float:
    return _clamp(a0 + a1 * (m_w - m_l))


def heuristic_outcomes(c0: float, c1: float, q_kink: float, q: float) -> float:
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"coin-flip chance must lie in [0, 1], got {q}")
    return _clamp(c0 + c1 * min(q, q_kink))


def default_outcomes_slope(c0: float = OUTCOMES_INTERCEPT, plateau: float = OUTCOMES_PLATEAU,
                           q_kink: float = OUTCOMES_Q_KINK) -> float:
    return (plateau - c0) / q_kink


def snap_to_grid(r: float, grid: Sequence[float] = REDISTRIBUTION_GRID) -> float:
    """Nearest grid level; exact midpoints move toward the equal split 0.5."""
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"redistribution share must lie in [0, 1], got {r}")
    levels = np.asarray(grid, dtype=float)
    gaps = np.abs(levels - r)
    best = gaps.min()
    tied = levels[gaps <= best + 1e-9]
    return float(tied[np.argmin(np.abs(tied - 0.5))])


@dataclass(frozen=True)
class DecisionFeatures:
    env: Literal["outcome", "opportunity"]
    q: float | None = None
    m_w: float | None = None
    m_l: float | None = None
    pi_disclosed: float | None = None

    def __post_init__(self) -> None:
        if self.env == "outcome":
            if self.q is None or self.m_w is not None or self.m_l is not None:
                raise ContractError("outcome features carry q and no multipliers")
        elif self.env == "opportunity":
            if self.q is not None or self.m_w is None or self.m_l is None:
                raise ContractError("opportunity features carry (m_w, m_l) and no q")
        else:
            raise ContractError(f"unknown feature environment {self.env!r}")
        if self.pi_disclosed is not None and not 0.5 <= self.pi_disclosed <= 1.0:
            raise ContractError(f"disclosed merit probability must lie in [0.5, 1], got {self.pi_disclosed}")

    def disclose(self, pi: float) -> DecisionFeatures:
        return replace(self, pi_disclosed=pi)


@dataclass(frozen=True)
class SpectatorModel:
    """One spectator. ``intercept``/``slope`` parametrise the heuristic policies."""

    id: str
    policy: Policy
    informed: bool = False
    fair_share: float | None = None
    intercept: float | None = None
    slope: float | None = None
    q_kink: float | None = None

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ParameterError(f"unknown policy {self.policy!r}")
        if self.policy == "bayesian":
            f = OUTCOMES_INTERCEPT if self.fair_share is None else self.fair_share
            if not 0.0 <= f <= 0.5:
                raise ParameterError(f"fair share must lie in [0, 0.5], got {f}")
            object.__setattr__(self, "fair_share", f)
        elif self.policy == "heuristic_outcomes":
            c0 = OUTCOMES_INTERCEPT if self.intercept is None else self.intercept
            kink = OUTCOMES_Q_KINK if self.q_kink is None else self.q_kink
            if not 0 < kink <= 1:
                raise ParameterError(f"heuristic_outcomes needs 0 < q_kink <= 1, got {kink}")
            c1 = default_outcomes_slope(c0, OUTCOMES_PLATEAU, kink) if self.slope is None else self.slope
            if not math.isfinite(c1):
                raise ParameterError("heuristic_outcomes needs a finite slope")
            object.__setattr__(self, "intercept", c0)
            object.__setattr__(self, "slope", c1)
            object.__setattr__(self, "q_kink", kink)
        elif self.policy == "heuristic_opportunities":
            a0 = OPPORTUNITIES_INTERCEPT if self.intercept is None else self.intercept
            a1 = OPPORTUNITIES_SLOPE if self.slope is None else self.slope
            if not (math.isfinite(a0) and math.isfinite(a1)):
                raise ParameterError("heuristic_opportunities needs finite parameters")
            object.__setattr__(self, "intercept", a0)
            object.__setattr__(self, "slope", a1)

    @property
    def effective_fair_share(self) -> float:
        """Fair share used once the merit probability is disclosed."""
        if self.policy == "bayesian":
            return self.fair_share
        if self.policy == "never":
            return 0.0
        return _clamp(self.intercept)

    def to_dict(self) -> dict[str, Any]:
        params = {k: v for k, v in (("fair_share", self.fair_share), ("intercept", self.intercept),
                                    ("slope", self.slope), ("q_kink", self.q_kink)) if v is not None}
        return {"id": self.id, "policy": self.policy, "parameters": params, "informed": self.informed}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SpectatorModel:
        return cls(d["id"], d["policy"], bool(d.get("informed", False)), **d.get("parameters", {}))


def _believed_pi(model: SpectatorModel, features: DecisionFeatures, pi_true: float, curve: PiCurve | None) -> float:
    if features.env == "outcome":
        return pi_from_q(features.q)
    if features.m_w <= features.m_l:
        return 1.0
    if curve is not None:
        return curve.lookup(features.m_w / features.m_l)
    return pi_true


def decide(
    model: SpectatorModel, features: DecisionFeatures, pi_true: float, curve: PiCurve | None = None
) -> float:
    """Redistribution share on the grid for one decision.

    Uninformed Bayesian spectators in opportunity environments read the merit
    probability off ``curve`` when given, otherwise they are assumed to know
    ``pi_true``.
    """
    if model.policy == "never":
        return 0.0
    if model.informed:
        if features.pi_disclosed is None:
            raise ContractError(f"informed spectator {model.id!r} needs a disclosed merit probability")
        return snap_to_grid(optimal_redistribution(model.effective_fair_share, features.pi_disclosed))
    if model.policy == "bayesian":
        pi = _believed_pi(model, features, pi_true, curve)
        return snap_to_grid(optimal_redistribution(model.fair_share, pi))
    if model.policy == "heuristic_outcomes":
        if features.env != "outcome":
            raise ContractError("heuristic_outcomes spectators need outcome features")
        return snap_to_grid(heuristic_outcomes(model.intercept, model.slope, model.q_kink, features.q))
    if features.env != "opportunity":
        raise ContractError("heuristic_opportunities spectators need opportunity features")
    return snap_to_grid(heuristic_opportunities(model.intercept, model.slope, features.m_w, features.m_l))


# ---------------------------------------------------------------------- mixtures


@dataclass(frozen=True)
class ParamDist:
    """Normal draw clipped to ``[low, high]``; ``sd == 0`` gives a constant."""

    mean: float
    sd: float = 0.0
    low: float = -math.inf
    high: float = math.inf

    def __post_init__(self) -> None:
        if self.sd < 0 or self.low > self.high:
            raise ParameterError("parameter distribution needs sd >= 0 and low <= high")

    def draw(self, rng: np.random.Generator) -> float:
        x = self.mean if self.sd == 0 else rng.normal(self.mean, self.sd)
        return float(min(self.high, max(self.low, x)))

    def to_dict(self) -> dict[str, float]:
        return {k: v for k, v in asdict(self).items() if math.isfinite(v)}

    @classmethod
    def coerce(cls, v) -> ParamDist:
        if isinstance(v, ParamDist):
            return v
        if isinstance(v, (int, float)):
            return cls(float(v))
        return cls(**v)


@dataclass(frozen=True)
class SpectatorMixture:
    never: float
    heuristic: float
    bayesian: float
    heuristic_policy: Literal["heuristic_outcomes", "heuristic_opportunities"] = "heuristic_outcomes"
    informed: bool = False
    fair_share: ParamDist = ParamDist(OUTCOMES_INTERCEPT)
    intercept: ParamDist | None = None
    slope: ParamDist | None = None
    q_kink: ParamDist = ParamDist(OUTCOMES_Q_KINK)

    def __post_init__(self) -> None:
        shares = (self.never, self.heuristic, self.bayesian)
        if any(s < 0 for s in shares) or not math.isclose(sum(shares), 1.0, abs_tol=1e-9):
            raise ParameterError(f"mixture shares must be nonnegative and sum to 1, got {shares}")
        if self.heuristic_policy not in ("heuristic_outcomes", "heuristic_opportunities"):
            raise ParameterError(f"unknown heuristic policy {self.heuristic_policy!r}")
        for name in ("fair_share", "intercept", "slope", "q_kink"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, ParamDist.coerce(v))
        if self.fair_share.low < 0 or self.fair_share.high > 0.5:
            object.__setattr__(
                self, "fair_share",
                replace(self.fair_share, low=max(0.0, self.fair_share.low), high=min(0.5, self.fair_share.high)),
            )

    def with_informed(self, informed: bool = True) -> SpectatorMixture:
        return replace(self, informed=informed)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "shares": {"never": self.never, "heuristic": self.heuristic, "bayesian": self.bayesian},
            "heuristic_policy": self.heuristic_policy,
            "informed": self.informed,
        }
        for name in ("fair_share", "intercept", "slope", "q_kink"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SpectatorMixture:
        d = dict(d)
        shares = d.pop("shares", None)
        if shares is not None:
            d.update(shares)
        return cls(**d)


def _heuristic_defaults(policy: str) -> tuple[ParamDist, ParamDist]:
    if policy == "heuristic_outcomes":
        return ParamDist(OUTCOMES_INTERCEPT), ParamDist(default_outcomes_slope())
    return ParamDist(OPPORTUNITIES_INTERCEPT), ParamDist(OPPORTUNITIES_SLOPE)


def sample_spectator_population(
    mixture: SpectatorMixture, n: int, seed, id_prefix: str = "s"
) -> list[SpectatorModel]:
    if n < 1:
        raise ParameterError(f"need at least one spectator, got {n}")
    rng = np.random.default_rng(seed)
    kinds = rng.choice(3, size=n, p=[mixture.never, mixture.heuristic, mixture.bayesian])
    icpt_default, slope_default = _heuristic_defaults(mixture.heuristic_policy)
    icpt = mixture.intercept or icpt_default
    slope = mixture.slope or slope_default
    width = max(4, len(str(n)))
    out = []
    for k, kind in enumerate(kinds):
        sid = f"{id_prefix}{k:0{width}d}"
        if kind == 0:
            out.append(SpectatorModel(sid, "never", mixture.informed))
        elif kind == 1:
            kw: dict[str, float] = {"intercept": icpt.draw(rng), "slope": slope.draw(rng)}
            if mixture.heuristic_policy == "heuristic_outcomes":
                kw["q_kink"] = mixture.q_kink.draw(rng)
            out.append(SpectatorModel(sid, mixture.heuristic_policy, mixture.informed, **kw))
        else:
            out.append(SpectatorModel(sid, "bayesian", mixture.informed, fair_share=mixture.fair_share.draw(rng)))
    return out


def roster_to_json(models: Sequence[SpectatorModel]) -> str:
    return json.dumps([m.to_dict() for m in models], indent=2)


def roster_from_json(text: str) -> list[SpectatorModel]:
    return [SpectatorModel.from_dict(d) for d in json.loads(text)]
