"""Luck mechanisms that turn a pair of workers into a winner and a loser.

Every resolver consumes a fixed number of uniforms from the generator it is
given, whichever branch is taken, so scalar and batch resolution stay in
lock-step on the same stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from meritluck.effort import WorkerPopulation
from meritluck.errors import DatasetParseError, DomainError, InvalidPopulationError, ParameterError

EnvKind = Literal["outcome", "opportunity", "headstart"]
Timing = Literal["ex_ante", "ex_post"]
Disclosure = Literal["before", "after"]

_TIE_RTOL = 1e-12


def round_tenth(x):
    """Round half-up onto the 0.1 grid."""
    return np.round(np.floor(np.asarray(x, dtype=float) * 10.0 + 0.5) / 10.0, 1)


def compare_scores(a: float, b: float) -> int:
    """Return 1 if a > b, -1 if a < b, 0 on a tie (relative tolerance absorbs float noise)."""
    if abs(a - b) <= _TIE_RTOL * max(abs(a), abs(b), 1.0):
        return 0
    return 1 if a > b else -1


@dataclass(frozen=True)
class MultiplierModel:
    """Point masses at ``low`` and ``high`` plus a uniform middle, rounded to tenths.

    Rounding the uniform part puts (low, low + 0.05) on ``low`` and
    [high - 0.05, high) on ``high``, so the endpoint masses come out slightly
    above ``p_low`` / ``p_high``.
    """

    low: float = 1.0
    high: float = 4.0
    p_low: float = 0.05
    p_high: float = 0.05

    def __post_init__(self) -> None:
        if not (0 < self.low < self.high):
            raise ParameterError("multiplier bounds must satisfy 0 < low < high")
        if min(self.p_low, self.p_high) < 0 or self.p_low + self.p_high > 1:
            raise ParameterError("point-mass probabilities must be nonnegative and sum to at most 1")
        for v in (self.low, self.high):
            if abs(v * 10 - round(v * 10)) > 1e-9:
                raise ParameterError("multiplier bounds must lie on the 0.1 grid")

    @property
    def p_uniform(self) -> float:
        return 1.0 - self.p_low - self.p_high

    def grid(self) -> np.ndarray:
        k_lo, k_hi = round(self.low * 10), round(self.high * 10)
        return np.round(np.arange(k_lo, k_hi + 1) / 10.0, 1)

    def pmf(self) -> np.ndarray:
        """Probability of each ``grid()`` value."""
        g = self.grid()
        lo = np.clip(g - 0.05, self.low, self.high)
        hi = np.clip(g + 0.05, self.low, self.high)
        p = self.p_uniform * (hi - lo) / (self.high - self.low)
        p[0] += self.p_low
        p[-1] += self.p_high
        return p

    def sample(self, rng: np.random.Generator, size: int | None = None):
        n = 1 if size is None else size
        u = rng.random(n)
        middle = round_tenth(rng.uniform(self.low, self.high, n))
        out = np.where(u < self.p_low, self.low, np.where(u < self.p_low + self.p_high, self.high, middle))
        out = np.clip(out, self.low, self.high)
        return float(out[0]) if size is None else out


def sample_multiplier(model: MultiplierModel, rng: np.random.Generator) -> float:
    return model.sample(rng)


@dataclass(frozen=True)
class LuckEnvironment:
    kind: EnvKind
    q: float | None = None
    multipliers: MultiplierModel = MultiplierModel()
    timing: Timing = "ex_ante"
    headstart_support: tuple[int, ...] = ()
    rules_disclosure: Disclosure = "before"

    def __post_init__(self) -> None:
        if self.kind not in ("outcome", "opportunity", "headstart"):
            raise ParameterError(f"unknown environment kind {self.kind!r}")
        if self.q is not None and not 0.0 <= self.q <= 1.0:
            raise DomainError(f"coin-flip chance must lie in [0, 1], got {self.q}")
        if self.kind == "headstart":
            if not self.headstart_support:
                raise ParameterError("headstart support must be nonempty")
            if any(b < 0 for b in self.headstart_support):
                raise ParameterError("headstarts must be nonnegative")
        if self.timing not in ("ex_ante", "ex_post"):
            raise ParameterError(f"unknown timing {self.timing!r}")
        if self.rules_disclosure not in ("before", "after"):
            raise ParameterError(f"unknown rules disclosure {self.rules_disclosure!r}")

    def with_q(self, q: float) -> LuckEnvironment:
        return replace(self, q=q)


def outcome_luck(q: float | None = None, rules_disclosure: Disclosure = "before") -> LuckEnvironment:
    return LuckEnvironment("outcome", q=q, rules_disclosure=rules_disclosure)


def opportunity_luck(
    model: MultiplierModel | None = None, timing: Timing = "ex_ante", rules_disclosure: Disclosure = "before"
) -> LuckEnvironment:
    return LuckEnvironment(
        "opportunity", multipliers=model or MultiplierModel(), timing=timing, rules_disclosure=rules_disclosure
    )


def headstart_luck(support: Sequence[int]) -> LuckEnvironment:
    return LuckEnvironment("headstart", headstart_support=tuple(int(b) for b in support))


@dataclass(frozen=True)
class MatchRecord:
    winner_id: str
    loser_id: str
    effort_w: float
    effort_l: float
    advantage_w: float | None = None
    advantage_l: float | None = None
    q_used: float | None = None
    coin_flip_occurred: bool | None = None
    # an exact score (or effort) tie was settled by a fair coin
    tie_break: bool = False
    pi_true: float | None = None

    def __post_init__(self) -> None:
        if self.winner_id == self.loser_id:
            raise InvalidPopulationError("a worker cannot be matched with itself")

    @property
    def merit_flag(self) -> bool:
        return self.effort_w >= self.effort_l

    def with_pi(self, pi: float) -> MatchRecord:
        return replace(self, pi_true=pi)


def _order(a_wins: bool, e_a, e_b, id_a, id_b, adv_a=None, adv_b=None, **extra) -> MatchRecord:
    if a_wins:
        return MatchRecord(id_a, id_b, e_a, e_b, adv_a, adv_b, **extra)
    return MatchRecord(id_b, id_a, e_b, e_a, adv_b, adv_a, **extra)


def resolve_outcome_match(
    e_a: float, e_b: float, q: float, rng: np.random.Generator, *, id_a: str = "a", id_b: str = "b"
) -> MatchRecord:
    """With chance ``q`` a fair coin picks the winner, otherwise higher effort wins."""
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"coin-flip chance must lie in [0, 1], got {q}")
    u_coin, u_flip = rng.random(2)
    coin = bool(u_coin < q)
    cmp = compare_scores(e_a, e_b)
    if coin or cmp == 0:
        a_wins = bool(u_flip < 0.5)
    else:
        a_wins = cmp > 0
    return _order(a_wins, e_a, e_b, id_a, id_b, q_used=q, coin_flip_occurred=coin, tie_break=(not coin and cmp == 0))


def resolve_outcome_batch(e_a: np.ndarray, e_b: np.ndarray, q: float, rng: np.random.Generator):
    """Vectorised :func:`resolve_outcome_match`; returns ``(a_wins, coin_flip)`` arrays."""
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"coin-flip chance must lie in [0, 1], got {q}")
    e_a = np.asarray(e_a, dtype=float)
    e_b = np.asarray(e_b, dtype=float)
    u = rng.random((e_a.size, 2))
    coin = u[:, 0] < q
    tie = np.abs(e_a - e_b) <= _TIE_RTOL * np.maximum(np.maximum(np.abs(e_a), np.abs(e_b)), 1.0)
    flip = u[:, 1] < 0.5
    a_wins = np.where(coin | tie, flip, e_a > e_b)
    return a_wins, coin


def _resolve_scored(score_a, score_b, rng, e_a, e_b, id_a, id_b, adv_a, adv_b) -> MatchRecord:
    (u_flip,) = rng.random(1)
    cmp = compare_scores(score_a, score_b)
    a_wins = bool(u_flip < 0.5) if cmp == 0 else cmp > 0
    return _order(a_wins, e_a, e_b, id_a, id_b, adv_a, adv_b, tie_break=(cmp == 0))


def resolve_opportunity_match(
    e_a: float, m_a: float, e_b: float, m_b: float, rng: np.random.Generator, *, id_a: str = "a", id_b: str = "b"
) -> MatchRecord:
    """Higher score ``multiplier * effort`` wins; exact ties go to a fair coin."""
    if not (m_a > 0 and m_b > 0):
        raise DomainError(f"multipliers must be positive, got {m_a}, {m_b}")
    return _resolve_scored(m_a * e_a, m_b * e_b, rng, e_a, e_b, id_a, id_b, m_a, m_b)


def resolve_headstart_match(
    e_a: float, b_a: float, e_b: float, b_b: float, rng: np.random.Generator, *, id_a: str = "a", id_b: str = "b"
) -> MatchRecord:
    """Higher score ``effort + headstart`` wins; exact ties go to a fair coin."""
    if b_a < 0 or b_b < 0:
        raise DomainError(f"headstarts must be nonnegative, got {b_a}, {b_b}")
    return _resolve_scored(e_a + b_a, e_b + b_b, rng, e_a, e_b, id_a, id_b, b_a, b_b)


def pair_all(population: WorkerPopulation, env: LuckEnvironment, seed) -> list[MatchRecord]:
    """Randomly pair the population (odd worker out) and resolve every pair under ``env``."""
    if len(population) < 2:
        raise InvalidPopulationError("population needs at least 2 workers")
    rng = np.random.default_rng(seed)
    workers = population.workers
    order = rng.permutation(len(workers))
    n_pairs = len(workers) // 2
    if env.kind == "outcome":
        if env.q is None:
            raise ParameterError("outcome environment needs a coin-flip chance q to pair workers")
        advantages = None
    elif env.kind == "opportunity":
        advantages = env.multipliers.sample(rng, len(workers))
    else:
        advantages = rng.choice(np.asarray(env.headstart_support), size=len(workers))
    records = []
    for k in range(n_pairs):
        i, j = int(order[2 * k]), int(order[2 * k + 1])
        wa, wb = workers[i], workers[j]
        if env.kind == "outcome":
            rec = resolve_outcome_match(wa.effort, wb.effort, env.q, rng, id_a=wa.id, id_b=wb.id)
        elif env.kind == "opportunity":
            rec = resolve_opportunity_match(
                wa.effort, float(advantages[i]), wb.effort, float(advantages[j]), rng, id_a=wa.id, id_b=wb.id
            )
        else:
            rec = resolve_headstart_match(
                wa.effort, int(advantages[i]), wb.effort, int(advantages[j]), rng, id_a=wa.id, id_b=wb.id
            )
        records.append(rec)
    return records


MATCH_COLUMNS = ["match_id", "winner_id", "loser_id", "effort_w", "effort_l", "adv_w", "adv_l", "q", "coin_flip", "merit_flag"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(v) if isinstance(v, float) else str(v)


def write_matches(records: Sequence[MatchRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MATCH_COLUMNS)
        for k, r in enumerate(records):
            writer.writerow(
                [k, r.winner_id, r.loser_id, _fmt(r.effort_w), _fmt(r.effort_l), _fmt(r.advantage_w),
                 _fmt(r.advantage_l), _fmt(r.q_used), _fmt(r.coin_flip_occurred), _fmt(r.merit_flag)]
            )


def read_matches(path: str | Path) -> list[MatchRecord]:
    def num(s: str):
        if s == "":
            return None
        return int(s) if s.lstrip("-").isdigit() else float(s)

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MATCH_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetParseError("missing column", column=missing[0], row=1)
        for row_no, row in enumerate(reader, start=2):
            try:
                coin = row["coin_flip"]
                out.append(
                    MatchRecord(
                        row["winner_id"], row["loser_id"], num(row["effort_w"]), num(row["effort_l"]),
                        num(row["adv_w"]), num(row["adv_l"]), num(row["q"]),
                        None if coin == "" else coin == "1",
                    )
                )
            except (ValueError, InvalidPopulationError) as exc:
                raise DatasetParseError(str(exc), row=row_no) from None
    return out
