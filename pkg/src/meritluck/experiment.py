"""Session designs and simulated spectator studies.

Each spectator faces 12 decisions, one per merit-probability bin, shown in a
random order. A target probability is turned into the feature the spectator
sees (a coin-flip chance or a multiplier pair) and then into a concrete,
mechanically consistent worker pair by rejection sampling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from meritluck.agents import DecisionFeatures, SpectatorMixture, SpectatorModel, decide, sample_spectator_population
from meritluck.effort import WorkerPopulation
from meritluck.environments import LuckEnvironment, MatchRecord, resolve_opportunity_match, resolve_outcome_match
from meritluck.errors import DatasetParseError, DesignError, InversionError, ParameterError
from meritluck.meritprob import (
    PiBinning,
    PiCurve,
    draw_pi_per_bin,
    invert_pi_to_multipliers,
    invert_pi_to_pair,
    pi_curve,
    q_from_pi,
    standard_bins,
)

MAX_PAIR_ATTEMPTS = 10_000
N_DECISIONS = 12


@dataclass(frozen=True)
class DesignDecision:
    round: int
    bin_index: int
    pi_target: float
    features: DecisionFeatures
    match: MatchRecord
    pi_true: float
    # multiplier ratio picked by the inversion (opportunity designs only)
    ratio: float | None = None


@dataclass(frozen=True)
class SessionDesign:
    spectator_id: str
    env: LuckEnvironment
    decisions: tuple[DesignDecision, ...]

    def __post_init__(self) -> None:
        if len(self.decisions) != N_DECISIONS:
            raise DesignError(f"a session has {N_DECISIONS} decisions, got {len(self.decisions)}")
        if sorted(d.bin_index for d in self.decisions) != list(range(1, N_DECISIONS + 1)):
            raise DesignError("a session must cover every merit-probability bin exactly once")


def env_label(env: LuckEnvironment) -> str:
    return {"outcome": "outcomes", "opportunity": "opportunities", "headstart": "headstarts"}[env.kind]


def _pick_pair(rng: np.random.Generator, n: int) -> tuple[int, int]:
    i, j = rng.choice(n, size=2, replace=False)
    return int(i), int(j)


def _opportunity_pair(population, m_win: float, m_lose: float, rng, bin_index: int, pi_target: float):
    """First random pair in which the worker given ``m_win`` actually wins."""
    workers = population.workers
    for _ in range(MAX_PAIR_ATTEMPTS):
        i, j = _pick_pair(rng, len(workers))
        a, b = workers[i], workers[j]
        rec = resolve_opportunity_match(a.effort, m_win, b.effort, m_lose, rng, id_a=a.id, id_b=b.id)
        if m_win == m_lose or rec.winner_id == a.id:
            return rec
    raise DesignError(
        f"no worker pair realises multipliers ({m_win}, {m_lose}) after {MAX_PAIR_ATTEMPTS} attempts "
        f"(bin {bin_index}, pi target {pi_target})"
    )


def generate_design(
    env: LuckEnvironment,
    population: WorkerPopulation,
    curve: PiCurve | None,
    seed,
    spectator_id: str = "s0000",
    binning: PiBinning | None = None,
    inversion: str = "pairs",
) -> SessionDesign:
    """Draw one merit probability per bin and realise each as a resolved worker pair.

    For the certain-merit bin of an opportunity design, half of the draws use
    equal multipliers and half a winner holding the lower multiplier.

    ``inversion="pairs"`` searches every multiplier pair on the grid for one
    whose ratio gives the target probability; ``"grid"`` uses the nearest ratio
    of the curve's own grid, which cannot produce probabilities strictly
    between the curve values at 1.0 and 1.1.
    """
    if inversion not in ("pairs", "grid"):
        raise DesignError(f"unknown inversion {inversion!r}")
    invert = invert_pi_to_pair if inversion == "pairs" else invert_pi_to_multipliers
    binning = binning or standard_bins()
    rng = np.random.default_rng(seed)
    targets = draw_pi_per_bin(binning, rng)
    workers = population.workers
    drafts = []
    for b, pi in zip(binning.bins, targets):
        ratio = None
        if env.kind == "outcome":
            q = q_from_pi(pi)
            i, j = _pick_pair(rng, len(workers))
            match = resolve_outcome_match(workers[i].effort, workers[j].effort, q, rng,
                                          id_a=workers[i].id, id_b=workers[j].id)
            features = DecisionFeatures("outcome", q=q)
            pi_true = pi
        elif env.kind == "opportunity":
            if curve is None:
                raise DesignError("opportunity designs need a merit-probability curve")
            model = env.multipliers
            if pi >= 1.0 and rng.random() >= 0.5:
                m_a = m_b = 0.0
                while m_a == m_b:
                    m_a, m_b = model.sample(rng), model.sample(rng)
                m_win, m_lose = min(m_a, m_b), max(m_a, m_b)
            else:
                try:
                    m_win, m_lose = invert(pi, curve, model, rng)
                except InversionError as exc:
                    raise DesignError(f"{exc} (bin {b.index}, pi target {pi})") from None
                ratio = m_win / m_lose
            match = _opportunity_pair(population, m_win, m_lose, rng, b.index, pi)
            features = DecisionFeatures("opportunity", m_w=match.advantage_w, m_l=match.advantage_l)
            if match.advantage_w <= match.advantage_l:
                pi_true = 1.0
            else:
                pi_true = curve.lookup(match.advantage_w / match.advantage_l)
        else:
            raise DesignError(f"no session design for {env.kind} environments")
        drafts.append((b.index, pi, features, match.with_pi(pi_true), pi_true, ratio))
    order = rng.permutation(len(drafts))
    decisions = [
        DesignDecision(int(order[k]) + 1, bi, pi, feat, match, pt, ratio)
        for k, (bi, pi, feat, match, pt, ratio) in enumerate(drafts)
    ]
    decisions.sort(key=lambda d: d.round)
    return SessionDesign(spectator_id, env, tuple(decisions))


@dataclass(frozen=True)
class DecisionRecord:
    spectator_id: str
    round: int
    env: str
    timing: str
    informed: bool
    q: float | None
    m_w: float | None
    m_l: float | None
    pi_true: float
    effort_w: float
    effort_l: float
    r: float


DATASET_COLUMNS = [f.name for f in fields(DecisionRecord)]


def run_session(model: SpectatorModel, design: SessionDesign, curve: PiCurve | None = None) -> list[DecisionRecord]:
    env = design.env
    timing = env.timing if env.kind == "opportunity" else ""
    out = []
    for d in design.decisions:
        features = d.features.disclose(d.pi_true) if model.informed else d.features
        r = decide(model, features, d.pi_true, curve)
        out.append(
            DecisionRecord(
                model.id, d.round, env_label(env), timing, model.informed,
                features.q, features.m_w, features.m_l, d.pi_true, d.match.effort_w, d.match.effort_l, r,
            )
        )
    return out


def run_study(
    mixture: SpectatorMixture,
    env: LuckEnvironment,
    population: WorkerPopulation,
    n_spectators: int,
    seed,
    curve: PiCurve | None = None,
    id_prefix: str = "s",
) -> list[DecisionRecord]:
    """Sample spectators, give each an independent design, stack their decisions."""
    if n_spectators < 1:
        raise ParameterError(f"need at least one spectator, got {n_spectators}")
    if env.kind == "opportunity" and curve is None:
        curve = pi_curve(population, "multiplicative")
    roster_seed, design_root = np.random.SeedSequence(seed).spawn(2)
    models = sample_spectator_population(mixture, n_spectators, roster_seed, id_prefix=id_prefix)
    records: list[DecisionRecord] = []
    for model, child in zip(models, design_root.spawn(n_spectators)):
        design = generate_design(env, population, curve, child, spectator_id=model.id)
        records.extend(run_session(model, design, curve))
    records.sort(key=lambda r: (r.spectator_id, r.round))
    return records


# ------------------------------------------------------------------------ CSV io


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_dataset(dataset: Sequence[DecisionRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_COLUMNS)
        for rec in dataset:
            writer.writerow([_fmt(getattr(rec, c)) for c in DATASET_COLUMNS])


def _num(text: str, *, optional: bool = False):
    if text == "":
        if optional:
            return None
        raise ValueError("empty value")
    if text.lstrip("-").isdigit():
        return int(text)
    return float(text)


def import_dataset(path: str | Path) -> list[DecisionRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in DATASET_COLUMNS:
            if col not in header:
                raise DatasetParseError("missing column", column=col, row=1)
        for row_no, row in enumerate(reader, start=2):
            col = "?"
            try:
                col = "informed"
                if row["informed"] not in ("0", "1"):
                    raise ValueError(f"expected 0/1, got {row['informed']!r}")
                values = {}
                for col in DATASET_COLUMNS:
                    raw = row[col]
                    if raw is None:
                        raise ValueError("row is too short")
                    if col in ("spectator_id", "env", "timing"):
                        values[col] = raw
                    elif col == "informed":
                        values[col] = raw == "1"
                    elif col == "round":
                        values[col] = int(raw)
                    elif col in ("q", "m_w", "m_l"):
                        values[col] = _num(raw, optional=True)
                    elif col == "r":
                        values[col] = float(raw)
                    else:
                        values[col] = _num(raw)
                out.append(DecisionRecord(**values))
            except ValueError as exc:
                raise DatasetParseError(f"bad value: {exc}", row=row_no, column=col) from None
    return out
