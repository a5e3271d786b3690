"""Command-line front end: ``meritluck <command> [options]``.

Every command is driven by a :class:`RunConfig` (JSON file plus flag
overrides, flags winning) and is deterministic given the config's seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from meritluck import __version__
from meritluck.agents import SpectatorMixture
from meritluck.calibration import default_mixture
from meritluck.econometrics import (
    bin_means,
    effort_gap_accounting,
    elasticity_fit,
    extensive_margin,
    intensive_margin,
    level_gap,
    mean_fit,
    positive_redistributors,
    redistribution_gap,
)
from meritluck.effort import DEFAULT_EFFORT, WorkerPopulation, distribution_from_dict, sample_population
from meritluck.environments import LuckEnvironment, MultiplierModel, opportunity_luck, outcome_luck
from meritluck.errors import MeritLuckError, ParameterError
from meritluck.experiment import export_dataset, generate_design, import_dataset, run_study
from meritluck.meritprob import PiCurve, check_convexity, pi_curve, write_curve

BASE_ARMS = ("outcomes", "opportunities", "opportunities_ex_post")
DEFAULT_ARMS = tuple(f"{a}{s}" for s in ("", "_informed") for a in BASE_ARMS)
# fixed stream keys so adding an arm never shifts the seeds of the others
_STREAMS = {
    "population_outcomes": 1,
    "population_opportunities": 2,
    "population_opportunities_ex_post": 3,
    **{f"study_{a}": 10 + k for k, a in enumerate(DEFAULT_ARMS)},
    **{f"design_{a}": 20 + k for k, a in enumerate(DEFAULT_ARMS)},
}


@dataclass
class RunConfig:
    effort: dict[str, Any] = field(default_factory=DEFAULT_EFFORT.to_dict)
    multipliers: dict[str, float] = field(default_factory=dict)
    mixtures: dict[str, dict[str, Any]] = field(default_factory=dict)
    n_workers: int = 800
    n_spectators: int = 390
    seed: int = 0
    out: str = "out"
    arms: list[str] = field(default_factory=lambda: list(DEFAULT_ARMS))
    informed: bool = False
    strict_merit: bool = False
    kind: str = "multiplicative"

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ParameterError(f"seed must be a nonnegative integer, got {self.seed!r}")
        for name in ("n_workers", "n_spectators"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if self.n_workers < 2:
            raise ParameterError("n_workers must be at least 2")
        if self.kind not in ("multiplicative", "additive"):
            raise ParameterError(f"kind must be multiplicative or additive, got {self.kind!r}")
        for arm in self.arms:
            _split_arm(arm)
        unknown = set(self.mixtures) - set(BASE_ARMS) - {"outcomes", "opportunities"}
        if unknown:
            raise ParameterError(f"mixtures given for unknown arms {sorted(unknown)}")
        # validate eagerly so bad configs fail before any file is written
        distribution_from_dict(self.effort)
        MultiplierModel(**self.multipliers)
        for spec in self.mixtures.values():
            SpectatorMixture.from_dict(spec)

    @classmethod
    def from_json(cls, text: str) -> RunConfig:
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ParameterError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ParameterError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _split_arm(arm: str) -> tuple[str, bool]:
    base, informed = (arm[: -len("_informed")], True) if arm.endswith("_informed") else (arm, False)
    if base not in BASE_ARMS:
        raise ParameterError(f"unknown arm {arm!r}; expected one of {list(DEFAULT_ARMS)}")
    return base, informed


def derive_seed(seed: int, stream: str) -> int:
    ss = np.random.SeedSequence([seed, _STREAMS[stream]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ----------------------------------------------------------------- build blocks


def _environment(cfg: RunConfig, base: str) -> LuckEnvironment:
    if base == "outcomes":
        return outcome_luck()
    timing = "ex_post" if base == "opportunities_ex_post" else "ex_ante"
    return opportunity_luck(MultiplierModel(**cfg.multipliers), timing=timing)


def _mixture(cfg: RunConfig, base: str, informed: bool) -> SpectatorMixture:
    spec = cfg.mixtures.get(base)
    if spec is None and base == "opportunities_ex_post":
        spec = cfg.mixtures.get("opportunities")
    env_kind = "outcome" if base == "outcomes" else "opportunity"
    mix = SpectatorMixture.from_dict(spec) if spec is not None else default_mixture(env_kind)
    return mix.with_informed(informed)


class _Pipeline:
    """Caches populations and curves shared between arms."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dist = distribution_from_dict(cfg.effort)
        self._pops: dict[str, WorkerPopulation] = {}
        self._curves: dict[str, PiCurve] = {}

    def population(self, base: str) -> WorkerPopulation:
        if base not in self._pops:
            seed = derive_seed(self.cfg.seed, f"population_{base}")
            self._pops[base] = sample_population(self.dist, self.cfg.n_workers, seed, label=base)
        return self._pops[base]

    def curve(self, base: str, kind: str = "multiplicative") -> PiCurve:
        key = f"{base}:{kind}"
        if key not in self._curves:
            self._curves[key] = pi_curve(self.population(base), kind, strict=self.cfg.strict_merit)
        return self._curves[key]


class _Outputs:
    """Tracks written files so a failed command can remove what it produced."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.paths.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def discard(self) -> None:
        for p in self.paths:
            p.unlink(missing_ok=True)
        self.paths.clear()


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------- commands


def cmd_pi_curve(cfg: RunConfig, outs: _Outputs) -> None:
    pipe = _Pipeline(cfg)
    curve = pipe.curve("opportunities", cfg.kind)
    write_curve(curve, outs.path("pi_curve.csv"))
    outs.write_text("convexity_report.json", check_convexity(curve).to_json() + "\n")


def _selected_arms(cfg: RunConfig) -> list[str]:
    if not cfg.informed:
        return list(cfg.arms)
    return [a if a.endswith("_informed") else f"{a}_informed" for a in cfg.arms]


def cmd_design(cfg: RunConfig, outs: _Outputs) -> None:
    pipe = _Pipeline(cfg)
    header = ["spectator_id", "round", "bin", "pi_target", "q", "m_w", "m_l",
              "winner_id", "loser_id", "effort_w", "effort_l", "pi_true"]
    for arm in dict.fromkeys(a.removesuffix("_informed") for a in _selected_arms(cfg)):
        env = _environment(cfg, arm)
        pop = pipe.population(arm)
        curve = pipe.curve(arm) if env.kind == "opportunity" else None
        root = np.random.SeedSequence(derive_seed(cfg.seed, f"design_{arm}"))
        width = max(4, len(str(cfg.n_spectators)))
        with open(outs.path(f"design_{arm}.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, child in enumerate(root.spawn(cfg.n_spectators)):
                design = generate_design(env, pop, curve, child, spectator_id=f"s{k:0{width}d}")
                for d in design.decisions:
                    f, m = d.features, d.match
                    w.writerow([design.spectator_id, d.round, d.bin_index, repr(d.pi_target),
                                _cell(f.q), _cell(f.m_w), _cell(f.m_l), m.winner_id, m.loser_id,
                                repr(m.effort_w), repr(m.effort_l), repr(d.pi_true)])


def _cell(v) -> str:
    return "" if v is None else repr(v)


def cmd_run_study(cfg: RunConfig, outs: _Outputs) -> list[Path]:
    pipe = _Pipeline(cfg)
    written = []
    for arm in _selected_arms(cfg):
        base, informed = _split_arm(arm)
        env = _environment(cfg, base)
        curve = pipe.curve(base) if env.kind == "opportunity" else None
        ds = run_study(_mixture(cfg, base, informed), env, pipe.population(base), cfg.n_spectators,
                       derive_seed(cfg.seed, f"study_{arm}"), curve=curve, id_prefix=f"{arm}:")
        p = outs.path(f"decisions_{arm}.csv")
        export_dataset(ds, p)
        written.append(p)
    return written


def _load_arms(in_dir: Path) -> dict[str, list]:
    arms = {}
    for p in sorted(in_dir.glob("decisions_*.csv")):
        arm = p.stem[len("decisions_"):]
        arms[arm] = import_dataset(p)
    if not arms:
        raise ParameterError(f"no decisions_<arm>.csv files found in {in_dir}")
    return arms


def _num(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else "nan"


def cmd_analyze(cfg: RunConfig, outs: _Outputs, in_dir: Path | None = None) -> None:
    arms = _load_arms(Path(in_dir or cfg.out))
    rows_a, rows_b, rows_c, rows_m = [], [], [], []
    for arm, ds in arms.items():
        if not ds:
            continue
        mf, ef = mean_fit(ds), elasticity_fit(ds)
        rows_a.append([arm, _num(mf.coef("mean")), _num(mf.se_of("mean")), mf.n_obs, mf.n_clusters])
        rows_b.append([arm, _num(ef.coef("alpha")), _num(ef.se_of("alpha")), _num(ef.coef("beta")),
                       _num(ef.se_of("beta")), ef.n_obs, ef.n_clusters, _num(ef.r_squared)])
        for b in bin_means(ds):
            rows_c.append([arm, b.bin, _num(b.low), _num(b.high), _num(b.estimate), _num(b.se), b.n])
        ext = extensive_margin(ds)
        if positive_redistributors(ds):
            im = intensive_margin(ds)
            pos_mean = float(np.mean([r.r for r in positive_redistributors(ds)]))
            intensive = [_num(im.coef("alpha")), _num(im.coef("beta")), _num(im.se_of("beta")), _num(pos_mean)]
        else:
            intensive = ["nan"] * 4
        rows_m.append([arm, _num(ext.share_never), _num(ext.se), ext.n_spectators, *intensive])

    _write_csv(outs, "table2_panelA.csv", ["arm", "mean", "se", "n_obs", "n_clusters"], rows_a)
    _write_csv(outs, "table2_panelB.csv",
               ["arm", "alpha", "alpha_se", "beta", "beta_se", "n_obs", "n_clusters", "r_squared"], rows_b)
    _write_csv(outs, "table2_panelC.csv", ["arm", "bin", "low", "high", "estimate", "se", "n"], rows_c)
    _write_csv(outs, "margins.csv",
               ["arm", "share_never", "share_never_se", "n_spectators",
                "intensive_alpha", "intensive_beta", "intensive_beta_se", "intensive_mean"], rows_m)

    gap_rows, decomposition = [], {}
    for suffix in ("", "_informed"):
        a, b = f"outcomes{suffix}", f"opportunities{suffix}"
        if a not in arms or b not in arms or not arms[a] or not arms[b]:
            continue
        label = f"{a}-{b}"
        for g in redistribution_gap(arms[a], arms[b]):
            gap_rows.append([label, g.bin, _num(g.low), _num(g.high), _num(g.estimate), _num(g.se), g.n_a, g.n_b])
        lg = level_gap(arms[a], arms[b])
        acc = effort_gap_accounting(arms[a], arms[b])
        decomposition[label] = {**acc.to_dict(), "level_gap": lg.coef("gap"), "level_gap_se": lg.se_of("gap")}
    _write_csv(outs, "gap_by_bin.csv", ["comparison", "bin", "low", "high", "estimate", "se", "n_a", "n_b"],
               gap_rows)
    outs.write_text("decomposition.json", _dumps(decomposition))


def _write_csv(outs: _Outputs, name: str, header: Sequence[str], rows) -> None:
    with open(outs.path(name), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_reproduce(cfg: RunConfig, outs: _Outputs) -> dict[str, str]:
    stages: list[tuple[str, Callable[[], Any]]] = [
        ("pi-curve", lambda: cmd_pi_curve(cfg, outs)),
        ("run-study", lambda: cmd_run_study(cfg, outs)),
        ("analyze", lambda: cmd_analyze(cfg, outs, Path(cfg.out))),
    ]
    for name, stage in stages:
        try:
            stage()
        except MeritLuckError as exc:
            raise StageError(name, exc) from exc
    files = {p.name: _sha256(p) for p in sorted(set(outs.paths))}
    manifest = {
        "package_version": __version__,
        # the output location is not part of the provenance
        "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
        "seeds": {s: derive_seed(cfg.seed, s) for s in sorted(_STREAMS)},
        "files": files,
    }
    outs.write_text("manifest.json", _dumps(manifest))
    return files


class StageError(MeritLuckError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage


# -------------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meritluck", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--arm", action="append", help="arm name (repeatable); default all six")
    common.add_argument("--informed", action="store_true", default=None, help="use informed spectators")
    common.add_argument("--strict-merit", action="store_true", default=None,
                        help="count effort ties as luck when computing merit probabilities")
    common.add_argument("--kind", choices=("multiplicative", "additive"), help="advantage kind for pi-curve")
    common.add_argument("--n-spectators", type=int)
    common.add_argument("--n-workers", type=int)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pi-curve", parents=[common], help="merit-probability curve and convexity report")
    sub.add_parser("design", parents=[common], help="session designs per arm")
    sub.add_parser("run-study", parents=[common], help="simulate decision datasets per arm")
    p = sub.add_parser("analyze", parents=[common], help="regressions on decision datasets")
    p.add_argument("--in", dest="in_dir", type=Path, help="directory with decisions_<arm>.csv (default --out)")
    sub.add_parser("reproduce", parents=[common], help="full pipeline plus manifest")
    sub.add_parser("validate", parents=[common], help="run the built-in property checks")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise ParameterError(f"config file {args.config} does not exist")
        try:
            cfg = RunConfig.from_json(args.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config file {args.config} is not valid JSON: {exc}") from None
        except TypeError as exc:
            raise ParameterError(f"bad config: {exc}") from None
    else:
        cfg = RunConfig()
    overrides = {
        "seed": args.seed, "out": args.out, "arms": args.arm, "informed": args.informed,
        "strict_merit": args.strict_merit, "kind": args.kind,
        "n_spectators": args.n_spectators, "n_workers": args.n_workers,
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (MeritLuckError, ValueError) as exc:
        print(f"meritluck: config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        from meritluck.validation import run_checks

        return 0 if run_checks(verbose=True) else 1

    outs = _Outputs(cfg.out)
    try:
        if args.command == "pi-curve":
            cmd_pi_curve(cfg, outs)
        elif args.command == "design":
            cmd_design(cfg, outs)
        elif args.command == "run-study":
            cmd_run_study(cfg, outs)
        elif args.command == "analyze":
            cmd_analyze(cfg, outs, args.in_dir)
        elif args.command == "reproduce":
            cmd_reproduce(cfg, outs)
    except (MeritLuckError, OSError, ValueError) as exc:
        outs.discard()
        print(f"meritluck: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        outs.discard()
        raise
    for p in outs.paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
