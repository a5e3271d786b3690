import csv
import json
import shutil

import pytest

from meritluck import cli
from meritluck.cli import DEFAULT_ARMS, RunConfig, derive_seed, main
from meritluck.errors import ContractError, ParameterError
from meritluck.experiment import DATASET_COLUMNS

SMALL = ["--n-spectators", "10", "--n-workers", "200", "--seed", "3"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def study_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("study")
    assert main(["run-study", "--out", str(out), *SMALL]) == 0
    return out


class TestPiCurve:
    def test_multiplicative(self, tmp_path):
        assert main(["pi-curve", "--out", str(tmp_path), "--n-workers", "200"]) == 0
        curve = rows(tmp_path / "pi_curve.csv")
        assert len(curve) == 31
        report = json.loads((tmp_path / "convexity_report.json").read_text())
        assert isinstance(report, dict)

    def test_additive(self, tmp_path):
        assert main(["pi-curve", "--out", str(tmp_path), "--n-workers", "200", "--kind", "additive"]) == 0
        assert len(rows(tmp_path / "pi_curve.csv")) == 16


class TestRunStudy:
    def test_files(self, study_dir):
        for arm in DEFAULT_ARMS:
            data = rows(study_dir / f"decisions_{arm}.csv")
            assert len(data) == 120
            assert list(data[0]) == DATASET_COLUMNS
            assert all(r["spectator_id"].startswith(f"{arm}:") for r in data)
            assert {r["informed"] for r in data} == {"1" if arm.endswith("_informed") else "0"}

    def test_deterministic(self, study_dir, tmp_path):
        assert main(["run-study", "--out", str(tmp_path), *SMALL, "--arm", "outcomes"]) == 0
        assert (tmp_path / "decisions_outcomes.csv").read_bytes() == \
            (study_dir / "decisions_outcomes.csv").read_bytes()

    def test_informed_flag(self, tmp_path):
        assert main(["run-study", "--out", str(tmp_path), *SMALL, "--arm", "outcomes", "--informed"]) == 0
        assert [p.name for p in tmp_path.iterdir()] == ["decisions_outcomes_informed.csv"]

    def test_design(self, tmp_path):
        assert main(["design", "--out", str(tmp_path), *SMALL, "--arm", "opportunities"]) == 0
        data = rows(tmp_path / "design_opportunities.csv")
        assert len(data) == 120
        assert sorted({int(r["bin"]) for r in data}) == list(range(1, 13))


class TestAnalyze:
    def test_outputs(self, study_dir, tmp_path):
        assert main(["analyze", "--in", str(study_dir), "--out", str(tmp_path)]) == 0
        names = {p.name for p in tmp_path.iterdir()}
        assert names == {"table2_panelA.csv", "table2_panelB.csv", "table2_panelC.csv", "margins.csv",
                         "gap_by_bin.csv", "decomposition.json"}
        assert len(rows(tmp_path / "table2_panelA.csv")) == 6
        assert len(rows(tmp_path / "table2_panelC.csv")) == 72
        dec = json.loads((tmp_path / "decomposition.json").read_text())
        assert set(dec) == {"outcomes-opportunities", "outcomes_informed-opportunities_informed"}

    def test_identical_arms_have_zero_gap(self, study_dir, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        shutil.copy(study_dir / "decisions_outcomes.csv", src / "decisions_outcomes.csv")
        shutil.copy(study_dir / "decisions_outcomes.csv", src / "decisions_opportunities.csv")
        assert main(["analyze", "--in", str(src), "--out", str(tmp_path / "o")]) == 0
        gaps = rows(tmp_path / "o" / "gap_by_bin.csv")
        assert gaps and all(abs(float(g["estimate"])) < 1e-12 for g in gaps if g["estimate"] != "nan")
        dec = json.loads((tmp_path / "o" / "decomposition.json").read_text())
        assert dec["outcomes-opportunities"]["level_gap"] == pytest.approx(0, abs=1e-12)

    def test_missing_column(self, study_dir, tmp_path, capsys):
        src = tmp_path / "in"
        src.mkdir()
        data = rows(study_dir / "decisions_outcomes.csv")
        cols = [c for c in DATASET_COLUMNS if c != "r"]
        with open(src / "decisions_outcomes.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, cols, extrasaction="ignore")
            w.writeheader()
            w.writerows(data)
        assert main(["analyze", "--in", str(src), "--out", str(tmp_path / "o")]) == 1
        assert "column='r'" in capsys.readouterr().err
        assert not (tmp_path / "o").exists() or not any((tmp_path / "o").iterdir())

    def test_no_inputs(self, tmp_path):
        assert main(["analyze", "--in", str(tmp_path), "--out", str(tmp_path / "o")]) == 1

    def test_partial_outputs_removed(self, study_dir, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise ContractError("injected failure")

        monkeypatch.setattr(cli, "redistribution_gap", boom)
        out = tmp_path / "o"
        assert main(["analyze", "--in", str(study_dir), "--out", str(out)]) == 1
        assert list(out.iterdir()) == []


class TestReproduce:
    def test_byte_identical(self, tmp_path):
        args = [*SMALL, "--arm", "outcomes", "--arm", "opportunities"]
        assert main(["reproduce", "--out", str(tmp_path / "a"), *args]) == 0
        assert main(["reproduce", "--out", str(tmp_path / "b"), *args]) == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "manifest.json" in names
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert set(manifest) >= {"package_version", "config", "seeds", "files"}
        assert "decisions_outcomes.csv" in manifest["files"]


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 5, "n_spectators": 7, "arms": ["outcomes"]}))
        args = cli.build_parser().parse_args(["run-study", "--config", str(cfg), "--seed", "9"])
        loaded = cli.load_config(args)
        assert (loaded.seed, loaded.n_spectators, loaded.arms) == (9, 7, ["outcomes"])

    @pytest.mark.parametrize("body", ['{"seed": -1}', '{"colour": 1}', "[1]", "{not json",
                                      '{"arms": ["lottery"]}', '{"effort": {"kind": "nope"}}'])
    def test_bad_config_exits_2(self, tmp_path, body):
        cfg = tmp_path / "c.json"
        cfg.write_text(body)
        assert main(["run-study", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert not (tmp_path / "o").exists()

    def test_missing_config_file(self, tmp_path):
        assert main(["pi-curve", "--config", str(tmp_path / "none.json")]) == 2

    def test_bad_arm_flag(self, tmp_path):
        assert main(["run-study", "--arm", "lottery", "--out", str(tmp_path)]) == 2

    def test_round_trip(self):
        cfg = RunConfig(seed=4, arms=["outcomes"])
        assert RunConfig.from_json(json.dumps(cfg.to_dict())) == cfg
        with pytest.raises(ParameterError):
            RunConfig(n_spectators=0)

    def test_seed_streams(self):
        assert derive_seed(1, "study_outcomes") == derive_seed(1, "study_outcomes")
        assert derive_seed(1, "study_outcomes") != derive_seed(2, "study_outcomes")
        assert derive_seed(1, "study_outcomes") != derive_seed(1, "study_opportunities")


def test_validate():
    assert main(["validate"]) == 0
