import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meritluck.agents import SpectatorMixture, SpectatorModel, optimal_redistribution, snap_to_grid
from meritluck.environments import MultiplierModel, headstart_luck, opportunity_luck, outcome_luck
from meritluck.errors import DatasetParseError, DesignError, ParameterError
from meritluck.experiment import (
    DATASET_COLUMNS,
    N_DECISIONS,
    export_dataset,
    generate_design,
    import_dataset,
    run_session,
    run_study,
)
from meritluck.meritprob import invert_pi_to_pair, q_from_pi, standard_bins


@pytest.fixture(scope="module")
def opp_designs(default_population, default_curve):
    env = opportunity_luck()
    return [generate_design(env, default_population, default_curve, seed) for seed in range(40)]


class TestOutcomeDesign:
    def test_structure(self, default_population):
        d = generate_design(outcome_luck(), default_population, None, 3)
        assert len(d.decisions) == N_DECISIONS
        assert sorted(x.round for x in d.decisions) == list(range(1, 13))
        assert sorted(x.bin_index for x in d.decisions) == list(range(1, 13))

    def test_extreme_bins(self, default_population):
        d = generate_design(outcome_luck(), default_population, None, 5)
        by_bin = {x.bin_index: x for x in d.decisions}
        assert by_bin[1].features.q == 1.0
        assert by_bin[12].features.q == 0.0

    def test_q_matches_pi(self, default_population):
        binning = standard_bins()
        for seed in range(5):
            for x in generate_design(outcome_luck(), default_population, None, seed).decisions:
                assert x.features.q == q_from_pi(x.pi_target)
                assert x.features.q == pytest.approx(2 * (1 - x.pi_true), abs=1e-12)
                assert binning.assign(x.pi_target) == x.bin_index

    def test_deterministic(self, default_population):
        a = generate_design(outcome_luck(), default_population, None, 11)
        b = generate_design(outcome_luck(), default_population, None, 11)
        c = generate_design(outcome_luck(), default_population, None, 12)
        assert a == b
        assert a != c

    def test_headstart_rejected(self, default_population):
        with pytest.raises(DesignError):
            generate_design(headstart_luck([0, 1]), default_population, None, 1)


class TestOpportunityDesign:
    def test_needs_curve(self, default_population):
        with pytest.raises(DesignError):
            generate_design(opportunity_luck(), default_population, None, 1)

    def test_unknown_inversion(self, default_population, default_curve):
        with pytest.raises(DesignError):
            generate_design(opportunity_luck(), default_population, default_curve, 1, inversion="exact")

    def test_certain_merit_bin(self, opp_designs):
        kinds = set()
        for d in opp_designs:
            x = next(x for x in d.decisions if x.bin_index == 12)
            assert x.features.m_w <= x.features.m_l
            assert x.pi_true == 1.0
            kinds.add(x.features.m_w == x.features.m_l)
        assert kinds == {True, False}

    def test_winner_holds_drawn_multiplier(self, opp_designs):
        for d in opp_designs:
            for x in d.decisions:
                assert x.match.advantage_w == x.features.m_w
                if x.ratio is not None:
                    assert x.ratio == pytest.approx(x.features.m_w / x.features.m_l)

    def test_multipliers_on_grid(self, opp_designs):
        for d in opp_designs:
            for x in d.decisions:
                for m in (x.features.m_w, x.features.m_l):
                    assert 1.0 <= m <= 4.0
                    assert round(m * 10) == pytest.approx(m * 10)

    def test_pi_true_close_to_target(self, opp_designs, default_curve):
        # targets inside the reachable range land within the search tolerance
        lo = default_curve.lookup(4.0)
        reach = sorted(p.pi_hat for p in default_curve.points)
        for d in opp_designs:
            for x in d.decisions:
                if x.bin_index == 12 or x.pi_target < lo:
                    continue
                if x.pi_target > max(v for v in reach if v < 1.0):
                    continue
                assert abs(x.pi_true - x.pi_target) <= 0.005 + 1e-12

    def test_grid_inversion(self, default_population, default_curve):
        d = generate_design(opportunity_luck(), default_population, default_curve, 2, inversion="grid")
        assert len(d.decisions) == N_DECISIONS

    @given(st.integers(53, 97), st.integers(0, 2**32 - 1))
    def test_pair_search(self, default_curve, pct, seed):
        model = MultiplierModel()
        m_h, m_l = invert_pi_to_pair(pct / 100, default_curve, model, np.random.default_rng(seed))
        assert m_h >= m_l
        assert abs(default_curve.lookup(m_h / m_l) - pct / 100) <= 0.005 + 1e-12


class TestSessions:
    def test_never_type(self, opp_designs, default_curve):
        recs = run_session(SpectatorModel("n", "never"), opp_designs[0], default_curve)
        assert [r.r for r in recs] == [0.0] * 12

    def test_bayesian_pure_luck(self, default_population):
        d = generate_design(outcome_luck(), default_population, None, 4)
        recs = run_session(SpectatorModel("b", "bayesian", fair_share=0.2), d)
        pure = next(x.round for x in d.decisions if x.bin_index == 1)
        assert next(r for r in recs if r.round == pure).r == 0.5

    def test_heuristic_depends_on_difference(self, opp_designs, default_curve):
        model = SpectatorModel("h", "heuristic_opportunities")
        seen = {}
        for d in opp_designs:
            for rec in run_session(model, d, default_curve):
                key = round(rec.m_w - rec.m_l, 1)
                assert seen.setdefault(key, rec.r) == rec.r

    def test_informed_records(self, default_population):
        d = generate_design(outcome_luck(), default_population, None, 4)
        recs = run_session(SpectatorModel("b", "bayesian", informed=True), d)
        assert all(r.informed for r in recs)


class TestStudy:
    def test_size_and_order(self, default_population):
        recs = run_study(outcomes_mix := SpectatorMixture(0.1, 0.45, 0.45), outcome_luck(),
                         default_population, 10, 3)
        assert len(recs) == 120
        assert len({r.spectator_id for r in recs}) == 10
        assert recs == sorted(recs, key=lambda r: (r.spectator_id, r.round))
        assert recs == run_study(outcomes_mix, outcome_luck(), default_population, 10, 3)

    def test_bayesian_matches_rule(self, default_population, default_curve):
        for env in (outcome_luck(), opportunity_luck()):
            recs = run_study(SpectatorMixture(0, 0, 1, fair_share=0.2), env, default_population, 20, 9,
                             curve=default_curve)
            for r in recs:
                assert r.r == snap_to_grid(optimal_redistribution(0.2, r.pi_true))

    def test_rejects_empty(self, default_population):
        with pytest.raises(ParameterError):
            run_study(SpectatorMixture(1, 0, 0), outcome_luck(), default_population, 0, 1)

    def test_timing_label(self, default_population, default_curve):
        recs = run_study(SpectatorMixture(1, 0, 0), opportunity_luck(timing="ex_post"), default_population, 2, 1,
                         curve=default_curve)
        assert {(r.env, r.timing) for r in recs} == {("opportunities", "ex_post")}


@pytest.fixture(scope="module")
def records(default_population, default_curve):
    return (run_study(SpectatorMixture(0.2, 0.4, 0.4), outcome_luck(), default_population, 3, 1)
            + run_study(SpectatorMixture(0.2, 0.4, 0.4, informed=True), opportunity_luck(),
                        default_population, 3, 2, curve=default_curve, id_prefix="o"))


class TestDatasetIO:

    def test_round_trip(self, records, tmp_path):
        path = tmp_path / "d.csv"
        export_dataset(records, path)
        assert path.read_text().splitlines()[0] == ",".join(DATASET_COLUMNS)
        assert import_dataset(path) == records

    def test_header_only(self, tmp_path):
        path = tmp_path / "d.csv"
        export_dataset([], path)
        assert import_dataset(path) == []

    def test_missing_column(self, records, tmp_path):
        path = tmp_path / "d.csv"
        export_dataset(records, path)
        lines = path.read_text().splitlines()
        k = DATASET_COLUMNS.index("r")
        path.write_text("\n".join(",".join(l.split(",")[:k] + l.split(",")[k + 1:]) for l in lines) + "\n")
        with pytest.raises(DatasetParseError) as err:
            import_dataset(path)
        assert err.value.column == "r"

    def test_bad_value_row(self, records, tmp_path):
        path = tmp_path / "d.csv"
        export_dataset(records, path)
        lines = path.read_text().splitlines()
        k = DATASET_COLUMNS.index("r")
        cells = lines[4].split(",")
        cells[k] = "lots"
        lines[4] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetParseError) as err:
            import_dataset(path)
        assert (err.value.row, err.value.column) == (5, "r")
