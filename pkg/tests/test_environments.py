import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meritluck.effort import DEFAULT_EFFORT, LogNormal, sample_population
from meritluck.environments import (
    MultiplierModel,
    compare_scores,
    headstart_luck,
    opportunity_luck,
    outcome_luck,
    pair_all,
    read_matches,
    resolve_headstart_match,
    resolve_opportunity_match,
    resolve_outcome_batch,
    resolve_outcome_match,
    round_tenth,
    sample_multiplier,
    write_matches,
)
from meritluck.errors import DatasetParseError, DomainError, InvalidPopulationError, ParameterError

GRID = {round(k / 10, 1) for k in range(10, 41)}


class TestMultiplierModel:
    def test_support(self, rng):
        draws = MultiplierModel().sample(rng, 50_000)
        assert set(np.round(draws, 1).tolist()) <= GRID
        assert np.all(draws == np.round(draws, 1))

    def test_moments(self, rng):
        # independent sampler over 1e6 draws: mean 2.4988, Pr(4.0) 0.0648
        draws = MultiplierModel().sample(rng, 1_000_000)
        assert draws.mean() == pytest.approx(2.50, abs=0.01)
        assert np.mean(draws == 4.0) == pytest.approx(0.065, abs=0.002)

    def test_pmf(self):
        m = MultiplierModel()
        p = m.pmf()
        assert p.sum() == pytest.approx(1.0)
        assert p[0] == pytest.approx(0.05 + 0.9 * 0.05 / 3)
        assert p[-1] == pytest.approx(0.065)
        assert float(p @ m.grid()) == pytest.approx(2.5)

    def test_scalar_draw(self, rng):
        assert sample_multiplier(MultiplierModel(), rng) in GRID

    @pytest.mark.parametrize("kw", [{"low": 0.0}, {"low": 4.0, "high": 1.0}, {"p_low": 0.7, "p_high": 0.4},
                                    {"high": 4.05}])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            MultiplierModel(**kw)

    def test_round_half_up(self):
        assert round_tenth(1.05) == pytest.approx(1.1)
        assert round_tenth(3.95) == pytest.approx(4.0)
        assert round_tenth(2.04) == pytest.approx(2.0)


class TestOutcomeLuck:
    def test_pure_performance(self, rng):
        rec = resolve_outcome_match(20, 10, 0.0, rng, id_a="a", id_b="b")
        assert rec.winner_id == "a" and rec.merit_flag and not rec.coin_flip_occurred

    def test_pure_coin(self):
        rng = np.random.default_rng(1)
        flags = [resolve_outcome_match(20, 10, 1.0, rng).merit_flag for _ in range(100_000)]
        assert 1 - np.mean(flags) == pytest.approx(0.5, abs=0.01)

    def test_q_law(self):
        # Monte Carlo oracle at q=0.4 gave 0.1997
        rng = np.random.default_rng(2)
        e = rng.lognormal(0, 0.3, size=(100_000, 2))
        a_wins, _ = resolve_outcome_batch(e[:, 0], e[:, 1], 0.4, rng)
        merit_false = np.where(a_wins, e[:, 0] < e[:, 1], e[:, 1] < e[:, 0]).mean()
        assert merit_false == pytest.approx(0.20, abs=0.01)

    @pytest.mark.parametrize("q", [round(0.1 * k, 1) for k in range(11)])
    def test_q_law_within_three_se(self, q):
        n = 40_000
        rng = np.random.default_rng(int(q * 10) + 100)
        e = rng.lognormal(2.9, 0.3, size=(n, 2))
        a_wins, coin = resolve_outcome_batch(e[:, 0], e[:, 1], q, rng)
        merit_false = np.where(a_wins, e[:, 0] < e[:, 1], e[:, 1] < e[:, 0]).mean()
        se = max(np.sqrt(q / 2 * (1 - q / 2) / n), 1e-12)
        assert abs(merit_false - q / 2) <= 3 * se + 1e-12

    def test_batch_matches_scalar(self):
        e_a = np.array([1.0, 5.0, 3.0, 3.0, 2.0])
        e_b = np.array([2.0, 4.0, 3.0, 1.0, 9.0])
        rng1, rng2 = np.random.default_rng(8), np.random.default_rng(8)
        a_wins, coin = resolve_outcome_batch(e_a, e_b, 0.5, rng1)
        for k in range(e_a.size):
            rec = resolve_outcome_match(e_a[k], e_b[k], 0.5, rng2, id_a="a", id_b="b")
            assert (rec.winner_id == "a") == a_wins[k]
            assert rec.coin_flip_occurred == coin[k]

    def test_bad_q(self, rng):
        with pytest.raises(DomainError):
            resolve_outcome_match(1, 2, 1.5, rng)


class TestOpportunityLuck:
    def test_worked_example(self, rng):
        rec = resolve_opportunity_match(20, 1.2, 10, 3.0, rng, id_a="a", id_b="b")
        assert rec.winner_id == "b"
        assert rec.advantage_w == 3.0 and rec.effort_w == 10

    def test_equal_effort_advantaged_wins(self, rng):
        rec = resolve_opportunity_match(15, 2.0, 15, 1.5, rng, id_a="a", id_b="b")
        assert rec.winner_id == "a" and rec.merit_flag

    def test_score_tie_is_fair(self):
        rng = np.random.default_rng(4)
        wins = [resolve_opportunity_match(10, 2.0, 20, 1.0, rng, id_a="a", id_b="b").winner_id == "a"
                for _ in range(10_000)]
        assert np.mean(wins) == pytest.approx(0.5, abs=0.02)

    def test_float_noise_counts_as_tie(self, rng):
        rec = resolve_opportunity_match(3, 1.1, 33, 0.1, rng)
        assert rec.tie_break

    def test_nonpositive(self, rng):
        with pytest.raises(DomainError):
            resolve_opportunity_match(1, 0.0, 2, 1.0, rng)

    @given(st.floats(0, 60), st.sampled_from(sorted(GRID)), st.floats(0, 60), st.sampled_from(sorted(GRID)),
           st.integers(0, 2**32 - 1))
    def test_winner_score_not_below_loser(self, e_a, m_a, e_b, m_b, seed):
        rec = resolve_opportunity_match(e_a, m_a, e_b, m_b, np.random.default_rng(seed))
        s_w, s_l = rec.advantage_w * rec.effort_w, rec.advantage_l * rec.effort_l
        if rec.tie_break:
            assert compare_scores(s_w, s_l) == 0
        else:
            assert s_w > s_l
        if m_a == m_b and not rec.tie_break:
            assert rec.merit_flag


class TestHeadstart:
    def test_no_headstart(self, rng):
        assert resolve_headstart_match(18, 0, 17, 0, rng, id_a="a", id_b="b").winner_id == "a"

    def test_headstart_overturns(self, rng):
        rec = resolve_headstart_match(17, 2, 18, 0, rng, id_a="a", id_b="b")
        assert rec.winner_id == "a" and not rec.merit_flag

    def test_tie_fair(self):
        rng = np.random.default_rng(5)
        wins = [resolve_headstart_match(18, 1, 19, 0, rng, id_a="a", id_b="b").winner_id == "a"
                for _ in range(10_000)]
        assert np.mean(wins) == pytest.approx(0.5, abs=0.02)

    def test_negative(self, rng):
        with pytest.raises(DomainError):
            resolve_headstart_match(1, -1, 2, 0, rng)

    @given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 5), st.integers(0, 2**32 - 1))
    def test_equal_headstarts_are_pure_performance(self, e_a, e_b, b, seed):
        r1 = resolve_headstart_match(e_a, b, e_b, b, np.random.default_rng(seed), id_a="a", id_b="b")
        r2 = resolve_outcome_match(e_a, e_b, 0.0, np.random.default_rng(seed), id_a="a", id_b="b")
        if e_a != e_b:
            assert r1.winner_id == r2.winner_id


class TestPairAll:
    def test_counts(self):
        pop = sample_population(LogNormal(), 4, 0)
        assert len(pair_all(pop, outcome_luck(0.3), 1)) == 2
        assert len(pair_all(sample_population(LogNormal(), 5, 0), outcome_luck(0.3), 1)) == 2

    def test_pure_merit(self):
        pop = sample_population(LogNormal(), 200, 3)
        assert all(r.merit_flag for r in pair_all(pop, outcome_luck(0.0), 2))

    def test_opportunity(self, default_population):
        recs = pair_all(default_population, opportunity_luck(), 3)
        assert len(recs) == 400
        assert all(r.advantage_w in GRID and r.advantage_l in GRID for r in recs)

    def test_headstart(self, default_population):
        recs = pair_all(default_population, headstart_luck([0, 1, 2]), 3)
        assert all(r.advantage_w in (0, 1, 2) for r in recs)

    def test_deterministic(self, default_population):
        env = opportunity_luck()
        assert pair_all(default_population, env, 7) == pair_all(default_population, env, 7)

    def test_needs_q(self, default_population):
        with pytest.raises(ParameterError):
            pair_all(default_population, outcome_luck(), 1)

    def test_ids_distinct(self):
        from meritluck.environments import MatchRecord
        with pytest.raises(InvalidPopulationError):
            MatchRecord("a", "a", 1, 1)


class TestMatchFile:
    def test_round_trip(self, tmp_path, default_population):
        recs = pair_all(default_population, opportunity_luck(), 5)[:20]
        recs += pair_all(default_population, outcome_luck(0.4), 5)[:20]
        p = tmp_path / "m.csv"
        write_matches(recs, p)
        header = p.read_text().splitlines()[0]
        assert header == "match_id,winner_id,loser_id,effort_w,effort_l,adv_w,adv_l,q,coin_flip,merit_flag"
        back = read_matches(p)
        for a, b in zip(recs, back):
            assert (a.winner_id, a.loser_id, a.effort_w, a.effort_l) == (b.winner_id, b.loser_id, b.effort_w, b.effort_l)
            assert (a.advantage_w, a.q_used, a.coin_flip_occurred) == (b.advantage_w, b.q_used, b.coin_flip_occurred)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("match_id,winner_id\n0,a\n")
        with pytest.raises(DatasetParseError, match="loser_id"):
            read_matches(p)


def test_environment_validation():
    with pytest.raises(DomainError):
        outcome_luck(1.2)
    with pytest.raises(ParameterError):
        headstart_luck([])
    with pytest.raises(ParameterError):
        opportunity_luck(timing="later")
    assert opportunity_luck(timing="ex_post").timing == "ex_post"
    assert outcome_luck(0.2).with_q(0.6).q == 0.6
