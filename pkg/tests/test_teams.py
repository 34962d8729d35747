import datetime as dt
import itertools

import mpmath
import numpy as np
import pytest
from scipy.stats import poisson

from rgax.errors import DataError, DisconnectedScheduleError, UnknownActorError
from rgax.events import Column, EventTable, FeatureSpec
from rgax.simlab import random_strengths, simulate_league
from rgax.teams import (MatchTable, TeamStrengths, _Objective, attach_strength_features,
                        bivpois_log_pmf, fit_team_strengths, full_loglik, parse_match_table,
                        recency_weight, write_match_table)

D0 = dt.date(2021, 1, 1)


def _round_robin(score, teams=("A", "B", "C", "D")):
    pairs = list(itertools.permutations(teams, 2))
    return MatchTable.from_records([D0] * len(pairs), [p[0] for p in pairs],
                                   [p[1] for p in pairs], [score[0]] * len(pairs),
                                   [score[1]] * len(pairs))


def _mp_pmf(z, y, l1, l2, lc):
    mpmath.mp.dps = 50
    l1, l2, lc = mpmath.mpf(l1), mpmath.mpf(l2), mpmath.mpf(lc)
    s = mpmath.fsum(mpmath.binomial(z, k) * mpmath.binomial(y, k) * mpmath.factorial(k)
                    * (lc / (l1 * l2)) ** k for k in range(min(z, y) + 1))
    p = mpmath.exp(-(l1 + l2 + lc)) * l1 ** z / mpmath.factorial(z) \
        * l2 ** y / mpmath.factorial(y) * s
    return float(mpmath.log(p))


class TestPmf:
    def test_zero_zero(self):
        assert bivpois_log_pmf(0, 0, 1.2, 0.7, 0.3) == pytest.approx(-2.2, abs=1e-15)

    @pytest.mark.parametrize("z,y", [(0, 0), (1, 0), (3, 2), (5, 5), (0, 4)])
    def test_factorization(self, z, y):
        expect = poisson.logpmf(z, 1.4) + poisson.logpmf(y, 0.9)
        assert bivpois_log_pmf(z, y, 1.4, 0.9, 0.0) == pytest.approx(expect, abs=1e-12)

    def test_extended_precision_oracle(self):
        assert bivpois_log_pmf(2, 1, 1.4, 0.9, 0.2) == \
            pytest.approx(_mp_pmf(2, 1, 1.4, 0.9, 0.2), abs=1e-13)

    def test_oracle_grid(self):
        for z, y in itertools.product(range(6), range(6)):
            assert bivpois_log_pmf(z, y, 2.1, 0.4, 0.7) == \
                pytest.approx(_mp_pmf(z, y, 2.1, 0.4, 0.7), abs=1e-12)

    def test_sums_to_one(self):
        total = sum(np.exp(bivpois_log_pmf(z, y, 1.3, 0.8, 0.4))
                    for z in range(40) for y in range(40))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_invalid(self):
        with pytest.raises(DataError):
            bivpois_log_pmf(-1, 0, 1, 1, 0)
        with pytest.raises(DataError):
            bivpois_log_pmf(1, 0, 0, 1, 0)
        with pytest.raises(DataError):
            bivpois_log_pmf(1, 0, 1, 1, -0.1)


class TestWeight:
    def test_values(self):
        assert recency_weight(D0, D0) == 1.0
        assert recency_weight(D0, D0 + dt.timedelta(500), 500) == 0.5
        assert recency_weight(D0, D0 + dt.timedelta(1000), 500) == 0.25

    def test_future_match(self):
        with pytest.raises(DataError):
            recency_weight(D0 + dt.timedelta(1), D0)


class TestObjective:
    def test_gradient_matches_finite_differences(self):
        m = simulate_league(random_strengths(5, seed=1), 120, seed=2)
        w = np.random.default_rng(0).uniform(0.2, 1.0, len(m))
        obj = _Objective(m, w)
        rng = np.random.default_rng(3)
        for _ in range(10):
            theta = rng.normal(0, 0.3, obj.size)
            theta[-1] = rng.uniform(-3, 0)
            _, g = obj.value_grad(theta)
            fd = np.empty_like(g)
            for j in range(len(theta)):
                e = np.zeros_like(theta)
                e[j] = 1e-6
                fd[j] = (obj.loglik(theta + e) - obj.loglik(theta - e)) / 2e-6
            assert np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1.0) <= 1e-5

    def test_shift_invariance(self):
        m = simulate_league(random_strengths(4, seed=5), 60, seed=6)
        w = np.ones(len(m))
        rng = np.random.default_rng(1)
        att, de = rng.normal(size=4), rng.normal(size=4)
        a = full_loglik(m, w, 0.1, att, de, 0.2, 0.3)
        b = full_loglik(m, w, 0.1, att + 0.7, de + 0.7, 0.2, 0.3)
        assert a == pytest.approx(b, rel=1e-13)


class TestFit:
    def test_symmetric_independent(self):
        s = fit_team_strengths(_round_robin((1, 1)), independent=True)
        for t in s.teams:
            assert abs(s.att[t]) < 1e-6 and abs(s.defence[t]) < 1e-6
        assert abs(s.homeAdvantage) < 1e-6
        assert s.lambda_c == 0.0

    def test_symmetric_bivariate_ratings(self):
        s = fit_team_strengths(_round_robin((1, 1)))
        for t in s.teams:
            assert abs(s.att[t]) < 1e-6 and abs(s.defence[t]) < 1e-6
        assert s.diagnostics["min_rate"] < 1e-3

    def test_swapped_scores_no_home_effect(self):
        pairs = list(itertools.permutations("ABCD", 2))
        k = len(pairs)
        m = MatchTable.from_records([D0] * 2 * k, [p[0] for p in pairs] * 2,
                                    [p[1] for p in pairs] * 2, [2] * k + [1] * k,
                                    [1] * k + [2] * k)
        s = fit_team_strengths(m)
        assert abs(s.homeAdvantage) < 1e-6

    def test_sum_to_zero_and_stationary(self):
        m = simulate_league(random_strengths(6, seed=0), 600, seed=1)
        s = fit_team_strengths(m)
        assert abs(sum(s.att.values())) < 1e-8
        assert abs(sum(s.defence.values())) < 1e-8
        assert s.diagnostics["gradient_norm"] < 1e-6
        assert s.lambda_c >= 0
        trace = s.diagnostics["loglik_trace"]
        assert np.all(np.diff(trace) >= -1e-9)

    def test_unit_weights_equal_unweighted(self):
        m = simulate_league(random_strengths(4, seed=2), 200, seed=3)
        a = fit_team_strengths(m, period=1e12)
        b = fit_team_strengths(m, weights=np.ones(len(m)))
        c = fit_team_strengths(m, weights=np.ones(len(m)))
        assert b.att == c.att
        for t in m.teams:
            assert a.att[t] == pytest.approx(b.att[t], abs=1e-6)

    def test_recovery(self):
        truth = random_strengths(6, seed=4)
        m = simulate_league(truth, 600, seed=5)
        s = fit_team_strengths(m, weights=np.ones(len(m)))
        for t in truth.teams:
            assert abs(s.att[t] - truth.att[t]) < 0.3
            assert abs(s.defence[t] - truth.defence[t]) < 0.3

    def test_disconnected(self):
        m = MatchTable.from_records([D0] * 2, ["A", "C"], ["B", "D"], [1, 2], [0, 1])
        with pytest.raises(DisconnectedScheduleError):
            fit_team_strengths(m)

    def test_bad_weights(self):
        m = _round_robin((1, 0))
        with pytest.raises(DataError):
            fit_team_strengths(m, weights=np.zeros(len(m)))


class TestTable:
    def test_round_trip(self, tmp_path):
        m = simulate_league(random_strengths(4), 30, seed=1)
        p = tmp_path / "m.csv"
        write_match_table(m, p)
        back = parse_match_table(p)
        assert back.teams == m.teams
        np.testing.assert_array_equal(back.home_goals, m.home_goals)
        assert back.dates == m.dates

    def test_invalid_rows(self):
        with pytest.raises(DataError):
            MatchTable.from_records([D0], ["A"], ["B"], [-1], [0])
        with pytest.raises(DataError):
            MatchTable.from_records([D0], ["A"], ["A"], [1], [0])

    def test_strengths_serialization(self):
        s = fit_team_strengths(_round_robin((2, 1)), independent=True)
        assert s.to_csv().splitlines()[0] == "team,att,def"
        assert TeamStrengths.from_dict(s.to_dict()).att == s.att


def _shots(teams_for, teams_against, seasons=None):
    import pandas as pd
    n = len(teams_for)
    fr = pd.DataFrame({"outcome": [0.0, 1.0] * (n // 2), "actor_id": ["p"] * n,
                       "team_for": teams_for, "team_against": teams_against,
                       "z": np.arange(n, dtype=float)})
    if seasons is not None:
        fr["season"] = seasons
    return EventTable.from_frame(fr, FeatureSpec((Column("z"),)))


class TestAttach:
    def _strengths(self, att, de):
        return TeamStrengths(0.0, att, de, 0.2, 0.1)

    def test_zero_strengths(self):
        t = _shots(["A", "B"] * 2, ["B", "A"] * 2)
        out = attach_strength_features(t, self._strengths({"A": 0.0, "B": 0.0},
                                                          {"A": 0.0, "B": 0.0}))
        np.testing.assert_array_equal(out.column("opp_def"), 0.0)

    def test_two_values(self):
        t = _shots(["A", "B"] * 2, ["B", "A"] * 2)
        s = self._strengths({"A": 0.3, "B": -0.3}, {"A": 0.1, "B": -0.1})
        out = attach_strength_features(t, s)
        np.testing.assert_array_equal(out.column("opp_def"), [-0.1, 0.1, -0.1, 0.1])

    def test_attacking_refused_on_xg(self):
        t = _shots(["A", "B"], ["B", "A"])
        s = self._strengths({"A": 0.3, "B": -0.3}, {"A": 0.1, "B": -0.1})
        with pytest.raises(DataError):
            attach_strength_features(t, s, "attacking")
        out = attach_strength_features(t, s, "attacking", allow_attacking=True)
        np.testing.assert_array_equal(out.column("team_att"), [0.3, -0.3])

    def test_attacking_on_target(self):
        t = _shots(["A", "B"], ["B", "A"])
        t = EventTable.from_frame(t.frame(), t.spec, "shot-on-target")
        s = self._strengths({"A": 0.3, "B": -0.3}, {"A": 0.1, "B": -0.1})
        out = attach_strength_features(t, s, "attacking")
        np.testing.assert_array_equal(out.column("team_att"), [0.3, -0.3])

    def test_unknown_team(self):
        t = _shots(["A", "B"], ["B", "Z"])
        s = self._strengths({"A": 0.0, "B": 0.0}, {"A": 0.0, "B": 0.0})
        with pytest.raises(UnknownActorError):
            attach_strength_features(t, s)

    def test_per_season(self):
        t = _shots(["A", "B"], ["B", "A"], seasons=["s1", "s2"])
        s1 = self._strengths({"A": 0.0, "B": 0.0}, {"A": 1.0, "B": 2.0})
        s2 = self._strengths({"A": 0.0, "B": 0.0}, {"A": 3.0, "B": 4.0})
        out = attach_strength_features(t, {"s1": s1, "s2": s2})
        np.testing.assert_array_equal(out.column("opp_def"), [2.0, 3.0])
