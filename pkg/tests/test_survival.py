import numpy as np
import pytest

from rgax.errors import DataError, SchemaError, SeparationError
from rgax.metrics import MetricConfig
from rgax.simlab import simulate_cox
from rgax.survival import (compute_iax, compute_riax, feature_riax, fit_cox_breslow,
                           fit_nelson_aalen, martingale_residuals, survival_table)


class TestNelsonAalen:
    def test_hand_values(self):
        t = survival_table([1, 2, 3], [1, 1, 1], ["a", "b", "c"])
        m = fit_nelson_aalen(t)
        np.testing.assert_allclose(m.baseline([0.5, 1, 2, 3, 10]),
                                   [0.0, 1 / 3, 5 / 6, 11 / 6, 11 / 6], atol=1e-15)

    def test_censored_only(self):
        t = survival_table([2.0], [0], ["a"])
        with pytest.raises(DataError):
            fit_nelson_aalen(t)

    def test_ties(self):
        t = survival_table([1, 1, 2, 2], [1, 1, 0, 1], list("abcd"))
        m = fit_nelson_aalen(t)
        np.testing.assert_allclose(m.baseline([1, 2]), [0.5, 1.0])

    def test_residuals_sum_to_zero(self):
        tab = simulate_cox(300, (0.5,), 0.3, seed=1)
        m = fit_nelson_aalen(tab)
        assert abs(martingale_residuals(m, tab).sum()) < 1e-8

    def test_exhaustive_partition_sums_to_zero(self):
        tab = simulate_cox(200, (0.5,), 0.0, seed=2)
        m = fit_nelson_aalen(tab)
        total = sum(compute_iax(tab, a, m) for a in tab.actors)
        assert abs(total) < 1e-8


class TestCox:
    def test_identical_groups(self):
        time = np.tile([1.0, 2.0, 3.0, 4.0, 5.0], 2)
        event = np.tile([1, 0, 1, 1, 0], 2)
        g = np.repeat([0.0, 1.0], 5)
        tab = survival_table(time, event, ["a"] * 10, {"g": g})
        m = fit_cox_breslow(tab)
        assert abs(m.coef[0]) < 1e-4

    def test_residuals_sum_to_zero(self):
        tab = simulate_cox(400, (0.5, -0.3), 0.25, seed=3)
        m = fit_cox_breslow(tab)
        assert abs(martingale_residuals(m, tab).sum()) < 1e-6

    def test_all_tied(self):
        tab = survival_table(np.ones(6), np.ones(6), list("aabbcc"),
                             {"z": np.array([0.1, -0.4, 0.3, 0.2, -0.5, 0.3])})
        m = fit_cox_breslow(tab)
        lin = np.exp((tab.column("z") - m.center[0]) * m.coef[0])
        assert np.isfinite(m.jumps).all()
        assert m.jumps[0] == pytest.approx(6.0 / lin.sum())

    def test_recovery(self):
        hits = 0
        for s in range(40):
            tab = simulate_cox(1000, (0.7,), 0.2, seed=100 + s)
            hits += abs(fit_cox_breslow(tab).coef[0] - 0.7) <= 0.15
        assert hits / 40 >= 0.95

    def test_monotone_likelihood(self):
        z = np.arange(20.0)
        tab = survival_table(20 - z, np.ones(20), ["a"] * 20, {"z": z})
        with pytest.raises(SeparationError):
            fit_cox_breslow(tab)

    def test_hazard_monotone_in_time(self):
        tab = simulate_cox(300, (0.5, -0.3), 0.2, seed=4)
        for m in (fit_cox_breslow(tab), fit_nelson_aalen(tab)):
            grid = np.linspace(0, tab.outcome.max() * 1.1, 200)
            feats = tab.feature_frame().iloc[[0] * 200] if m.coef is not None else None
            v = m.cumulative_hazard(grid, feats)
            assert np.all(np.diff(v) >= 0)

    def test_schema_mismatch(self):
        tab = simulate_cox(100, (0.5, -0.3), 0.2, seed=5)
        m = fit_cox_breslow(tab)
        with pytest.raises(SchemaError):
            m.cumulative_hazard([1.0], np.ones((1, 5)))


class TestResiduals:
    def test_direct(self):
        tab = survival_table([1, 2, 3], [1, 1, 1], ["a", "b", "c"])
        m = fit_nelson_aalen(tab)
        np.testing.assert_allclose(martingale_residuals(m, tab), [2 / 3, 1 / 6, -5 / 6])

    def test_censored_before_first_event(self):
        tab = survival_table([0.5, 1, 2], [0, 1, 1], ["a", "b", "c"])
        m = fit_nelson_aalen(tab)
        assert martingale_residuals(m, tab)[0] == 0.0
        assert np.all(martingale_residuals(m, tab) <= 1)


class TestRiax:
    def test_zero_propensity_reduces(self):
        tab = simulate_cox(300, (0.5, -0.3), 0.2, seed=6)
        m = fit_cox_breslow(tab)
        ev = compute_riax(tab, "A", m, np.zeros(tab.n_rows))
        assert ev.residualized == ev.classical == compute_iax(tab, "A", m)

    def test_fitted_propensity(self):
        tab = simulate_cox(300, (0.5, -0.3), 0.2, seed=7)
        ev = compute_riax(tab, "A", fit_cox_breslow(tab),
                          config=MetricConfig(metric="iax", propensity="logistic"))
        assert np.isfinite(ev.gcm.statistic)
        assert ev.n_units == int(np.sum(tab.actor_ids == "A"))

    def test_small_dataset_shape(self):
        rng = np.random.default_rng(8)
        event = np.array([1] * 33 + [0] * 9)
        rng.shuffle(event)
        tab = survival_table(rng.exponential(30, 42) + 1, event,
                             rng.choice(["p1", "p2", "p3"], 42),
                             {"age": rng.normal(27, 4, 42), "minutes": rng.normal(900, 200, 42)})
        assert tab.n_rows == 42 and tab.n_positive == 33
        m = fit_cox_breslow(tab)
        cfg = MetricConfig(metric="iax", propensity="logistic")
        for a in tab.actors:
            assert np.isfinite(compute_riax(tab, a, m, config=cfg).residualized)
        ev = feature_riax(tab, "age", fit_cox_breslow(tab, ["minutes"]),
                          MetricConfig(metric="iax", propensity="constant"))
        assert np.isfinite(ev.residualized)
