import json

import numpy as np
import pandas as pd
import pytest

from rgax.errors import DataError, ModelFormatError, RankDeficientError, SchemaError, \
    SeparationError
from rgax.regressors import (TuningGrid, constant_model, fit_forest, fit_gbt, fit_logistic,
                             load_model, save_model)
from rgax.regressors.base import PROB_CLIP

SMALL = TuningGrid(learning_rates=(0.1,), gbt_depths=(1, 2), patience=5, folds=3,
                   max_rounds=50, forest_depths=(2, 3), n_trees=60)


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


@pytest.fixture
def binary_data():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((400, 3))
    y = (rng.random(400) < _expit(0.5 + X[:, 0] - X[:, 1])).astype(float)
    return X, y


class TestTuningGrid:
    def test_default_cells(self):
        assert len(TuningGrid().gbt_cells()) == 36

    def test_mtry_nine(self):
        assert TuningGrid().mtry_values(9) == [1, 3, 9]

    def test_mtry_floor(self):
        assert TuningGrid().mtry_values(5) == [1, 2, 5]
        assert TuningGrid().mtry_values(1) == [1]

    def test_invalid(self):
        with pytest.raises(DataError):
            TuningGrid(learning_rates=(0.0,))
        with pytest.raises(DataError):
            TuningGrid(mtry=(4,)).mtry_values(3)
        with pytest.raises(DataError):
            TuningGrid(folds=1)


class TestLogistic:
    def test_intercept_only(self):
        y = np.array([1.0] * 3 + [0.0] * 7)
        m = fit_logistic(np.empty((10, 0)), y)
        assert m.state["coef"][0] == pytest.approx(np.log(0.3 / 0.7), abs=1e-8)
        assert m.state["coef"][0] == pytest.approx(-0.8473, abs=1e-4)

    def test_symmetric_slope_zero(self):
        # every x level carries the same outcome mix
        x = np.repeat([-2.0, -1.0, 1.0, 2.0], 5)
        y = np.tile([1.0, 0.0, 1.0, 0.0, 1.0], 4)
        m = fit_logistic(x[:, None], y)
        assert abs(m.state["coef"][1]) < 1e-6

    def test_separation(self):
        x = np.arange(20.0)
        with pytest.raises(SeparationError):
            fit_logistic(x[:, None], (x > 9.5).astype(float))

    def test_rank_deficient_names_columns(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(50)
        X = pd.DataFrame({"a": a, "b": 2 * a})
        with pytest.raises(RankDeficientError, match="b"):
            fit_logistic(X, (rng.random(50) < 0.5).astype(float))

    def test_loglik_monotone(self, binary_data):
        m = fit_logistic(*binary_data)
        assert np.all(np.diff(m.diagnostics["loglik_trace"]) >= -1e-12)
        assert m.diagnostics["converged"]

    def test_score_equations(self, binary_data):
        X, y = binary_data
        m = fit_logistic(X, y)
        p = m.predict(X)
        D = np.column_stack([np.ones(len(y)), X])
        np.testing.assert_allclose(D.T @ (y - p), 0.0, atol=1e-8)

    def test_fitted_values_reproduced(self, binary_data):
        X, y = binary_data
        m = fit_logistic(X, y)
        eta = m.state["coef"][0] + X @ m.state["coef"][1:]
        np.testing.assert_allclose(m.predict(X), _expit(eta), rtol=1e-14)

    def test_non_binary_targets(self):
        with pytest.raises(DataError):
            fit_logistic(np.ones((4, 1)), [0, 1, 2, 1])


class TestGbt:
    def test_constant_target(self):
        X = np.random.default_rng(0).standard_normal((30, 2))
        m = fit_gbt(X, np.full(30, 0.37), SMALL, loss="squared")
        np.testing.assert_allclose(m.predict(X), 0.37)
        assert m.params["n_rounds"] == 0

    def test_stump_recovers_means(self):
        x = np.repeat([0.0, 1.0], 20)
        y = np.where(x == 1, 5.0, 2.0)
        grid = TuningGrid(learning_rates=(1.0,), gbt_depths=(1,), patience=3, folds=2,
                          max_rounds=1)
        m = fit_gbt(x[:, None], y, grid, loss="squared")
        assert m.params["n_rounds"] == 1
        np.testing.assert_allclose(m.predict(np.array([[0.0], [1.0]])), [2.0, 5.0],
                                   atol=1e-12)

    def test_cv_table_covers_grid(self, binary_data):
        m = fit_gbt(*binary_data, SMALL)
        assert len(m.diagnostics["cv"]) == len(SMALL.gbt_cells())
        p = m.predict(binary_data[0])
        assert np.all((p >= PROB_CLIP) & (p <= 1 - PROB_CLIP))

    def test_deterministic(self, binary_data):
        a = fit_gbt(*binary_data, SMALL, seed=3).predict(binary_data[0])
        b = fit_gbt(*binary_data, SMALL, seed=3).predict(binary_data[0])
        assert a.tobytes() == b.tobytes()

    def test_empty_grid_and_unknown_loss(self, binary_data):
        with pytest.raises(DataError):
            fit_gbt(*binary_data, TuningGrid(learning_rates=()))
        with pytest.raises(DataError):
            fit_gbt(*binary_data, SMALL, loss="hinge")

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            fit_gbt(np.ones((4, 1)), [0, 1, 0, 1], SMALL)


class TestForest:
    def test_constant_target_oob(self):
        X = np.random.default_rng(0).standard_normal((40, 2))
        m = fit_forest(X, np.full(40, 2.5), SMALL, probability=False)
        np.testing.assert_allclose(m.oob_prediction, 2.5)

    def test_noise_misclassification(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((500, 3))
        y = (rng.random(500) < 0.5).astype(float)
        m = fit_forest(X, y, SMALL, seed=1)
        assert 0.4 <= m.diagnostics["oob_misclassification"] <= 0.6

    def test_oob_differs_from_full(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((20, 2))
        y = X[:, 0] + 0.1 * rng.standard_normal(20)
        grid = TuningGrid(forest_depths=(3,), mtry=(2,), n_trees=50)
        m = fit_forest(X, y, grid, probability=False, keep_inbag=True)
        full = m.predict(X)
        ever_inbag = m.state["inbag"].sum(axis=0) > 0
        assert np.all(m.oob_prediction[ever_inbag] != full[ever_inbag])

    def test_never_out_of_bag(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((200, 2))
        with pytest.raises(DataError, match="tree count"):
            fit_forest(X, X[:, 0], TuningGrid(n_trees=1, forest_depths=(2,)),
                       probability=False)

    def test_schedule_independent_seeds(self, binary_data):
        a = fit_forest(*binary_data, SMALL, seed=11)
        b = fit_forest(*binary_data, SMALL, seed=11)
        assert a.oob_prediction.tobytes() == b.oob_prediction.tobytes()

    def test_immutable(self, binary_data):
        m = fit_forest(*binary_data, SMALL)
        with pytest.raises(ValueError):
            m.oob_prediction[0] = 0.0


class TestPredictAndIo:
    def test_unseen_level(self):
        fr = pd.DataFrame({"z": np.linspace(-1, 1, 40), "c": ["a", "b"] * 20})
        y = np.tile([0.0, 1.0, 1.0, 0.0], 10)
        m = fit_logistic(fr, y, columns=[("z", "numeric"), ("c", "categorical")])
        p = m.predict(pd.DataFrame({"z": [0.0], "c": ["never-seen"]}))
        assert np.isfinite(p).all()

    def test_schema_mismatch(self, binary_data):
        m = fit_logistic(*binary_data)
        with pytest.raises(SchemaError):
            m.predict(np.ones((3, 2)))

    @pytest.mark.parametrize("family", ["logistic", "gbt", "forest", "constant"])
    def test_round_trip(self, binary_data, tmp_path, family):
        X, y = binary_data
        m = {"logistic": lambda: fit_logistic(X, y),
             "gbt": lambda: fit_gbt(X, y, SMALL),
             "forest": lambda: fit_forest(X, y, SMALL),
             "constant": lambda: constant_model(0.3, 3, probability=True)}[family]()
        path = tmp_path / "m.json"
        save_model(m, path)
        back = load_model(path)
        new = np.random.default_rng(9).standard_normal((100, 3))
        np.testing.assert_allclose(back.predict(new), m.predict(new), atol=1e-12)

    def test_newer_version_rejected(self, binary_data, tmp_path):
        path = tmp_path / "m.json"
        save_model(fit_logistic(*binary_data), path)
        d = json.loads(path.read_text())
        d["version"] = 99
        path.write_text(json.dumps(d))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{not json")
        with pytest.raises(ModelFormatError):
            load_model(path)
