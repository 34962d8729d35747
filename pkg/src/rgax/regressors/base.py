import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from ..design import FeatureEncoder
from ..errors import DataError, ModelFormatError, SchemaError
from . import _trees

FAMILIES = ("logistic-linear", "gbt", "forest", "constant")
FORMAT_NAME = "rgax-model"
FORMAT_VERSION = 1
PROB_CLIP = 1e-12


@dataclass(frozen=True)
class TuningGrid:
    """Hyperparameter grids.

    ``mtry=None`` resolves to ``{1, floor(sqrt(p)), p}`` for p features.
    """

    learning_rates: tuple = (0.001, 0.005, 0.01, 0.1, 0.5, 1.0)
    gbt_depths: tuple = (1, 3, 4, 5, 7, 9)
    patience: int = 20
    folds: int = 5
    max_rounds: int = 500
    mtry: tuple = None
    forest_depths: tuple = (1, 2, 3, 4, 5)
    n_trees: int = 500

    def __post_init__(self):
        for name in ("learning_rates", "gbt_depths", "forest_depths"):
            vals = getattr(self, name)
            object.__setattr__(self, name, tuple(vals))
            if any(v <= 0 for v in vals):
                raise DataError(f"grid values for {name} must be positive")
        if self.mtry is not None:
            object.__setattr__(self, "mtry", tuple(int(m) for m in self.mtry))
            if any(m <= 0 for m in self.mtry):
                raise DataError("mtry values must be positive")
        if self.patience <= 0 or self.folds < 2 or self.max_rounds <= 0 or self.n_trees <= 0:
            raise DataError("patience, max_rounds, n_trees must be positive and folds >= 2")

    def gbt_cells(self):
        return [(lr, d) for lr in self.learning_rates for d in self.gbt_depths]

    def mtry_values(self, p):
        if self.mtry is None:
            vals = sorted({1, max(1, int(math.floor(math.sqrt(p)))), p})
        else:
            vals = sorted(set(self.mtry))
            if any(m > p for m in vals):
                raise DataError(f"mtry values {vals} exceed feature dimension {p}")
        return vals

    def forest_cells(self, p):
        return [(m, d) for m in self.mtry_values(p) for d in self.forest_depths]


def _readonly(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FittedRegressor:
    """An immutable fitted prediction function.

    ``state`` holds family-specific arrays (coefficients or stacked trees).
    For forests, ``oob_prediction`` holds out-of-bag predictions for the
    training rows.
    """

    family: str
    params: dict
    diagnostics: dict
    state: dict
    n_features: int
    probability: bool
    encoder: FeatureEncoder = None
    feature_names: tuple = ()
    oob_prediction: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown model family {self.family!r}")
        object.__setattr__(self, "state",
                           {k: _readonly(v) if isinstance(v, np.ndarray) else v
                            for k, v in self.state.items()})
        if self.oob_prediction is not None:
            object.__setattr__(self, "oob_prediction", _readonly(self.oob_prediction))

    @property
    def supports_oob(self):
        return self.oob_prediction is not None

    def design(self, features):
        return as_design(features, self.encoder, self.n_features)

    def predict(self, features, clip=True):
        return predict(self, features, clip=clip)


def as_design(features, encoder=None, n_features=None):
    """Numeric design matrix from an array, DataFrame or EventTable."""
    from ..events import EventTable

    if isinstance(features, EventTable):
        features = features.feature_frame()
    if isinstance(features, pd.DataFrame):
        if encoder is None:
            X = features.to_numpy(dtype=float)
        else:
            X = encoder.transform(features)
    else:
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
    if n_features is not None and X.shape[1] != n_features:
        raise SchemaError(f"feature schema mismatch: got {X.shape[1]} columns, "
                          f"model expects {n_features}")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite values in design matrix")
    return np.ascontiguousarray(X)


def prepare_training(features, columns=None):
    """Fit an encoder when given a frame/table; returns (X, encoder, names)."""
    from ..events import EventTable

    if isinstance(features, EventTable):
        columns = features.spec.model_columns if columns is None else columns
        features = features.feature_frame()
    if isinstance(features, pd.DataFrame):
        if columns is None:
            columns = [(c, "categorical" if features[c].dtype == object else "numeric")
                       for c in features.columns]
        enc = FeatureEncoder.fit(features, columns)
        X = enc.transform(features)
        return np.ascontiguousarray(X), enc, tuple(enc.output_names)
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite values in design matrix")
    return np.ascontiguousarray(X), None, tuple(f"x{j}" for j in range(X.shape[1]))


def raw_predict(model, X):
    s = model.state
    if model.family == "constant":
        return np.full(X.shape[0], float(s["value"]))
    if model.family == "logistic-linear":
        eta = s["coef"][0] + X @ s["coef"][1:] if s["intercept"] else X @ s["coef"]
        return expit(eta)
    if model.family == "gbt":
        if "constant" in s:
            return np.full(X.shape[0], float(s["constant"]))
        F = float(s["base"])
        if s["feature"].shape[0] > 0:
            F = F + _trees.predict_raw_sum(X, s["feature"], s["threshold"], s["left"],
                                           s["right"], s["value"])
        else:
            F = np.full(X.shape[0], F)
        return expit(F) if s["loss"] == "logistic" else F
    if model.family == "forest":
        n_trees = s["feature"].shape[0]
        return _trees.predict_raw_sum(X, s["feature"], s["threshold"], s["left"],
                                      s["right"], s["value"]) / n_trees
    raise DataError(f"unknown model family {model.family!r}")


def predict(model, features, clip=True):
    """Predictions for new rows.

    Probability-mode outputs are clipped to ``[1e-12, 1 - 1e-12]`` unless
    ``clip`` is False.
    """
    X = model.design(features)
    out = raw_predict(model, X)
    if model.probability and clip:
        out = np.clip(out, PROB_CLIP, 1.0 - PROB_CLIP)
    return out


def constant_model(value, n_features=0, probability=False, encoder=None, label="constant"):
    """A regressor predicting ``value`` everywhere (e.g. zero or a sample mean)."""
    return FittedRegressor("constant", {"value": float(value), "label": label},
                           {}, {"value": float(value)}, n_features, probability, encoder)


# --- persistence ----------------------------------------------------------

def _encode(v):
    if isinstance(v, np.ndarray):
        return {"__array__": v.tolist(), "dtype": str(v.dtype), "shape": list(v.shape)}
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {k: _encode(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_encode(x) for x in v]
    return v


def _decode(v):
    if isinstance(v, dict):
        if "__array__" in v:
            return np.asarray(v["__array__"], dtype=v["dtype"]).reshape(v["shape"])
        return {k: _decode(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_decode(x) for x in v]
    return v


def model_to_dict(model):
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "family": model.family,
        "params": _encode(model.params),
        "diagnostics": _encode(model.diagnostics),
        "state": _encode(model.state),
        "n_features": model.n_features,
        "probability": model.probability,
        "encoder": None if model.encoder is None else model.encoder.to_dict(),
        "feature_names": list(model.feature_names),
        "oob_prediction": _encode(model.oob_prediction),
    }


def model_from_dict(d):
    if not isinstance(d, dict) or d.get("format") != FORMAT_NAME:
        raise ModelFormatError("not a model file")
    version = d.get("version")
    if not isinstance(version, int) or version > FORMAT_VERSION or version < 1:
        raise ModelFormatError(f"unsupported model format version {version!r} "
                               f"(this library reads up to {FORMAT_VERSION})")
    try:
        return FittedRegressor(
            family=d["family"], params=_decode(d["params"]),
            diagnostics=_decode(d["diagnostics"]), state=_decode(d["state"]),
            n_features=int(d["n_features"]), probability=bool(d["probability"]),
            encoder=None if d["encoder"] is None else FeatureEncoder.from_dict(d["encoder"]),
            feature_names=tuple(d.get("feature_names", ())),
            oob_prediction=_decode(d.get("oob_prediction")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from exc


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from exc
    return model_from_dict(d)
