"""Cumulative hazards, martingale residuals and censored-response metrics.

Survival tables are event tables with discipline ``injury-spell``: the
observed time ``min(T*, C)`` in the outcome column and the event flag
``1(T* <= C)`` in the event column. With a fitted cumulative hazard the
martingale residual ``delta - Lambda(Y, Z)`` plays the role of the outcome
residual, so IAX and rIAX share all plumbing with GAX and rGAX.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .design import FeatureEncoder
from .errors import ConvergenceError, DataError, SchemaError, SeparationError
from .events import Column, EventTable, FeatureSpec, actor_indicator
from .gcm import IntervalSpec
from .metrics import (MetricConfig, actor_seed, classical_sum, evaluate_feature,
                      evaluate_residuals, fit_propensity, _design)
from .regressors import FittedRegressor
from .regressors.base import prepare_training
from .regressors.logistic import check_rank

FAMILIES = ("nelson-aalen", "cox-breslow")


def survival_table(time, event, actor_ids, features=None):
    """Build an injury-spell table from columns; ``features`` maps name -> values."""
    features = dict(features or {})
    frame = pd.DataFrame({"time": np.asarray(time, dtype=float),
                          "event": np.asarray(event, dtype=float),
                          "actor_id": [str(a) for a in actor_ids]})
    cols = []
    for name, values in features.items():
        values = np.asarray(values)
        kind = "numeric" if np.issubdtype(values.dtype, np.number) else "categorical"
        frame[name] = values
        cols.append(Column(name, kind))
    return EventTable.from_frame(frame, FeatureSpec.injuries(cols), "injury-spell")


def _check(table):
    if table.discipline != "injury-spell":
        raise DataError(f"expected an injury-spell table, got {table.discipline!r}")
    if not np.any(table.event == 1):
        raise DataError("no events observed; the hazard is not estimable")


@dataclass(frozen=True, eq=False)
class CumulativeHazardModel:
    """Step-function baseline hazard, optionally scaled by ``exp(z' coef)``.

    ``times`` are the distinct event times and ``jumps`` the hazard
    increments there. Cox fits store coefficients for centred covariates;
    ``center`` is subtracted before the linear predictor.
    """

    family: str
    times: np.ndarray
    jumps: np.ndarray
    coef: np.ndarray = None
    center: np.ndarray = None
    encoder: FeatureEncoder = None
    feature_names: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown hazard family {self.family!r}")
        for name in ("times", "jumps", "coef", "center"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float)
                v.flags.writeable = False
                object.__setattr__(self, name, v)

    def baseline(self, t):
        """Baseline cumulative hazard at times ``t``."""
        t = np.asarray(t, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.jumps)])
        return cum[np.searchsorted(self.times, t, side="right")]

    def linear_predictor(self, features):
        if self.coef is None:
            return None
        X = _covariates(features, self.encoder, len(self.coef))
        return (X - self.center) @ self.coef

    def cumulative_hazard(self, t, features=None):
        """Lambda(t, z); features are ignored by Nelson-Aalen fits."""
        base = self.baseline(t)
        if self.coef is None:
            return base
        if features is None:
            raise SchemaError("Cox hazard needs covariates")
        return base * np.exp(self.linear_predictor(features))


def _covariates(features, encoder, p):
    if isinstance(features, EventTable):
        features = features.feature_frame()
    if isinstance(features, pd.DataFrame):
        X = encoder.transform(features) if encoder is not None else features.to_numpy(float)
    else:
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
    if X.shape[1] != p:
        raise SchemaError(f"feature schema mismatch: got {X.shape[1]} columns, model "
                          f"expects {p}")
    return X


def _event_counts(time, event):
    """Distinct event times, event counts there, and at-risk counts."""
    ev_times, d = np.unique(time[event == 1], return_counts=True)
    sorted_t = np.sort(time)
    at_risk = len(time) - np.searchsorted(sorted_t, ev_times, side="left")
    return ev_times, d.astype(float), at_risk.astype(float)


def fit_nelson_aalen(table):
    """Nelson-Aalen estimate ``sum_{s <= t} d_s / n_s``; features are ignored."""
    _check(table)
    times, d, r = _event_counts(table.outcome, table.event)
    return CumulativeHazardModel("nelson-aalen", times, d / r,
                                 diagnostics={"n": table.n_rows, "events": int(d.sum())})


def _partial_likelihood(Z, time, event, eta, ev_times):
    """Breslow log partial likelihood, score and information at ``eta``."""
    order = np.argsort(time, kind="stable")
    ts, Zs = time[order], Z[order]
    lp = Zs @ eta
    shift = lp.max()
    w = np.exp(lp - shift)
    S0 = np.cumsum(w[::-1])[::-1]
    S1 = np.cumsum((w[:, None] * Zs)[::-1], axis=0)[::-1]
    S2 = np.cumsum((w[:, None, None] * Zs[:, :, None] * Zs[:, None, :])[::-1], axis=0)[::-1]
    first = np.searchsorted(ts, ev_times, side="left")
    dmask = event == 1
    idx = np.searchsorted(ev_times, time[dmask])
    d = np.bincount(idx, minlength=len(ev_times)).astype(float)
    zsum = np.zeros((len(ev_times), Z.shape[1]))
    np.add.at(zsum, idx, Z[dmask])
    s0, s1, s2 = S0[first], S1[first], S2[first]
    ll = float(np.sum(zsum @ eta) - np.sum(d * (np.log(s0) + shift)))
    mean = s1 / s0[:, None]
    grad = zsum.sum(axis=0) - (d[:, None] * mean).sum(axis=0)
    info = np.einsum("k,kij->ij", d, s2 / s0[:, None, None] - mean[:, :, None] * mean[:, None, :])
    return ll, grad, info, d, s0, shift


def fit_cox_breslow(table, features=None, *, max_iter=50, tol=1e-8):
    """Cox proportional-hazards fit with Breslow ties and baseline.

    Newton-Raphson with step halving on the partial likelihood. Raises
    SeparationError when the likelihood increases monotonically (a
    coefficient diverging) and ConvergenceError after ``max_iter`` steps.
    """
    _check(table)
    cols = table.spec.model_columns if features is None else \
        [c for c in table.spec.model_columns if c[0] in set(features)]
    if features is not None and len(cols) != len(set(features)):
        raise SchemaError(f"unknown features in {sorted(features)}")
    if not cols:
        raise DataError("Cox fit needs at least one feature; use fit_nelson_aalen")
    X, enc, names = prepare_training(table.feature_frame()[[c[0] for c in cols]], cols)
    check_rank(np.column_stack([np.ones(len(X)), X]), ("(intercept)",) + tuple(names))
    center = X.mean(axis=0)
    Z = X - center
    time, event = table.outcome, table.event
    ev_times = np.unique(time[event == 1])

    eta = np.zeros(Z.shape[1])
    ll, grad, info, *_ = _partial_likelihood(Z, time, event, eta, ev_times)
    trace = [ll]
    converged = False
    scale = np.maximum(Z.std(axis=0), 1e-12)
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix; monotone likelihood") from None
        t = 1.0
        while True:
            cand = eta + t * step
            ll_c, g_c, i_c, *_ = _partial_likelihood(Z, time, event, cand, ev_times)
            if ll_c >= ll - 1e-12 or t < 1e-10:
                break
            t *= 0.5
        eta, ll, grad, info = cand, ll_c, g_c, i_c
        trace.append(ll)
        if np.max(np.abs(eta * scale)) > 30.0:
            raise SeparationError("monotone likelihood: coefficients diverge "
                                  f"({dict(zip(names, np.round(eta, 2)))})")
        if np.max(np.abs(t * step)) < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Cox fit did not converge in {max_iter} iterations")
    _, _, _, d, s0, shift = _partial_likelihood(Z, time, event, eta, ev_times)
    jumps = d / (s0 * np.exp(shift))
    return CumulativeHazardModel(
        "cox-breslow", ev_times, jumps, coef=eta, center=center, encoder=enc,
        feature_names=tuple(names),
        diagnostics={"iterations": it, "loglik": ll, "loglik_trace": trace,
                     "n": table.n_rows, "events": int(d.sum())})


def martingale_residuals(model, table):
    """``delta_i - Lambda(Y_i, Z_i)`` for every row."""
    if table.spec.event is None:
        raise SchemaError("table has no event column")
    feats = table if model.coef is not None else None
    return table.event - model.cumulative_hazard(table.outcome, feats)


def compute_riax(table, actor, hazard_model, propensity_model=None, interval_spec=None,
                 config=None):
    """IAX and rIAX of one actor.

    ``propensity_model`` may be a fitted regressor, an array of f(Z) values,
    or None, in which case it is fit on the table features per ``config``.
    """
    config = config or MetricConfig(metric="iax")
    spec = interval_spec or config.interval or IntervalSpec()
    x = actor_indicator(table, actor)
    rY = martingale_residuals(hazard_model, table)
    if propensity_model is None:
        fhat, info = fit_propensity(_design(table), x, config.propensity, config.grid,
                                    actor_seed(config.seed, actor),
                                    config.propensity_cross_fitting, config.folds)
    elif isinstance(propensity_model, FittedRegressor):
        fhat, info = propensity_model.predict(table), {"family": propensity_model.family}
    else:
        fhat, info = np.asarray(propensity_model, dtype=float), {"family": "precomputed"}
    ev = evaluate_residuals(actor, rY, x, fhat, spec, False, info,
                            int(np.sum((x == 1) & (table.event == 1))))
    return ev


def compute_iax(table, actor, hazard_model):
    """Classical IAX: martingale residuals summed over the actor's spells."""
    return classical_sum(martingale_residuals(hazard_model, table), actor_indicator(table, actor))


def feature_riax(table, feature, hazard_model, config=None):
    """rIAX for a single feature column instead of an actor indicator."""
    return evaluate_feature(table, feature, hazard_model, config or MetricConfig(metric="iax"))
