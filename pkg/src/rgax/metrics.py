"""Per-actor classical and residualized metrics with inference.

Every metric in the family has the same shape. With outcome residuals
``rY = Y - h(Z)`` (martingale residuals for injury spells) and actor
indicator ``X``:

* classical metric: ``sum_{j: X_j = 1} rY_j`` (GAX, qSI, CPAE, IAX),
* residualized metric: ``sum_j rY_j * (X_j - f(Z_j))`` (rGAX and siblings),

both negated for goalkeeper metrics (GSAX). The residualized form is the
sum-scale sample GCM and carries the inference.
"""

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .errors import DataError, DegenerateVarianceError, NumericError, RgaxError, SchemaError
from .gcm import IntervalSpec, confidence_interval, gcm_from_residuals, non_nil_test
from .multiplicity import DEPENDENCE_CAVEAT, adjust, canonical_method
from .regressors import FittedRegressor, TuningGrid, fit_forest, fit_gbt, fit_logistic
from .regressors.base import prepare_training

METRICS = ("gax", "gsax", "qsi", "cpae", "iax")
PROPENSITY_FAMILIES = ("forest", "gbt", "logistic", "constant", "zero")
OUTCOME_FAMILIES = ("gbt", "forest", "logistic")
CROSS_FITTING = ("auto", "none", "oob", "kfold")
QSI_MODES = ("indicator", "score-value")

_DISCIPLINE = {"gax": ("shot",), "gsax": ("shot-on-target",), "qsi": ("basketball-shot",),
               "cpae": ("pass",), "iax": ("injury-spell",)}


@dataclass(frozen=True)
class MetricConfig:
    """Settings of one evaluation run.

    ``cross_fitting='auto'`` uses out-of-bag predictions for forest
    propensities and in-sample predictions otherwise. ``outcome_family`` is
    only needed when the outcome model is trained here (k-fold cross-fitting
    of the outcome model, or ``exclude_actor``).
    """

    metric: str = "gax"
    qsi_mode: str = "indicator"
    propensity: str = "forest"
    grid: TuningGrid = field(default_factory=TuningGrid)
    outcome_source: str = "load-file"
    outcome_family: str = None
    cross_fitting: str = "auto"
    folds: int = 5
    exclude_actor: bool = False
    interval: IntervalSpec = field(default_factory=IntervalSpec)
    adjust: str = "holm"
    seed: int = 0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise DataError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.qsi_mode not in QSI_MODES:
            raise DataError(f"qsi mode must be one of {QSI_MODES}")
        if self.propensity not in PROPENSITY_FAMILIES:
            raise DataError(f"unknown propensity family {self.propensity!r}")
        if self.cross_fitting not in CROSS_FITTING:
            raise DataError(f"cross-fitting must be one of {CROSS_FITTING}")
        if self.cross_fitting == "oob" and self.propensity != "forest":
            raise DataError("out-of-bag cross-fitting needs a forest propensity")
        if self.outcome_source not in ("train-fresh", "load-file"):
            raise DataError("outcome source must be train-fresh or load-file")
        if self.outcome_family is not None and self.outcome_family not in OUTCOME_FAMILIES:
            raise DataError(f"unknown outcome family {self.outcome_family!r}")
        if self.exclude_actor and self.outcome_family is None:
            raise DataError("exclude_actor needs an outcome_family to retrain with")
        if self.folds < 2:
            raise DataError("need at least two folds")
        canonical_method(self.adjust)

    @property
    def sign_flip(self):
        return self.metric == "gsax"

    @property
    def propensity_cross_fitting(self):
        if self.cross_fitting == "auto":
            return "oob" if self.propensity == "forest" else "none"
        return self.cross_fitting

    def to_dict(self):
        d = asdict(self)
        d["grid"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["grid"].items()}
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True, eq=False)
class ActorEvaluation:
    actor_id: str
    n_units: int
    n_positive: int
    classical: float
    gcm: object
    p_value: float
    interval: tuple
    propensity: dict = field(default_factory=dict)
    rank: int = None
    p_adjusted: float = None

    @property
    def residualized(self):
        return self.gcm.sum_scale_estimate

    def to_dict(self):
        g = self.gcm
        return {
            "actor_id": self.actor_id,
            "n_units": self.n_units,
            "n_positive": self.n_positive,
            "classical": self.classical,
            "residualized": g.sum_scale_estimate,
            "mean_estimate": g.mean_estimate,
            "sd_sum": g.sd_sum,
            "statistic": g.statistic,
            "p_two_sided": g.p_two_sided,
            "p_greater": g.p_greater,
            "p_less": g.p_less,
            "p_value": self.p_value,
            "p_adjusted": self.p_adjusted,
            "lower": self.interval[0],
            "upper": self.interval[1],
            "rank": self.rank,
            "propensity": self.propensity,
        }


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    evaluations: list
    failures: list
    pearson_r: float
    adjust_method: str
    config: MetricConfig
    provenance: dict

    def __iter__(self):
        return iter(self.evaluations)

    def __len__(self):
        return len(self.evaluations)

    def by_actor(self):
        return {e.actor_id: e for e in self.evaluations}

    @property
    def classical(self):
        return np.array([e.classical for e in self.evaluations])

    @property
    def residualized(self):
        return np.array([e.residualized for e in self.evaluations])

    def to_dict(self):
        cfg = self.config
        return {
            "metric": cfg.metric,
            "sign_flip": cfg.sign_flip,
            "interval": {"level": cfg.interval.level, "sidedness": cfg.interval.sidedness,
                         "rho0": cfg.interval.rho0},
            "p_value_direction": cfg.interval.direction,
            "adjust_method": self.adjust_method,
            "pearson_r": self.pearson_r,
            "n_actors": len(self.evaluations),
            "actors": [e.to_dict() for e in self.evaluations],
            "failures": self.failures,
            "caveats": _caveats(self),
            "provenance": self.provenance,
        }

    def to_json(self):
        return json.dumps(_json_safe(self.to_dict()), indent=2) + "\n"

    def to_csv(self):
        cols = ["actor_id", "n_units", "n_positive", "classical", "residualized",
                "statistic", "p_two_sided", "p_greater", "p_less", "p_value", "p_adjusted",
                "lower", "upper", "rank"]
        lines = [",".join(cols)]
        for e in self.evaluations:
            d = e.to_dict()
            lines.append(",".join(_fmt(d[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def plot_data_csv(self):
        """Inputs of the scatter and interval plots, one row per actor."""
        lines = ["actor_id,classical,residualized,lower,upper,p_value"]
        for e in self.evaluations:
            lines.append(",".join([e.actor_id, _fmt(e.classical), _fmt(e.residualized),
                                   _fmt(e.interval[0]), _fmt(e.interval[1]),
                                   _fmt(e.p_value)]))
        return "\n".join(lines) + "\n"


def _caveats(report):
    out = []
    if report.adjust_method == "benjamini-hochberg":
        out.append(DEPENDENCE_CAVEAT)
    if report.config.metric == "iax":
        out.append("Inference assumes censoring independent of the actor given the "
                   "event time and features, and uninformative censoring; neither is "
                   "checked.")
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def actor_seed(seed, actor_id):
    """Seed for one actor's fits; depends only on the master seed and the id."""
    h = hashlib.sha256(f"{int(seed)}:{actor_id}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def check_table(table, config):
    allowed = _DISCIPLINE[config.metric]
    if table.discipline not in allowed:
        hint = " (filter with on_target_only())" if config.metric == "gsax" else ""
        raise DataError(f"metric {config.metric!r} needs a {allowed[0]!r} table, "
                        f"got {table.discipline!r}{hint}")
    if config.metric == "qsi":
        y = table.outcome
        score_values = np.all(np.isin(y, (0.0, 2.0, 3.0))) and np.any(y > 1)
        if config.qsi_mode == "score-value" and not score_values:
            raise DataError("score-value mode needs outcomes coded 0/2/3")
        if config.qsi_mode == "indicator" and not np.all(np.isin(y, (0.0, 1.0))):
            raise DataError("indicator mode needs 0/1 outcomes")


# --- outcome side -----------------------------------------------------------

def fit_outcome_model(table, family="gbt", grid=None, seed=0, mask=None):
    """Train an outcome regression of Y on the table features.

    Score-valued outcomes (basketball 0/2/3) get a regression fit; binary
    outcomes a probability fit.
    """
    grid = grid or TuningGrid()
    sub = table if mask is None else table.subset(mask)
    y = sub.outcome
    binary = bool(np.all(np.isin(y, (0.0, 1.0))))
    if family == "gbt":
        return fit_gbt(sub, y, grid, "logistic" if binary else "squared", seed=seed)
    if family == "forest":
        return fit_forest(sub, y, grid, probability=binary, seed=seed)
    if family == "logistic":
        if not binary:
            raise DataError("logistic outcome model needs binary outcomes")
        return fit_logistic(sub, y)
    raise DataError(f"unknown outcome family {family!r}")


def outcome_predictions(table, outcome):
    """h(Z) for every row, from a fitted model or precomputed values."""
    if isinstance(outcome, FittedRegressor):
        return outcome.predict(table)
    h = np.asarray(outcome, dtype=float)
    if h.shape != (table.n_rows,):
        raise SchemaError(f"expected {table.n_rows} outcome predictions, got {h.shape}")
    return h


def outcome_residuals(table, outcome, config=None):
    """rY per row: Y - h(Z), or martingale residuals for injury tables."""
    if table.discipline == "injury-spell":
        from .survival import martingale_residuals

        if isinstance(outcome, (np.ndarray, list, tuple)):
            return table.event - np.asarray(outcome, dtype=float)
        return martingale_residuals(outcome, table)
    return table.outcome - outcome_predictions(table, outcome)


def crossfit_outcome(table, family, grid, folds, seed):
    """Out-of-fold outcome predictions from ``folds`` refits."""
    ids = _fold_ids(table.n_rows, folds, seed)
    h = np.empty(table.n_rows)
    for k in range(folds):
        model = fit_outcome_model(table, family, grid, seed=seed + k, mask=ids != k)
        h[ids == k] = model.predict(table.subset(ids == k))
    return h


# --- propensity side --------------------------------------------------------

def _fold_ids(n, k, seed):
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % k
    return ids


def _fit_family(Z, x, family, grid, seed):
    binary = bool(np.all(np.isin(x, (0.0, 1.0))))
    if family == "forest":
        return fit_forest(Z, x, grid, probability=binary, seed=seed)
    if family == "gbt":
        return fit_gbt(Z, x, grid, "logistic" if binary else "squared", seed=seed)
    if family == "logistic":
        if not binary:
            raise DataError("logistic propensity needs a binary exposure")
        return fit_logistic(Z, x)
    raise DataError(f"unknown propensity family {family!r}")


def fit_propensity(Z, x, family="forest", grid=None, seed=0, cross_fitting="auto", folds=5):
    """Predicted E[X | Z] for the training rows (P(X = 1 | Z) for binary X).

    Returns ``(fhat, info)``. ``constant`` is the sample mean of X and
    ``zero`` is f = 0, which reduces the residualized metric to the
    classical one.
    """
    grid = grid or TuningGrid()
    x = np.asarray(x, dtype=float)
    if family == "zero":
        return np.zeros_like(x), {"family": "zero"}
    if family == "constant":
        return np.full_like(x, x.mean()), {"family": "constant", "value": float(x.mean())}
    if cross_fitting == "auto":
        cross_fitting = "oob" if family == "forest" else "none"
    if cross_fitting == "kfold":
        ids = _fold_ids(len(x), folds, seed)
        fhat = np.empty_like(x)
        for k in range(folds):
            tr = ids != k
            if np.all(x[tr] == x[tr][0]):
                fhat[~tr] = x[tr][0]
                continue
            model = _fit_family(Z[tr], x[tr], family, grid, seed + k)
            fhat[~tr] = model.predict(Z[~tr])
        return fhat, {"family": family, "cross_fitting": "kfold", "folds": folds}
    model = _fit_family(Z, x, family, grid, seed)
    if cross_fitting == "oob":
        if not model.supports_oob:
            raise DataError(f"{family} propensity has no out-of-bag predictions")
        fhat = np.asarray(model.oob_prediction, dtype=float)
    else:
        fhat = model.predict(Z)
    return fhat, {"family": family, "cross_fitting": cross_fitting, "params": model.params}


# --- evaluation -------------------------------------------------------------

def evaluate_residuals(actor_id, rY, x, fhat, spec=None, sign_flip=False, info=None,
                       n_positive=0):
    """Classical and residualized metric of one actor from residual columns."""
    spec = spec or IntervalSpec()
    rY = np.asarray(rY, dtype=float)
    x = np.asarray(x, dtype=float)
    classical = classical_sum(rY, x, sign_flip)
    try:
        g = gcm_from_residuals(rY, x - np.asarray(fhat, dtype=float), sign_flip=sign_flip)
    except DegenerateVarianceError as exc:
        raise DegenerateVarianceError(f"actor {actor_id}: {exc}") from None
    if spec.rho0 != 0.0:
        p = non_nil_test(g, spec.rho0, spec.direction)
    else:
        p = g.p_value(spec.direction)
    ci = confidence_interval(g, spec)
    return ActorEvaluation(str(actor_id), int(x.sum()), int(n_positive),
                           classical, g, float(p), (float(ci[0]), float(ci[1])), info or {})


def compute_classical(table, actor, outcome_model, sign_flip=False):
    """Sum over the actor's rows of Y - h(Z), negated when ``sign_flip``."""
    from .events import actor_indicator

    x = actor_indicator(table, actor)
    return classical_sum(outcome_residuals(table, outcome_model), x, sign_flip)


def classical_sum(rY, x, sign_flip=False):
    """Sum of rY over rows with x = 1.

    Computed as ``n * mean(rY * x)``, the same arithmetic as the GCM sum, so
    a zero propensity reproduces it bit for bit.
    """
    R = np.asarray(rY, dtype=float) * np.asarray(x, dtype=float)
    if sign_flip:
        R = -R
    return float(len(R) * np.mean(R))


def _design(table):
    X, _, _ = prepare_training(table)
    if X.shape[1] == 0:
        X = np.zeros((table.n_rows, 1))
    return X


def _positives(table, x):
    flag = table.event if table.spec.event else table.outcome
    return int(np.sum((x == 1) & (flag > 0)))


def _evaluate_actor(table, actor, rY, Z, config):
    from .events import actor_indicator

    x = actor_indicator(table, actor)
    if np.all(x == 1):
        raise DegenerateVarianceError(f"actor {actor}: owns every row, propensity is "
                                      "identically one")
    seed = actor_seed(config.seed, actor)
    if config.exclude_actor:
        model = fit_outcome_model(table, config.outcome_family, config.grid, seed,
                                  mask=x == 0)
        rY = outcome_residuals(table, model)
    fhat, info = fit_propensity(Z, x, config.propensity, config.grid, seed,
                                config.propensity_cross_fitting, config.folds)
    return evaluate_residuals(actor, rY, x, fhat, config.interval, config.sign_flip, info,
                              _positives(table, x))


def compute_residualized(table, actor, outcome_model, config=None):
    """Residualized metric and inference for one actor.

    The propensity is fit on the same features as the outcome model, with
    the actor indicator as target.
    """
    config = config or MetricConfig()
    check_table(table, config)
    rY = outcome_residuals(table, outcome_model)
    return _evaluate_actor(table, actor, rY, _design(table), config)


def _shared_residuals(table, outcome_model, config):
    if config.cross_fitting == "kfold" and config.outcome_family is not None:
        h = crossfit_outcome(table, config.outcome_family, config.grid, config.folds,
                             config.seed)
        return outcome_residuals(table, h), "k-fold out-of-fold"
    return outcome_residuals(table, outcome_model), "in-sample"


def _run(fn, items, threads):
    """Map ``fn`` over items, returning (item, result or exception) in input order."""

    def safe(a):
        try:
            return fn(a)
        except RgaxError as exc:
            return exc
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return NumericError(str(exc))

    if threads <= 1 or len(items) <= 1:
        return [safe(a) for a in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(safe, items))


def pearson(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if len(a) < 2 or np.std(a) == 0 or np.std(b) == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def _model_descriptor(outcome_model):
    if isinstance(outcome_model, FittedRegressor):
        return {"family": outcome_model.family, "params": outcome_model.params}
    return {"family": "precomputed"}


def evaluate_all(table, cohort, outcome_model, config=None, threads=1):
    """Evaluate every actor in ``cohort``.

    Failing actors are recorded in ``report.failures`` and skipped. Results
    do not depend on ``threads``: each actor's seed is derived from the
    master seed and its id, and results are collected in sorted-id order.
    """
    config = config or MetricConfig()
    actors = sorted(str(a) for a in cohort)
    if not actors:
        raise DataError("empty cohort")
    check_table(table, config)
    rY, outcome_mode = _shared_residuals(table, outcome_model, config)
    Z = _design(table)
    results = _run(lambda a: _evaluate_actor(table, a, rY, Z, config), actors, threads)

    evals, failures = [], []
    for a, r in zip(actors, results):
        if isinstance(r, Exception):
            failures.append({"actor_id": a, "error": type(r).__name__, "message": str(r)})
        else:
            evals.append(r)

    method = canonical_method(config.adjust)
    padj = adjust([e.p_value for e in evals], method) if evals else []
    order = sorted(range(len(evals)), key=lambda i: (-evals[i].residualized, evals[i].actor_id))
    ranks = np.empty(len(evals), dtype=int)
    ranks[order] = np.arange(1, len(evals) + 1)
    evals = [replace(e, rank=int(ranks[i]), p_adjusted=float(padj[i]))
             for i, e in enumerate(evals)]
    r = pearson([e.classical for e in evals], [e.residualized for e in evals])
    provenance = {
        "library_version": __version__,
        "seed": config.seed,
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "outcome_model": _model_descriptor(outcome_model),
        "outcome_predictions": outcome_mode,
        "n_rows": table.n_rows,
    }
    return EvaluationReport(evals, failures, r, method, config, provenance)


# --- robustness across outcome models ----------------------------------------

@dataclass(frozen=True, eq=False)
class RobustnessReport:
    """Metrics of the same cohort under several outcome models.

    ``classical`` and ``residualized`` are (actors, models) arrays;
    ``lines`` holds the least-squares line of model b's metric on model a's
    for every pair, and ``dispersion`` the mean absolute pairwise difference.
    """

    actors: list
    labels: list
    classical: np.ndarray
    residualized: np.ndarray
    lines: list
    dispersion: dict
    failures: list

    def to_dict(self):
        return _json_safe({"actors": self.actors, "labels": self.labels,
                           "classical": self.classical.tolist(),
                           "residualized": self.residualized.tolist(),
                           "lines": self.lines, "dispersion": self.dispersion,
                           "failures": self.failures})


def fit_line(a, b):
    """Slope and intercept of the least-squares line of b on a."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    va = np.var(a)
    if va == 0:
        return float("nan"), float("nan")
    slope = float(np.mean((a - a.mean()) * (b - b.mean())) / va)
    return slope, float(b.mean() - slope * a.mean())


def pairwise_dispersion(M):
    """Mean over actors and model pairs of |M[:, a] - M[:, b]|."""
    k = M.shape[1]
    diffs = [np.abs(M[:, a] - M[:, b]) for a in range(k) for b in range(a + 1, k)]
    return float(np.mean(diffs)) if diffs else 0.0


def compare_models_robustness(table, cohort, outcome_models, config=None, labels=None,
                              threads=1):
    """Classical and residualized metrics per actor under each outcome model.

    The propensity fit does not involve the outcome model, so it is done
    once per actor and shared across models.
    """
    config = config or MetricConfig()
    if len(outcome_models) < 2:
        raise DataError("need at least two outcome models to compare")
    check_table(table, config)
    labels = list(labels or [f"model{i}" for i in range(len(outcome_models))])
    actors = sorted(str(a) for a in cohort)
    rYs = [outcome_residuals(table, m) for m in outcome_models]
    Z = _design(table)

    def one(a):
        from .events import actor_indicator

        x = actor_indicator(table, a)
        fhat, info = fit_propensity(Z, x, config.propensity, config.grid,
                                    actor_seed(config.seed, a),
                                    config.propensity_cross_fitting, config.folds)
        evs = [evaluate_residuals(a, rY, x, fhat, config.interval, config.sign_flip, info)
               for rY in rYs]
        return [e.classical for e in evs], [e.residualized for e in evs]

    results = _run(one, actors, threads)
    keep, C, R, failures = [], [], [], []
    for a, r in zip(actors, results):
        if isinstance(r, Exception):
            failures.append({"actor_id": a, "error": type(r).__name__, "message": str(r)})
            continue
        keep.append(a)
        C.append(r[0])
        R.append(r[1])
    k = len(outcome_models)
    C = np.array(C, dtype=float).reshape(-1, k)
    R = np.array(R, dtype=float).reshape(-1, k)
    lines = []
    for a in range(k):
        for b in range(a + 1, k):
            cs, ci = fit_line(C[:, a], C[:, b])
            rs, ri = fit_line(R[:, a], R[:, b])
            lines.append({"x": labels[a], "y": labels[b],
                          "classical_slope": cs, "classical_intercept": ci,
                          "residualized_slope": rs, "residualized_intercept": ri})
    dispersion = {"classical": pairwise_dispersion(C), "residualized": pairwise_dispersion(R)}
    return RobustnessReport(keep, labels, C, R, lines, dispersion, failures)


def evaluate_feature(table, feature, outcome_model, config=None):
    """GCM test of one feature column given the remaining features.

    X is the feature itself (continuous values are fine) and the propensity
    regresses it on the other features. ``outcome_model`` should be fit
    without the feature for the test to target its conditional effect.
    """
    config = config or MetricConfig()
    names = table.spec.feature_names
    if feature not in names:
        raise SchemaError(f"no feature {feature!r}")
    x = np.asarray(table.column(feature), dtype=float)
    if np.any(np.isnan(x)):
        raise DataError(f"feature {feature!r} has missing values")
    rest = [c for c in table.spec.model_columns if c[0] != feature]
    if rest:
        Z, _, _ = prepare_training(table.feature_frame()[[c[0] for c in rest]], rest)
    else:
        Z = np.zeros((table.n_rows, 1))
    rY = outcome_residuals(table, outcome_model)
    fhat, info = fit_propensity(Z, x, config.propensity, config.grid,
                                actor_seed(config.seed, feature),
                                config.propensity_cross_fitting, config.folds)
    ev = evaluate_residuals(feature, rY, x, fhat, config.interval, config.sign_flip, info)
    return replace(ev, n_units=table.n_rows)
