"""Synthetic data generators and Monte-Carlo studies.

The partially linear logistic model (PLLM) draws

    Z ~ N(0, I_d),  X ~ Bernoulli(f(Z)),  Y ~ Bernoulli(expit(X beta + g(Z)))

with ``g(z) = sin(z1) + 0.5 z2 z3`` and
``f(z) = eps + (1 - 2 eps) expit(a' z)`` so that ``eps < f < 1 - eps``.
"""

import csv
import datetime as dt
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit

from .errors import DataError, RgaxError
from .events import Column, EventTable, FeatureSpec
from .gcm import gcm_from_residuals
from .regressors import TuningGrid, fit_forest, fit_gbt, fit_logistic
from .survival import survival_table
from .teams import MatchTable, TeamStrengths

G_FAMILIES = ("sin-product", "zero", "linear")
F_FAMILIES = ("logistic", "half")


@dataclass(frozen=True)
class PllmSimConfig:
    """PLLM simulation settings.

    ``g``: ``sin-product`` (sin(z1) + 0.5 z2 z3), ``linear`` (z1 - 0.5 z2) or
    ``zero``. ``f``: ``logistic`` (bounded expit of ``f_coef' z``) or
    ``half`` (f = 0.5).
    """

    n: int = 2000
    d_z: int = 3
    beta: float = 0.0
    g: str = "sin-product"
    f: str = "logistic"
    f_coef: tuple = (0.8, -0.6, 0.0)
    f_intercept: float = 0.0
    eps: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise DataError("n must be at least 2")
        if self.g not in G_FAMILIES:
            raise DataError(f"g must be one of {G_FAMILIES}")
        if self.f not in F_FAMILIES:
            raise DataError(f"f must be one of {F_FAMILIES}")
        if self.g == "sin-product" and self.d_z < 3:
            raise DataError("sin-product g needs d_z >= 3")
        if not 0.0 < self.eps < 0.5:
            raise DataError("eps must lie in (0, 0.5)")


def g_function(config, Z):
    if config.g == "zero":
        return np.zeros(len(Z))
    if config.g == "linear":
        return Z[:, 0] - 0.5 * Z[:, 1]
    return np.sin(Z[:, 0]) + 0.5 * Z[:, 1] * Z[:, 2]


def oracle_f(config, Z):
    """True propensity P(X = 1 | Z)."""
    if config.f == "half":
        return np.full(len(Z), 0.5)
    a = np.zeros(Z.shape[1])
    k = min(len(config.f_coef), Z.shape[1])
    a[:k] = config.f_coef[:k]
    return config.eps + (1.0 - 2.0 * config.eps) * expit(config.f_intercept + Z @ a)


def oracle_h(config, Z):
    """True outcome regression E[Y | Z] (X marginalised out)."""
    g = g_function(config, Z)
    f = oracle_f(config, Z)
    return f * expit(config.beta + g) + (1.0 - f) * expit(g)


def simulate_pllm_arrays(config, rng=None):
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    Z = rng.standard_normal((config.n, config.d_z))
    X = (rng.random(config.n) < oracle_f(config, Z)).astype(float)
    Y = (rng.random(config.n) < expit(config.beta * X + g_function(config, Z))).astype(float)
    return Z, X, Y


def simulate_pllm(config):
    """PLLM draw as a shot table with actors ``target`` (X = 1) and ``other``."""
    Z, X, Y = simulate_pllm_arrays(config)
    names = [f"z{j + 1}" for j in range(config.d_z)]
    frame = pd.DataFrame(Z, columns=names)
    frame.insert(0, "actor_id", np.where(X == 1, "target", "other"))
    frame.insert(0, "outcome", Y)
    return EventTable.from_frame(frame, FeatureSpec(tuple(Column(n) for n in names)), "shot")


# --- discrete laws ----------------------------------------------------------

def brute_force_expected_conditional_cov(p_z, f, mu1, mu0):
    """``E[(f(Z) - f(Z)^2) (E[Y|X=1,Z] - E[Y|X=0,Z])]`` over a finite support."""
    arrs = [np.asarray(a, dtype=float) for a in (p_z, f, mu1, mu0)]
    p_z, f, mu1, mu0 = arrs
    if len({a.shape for a in arrs}) != 1:
        raise DataError("law tables differ in length")
    for a in arrs:
        if np.any(~np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
            raise DataError("probabilities must lie in [0, 1]")
    if abs(p_z.sum() - 1.0) > 1e-12:
        raise DataError("P(Z) must sum to one")
    return float(np.sum(p_z * (f - f * f) * (mu1 - mu0)))


@dataclass(frozen=True)
class DiscreteLaw:
    """Finite-support law of (Z, X, Y) with a PLLM outcome."""

    p_z: tuple
    f: tuple
    g: tuple
    beta: float

    @property
    def mu1(self):
        return expit(self.beta + np.asarray(self.g, dtype=float))

    @property
    def mu0(self):
        return expit(np.asarray(self.g, dtype=float))

    def expected_conditional_cov(self):
        return brute_force_expected_conditional_cov(self.p_z, self.f, self.mu1, self.mu0)

    def h(self):
        f = np.asarray(self.f, dtype=float)
        return f * self.mu1 + (1.0 - f) * self.mu0

    def sample(self, n, rng):
        """Draws as (Z index, X, Y)."""
        z = rng.choice(len(self.p_z), size=n, p=np.asarray(self.p_z, dtype=float))
        x = (rng.random(n) < np.asarray(self.f)[z]).astype(float)
        mu = np.where(x == 1, self.mu1[z], self.mu0[z])
        y = (rng.random(n) < mu).astype(float)
        return z, x, y


DEFAULT_LAW = DiscreteLaw(p_z=(0.2, 0.3, 0.1, 0.4), f=(0.1, 0.4, 0.7, 0.25),
                          g=(-1.0, 0.3, 1.2, -0.2), beta=0.8)


def consistency_study(law=DEFAULT_LAW, n=5000, replications=1000, seed=0):
    """Fraction of replications with ``|mean_estimate - truth| <= 3 sd / sqrt(n)``
    using the oracle regressions."""
    truth = law.expected_conditional_cov()
    h, f = law.h(), np.asarray(law.f, dtype=float)
    hits = 0
    for rng in _rngs(seed, replications):
        z, x, y = law.sample(n, rng)
        r = gcm_from_residuals(y - h[z], x - f[z])
        hits += abs(r.mean_estimate - truth) <= 3.0 * r.sd_products / math.sqrt(n)
    return hits / replications, truth


# --- calibration ------------------------------------------------------------

LEARNERS = ("oracle", "forest", "gbt", "logistic", "constant")


@dataclass(frozen=True)
class CalibrationCell:
    """One simulation design with choices for the two regressions."""

    name: str
    config: PllmSimConfig
    h: str = "oracle"
    f: str = "oracle"
    grid: TuningGrid = field(default_factory=lambda: TuningGrid(n_trees=100))

    def __post_init__(self):
        if self.h not in LEARNERS or self.f not in LEARNERS:
            raise DataError(f"regression choices must be in {LEARNERS}")


@dataclass(frozen=True)
class CalibrationResult:
    cell: str
    replications: int
    alpha: float
    rejection_rate: float
    power_greater: float
    mean_estimate: float
    mean_statistic: float
    var_statistic: float
    sign_agreement: float
    excluded: int
    band: tuple

    def to_row(self):
        return {"cell": self.cell, "replications": self.replications, "alpha": self.alpha,
                "rate": self.rejection_rate, "power_greater": self.power_greater,
                "mean_estimate": self.mean_estimate, "mean_statistic": self.mean_statistic,
                "var_statistic": self.var_statistic, "sign_agreement": self.sign_agreement,
                "excluded": self.excluded, "band_lower": self.band[0],
                "band_upper": self.band[1]}


def binomial_band(alpha, replications, z=2.5758293035489):
    """Normal-approximation 99% band for an empirical rejection rate."""
    half = z * math.sqrt(alpha * (1.0 - alpha) / replications)
    return (max(alpha - half, 0.0), min(alpha + half, 1.0))


def _rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _fit_predict(kind, Z, target, grid, seed, oracle):
    if kind == "oracle":
        return oracle
    if kind == "constant":
        return np.full(len(target), target.mean())
    if kind == "forest":
        return fit_forest(Z, target, grid, probability=True, seed=seed).oob_prediction
    if kind == "gbt":
        return fit_gbt(Z, target, grid, "logistic", seed=seed).predict(Z)
    return fit_logistic(Z, target).predict(Z)


def _replicate(cell, rng):
    cfg = cell.config
    Z, X, Y = simulate_pllm_arrays(cfg, rng)
    seed = int(rng.integers(2**62))
    h = _fit_predict(cell.h, Z, Y, cell.grid, seed, oracle_h(cfg, Z) if cell.h == "oracle"
                     else None)
    f = _fit_predict(cell.f, Z, X, cell.grid, seed + 1, oracle_f(cfg, Z) if cell.f == "oracle"
                     else None)
    return gcm_from_residuals(Y - h, X - f)


def summarize(cell_name, results, alpha, beta, excluded):
    """Aggregate per-replication GCM results into a CalibrationResult."""
    R = len(results) + excluded
    if excluded >= 0.01 * R:
        raise RgaxError(f"cell {cell_name}: {excluded} of {R} replications failed "
                        "(limit is 1%)")
    p2 = np.array([r.p_two_sided for r in results])
    pg = np.array([r.p_greater for r in results])
    T = np.array([r.statistic for r in results])
    est = np.array([r.mean_estimate for r in results])
    sign = float(np.mean(np.sign(est) == np.sign(beta))) if beta != 0 else float("nan")
    return CalibrationResult(cell_name, len(results), alpha, float(np.mean(p2 < alpha)),
                             float(np.mean(pg < alpha)), float(np.mean(est)),
                             float(np.mean(T)), float(np.var(T, ddof=1)), sign, excluded,
                             binomial_band(alpha, len(results)))


def run_calibration(cells, replications=500, alpha=0.05, seed=0, threads=1):
    """Simulate, fit and test every cell; one CalibrationResult per cell.

    Replication seeds are spawned from ``seed`` per cell, so results do not
    depend on ``threads``. Failed replications are excluded and counted.
    """
    if replications < 100:
        raise DataError("calibration needs at least 100 replications")
    out = []
    for ci, cell in enumerate(cells):
        rngs = _rngs([seed, ci], replications)

        def one(rng, cell=cell):
            try:
                return _replicate(cell, rng)
            except (RgaxError, ValueError, ArithmeticError) as exc:
                return exc

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                res = list(pool.map(one, rngs))
        else:
            res = [one(r) for r in rngs]
        ok = [r for r in res if not isinstance(r, Exception)]
        out.append(summarize(cell.name, ok, alpha, cell.config.beta, len(res) - len(ok)))
    return out


def calibration_csv(results):
    buf = io.StringIO()
    cols = list(results[0].to_row()) if results else ["cell", "rate"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in results:
        w.writerow([repr(v) if isinstance(v, float) else str(v) for v in r.to_row().values()])
    return buf.getvalue()


# --- team strengths ----------------------------------------------------------

def random_strengths(n_teams, seed=0, scale=0.3, intercept=0.1, home_advantage=0.25,
                     lambda_c=0.1):
    """Sum-to-zero ratings drawn from N(0, scale^2)."""
    rng = np.random.default_rng(seed)
    att = rng.normal(0, scale, n_teams)
    de = rng.normal(0, scale, n_teams)
    att -= att.mean()
    de -= de.mean()
    teams = [f"T{i + 1:02d}" for i in range(n_teams)]
    return TeamStrengths(intercept, dict(zip(teams, att)), dict(zip(teams, de)),
                         home_advantage, lambda_c)


def simulate_league(strengths, n_matches, seed=0, start=dt.date(2020, 1, 1), days=1):
    """Matches between uniformly drawn ordered team pairs.

    Scores are ``A + C`` and ``B + C`` with independent Poisson A, B and a
    shared Poisson C of rate ``lambda_c``. Match m is dated
    ``start + (m // (T/2)) * days``.
    """
    rng = np.random.default_rng(seed)
    teams = strengths.teams
    T = len(teams)
    home = rng.integers(0, T, n_matches)
    away = (home + rng.integers(1, T, n_matches)) % T
    l1 = np.array([strengths.rates(teams[h], teams[a])[0] for h, a in zip(home, away)])
    l2 = np.array([strengths.rates(teams[h], teams[a])[1] for h, a in zip(home, away)])
    c = rng.poisson(strengths.lambda_c, n_matches)
    z = rng.poisson(l1) + c
    y = rng.poisson(l2) + c
    per_day = max(T // 2, 1)
    dates = [start + dt.timedelta(days=int(m // per_day) * days) for m in range(n_matches)]
    return MatchTable.from_records(dates, [teams[i] for i in home], [teams[i] for i in away],
                                   z, y)


# --- survival ----------------------------------------------------------------

def censoring_rate_for(target, hazards):
    """Exponential censoring rate c giving expected censored fraction ``target``
    when event times are exponential with the given hazards."""
    if target == 0:
        return 0.0
    if not 0 < target < 1:
        raise DataError("censoring fraction must lie in [0, 1)")
    fn = lambda c: np.mean(c / (c + hazards)) - target
    hi = 1.0
    while fn(hi) < 0:
        hi *= 2.0
    return brentq(fn, 0.0, hi, xtol=1e-14)


def simulate_cox(n, coefficients, censoring_rate=0.2, seed=0, actor_effect=0.0,
                 actor_coef=(0.8,), actor_intercept=-0.5, others=("B", "C")):
    """Exponential proportional-hazards spells with an actor ``A``.

    Features ``z1..zp`` are standard normal; row j belongs to ``A`` with
    probability ``0.05 + 0.9 expit(actor_intercept + actor_coef' z)``, else to
    one of ``others``. The hazard is ``exp(z' coefficients + actor_effect X)``.
    """
    rng = np.random.default_rng(seed)
    beta = np.asarray(coefficients, dtype=float)
    p = len(beta)
    Z = rng.standard_normal((n, p))
    a = np.zeros(p)
    a[:min(p, len(actor_coef))] = actor_coef[:p]
    prop = 0.05 + 0.9 * expit(actor_intercept + Z @ a)
    X = (rng.random(n) < prop).astype(float)
    hazard = np.exp(Z @ beta + actor_effect * X)
    t_event = rng.exponential(1.0 / hazard)
    c = censoring_rate_for(censoring_rate, hazard)
    u = rng.random(n)
    if c > 0:
        t_cens = -np.log(u) / c
        time = np.minimum(t_event, t_cens)
        event = (t_event <= t_cens).astype(float)
    else:
        time, event = t_event, np.ones(n)
    other = np.asarray(others)[rng.integers(0, len(others), n)]
    ids = np.where(X == 1, "A", other)
    feats = {f"z{j + 1}": Z[:, j] for j in range(p)}
    return survival_table(time, event, ids, feats)


def cox_calibration(n=500, replications=500, coefficients=(0.5, -0.3), censoring_rate=0.2,
                    alpha=0.05, seed=0, propensity="logistic"):
    """Null rIAX study: actor effect zero, Cox hazard and fitted propensity."""
    from .metrics import MetricConfig
    from .survival import compute_riax, fit_cox_breslow

    cfg = MetricConfig(metric="iax", propensity=propensity,
                       grid=TuningGrid(n_trees=100, forest_depths=(2, 3, 4)))
    ss = np.random.SeedSequence(seed).generate_state(replications, dtype=np.uint64)
    results, excluded = [], 0
    for s in ss:
        tab = simulate_cox(n, coefficients, censoring_rate, int(s))
        try:
            hz = fit_cox_breslow(tab)
            results.append(compute_riax(tab, "A", hz, config=cfg).gcm)
        except RgaxError:
            excluded += 1
    return summarize("riax-null", results, alpha, 0.0, excluded)


# --- robustness design ---------------------------------------------------------

@dataclass(frozen=True)
class RobustnessDesign:
    """Shots from a league with one heavily overrepresented strong shooter.

    ``n_regular`` shooters with skills drawn from N(0, skill_sd^2) take shot
    counts from a geometric law (many take few); ``star_shots`` extra shots
    come from one shooter with skill ``star_skill`` who shoots from better
    positions.
    """

    n_regular: int = 150
    mean_shots: float = 40.0
    skill_sd: float = 0.3
    frequency_skill: float = 0.6
    star_shots: int = 2500
    star_skill: float = 0.8
    seed: int = 0


def simulate_robustness(design=RobustnessDesign()):
    """Returns (table, base_mask): the augmented shot table and the rows
    belonging to the base season (everything except the star's shots)."""
    rng = np.random.default_rng(design.seed)
    skill = rng.normal(0.0, design.skill_sd, design.n_regular)
    # stronger shooters shoot more often
    rate = design.mean_shots * np.exp(design.frequency_skill * skill / design.skill_sd * 0.5)
    counts = np.maximum(rng.geometric(1.0 / rate), 5)
    actors = np.repeat([f"s{i:03d}" for i in range(design.n_regular)], counts)
    sk = np.repeat(skill, counts)
    n = len(actors)
    Z = rng.standard_normal((n, 3))
    Z[:, 0] += 0.4 * sk / design.skill_sd
    Zs = rng.standard_normal((design.star_shots, 3))
    Zs[:, 0] += 0.8
    Z = np.vstack([Z, Zs])
    actors = np.concatenate([actors, np.repeat("star", design.star_shots)])
    sk = np.concatenate([sk, np.full(design.star_shots, design.star_skill)])
    g = -1.2 + np.sin(Z[:, 0]) + 0.5 * Z[:, 1] * Z[:, 2]
    y = (rng.random(len(sk)) < expit(g + sk)).astype(float)
    frame = pd.DataFrame({"outcome": y, "actor_id": actors, "z1": Z[:, 0], "z2": Z[:, 1],
                          "z3": Z[:, 2]})
    table = EventTable.from_frame(frame, FeatureSpec((Column("z1"), Column("z2"),
                                                      Column("z3"))), "shot")
    return table, actors != "star"


def robustness_study(design=RobustnessDesign(), family="logistic", min_units=70,
                     low_frequency_max=30, config=None, grid=None, threads=1):
    """Three outcome models (all rows, base season, low-frequency shooters),
    each predicting every row; classical and residualized metrics for actors
    with at least ``min_units`` shots."""
    from .events import filter_cohort
    from .metrics import MetricConfig, compare_models_robustness, fit_outcome_model

    table, base = simulate_robustness(design)
    counts = pd.Series(table.actor_ids).value_counts()
    low = np.isin(table.actor_ids, counts[counts <= low_frequency_max].index)
    grid = grid or TuningGrid(learning_rates=(0.1,), gbt_depths=(2, 3), n_trees=100,
                              forest_depths=(2, 3, 4))
    models = [fit_outcome_model(table, family, grid, seed=design.seed, mask=m)
              for m in (None, base, low)]
    cohort = filter_cohort(table, min_units, 0)
    config = config or MetricConfig(grid=grid, seed=design.seed)
    return compare_models_robustness(table, cohort, models, config,
                                     labels=["all", "base", "low-frequency"],
                                     threads=threads)
