"""Bivariate Poisson team ratings fit by recency-weighted maximum likelihood.

The home and away scores of match m share a common Poisson component with
rate ``lambda_C``. The team-specific rates are

    log lambda_home = beta0 + att[home] - def[away] + homeAdvantage
    log lambda_away = beta0 + att[away] - def[home]

with ``sum(att) = sum(def) = 0``. Matches are weighted by
``0.5 ** (days_ago / period)``.
"""

import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln, logsumexp

from .errors import (ConvergenceError, DataError, DisconnectedScheduleError, SchemaError,
                     UnknownActorError)
from .events import Column

PSI_BOUNDS = (-30.0, 5.0)
DEFAULT_PERIOD = 500.0
MATCH_COLUMNS = ("date", "home_team", "away_team", "home_goals", "away_goals")


@dataclass(frozen=True, eq=False)
class MatchTable:
    """Match results; teams are indexed by their sorted names."""

    dates: tuple
    home: np.ndarray
    away: np.ndarray
    home_goals: np.ndarray
    away_goals: np.ndarray
    teams: tuple

    @classmethod
    def from_records(cls, dates, home_teams, away_teams, home_goals, away_goals):
        hg = np.asarray(home_goals, dtype=float)
        ag = np.asarray(away_goals, dtype=float)
        n = len(hg)
        if not (len(dates) == len(home_teams) == len(away_teams) == len(ag) == n):
            raise SchemaError("match columns differ in length")
        if n == 0:
            raise DataError("no matches")
        for g, name in ((hg, "home_goals"), (ag, "away_goals")):
            if np.any(~np.isfinite(g)) or np.any(g < 0) or np.any(g != np.round(g)):
                raise DataError(f"{name} must be nonnegative integers")
        home_teams = [str(t) for t in home_teams]
        away_teams = [str(t) for t in away_teams]
        if any(h == a for h, a in zip(home_teams, away_teams)):
            raise DataError("a team cannot play itself")
        teams = tuple(sorted(set(home_teams) | set(away_teams)))
        index = {t: i for i, t in enumerate(teams)}
        dates = tuple(d if isinstance(d, dt.date) else dt.date.fromisoformat(str(d))
                      for d in dates)
        home = np.array([index[t] for t in home_teams], dtype=np.int64)
        away = np.array([index[t] for t in away_teams], dtype=np.int64)
        return cls(dates, home, away, hg.astype(np.int64), ag.astype(np.int64), teams)

    def __len__(self):
        return len(self.home)

    @property
    def n_teams(self):
        return len(self.teams)

    def to_frame(self):
        return pd.DataFrame({
            "date": [d.isoformat() for d in self.dates],
            "home_team": [self.teams[i] for i in self.home],
            "away_team": [self.teams[i] for i in self.away],
            "home_goals": self.home_goals, "away_goals": self.away_goals})


def parse_match_table(path):
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in MATCH_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"missing match columns {missing}")
    try:
        hg = raw["home_goals"].astype(float).to_numpy()
        ag = raw["away_goals"].astype(float).to_numpy()
        dates = [dt.date.fromisoformat(v) for v in raw["date"]]
    except ValueError as exc:
        raise SchemaError(f"bad match row: {exc}") from None
    return MatchTable.from_records(dates, raw["home_team"], raw["away_team"], hg, ag)


def write_match_table(matches, path):
    matches.to_frame().to_csv(path, index=False, lineterminator="\n")


@dataclass(frozen=True)
class TeamStrengths:
    intercept: float
    att: dict
    defence: dict
    homeAdvantage: float
    lambda_c: float
    reference_date: dt.date = None
    period: float = DEFAULT_PERIOD
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def teams(self):
        return tuple(sorted(self.att))

    def rates(self, home, away):
        """Home and away team-specific scoring rates for one fixture."""
        l1 = np.exp(self.intercept + self.att[home] - self.defence[away] + self.homeAdvantage)
        l2 = np.exp(self.intercept + self.att[away] - self.defence[home])
        return float(l1), float(l2)

    def to_csv(self):
        lines = ["team,att,def"]
        for t in self.teams:
            lines.append(f"{t},{self.att[t]!r},{self.defence[t]!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {"intercept": self.intercept, "att": dict(sorted(self.att.items())),
                "def": dict(sorted(self.defence.items())),
                "homeAdvantage": self.homeAdvantage, "lambda_c": self.lambda_c,
                "reference_date": self.reference_date.isoformat() if self.reference_date
                else None,
                "period": self.period,
                "diagnostics": {k: v for k, v in self.diagnostics.items()
                                if k != "loglik_trace"}}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        ref = d.get("reference_date")
        return cls(float(d["intercept"]), {k: float(v) for k, v in d["att"].items()},
                   {k: float(v) for k, v in d["def"].items()}, float(d["homeAdvantage"]),
                   float(d["lambda_c"]), dt.date.fromisoformat(ref) if ref else None,
                   float(d.get("period", DEFAULT_PERIOD)))


# --- likelihood ---------------------------------------------------------------

def bivpois_log_pmf(z, y, lam1, lam2, lam_c):
    """Log bivariate Poisson probability of scores (z, y)."""
    if z < 0 or y < 0 or z != int(z) or y != int(y):
        raise DataError("counts must be nonnegative integers")
    if not (lam1 > 0 and lam2 > 0 and lam_c >= 0):
        raise DataError("need lam1, lam2 > 0 and lam_c >= 0")
    z, y = int(z), int(y)
    base = (z * np.log(lam1) + y * np.log(lam2) - gammaln(z + 1) - gammaln(y + 1)
            - (lam1 + lam2 + lam_c))
    if lam_c == 0.0:
        return float(base)
    k = np.arange(min(z, y) + 1)
    terms = (gammaln(z + 1) - gammaln(k + 1) - gammaln(z - k + 1)
             + gammaln(y + 1) - gammaln(y - k + 1)
             + k * (np.log(lam_c) - np.log(lam1) - np.log(lam2)))
    return float(base + logsumexp(terms))


def _match_terms(z, y, eta1, eta2, psi):
    """Per-match log pmf and posterior mean of the shared component."""
    lam1, lam2, lam_c = np.exp(eta1), np.exp(eta2), np.exp(psi)
    base = z * eta1 + y * eta2 - gammaln(z + 1) - gammaln(y + 1) - (lam1 + lam2 + lam_c)
    if np.isneginf(psi):
        return base, np.zeros_like(base)
    kmax = int(np.minimum(z, y).max()) if len(z) else 0
    k = np.arange(kmax + 1)[None, :]
    zz, yy = z[:, None], y[:, None]
    valid = k <= np.minimum(zz, yy)
    with np.errstate(invalid="ignore"):
        la = (gammaln(zz + 1) - gammaln(np.where(valid, zz - k, 0) + 1)
              + gammaln(yy + 1) - gammaln(np.where(valid, yy - k, 0) + 1)
              - gammaln(k + 1) + k * (psi - eta1[:, None] - eta2[:, None]))
    la = np.where(valid, la, -np.inf)
    lse = logsumexp(la, axis=1)
    kbar = np.sum(np.where(valid, k * np.exp(la - lse[:, None]), 0.0), axis=1)
    return base + lse, kbar


def recency_weight(match_date, reference_date, period=DEFAULT_PERIOD):
    """``0.5 ** (d / period)`` with d the days from the match to the reference."""
    if period <= 0:
        raise DataError("period must be positive")
    d = (reference_date - match_date).days
    if d < 0:
        raise DataError(f"match on {match_date} is after the reference date {reference_date}")
    return float(0.5 ** (d / period))


class _Objective:
    """Weighted log-likelihood over free parameters.

    Free vector: beta0, att[0:T-1], def[0:T-1], homeAdvantage, psi; the last
    team's ratings are minus the sum of the others. In the independent model
    psi is dropped and fixed at -inf (lambda_C = 0).
    """

    def __init__(self, matches, weights, independent=False):
        self.m = matches
        self.independent = independent
        self.w = np.asarray(weights, dtype=float)
        self.T = matches.n_teams
        self.z = matches.home_goals.astype(float)
        self.y = matches.away_goals.astype(float)

    @property
    def size(self):
        return 2 * (self.T - 1) + (2 if self.independent else 3)

    def unpack(self, theta):
        T = self.T
        att = np.append(theta[1:T], -np.sum(theta[1:T]))
        de = np.append(theta[T:2 * T - 1], -np.sum(theta[T:2 * T - 1]))
        psi = -np.inf if self.independent else theta[2 * T]
        return theta[0], att, de, theta[2 * T - 1], psi

    def full(self, beta0, att, de, home, psi):
        h, a = self.m.home, self.m.away
        eta1 = beta0 + att[h] - de[a] + home
        eta2 = beta0 + att[a] - de[h]
        lp, kbar = _match_terms(self.z, self.y, eta1, eta2, psi)
        return lp, kbar, eta1, eta2

    def loglik(self, theta):
        lp, *_ = self.full(*self.unpack(theta))
        return float(np.sum(self.w * lp))

    def value_grad(self, theta):
        beta0, att, de, home, psi = self.unpack(theta)
        lp, kbar, eta1, eta2 = self.full(beta0, att, de, home, psi)
        g1 = self.w * (self.z - np.exp(eta1) - kbar)
        g2 = self.w * (self.y - np.exp(eta2) - kbar)
        T, h, a = self.T, self.m.home, self.m.away
        g_att = np.bincount(h, g1, T) + np.bincount(a, g2, T)
        g_def = -np.bincount(a, g1, T) - np.bincount(h, g2, T)
        grad = np.concatenate([
            [g1.sum() + g2.sum()],
            g_att[:-1] - g_att[-1],
            g_def[:-1] - g_def[-1],
            [g1.sum()],
            [] if self.independent else [np.sum(self.w * (kbar - np.exp(psi)))],
        ])
        return float(np.sum(self.w * lp)), grad


def full_loglik(matches, weights, intercept, att, defence, home_advantage, lambda_c):
    """Weighted log-likelihood at unconstrained team ratings (arrays in team order)."""
    obj = _Objective(matches, weights)
    psi = np.log(lambda_c) if lambda_c > 0 else -np.inf
    lp, *_ = obj.full(intercept, np.asarray(att, float), np.asarray(defence, float),
                      home_advantage, psi)
    return float(np.sum(obj.w * lp))


def check_connected(matches):
    T = matches.n_teams
    g = coo_matrix((np.ones(len(matches)), (matches.home, matches.away)), shape=(T, T))
    n, labels = connected_components(g, directed=False)
    if n > 1:
        groups = [[matches.teams[i] for i in np.flatnonzero(labels == c)] for c in range(n)]
        raise DisconnectedScheduleError(
            f"schedule splits into {n} groups with no matches between them; ratings are "
            f"not comparable across groups: {groups}")


def _projected(grad, theta, independent=False):
    g = grad.copy()
    if independent:
        return g
    lo, hi = PSI_BOUNDS
    if (theta[-1] <= lo and g[-1] < 0) or (theta[-1] >= hi and g[-1] > 0):
        g[-1] = 0.0
    return g


def _numeric_hessian(obj, theta, eps=1e-5):
    k = len(theta)
    H = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = eps
        H[:, j] = (obj.value_grad(theta + e)[1] - obj.value_grad(theta - e)[1]) / (2 * eps)
    return 0.5 * (H + H.T)


def fit_team_strengths(matches, reference_date=None, period=DEFAULT_PERIOD, weights=None,
                       *, independent=False, gtol=1e-6, max_iter=1000):
    """Weighted MLE of the bivariate Poisson ratings.

    L-BFGS-B followed by damped Newton steps until the projected gradient
    has sup-norm below ``gtol``. ``weights`` overrides the recency weights;
    ``independent`` fixes lambda_C = 0.

    When every score is explained by the shared component (e.g. all draws)
    the likelihood is maximised as the team rates go to zero and the home
    advantage is not identified; ``diagnostics['min_rate']`` flags this.
    """
    if matches.n_teams < 2:
        raise DataError("need at least two teams")
    check_connected(matches)
    if reference_date is None:
        reference_date = max(matches.dates)
    if weights is None:
        weights = np.array([recency_weight(d, reference_date, period) for d in matches.dates])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(matches),) or np.any(weights < 0) or not np.any(weights > 0):
        raise DataError("weights must be nonnegative, one per match, not all zero")

    obj = _Objective(matches, weights, independent)
    goals = (matches.home_goals.sum() + matches.away_goals.sum()) / (2 * len(matches))
    theta0 = np.zeros(obj.size)
    theta0[0] = np.log(max(goals, 0.05))
    if not independent:
        theta0[-1] = -3.0
    trace = [obj.loglik(theta0)]

    def fun(t):
        v, g = obj.value_grad(t)
        return -v, -g

    lo = np.full(obj.size, -np.inf)
    hi = np.full(obj.size, np.inf)
    if not independent:
        lo[-1], hi[-1] = PSI_BOUNDS
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   callback=lambda t: trace.append(obj.loglik(t)),
                   options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-10})
    theta = np.clip(res.x, lo, hi)
    ll, grad = obj.value_grad(theta)
    newton = 0
    while np.max(np.abs(_projected(grad, theta, independent))) >= gtol and newton < 50:
        newton += 1
        free = np.ones(len(theta), dtype=bool)
        if not independent:
            free[-1] = _projected(grad, theta)[-1] != 0 or lo[-1] < theta[-1] < hi[-1]
        H = _numeric_hessian(obj, theta)[np.ix_(free, free)]
        try:
            step = np.zeros_like(theta)
            step[free] = np.linalg.solve(H, -grad[free])
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-8:
            cand = np.clip(theta + t * step, lo, hi)
            ll_c, g_c = obj.value_grad(cand)
            if ll_c >= ll:
                break
            t *= 0.5
        else:
            break
        theta, ll, grad = cand, ll_c, g_c
        trace.append(ll)
    gnorm = float(np.max(np.abs(_projected(grad, theta, independent))))
    if gnorm >= gtol:
        raise ConvergenceError(f"team-strength fit stopped with gradient norm {gnorm:.3g}")

    beta0, att, de, home, psi = obj.unpack(theta)
    _, _, eta1, eta2 = obj.full(beta0, att, de, home, psi)
    return TeamStrengths(
        float(beta0), {t: float(v) for t, v in zip(matches.teams, att)},
        {t: float(v) for t, v in zip(matches.teams, de)}, float(home), float(np.exp(psi)),
        reference_date, float(period),
        {"loglik": ll, "gradient_norm": gnorm, "lbfgs_iterations": int(res.nit),
         "newton_steps": newton, "loglik_trace": trace, "n_matches": len(matches),
         "independent": independent,
         "min_rate": float(np.exp(min(eta1.min(), eta2.min())))})


# --- features -----------------------------------------------------------------

def attach_strength_features(shots, strengths, side="defending", *, allow_attacking=False,
                             season_column="season"):
    """Append the opponent's defensive rating (or the shooting team's attack).

    ``strengths`` is one TeamStrengths for the whole table, or a mapping from
    season label to TeamStrengths when ratings are fit per season. Attacking
    ratings are refused on plain shot tables (xG controls) unless
    ``allow_attacking`` is set.
    """
    if side not in ("defending", "attacking"):
        raise DataError("side must be 'defending' or 'attacking'")
    if side == "attacking" and shots.discipline == "shot" and not allow_attacking:
        raise DataError("attacking team strength should not be a control in xG models; "
                        "pass allow_attacking=True to override")
    team_col = "team_against" if side == "defending" else "team_for"
    teams = shots.column(team_col).astype(str)
    if isinstance(strengths, TeamStrengths):
        lookup = [strengths] * len(teams)
    else:
        seasons = shots.column(season_column).astype(str)
        missing = sorted(set(seasons) - set(map(str, strengths)))
        if missing:
            raise DataError(f"no team strengths for seasons {missing}")
        table = {str(k): v for k, v in strengths.items()}
        lookup = [table[s] for s in seasons]
    values = np.empty(len(teams))
    for i, (team, st) in enumerate(zip(teams, lookup)):
        ratings = st.defence if side == "defending" else st.att
        if team not in ratings:
            raise UnknownActorError(f"unknown team {team!r}")
        values[i] = ratings[team]
    name = "opp_def" if side == "defending" else "team_att"
    return shots.with_column(Column(name), values)
