"""Logistic regression by iteratively reweighted least squares."""

import numpy as np
import scipy.linalg
from scipy.special import expit, log_expit

from ..errors import DataError, RankDeficientError, SeparationError
from .base import FittedRegressor, prepare_training

# |eta| beyond this saturates expit to 0/1 in double precision
SEPARATION_ETA = 36.0


def log_likelihood(y, eta):
    return float(np.sum(y * log_expit(eta) + (1.0 - y) * log_expit(-eta)))


def check_rank(X, names, tol=1e-10):
    """Raise RankDeficientError naming the dependent columns."""
    if X.shape[1] == 0:
        return
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * max(d[0], 1.0))) if len(d) else 0
    if rank < X.shape[1]:
        # name columns lying in the span of the columns before them
        keep, bad = [], []
        scale = tol * max(d[0], 1.0)
        for j in range(X.shape[1]):
            s = np.linalg.svd(X[:, keep + [j]], compute_uv=False)
            if s[-1] > scale:
                keep.append(j)
            else:
                bad.append(names[j])
        raise RankDeficientError(f"rank-deficient design; dependent columns: {bad}", bad)


def fit_logistic(features, targets, *, intercept=True, max_iter=100, tol=1e-8,
                 columns=None):
    """Maximum-likelihood logistic regression.

    Newton (IRLS) steps with step halving, so the log-likelihood never
    decreases; stops when the largest coefficient change drops below ``tol``
    or after ``max_iter`` iterations. ``diagnostics['loglik_trace']`` records
    the log-likelihood after every accepted step.
    """
    X0, enc, names = prepare_training(features, columns)
    y = np.asarray(targets, dtype=float)
    if len(y) != X0.shape[0]:
        raise DataError("features and targets differ in length")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("logistic regression needs binary 0/1 targets")
    X = np.hstack([np.ones((len(y), 1)), X0]) if intercept else X0
    all_names = (("(intercept)",) if intercept else ()) + tuple(names)
    check_rank(X, all_names)
    if X.shape[1] == 0:
        raise DataError("empty design without intercept")

    coef = np.zeros(X.shape[1])
    eta = X @ coef
    ll = log_likelihood(y, eta)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        w = p * (1.0 - p)
        grad = X.T @ (y - p)
        info = X.T @ (X * w[:, None])
        try:
            step = scipy.linalg.solve(info, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise SeparationError("information matrix became singular; "
                                  "outcomes are (quasi-)separated") from None
        t = 1.0
        accepted = False
        for _ in range(40):
            cand = coef + t * step
            eta_c = X @ cand
            ll_c = log_likelihood(y, eta_c)
            if ll_c >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no ascent direction left at machine precision
            converged = True
            break
        change = np.max(np.abs(cand - coef))
        coef, eta, ll = cand, eta_c, ll_c
        trace.append(ll)
        if np.max(np.abs(eta)) > SEPARATION_ETA:
            raise SeparationError("fitted log-odds diverge; outcomes are "
                                  "perfectly separated by the features")
        if change < tol:
            converged = True
            break

    return FittedRegressor(
        family="logistic-linear",
        params={"intercept": intercept},
        diagnostics={"iterations": it, "converged": converged, "loglik": ll,
                     "loglik_trace": trace},
        state={"coef": coef, "intercept": intercept},
        n_features=X0.shape[1],
        probability=True,
        encoder=enc,
        feature_names=tuple(names),
    )
