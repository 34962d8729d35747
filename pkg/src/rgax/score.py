"""Score statistic of a player effect in a logistic outcome model.

Under the null of no player effect the log-likelihood derivative with
respect to the player coefficient, evaluated at the null MLE of the
remaining coefficients, is ``sum_j (Y_j - expit(Z_j' gamma)) X_j``: the
classical above-expectation metric computed with a logistic xG model.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .regressors import fit_logistic


@dataclass(frozen=True)
class ScoreTestResult:
    score: float
    gamma: np.ndarray
    loglik: float
    n: int
    model: object = None


def logistic_score(Y, X, Z, intercept=True):
    """Raw score for the coefficient of ``X`` at the null fit of ``Y`` on ``Z``.

    Separation and rank errors from the logistic fit propagate.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    if Y.shape != X.shape:
        raise DataError("Y and X differ in length")
    model = fit_logistic(Z, Y, intercept=intercept)
    h = model.predict(Z, clip=False)
    score = float(np.sum((Y - h) * X))
    return ScoreTestResult(score, np.asarray(model.state["coef"]),
                           float(model.diagnostics["loglik"]), len(Y), model)
