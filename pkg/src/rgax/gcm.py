"""Generalised covariance measure: estimate, variance, tests and intervals.

Given outcome residuals ``rY = Y - h(Z)`` and exposure residuals
``rX = X - f(Z)`` the products ``R_i = rY_i * rX_i`` drive everything: their
sum is the residualized metric (rGAX and siblings), their mean the sample
GCM, and their empirical standard deviation the plug-in scale. Reference
distribution is the standard normal.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import DataError, DegenerateVarianceError

SIDES = ("two-sided", "lower-one-sided", "upper-one-sided")
DIRECTIONS = ("two-sided", "greater", "less")


@dataclass(frozen=True, eq=False)
class GcmResult:
    products: np.ndarray = field(repr=False)
    n: int
    sum_scale_estimate: float
    mean_estimate: float
    sd_products: float
    sd_sum: float
    statistic: float
    p_two_sided: float
    p_greater: float
    p_less: float
    sign_flip: bool = False

    def p_value(self, direction="two-sided"):
        return {"two-sided": self.p_two_sided, "greater": self.p_greater,
                "less": self.p_less}[direction]


@dataclass(frozen=True)
class IntervalSpec:
    """Interval level, sidedness and a non-nil shift on the sum scale.

    ``critical_value`` overrides the normal quantile (e.g. a rounded 1.96
    when reproducing published intervals).
    """

    level: float = 0.95
    sidedness: str = "two-sided"
    rho0: float = 0.0
    critical_value: float = None

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise DataError("interval level must lie in (0, 1)")
        if self.sidedness not in SIDES:
            raise DataError(f"sidedness must be one of {SIDES}")

    @property
    def direction(self):
        """Test direction matching the interval: a lower bound pairs with
        the 'greater' alternative."""
        return {"two-sided": "two-sided", "lower-one-sided": "greater",
                "upper-one-sided": "less"}[self.sidedness]


def _pvalues(t):
    p_greater = float(norm.sf(t))
    p_less = float(norm.cdf(t))
    return 2.0 * min(p_greater, p_less), p_greater, p_less


def gcm_from_products(products, sign_flip=False):
    R = np.asarray(products, dtype=float)
    if R.ndim != 1 or R.shape[0] < 2:
        raise DataError("need at least two residual products")
    if not np.all(np.isfinite(R)):
        raise DataError("residual products must be finite")
    if sign_flip:
        R = -R
    n = R.shape[0]
    if np.all(R == R[0]):
        raise DegenerateVarianceError("all residual products are identical; "
                                      "the variance estimate is zero")
    mean = float(np.mean(R))
    sd = float(np.std(R))
    if not sd > 0.0:
        raise DegenerateVarianceError("residual products have zero variance")
    total = float(n * mean)
    sd_sum = float(np.sqrt(n) * sd)
    t = total / sd_sum
    p2, pg, pl = _pvalues(t)
    R.flags.writeable = False
    return GcmResult(R, n, total, mean, sd, sd_sum, t, p2, pg, pl, bool(sign_flip))


def gcm_from_residuals(rY, rX, sign_flip=False):
    """Sample GCM test from the two residual columns.

    With ``sign_flip`` every product is negated before aggregation, which
    turns a conceded-goals metric into a saved-goals one.
    """
    rY = np.asarray(rY, dtype=float)
    rX = np.asarray(rX, dtype=float)
    if rY.shape != rX.shape:
        raise DataError(f"residual columns differ in length ({rY.shape} vs {rX.shape})")
    return gcm_from_products(rY * rX, sign_flip=sign_flip)


def critical_value(spec):
    if spec.critical_value is not None:
        return float(spec.critical_value)
    if spec.sidedness == "two-sided":
        return float(norm.ppf((1.0 + spec.level) / 2.0))
    return float(norm.ppf(spec.level))


def interval_from(estimate, sd_sum, spec=None):
    """Normal interval around a sum-scale estimate."""
    spec = spec or IntervalSpec()
    if not sd_sum > 0:
        raise DegenerateVarianceError("interval needs a positive standard deviation")
    z = critical_value(spec)
    if spec.sidedness == "two-sided":
        return (estimate - z * sd_sum, estimate + z * sd_sum)
    if spec.sidedness == "lower-one-sided":
        return (estimate - z * sd_sum, np.inf)
    return (-np.inf, estimate + z * sd_sum)


def confidence_interval(result, spec=None):
    """Interval for the residualized metric on the sum scale."""
    return interval_from(result.sum_scale_estimate, result.sd_sum, spec)


def non_nil_test(result, rho0, direction="greater"):
    """p-value for a null centred at ``rho0`` (sum scale) instead of zero."""
    if direction not in DIRECTIONS:
        raise DataError(f"direction must be one of {DIRECTIONS}")
    if not result.sd_sum > 0:
        raise DegenerateVarianceError("degenerate result")
    t = (result.sum_scale_estimate - rho0) / result.sd_sum
    p2, pg, pl = _pvalues(t)
    return {"two-sided": p2, "greater": pg, "less": pl}[direction]
