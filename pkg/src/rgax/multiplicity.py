"""Adjusted p-values for reports covering many actors.

Holm controls the family-wise error rate under arbitrary dependence.
Benjamini-Hochberg controls the false discovery rate under independence or
positive dependence; Benjamini-Yekutieli multiplies the BH values by
``c(m) = sum_{i<=m} 1/i`` and holds under arbitrary dependence.
"""

import numpy as np

from .errors import DataError

METHODS = ("holm", "benjamini-hochberg", "benjamini-yekutieli", "none")
ALIASES = {"bh": "benjamini-hochberg", "by": "benjamini-yekutieli", "fdr": "benjamini-hochberg"}

DEPENDENCE_CAVEAT = (
    "Benjamini-Hochberg adjusted values assume independent or positively "
    "dependent p-values across actors; this is not established for per-actor "
    "GCM tests sharing one outcome model. Use benjamini-yekutieli or holm when "
    "in doubt."
)


def canonical_method(method):
    m = ALIASES.get(method, method)
    if m not in METHODS:
        raise DataError(f"unknown adjustment method {method!r}; expected one of {METHODS}")
    return m


def harmonic(m):
    return float(np.sum(1.0 / np.arange(1, m + 1)))


def _bh_uncapped(p, order):
    m = len(p)
    ranks = np.arange(1, m + 1)
    scaled = p[order] * m / ranks
    return np.minimum.accumulate(scaled[::-1])[::-1]


def adjust(pvalues, method="holm"):
    """Adjusted p-values in input order.

    Ties are ordered by input position (stable sort).
    """
    method = canonical_method(method)
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1:
        raise DataError("p-values must be a flat column")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DataError("p-values must lie in [0, 1]")
    m = len(p)
    if m == 0 or method == "none":
        return p.copy()
    order = np.argsort(p, kind="stable")
    out = np.empty(m)
    if method == "holm":
        scaled = p[order] * (m - np.arange(m))
        out[order] = np.minimum(np.maximum.accumulate(scaled), 1.0)
    elif method == "benjamini-hochberg":
        out[order] = np.minimum(_bh_uncapped(p, order), 1.0)
    else:
        out[order] = np.minimum(harmonic(m) * _bh_uncapped(p, order), 1.0)
    # p * m / m can round one ulp below p
    return np.maximum(out, p)
