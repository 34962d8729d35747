import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgax.errors import DataError
from rgax.multiplicity import adjust, harmonic

METHODS = ("holm", "benjamini-hochberg", "benjamini-yekutieli", "none")
pvec = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=30)


class TestExamples:
    @pytest.mark.parametrize("method", METHODS)
    def test_single_value_unchanged(self, method):
        assert adjust([0.037], method)[0] == 0.037

    def test_bh_four(self):
        np.testing.assert_allclose(adjust([0.01, 0.02, 0.03, 0.04], "bh"), [0.04] * 4,
                                   atol=1e-12)

    def test_holm_two(self):
        np.testing.assert_allclose(adjust([0.01, 0.04], "holm"), [0.02, 0.04], atol=1e-12)

    def test_by_two(self):
        np.testing.assert_allclose(adjust([0.01, 0.04], "by"), [0.03, 0.06], atol=1e-12)

    def test_input_order_kept(self):
        np.testing.assert_allclose(adjust([0.04, 0.01], "holm"), [0.04, 0.02], atol=1e-12)

    def test_harmonic(self):
        assert harmonic(2) == 1.5

    def test_ties_stable(self):
        out = adjust([0.02, 0.02, 0.5], "holm")
        np.testing.assert_allclose(out, [0.06, 0.06, 0.5])


class TestErrors:
    def test_out_of_range(self):
        with pytest.raises(DataError):
            adjust([0.5, 1.2])
        with pytest.raises(DataError):
            adjust([-0.1])
        with pytest.raises(DataError):
            adjust([np.nan])

    def test_unknown_method(self):
        with pytest.raises(DataError):
            adjust([0.5], "bonferroni-ish")


class TestProperties:
    @settings(max_examples=250, deadline=None)
    @given(pvec, st.sampled_from(METHODS))
    def test_bounds(self, p, method):
        out = adjust(p, method)
        assert np.all(out >= np.asarray(p))
        assert np.all(out <= 1.0)

    @settings(max_examples=250, deadline=None)
    @given(pvec, st.sampled_from(METHODS[:3]), st.randoms())
    def test_permutation_equivariance(self, p, method, rnd):
        perm = list(range(len(p)))
        rnd.shuffle(perm)
        a = adjust(p, method)[perm]
        b = adjust(np.asarray(p)[perm], method)
        np.testing.assert_allclose(a, b, atol=1e-15)

    @settings(max_examples=250, deadline=None)
    @given(pvec, st.sampled_from(METHODS[:3]))
    def test_monotone_in_raw_order(self, p, method):
        p = np.asarray(p)
        out = adjust(p, method)
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(out[order]) >= -1e-15)

    @settings(max_examples=250, deadline=None)
    @given(pvec)
    def test_by_is_scaled_bh(self, p):
        bh_uncapped = adjust(p, "bh")
        m = len(p)
        expect = np.minimum(1.0, harmonic(m) * _bh_uncapped(p))
        np.testing.assert_allclose(adjust(p, "by"), expect, atol=1e-12)
        assert np.all(bh_uncapped <= adjust(p, "by") + 1e-15)


def _bh_uncapped(p):
    p = np.asarray(p, dtype=float)
    m = len(p)
    out = np.empty(m)
    for i in range(m):
        out[i] = min(p[j] * m / (np.sum(p <= p[j])) for j in range(m) if p[j] >= p[i])
    return out
