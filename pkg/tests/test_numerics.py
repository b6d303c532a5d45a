import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from micontrast.errors import DomainError
from micontrast.numerics import (RngState, logsumexp, marginal_shuffle,
                                 sample_correlated_gaussian)


class TestLogsumexp:
    def test_single_zero(self):
        assert logsumexp([0.0]) == 0.0

    def test_single_element_exact(self):
        assert logsumexp([-3.25]) == -3.25

    def test_identical_terms(self):
        assert logsumexp([math.log(2), math.log(2)]) == pytest.approx(math.log(4), abs=1e-15)

    def test_no_overflow(self):
        assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(DomainError):
            logsumexp([])

    def test_axis(self):
        a = np.array([[0.0, 0.0], [1.0, 3.0]])
        np.testing.assert_allclose(logsumexp(a, axis=1),
                                   np.log(np.exp(a).sum(axis=1)), rtol=1e-14)

    @given(st.lists(st.floats(-500, 500), min_size=1, max_size=50))
    def test_bracketed_by_max(self, v):
        out = logsumexp(v)
        assert max(v) <= out <= max(v) + math.log(len(v)) + 1e-12


class TestRng:
    def test_same_seed_same_stream(self):
        a = RngState(42).generator.standard_normal(100)
        b = RngState(42).generator.standard_normal(100)
        assert a.tobytes() == b.tobytes()

    def test_streams_differ(self):
        a = RngState(42, 0).generator.random(10)
        b = RngState(42, 1).generator.random(10)
        assert not np.array_equal(a, b)

    def test_bad_seed(self):
        with pytest.raises(DomainError):
            RngState(-1)


class TestCorrelatedGaussian:
    N = 100_000

    def _corr(self, rho, seed=0):
        x, y = sample_correlated_gaussian(RngState(seed), 10, rho, self.N // 10)
        return x.ravel(), y.ravel()

    def test_independent(self):
        x, y = self._corr(0.0)
        assert abs(np.corrcoef(x, y)[0, 1]) <= 3 / math.sqrt(self.N)

    def test_rho_half(self):
        x, y = self._corr(0.5)
        assert abs(np.corrcoef(x, y)[0, 1] - 0.5) <= 3 / math.sqrt(self.N)

    @pytest.mark.parametrize("rho", [0.0, 0.3, 0.9])
    def test_marginals(self, rho):
        x, y = self._corr(rho, seed=7)
        for v in (x, y):
            assert abs(v.mean()) <= 4 / math.sqrt(self.N)
            assert abs(v.var() - 1) <= 8 / math.sqrt(self.N)

    def test_deterministic(self):
        a = sample_correlated_gaussian(RngState(42), 3, 0.4, 16)
        b = sample_correlated_gaussian(RngState(42), 3, 0.4, 16)
        assert all(p.tobytes() == q.tobytes() for p, q in zip(a, b))

    def test_shapes(self):
        x, y = sample_correlated_gaussian(RngState(0), 4, 0.2, 7)
        assert x.shape == y.shape == (7, 4) and x.dtype == np.float64

    @pytest.mark.parametrize("rho", [-0.1, 1.0, 1.5])
    def test_bad_rho(self, rho):
        with pytest.raises(DomainError):
            sample_correlated_gaussian(RngState(0), 2, rho, 3)


class TestMarginalShuffle:
    def test_single_row(self):
        y = np.array([[1.5, -2.0]])
        np.testing.assert_array_equal(marginal_shuffle(RngState(3), y, 1), y)

    def test_uniform_frequencies(self):
        y = np.arange(4.0).reshape(4, 1)
        copies = 100_000
        out = marginal_shuffle(RngState(5), y, copies).ravel()
        total = out.size
        sigma = math.sqrt(total * 0.25 * 0.75)
        for k in range(4):
            assert abs(np.sum(out == k) - total / 4) <= 3 * sigma

    def test_reproducible(self):
        y = np.arange(10.0).reshape(5, 2)
        a = marginal_shuffle(RngState(9), y, 3)
        b = marginal_shuffle(RngState(9), y, 3)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (15, 2)

    def test_bad_copies(self):
        with pytest.raises(DomainError):
            marginal_shuffle(RngState(0), np.zeros((2, 2)), 0)
