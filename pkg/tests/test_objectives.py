import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from micontrast.errors import DomainError, ShapeError
from micontrast.objectives import (CPC, MLCPC, AlphaSchedule, ObjectiveSpec, alpha_min,
                                   cpc_value, evaluate, ml_cpc_value, objective_grad_logits,
                                   schedule_alpha)

from conftest import central_diff, rel_err


def brute_cpc(logits, alpha):
    """Direct ratio form with explicit exponentials (small logits only)."""
    n, m = logits.shape
    g = np.exp(logits)
    beta = (m - alpha) / (m - 1)
    return np.mean([math.log(m * g[i, 0] / (alpha * g[i, 0] + beta * g[i, 1:].sum()))
                    for i in range(n)])


def brute_mlcpc(logits, alpha):
    n, m = logits.shape
    g = np.exp(logits)
    beta = (m - alpha) / (m - 1)
    z = alpha * g[:, 0].sum() + beta * g[:, 1:].sum()
    return np.mean([math.log(n * m * g[i, 0] / z) for i in range(n)])


logit_mats = st.tuples(st.integers(1, 6), st.integers(2, 6)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(-5, 5)))


class TestAlphaMin:
    def test_n1_m2(self):
        assert alpha_min(1, 2) == 1.0

    def test_distillation_setting(self):
        assert alpha_min(64, 16384) == pytest.approx(0.0156, abs=5e-5)

    def test_square(self):
        assert alpha_min(128, 128) == pytest.approx(128 / 16257, rel=1e-15)

    def test_rejects_m1(self):
        with pytest.raises(DomainError):
            alpha_min(3, 1)

    @given(st.integers(1, 500), st.integers(2, 500))
    def test_in_unit_interval(self, n, m):
        assert 0 < alpha_min(n, m) <= 1


class TestCpcValue:
    def test_constant_logits(self):
        for alpha in (0.1, 0.5, 1.0, 2.5):
            assert cpc_value(np.full((4, 5), 3.7), alpha) == pytest.approx(0.0, abs=1e-12)

    def test_hand_values(self):
        lg = np.array([[math.log(2), 0.0]])
        assert cpc_value(lg, 1.0) == pytest.approx(math.log(4 / 3), abs=1e-14)
        assert cpc_value(lg, 0.5) == pytest.approx(math.log(4 / 2.5), abs=1e-14)

    def test_alpha_too_large(self):
        with pytest.raises(DomainError):
            cpc_value(np.zeros((2, 3)), 3.0)

    def test_rejects_m1(self):
        with pytest.raises(ShapeError):
            cpc_value(np.zeros((2, 1)))

    def test_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            cpc_value(np.array([[0.0, np.inf]]))

    @given(logit_mats, st.floats(0.05, 1.5))
    def test_matches_brute_force(self, lg, alpha):
        assert cpc_value(lg, alpha) == pytest.approx(brute_cpc(lg, alpha), abs=1e-10)

    def test_large_logits_stable(self):
        lg = np.array([[800.0, 790.0, 780.0]])
        ref = brute_cpc(lg - 800.0, 1.0)
        assert cpc_value(lg, 1.0) == pytest.approx(ref, abs=1e-12)

    def test_batched_leading_axes(self, rng):
        lg = rng.generator.normal(size=(3, 4, 5))
        out = cpc_value(lg, 0.7)
        np.testing.assert_allclose(out, [cpc_value(a, 0.7) for a in lg], rtol=1e-14)


class TestMlCpcValue:
    def test_constant_logits(self):
        for alpha in (alpha_min(3, 4), 0.5, 1.0, 3.0):
            assert ml_cpc_value(np.full((3, 4), -1.25), alpha) == pytest.approx(0.0, abs=1e-12)

    def test_hand_values(self):
        lg = np.log([[2.0, 1.0], [2.0, 1.0]])
        assert ml_cpc_value(lg, 1.0) == pytest.approx(math.log(4 / 3), abs=1e-14)
        assert ml_cpc_value(lg, alpha_min(2, 2)) == pytest.approx(math.log(3 / 2), abs=1e-14)

    @given(logit_mats, st.floats(0.05, 1.5))
    def test_matches_brute_force(self, lg, alpha):
        assert ml_cpc_value(lg, alpha) == pytest.approx(brute_mlcpc(lg, alpha), abs=1e-10)

    @given(arrays(np.float64, st.tuples(st.just(1), st.integers(2, 8)),
                  elements=st.floats(-20, 20)), st.floats(0.01, 1.9))
    def test_equals_cpc_when_n_is_one(self, lg, alpha):
        assert ml_cpc_value(lg, alpha) == pytest.approx(cpc_value(lg, alpha), abs=1e-12)


class TestProperties:
    @given(logit_mats, st.floats(0.01, 1.0), st.floats(-50, 50))
    def test_translation_invariance(self, lg, alpha, c):
        for f in (cpc_value, ml_cpc_value):
            assert f(lg + c, alpha) == pytest.approx(f(lg, alpha), abs=1e-9)

    @given(logit_mats, st.floats(0.01, 1.0))
    def test_cap(self, lg, alpha):
        _, m = lg.shape
        cap = math.log(m / alpha)
        assert cpc_value(lg, alpha) <= cap + 1e-9
        assert ml_cpc_value(lg, alpha) <= cap + 1e-9

    def test_smallest_alpha_cap(self):
        n, m = 5, 7
        lg = np.full((n, m), -60.0)
        lg[:, 0] = 60.0
        val = ml_cpc_value(lg, alpha_min(n, m))
        assert val == pytest.approx(math.log(n * (m - 1) + 1), abs=1e-9)

    @given(logit_mats, st.floats(0.5, 4.0))
    def test_monotone_in_alpha(self, lg, gap):
        lg = lg.copy()
        lg[:, 0] = lg[:, 1:].max(axis=1) + gap
        alphas = np.linspace(0.01, 1.0, 12)
        for f in (cpc_value, ml_cpc_value):
            vals = [f(lg, a) for a in alphas]
            assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


class TestGradient:
    def test_constant_cpc(self):
        n, m = 3, 5
        g = objective_grad_logits(np.zeros((n, m)), ObjectiveSpec(CPC, 1.0))
        np.testing.assert_allclose(g[:, 0], (1 - 1 / m) / n, rtol=1e-14)
        np.testing.assert_allclose(g[:, 1:], -1 / (n * m), rtol=1e-14)

    @given(logit_mats, st.floats(0.05, 1.5))
    def test_mlcpc_sums_to_zero(self, lg, alpha):
        g = objective_grad_logits(lg, ObjectiveSpec(MLCPC, alpha))
        assert abs(g.sum()) <= 1e-12

    @pytest.mark.parametrize("kind", [CPC, MLCPC])
    def test_finite_differences(self, kind, rng):
        gen = rng.generator
        for _ in range(20):
            n, m = gen.integers(1, 9), gen.integers(2, 9)
            lg = gen.normal(0, 2, size=(n, m))
            spec = ObjectiveSpec(kind, float(gen.uniform(0.05, 1.0)))
            f = ml_cpc_value if kind == MLCPC else cpc_value
            num = central_diff(lambda: f(lg, spec.alpha), lg, eps=1e-5)
            assert rel_err(objective_grad_logits(lg, spec), num) <= 1e-6


class TestSpec:
    def test_bound_valid_mlcpc(self):
        assert ObjectiveSpec(MLCPC, alpha_min(3, 3)).bound_valid(3, 3)
        assert ObjectiveSpec(MLCPC, 1.0).bound_valid(3, 3)
        assert not ObjectiveSpec(MLCPC, 0.4).bound_valid(3, 3)
        assert not ObjectiveSpec(MLCPC, 1.2).bound_valid(3, 3)

    def test_bound_valid_cpc(self):
        assert ObjectiveSpec(CPC, 1.0).bound_valid(3, 3)
        assert not ObjectiveSpec(CPC, 0.5).bound_valid(3, 3)

    def test_evaluate_carries_flag(self):
        ev = evaluate(np.zeros((3, 3)), ObjectiveSpec(MLCPC, 0.1))
        assert ev.value == pytest.approx(0.0, abs=1e-12) and ev.bound_valid is False

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(DomainError):
            ObjectiveSpec(CPC, 0.0)
        with pytest.raises(DomainError):
            ObjectiveSpec("nce", 1.0)


class TestSchedule:
    @pytest.mark.parametrize("start,end", [(2.0, 0.5), (5.0, 0.2), (10.0, 0.1)])
    @pytest.mark.parametrize("total", [2, 100, 20000])
    def test_midpoint_is_one(self, start, end, total):
        assert schedule_alpha(AlphaSchedule(start, end, total), total // 2) == 1.0

    def test_boundaries(self):
        s = AlphaSchedule(10.0, 0.1, 40)
        assert schedule_alpha(s, 0) == 10.0
        assert schedule_alpha(s, 40) == pytest.approx(0.1, rel=1e-15)

    def test_geometric(self):
        s = AlphaSchedule(8.0, 0.5, 4)
        assert [schedule_alpha(s, k) for k in range(5)] == pytest.approx([8, 4, 2, 1, 0.5])

    @pytest.mark.parametrize("step", [-1, 11])
    def test_out_of_range(self, step):
        with pytest.raises(DomainError):
            schedule_alpha(AlphaSchedule(2.0, 0.5, 10), step)
