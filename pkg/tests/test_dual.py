"""Dual death chains: flows, totals tables, typed transitions, simulation."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm

from mvhmm.core import MultiIndex
from mvhmm.dual import (
    DwDualSpec,
    FvDualSpec,
    c_flow,
    c_flow_integral,
    dw_survival_prob,
    dw_typed_log_prob,
    fv_totals_matrix,
    fv_totals_transition,
    fv_typed_log_prob,
    gillespie_dw,
    gillespie_fv,
    s_t,
)
from mvhmm.errors import DomainError
from mvhmm.specfun import log_binom_pmf, log_falling_binom


class TestSt:
    def test_small_t_asymptote(self):
        # S_t ~ 2/t as t -> 0, so S_t * t -> 2
        assert s_t(2.0, 1e-8) * 1e-8 == pytest.approx(2.0, abs=1e-6)

    def test_large_t(self):
        assert s_t(2.0, 100.0) < 1e-12

    def test_value(self):
        assert s_t(1.0, 2.0) == pytest.approx(1.0 / (math.e - 1.0), abs=1e-14)

    def test_domain(self):
        with pytest.raises(DomainError):
            s_t(1.0, 0.0)


class TestCFlow:
    def test_start(self):
        assert c_flow(1.0, 3.0, 0.0) == 3.0

    def test_decreases_to_zero(self):
        beta = 0.7
        assert c_flow(beta, 3.0, 200.0 / beta) < 1e-12

    def test_flow_property(self):
        beta, c, t, s = 1.0, 3.0, 0.7, 1.3
        direct = c_flow(beta, c, t + s)
        composed = c_flow(beta, c_flow(beta, c, t), s)
        assert direct == pytest.approx(composed, abs=1e-13)


class TestSurvival:
    def test_at_zero(self):
        spec = DwDualSpec(1.0, 1.0, 2.0)
        assert dw_survival_prob(spec, 0.0) == 1.0

    def test_integral_against_quadrature(self):
        beta, c, t = 1.0, 2.0, 1.5
        oracle, err = quad(lambda s: c_flow(beta, c, s), 0.0, t, epsabs=1e-13)
        assert err < 1e-10
        assert c_flow_integral(beta, c, t) == pytest.approx(oracle, abs=1e-10)

    def test_monotone(self):
        spec = DwDualSpec(1.0, 0.8, 1.5)
        qs = [dw_survival_prob(spec, t) for t in np.linspace(0.0, 5.0, 40)]
        assert all(a >= b for a, b in zip(qs, qs[1:]))

    def test_flow_compatibility(self):
        # q over t+s started at c equals q over t at c times q over s at C_t
        beta, c, t, s = 0.9, 2.5, 0.6, 1.1
        spec = DwDualSpec(1.0, beta, c)
        lhs = dw_survival_prob(spec, t + s)
        rhs = dw_survival_prob(spec, t) * dw_survival_prob(
            DwDualSpec(1.0, beta, c_flow(beta, c, t)), s
        )
        assert lhs == pytest.approx(rhs, abs=1e-10)


class TestTotalsTable:
    def test_golden_p11(self):
        for theta in (0.5, 1.0, 2.0, 5.0):
            for t in (0.01, 0.1, 1.0, 10.0):
                table = fv_totals_transition(theta, 1, t)
                assert table.prob(1) == pytest.approx(
                    math.exp(-theta * t / 2.0), abs=1e-8
                )

    def test_zero_time_point_mass(self):
        table = fv_totals_transition(1.3, 4, 0.0)
        assert table.prob(4) == 1.0
        assert table.probs[:4].sum() == 0.0

    def test_rows_normalized(self):
        for theta, n, t in [(0.5, 6, 0.3), (2.5, 8, 1.2), (1.0, 5, 5.0)]:
            table = fv_totals_transition(theta, n, t)
            assert np.all(table.probs >= 0.0)
            assert table.probs.sum() == pytest.approx(1.0, abs=1e-10)

    def test_against_matrix_exponential(self):
        # independent route: expm of the generator on {0..n}
        theta, n, t = 1.7, 6, 0.8
        rates = np.array([i * (theta + i - 1) / 2.0 for i in range(n + 1)])
        gen = -np.diag(rates)
        for i in range(1, n + 1):
            gen[i, i - 1] = rates[i]
        oracle = expm(gen.T * t)[:, n]
        table = fv_totals_transition(theta, n, t)
        assert np.allclose(table.probs, oracle, atol=1e-10)

    def test_chapman_kolmogorov(self):
        theta, n = 1.2, 5
        t, s = 0.4, 0.9
        pt = fv_totals_matrix(theta, n, t)
        ps = fv_totals_matrix(theta, n, s)
        pts = fv_totals_matrix(theta, n, t + s)
        assert np.allclose(pts, pt @ ps, atol=1e-8)

    def test_stochastic_monotonicity(self):
        theta, n = 1.5, 5
        times = np.linspace(0.05, 3.0, 25)
        cdfs = np.array(
            [np.cumsum(fv_totals_transition(theta, n, t).probs) for t in times]
        )
        assert np.all(np.diff(cdfs, axis=0) >= -1e-9)


class TestTypedTransitions:
    def test_identity_at_zero(self):
        spec = FvDualSpec(1.0)
        n = MultiIndex((2, 1))
        assert fv_typed_log_prob(spec, n, n, 0.0) == 0.0
        dspec = DwDualSpec(1.0, 1.0, 1.0)
        assert dw_typed_log_prob(dspec, n, n, 0.0) == 0.0

    def test_rejects_bad_index(self):
        spec = FvDualSpec(1.0)
        with pytest.raises(IndexError):
            fv_typed_log_prob(spec, MultiIndex((1, 0)), MultiIndex((0, 1)), 0.5)

    def test_hypergeometric_split(self):
        # n=(1,1) to k=(1,0) carries half of the totals mass p_{2,1}(t)
        spec = FvDualSpec(1.3)
        t = 0.6
        p21 = fv_totals_transition(1.3, 2, t).prob(1)
        lp = fv_typed_log_prob(spec, MultiIndex((1, 1)), MultiIndex((1, 0)), t)
        assert math.exp(lp) == pytest.approx(p21 / 2.0, abs=1e-12)

    def test_fv_marginalizes_to_totals(self):
        spec = FvDualSpec(0.9)
        n = MultiIndex((2, 1, 1))
        t = 0.7
        table = fv_totals_transition(0.9, n.total, t)
        sums = np.zeros(n.total + 1)
        for k in n.lattice_below():
            sums[k.total] += math.exp(fv_typed_log_prob(spec, n, k, t))
        assert np.allclose(sums, table.probs, atol=1e-10)

    def test_dw_binomial_hypergeometric_factorization(self):
        # product of per-type binomials equals Bin(total) times hypergeometric
        rng = np.random.default_rng(2)
        spec = DwDualSpec(1.0, 0.8, 1.5)
        t = 0.5
        q = dw_survival_prob(spec, t)
        for _ in range(20):
            n = MultiIndex(rng.integers(0, 4, size=3))
            if n.total == 0:
                continue
            for k in n.lattice_below():
                direct = dw_typed_log_prob(spec, n, k, t)
                alt = log_binom_pmf(k.total, n.total, q) - log_falling_binom(
                    n.total, k.total
                )
                for nj, kj in zip(n, k):
                    alt += log_falling_binom(nj, kj)
                assert direct == pytest.approx(alt, abs=1e-12)


class TestGillespie:
    def test_zero_time(self):
        rng = np.random.default_rng(0)
        spec = FvDualSpec(1.0)
        n = MultiIndex((2, 1))
        res = gillespie_fv(spec, n, 0.0, 100, rng)
        assert res.freq(n) == 1.0

    def test_fv_single_lineage_survival(self):
        rng = np.random.default_rng(1)
        spec = FvDualSpec(1.0)
        res = gillespie_fv(spec, MultiIndex((1,)), 1.0, 200_000, rng)
        exact = math.exp(-0.5)
        assert abs(res.totals_freq(1) - exact) <= 3.0 * res.totals_se(1)

    def test_fv_totals_match_ode(self):
        rng = np.random.default_rng(2)
        spec = FvDualSpec(1.0)
        res = gillespie_fv(spec, MultiIndex((1, 1)), 1.0, 200_000, rng)
        table = fv_totals_transition(1.0, 2, 1.0)
        for k in range(3):
            assert abs(res.totals_freq(k) - table.prob(k)) <= 3.0 * res.totals_se(k)

    def test_dw_totals_binomial(self):
        rng = np.random.default_rng(3)
        spec = DwDualSpec(1.0, 0.8, 2.0)
        n = MultiIndex((3, 2))
        t = 0.7
        res = gillespie_dw(spec, n, t, 200_000, rng)
        q = dw_survival_prob(spec, t)
        for k in range(n.total + 1):
            exact = math.exp(log_binom_pmf(k, n.total, q))
            assert abs(res.totals_freq(k) - exact) <= 3.0 * res.totals_se(k)
