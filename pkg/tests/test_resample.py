import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smcfilter import _fallback
from smcfilter.checks import pair_moment_grid, negative_covariance, systematic_moment_bruteforce, tree_tail
from smcfilter.errors import InvalidDensity
from smcfilter.resample import (
    SCHEMES,
    ResampleCounts,
    counts_to_indices,
    multinomial_covariance,
    multinomial_resample,
    resample,
    residual_covariance,
    residual_resample,
    systematic_pair_covariance,
    systematic_pair_moment,
    systematic_resample,
    tree_resample,
)
from smcfilter.rng import make_stream


def random_pi(rng, R):
    p = rng.dirichlet(np.ones(R))
    return p / p.sum()


class TestValidation:
    def test_bad_pi(self):
        with pytest.raises(InvalidDensity):
            multinomial_resample([0.5, 0.6], 3, make_stream(0))

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_bad_n(self, scheme):
        with pytest.raises(ValueError):
            resample(scheme, [0.5, 0.5], 0, make_stream(0))

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            resample("stratified", [0.5, 0.5], 2, make_stream(0))

    def test_counts_type(self):
        with pytest.raises(ValueError):
            ResampleCounts([1, 2], 4)
        np.testing.assert_array_equal(counts_to_indices([2, 0, 1]), [0, 0, 2])


class TestMultinomial:
    def test_degenerate(self):
        c = multinomial_resample([1, 0, 0], 5, make_stream(1), size=100)
        assert np.all(c == [5, 0, 0])

    def test_half_half(self):
        c = multinomial_resample([0.5, 0.5], 100_000, make_stream(2))
        assert np.all(np.abs(c - 50_000) <= 3 * math.sqrt(100_000 * 0.25))

    def test_mean(self):
        n = 100_000
        c = multinomial_resample([0.2, 0.3, 0.5], 10, make_stream(3), size=n)
        se = c.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(c.mean(axis=0) - [2, 3, 5]) <= 3 * se)


class TestResidual:
    def test_integral(self):
        assert np.all(residual_resample([0.6, 0.4], 10, make_stream(0), size=50) == [6, 4])

    def test_single_remainder(self):
        n = 100_000
        c = residual_resample([0.26, 0.74], 10, make_stream(4), size=n)
        assert set(map(tuple, c)) == {(3, 7), (2, 8)}
        p = np.mean(c[:, 0] == 3)
        assert abs(p - 0.6) <= 3 * math.sqrt(0.24 / n)

    def test_covariance_matches_monte_carlo(self):
        rng = make_stream(5)
        pi = random_pi(rng, 4)
        n = 200_000
        c = residual_resample(pi, 7, rng, size=n)
        emp = np.cov(c.T)
        exact = residual_covariance(pi, 7)
        assert np.max(np.abs(emp - exact)) < 0.02

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 4), st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_reduction_bound(self, R, N, seed):
        rng = np.random.default_rng(seed)
        pi = random_pi(rng, R)
        psi = rng.uniform(-1, 1, R)
        n_rest = N - int(np.floor(N * pi + 1e-9).sum())
        res = psi @ residual_covariance(pi, N) @ psi
        mult = psi @ multinomial_covariance(pi, N) @ psi
        # never worse than multinomial, and the worst case over bounded psi shrinks by N'/N
        assert res <= mult + 1e-12
        assert res <= n_rest * np.ptp(psi) ** 2 / 4 + 1e-12

    def test_factor_is_not_an_identity(self):
        # pi=(0.26, 0.74), N=10, psi=(1, 0): N'/N times the multinomial term is 0.1924, residual gives 0.24
        psi = np.array([1.0, 0.0])
        mult = psi @ multinomial_covariance([0.26, 0.74], 10) @ psi
        res = psi @ residual_covariance([0.26, 0.74], 10) @ psi
        assert mult == pytest.approx(1.924)
        assert res == pytest.approx(0.24)

    def test_equality_when_no_integer_parts(self):
        pi = np.array([0.2, 0.3, 0.5])
        psi = np.array([1.0, -2.0, 0.5])
        N = 1
        res = psi @ residual_covariance(pi, N) @ psi
        assert res == pytest.approx(psi @ multinomial_covariance(pi, N) @ psi)


class TestSystematic:
    def test_exact_allocation(self):
        assert np.all(systematic_resample([0.5, 0.5], 2, make_stream(0), size=100) == [1, 1])
        assert np.all(systematic_resample([0.25, 0.25, 0.5], 4, make_stream(0), size=100) == [1, 1, 2])

    def test_threshold_unpermuted(self, backend_kernels):
        u = (np.arange(1_000_000) + 0.5) / 1_000_000
        order = np.tile(np.arange(2, dtype=np.int64), (u.size, 1))
        c = backend_kernels.systematic_counts(np.array([0.35, 0.65]), 2, u, order)
        np.testing.assert_array_equal(c[:, 0], (u > 0.3).astype(np.int64))
        assert c[:, 0].mean() == pytest.approx(0.7, abs=1e-6)

    def test_permutation_default(self):
        a = systematic_resample([0.3, 0.3, 0.4], 5, make_stream(9), size=2000)
        b = systematic_resample([0.3, 0.3, 0.4], 5, make_stream(9), size=2000, permute=False)
        assert not np.array_equal(a, b)


class TestTree:
    def test_integral(self):
        assert np.all(tree_resample([0.5, 0.5], 4, make_stream(0), size=100) == [2, 2])
        assert np.all(tree_resample([0.1, 0.2, 0.3, 0.4], 10, make_stream(0), size=100) == [1, 2, 3, 4])

    def test_root_split(self):
        n = 100_000
        c = tree_resample([0.5, 0.5], 3, make_stream(6), size=n)
        assert set(map(tuple, c)) == {(2, 1), (1, 2)}
        assert abs(np.mean(c[:, 0] == 2) - 0.5) <= 3 * math.sqrt(0.25 / n)

    def test_negative_covariances(self):
        rng = make_stream(7)
        for R in (3, 5, 8):
            pi = random_pi(rng, R)
            c = tree_resample(pi, 11, rng, size=100_000)
            assert negative_covariance(c) <= 4.0

    def test_tail_bound(self):
        rng = make_stream(8)
        R, N = 8, 17
        pi = random_pi(rng, R)
        c = tree_resample(pi, N, rng, size=100_000)
        subsets = [list(A) for k in range(1, R) for A in itertools.combinations(range(R), k)]
        assert tree_tail(c, pi, N, subsets, np.linspace(0.25, 4.0, 16)) <= 4.0


class TestAllSchemes:
    @settings(max_examples=8, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_unbiased(self, R, N, seed):
        rng = np.random.default_rng(seed)
        pi = random_pi(rng, R)
        n = 100_000
        for scheme in SCHEMES:
            c = resample(scheme, pi, N, make_stream(seed), size=n)
            assert np.all(c.sum(axis=1) == N)
            sd = c.std(axis=0, ddof=1)
            dev = np.abs(c.mean(axis=0) - N * pi)
            assert np.all(dev <= 4 * sd / math.sqrt(n) + 1e-9), scheme

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 200), st.integers(0, 2**32 - 1))
    def test_support(self, R, N, seed):
        rng = np.random.default_rng(seed)
        pi = random_pi(rng, R)
        for scheme in ("systematic", "tree"):
            c = resample(scheme, pi, N, make_stream(seed), size=20)
            assert np.all(c.sum(axis=1) == N)
            lo = np.floor(N * pi + 1e-9)
            assert np.all((c >= lo - 1) & (c <= lo + 1)), scheme
            assert np.all(np.abs(c - N * pi) < 1), scheme

    def test_sparse_pi(self):
        pi = np.array([0.0, 0.5, 0.0, 0.5, 0.0])
        for scheme in SCHEMES:
            c = resample(scheme, pi, 7, make_stream(1), size=500)
            assert np.all(c[:, [0, 2, 4]] == 0), scheme


class TestBackends:
    @pytest.mark.parametrize("R,N", [(1, 1), (2, 3), (7, 7), (64, 1000), (1000, 10)])
    def test_identical(self, backend_kernels, R, N):
        rng = np.random.default_rng(R * 1000 + N)
        pi = random_pi(rng, R)
        n = 50
        u = rng.random(n)
        order = rng.permuted(np.tile(np.arange(R, dtype=np.int64), (n, 1)), axis=1)
        ut = rng.random((n, max(R - 1, 0)))
        np.testing.assert_array_equal(
            backend_kernels.systematic_counts(pi, N, u, order), _fallback.systematic_counts(pi, N, u, order)
        )
        np.testing.assert_array_equal(backend_kernels.tree_counts(pi, N, ut), _fallback.tree_counts(pi, N, ut))

    def test_selected_backend(self):
        from smcfilter import BACKEND

        assert BACKEND in ("cython", "python")


class TestPairMoment:
    def test_integral_lower_cell(self):
        for r_m, r_u in ((0.3, 0.4), (0.9, 0.99), (0.0, 0.0)):
            assert systematic_pair_moment(0.0, r_m, r_u) == 0

    def test_value(self):
        assert systematic_pair_moment(0.5, 0.0, 0.5) == 0
        assert systematic_pair_covariance(0.5, 0.0, 0.5) == pytest.approx(-0.25)

    def test_value_on_dense_u_grid(self):
        u = (np.arange(1_000_000) + 0.5) / 1_000_000
        mj = (u + 0.5 > 1).astype(float)
        mk = np.ceil(u + 1.0) - np.ceil(u + 0.5)
        assert np.mean(mj * mk) == pytest.approx(0.0, abs=1e-6)

    def test_domain(self):
        with pytest.raises(ValueError):
            systematic_pair_moment(1.0, 0.2, 0.2)

    @pytest.mark.parametrize("r", [(0.3, 0.5, 0.6), (0.7, 0.6, 0.2), (0.9, 0.8, 0.7), (0.15, 0.1, 0.3)])
    def test_against_kernel(self, backend_kernels, r):
        # four cells back to back from 0 with scaled masses r_l, r_m, r_u and the rest
        r_l, r_m, r_u = r
        N = 4
        pi = np.array([r_l, r_m, r_u, N - r_l - r_m - r_u]) / N
        u = (np.arange(1_000_000) + 0.5) / 1_000_000
        order = np.tile(np.arange(4, dtype=np.int64), (u.size, 1))
        c = backend_kernels.systematic_counts(pi, N, u, order)
        emp = np.mean(c[:, 0] * c[:, 2])
        assert emp == pytest.approx(systematic_pair_moment(*r), abs=1e-5)
        assert systematic_moment_bruteforce(*r) == pytest.approx(systematic_pair_moment(*r), abs=1e-12)

    def test_grid_and_average(self):
        err, avg = pair_moment_grid(9)
        assert err <= 1e-6
        assert avg <= 1e-6
