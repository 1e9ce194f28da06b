import itertools

import numpy as np
import pytest
from scipy import stats

from smcfilter.core import WeightedParticleSystem, l1_distance
from smcfilter.errors import MissingHistory, SmcError
from smcfilter.exact import hmm_smoother
from smcfilter.filter import FilterConfig, run_filter
from smcfilter.models import DiscreteHmm, simulate
from smcfilter.rng import make_stream
from smcfilter.smoother import DiskHistory, backward_smooth, load_history, save_history


def conditional_path_pmf(model, obs, history):
    """Exact law of the backward draws given the stored particles, by enumeration."""
    M, T = model.n_states, len(obs)
    A, B = model.transition, model.emission
    out = {}
    final = history[T].pmf(M)
    pred = [None] + [history[t - 1].pmf(M) @ A for t in range(1, T + 1)]
    for path in itertools.product(range(M), repeat=T + 1):
        p = final[path[T]]
        for t in range(T - 1, -1, -1):
            nxt = path[t + 1]
            if t == 0:
                k = model.initial * A[:, nxt]
            else:
                k = pred[t] * B[:, obs[t - 1]] * A[:, nxt]
            p *= k[path[t]] / k.sum() if k.sum() > 0 else 0.0
        out[path] = p
    return out


@pytest.fixture(scope="module")
def hmm2_run():
    from smcfilter.models import fixture

    m = fixture("hmm2")
    obs = np.array([1, 0, 0])
    trace = run_filter(m, obs, FilterConfig(N=50_000, seed=3))
    return m, obs, trace


class TestBackwardSmoother:
    def test_t0_returns_particles(self, hmm2):
        trace = run_filter(hmm2, [], FilterConfig(N=200, seed=1))
        draws = backward_smooth(trace, hmm2)
        np.testing.assert_array_equal(draws.trajectories[:, 0], trace.history[0].values)
        assert draws.total_attempts == 0

    def test_marginals_close(self, hmm2_run):
        m, obs, trace = hmm2_run
        draws = backward_smooth(trace, m)
        exact = hmm_smoother(m, obs)
        for t in range(len(obs) + 1):
            assert l1_distance(draws.marginal_pmf(t, 2), exact[t]) <= 0.03

    def test_pairs_close(self, hmm2_run):
        from smcfilter.exact import hmm_pair_smoother

        m, obs, trace = hmm2_run
        draws = backward_smooth(trace, m)
        for t in range(len(obs)):
            assert np.abs(draws.pair_pmf(t, 2) - hmm_pair_smoother(m, obs, t)).sum() <= 0.03

    def test_path_law_chisquare(self):
        m = DiscreteHmm([0.6, 0.4], [[0.7, 0.3], [0.2, 0.8]], [[0.8, 0.2], [0.3, 0.7]])
        obs = np.array([0, 1, 1])
        trace = run_filter(m, obs, FilterConfig(N=100_000, seed=5))
        draws = backward_smooth(trace, m)
        pmf = conditional_path_pmf(m, obs, trace.history)
        keys = list(pmf)
        expected = np.array([pmf[k] for k in keys]) * draws.n_paths
        index = {k: i for i, k in enumerate(keys)}
        observed = np.zeros(len(keys))
        for row in map(tuple, draws.trajectories.tolist()):
            observed[index[row]] += 1
        keep = expected > 0
        assert observed[~keep].sum() == 0
        pvalue = stats.chisquare(observed[keep], expected[keep] * observed.sum() / expected[keep].sum()).pvalue
        assert pvalue > 1e-3

    def test_deterministic_dynamics(self):
        m = DiscreteHmm([0.5, 0.5], np.eye(2), [[0.6, 0.4], [0.4, 0.6]])
        obs = np.array([0, 1, 0, 0])
        trace = run_filter(m, obs, FilterConfig(N=500, seed=2))
        paths = backward_smooth(trace, m).trajectories
        assert np.all(paths == paths[:, :1])

    def test_cost_linear(self, hmm3):
        obs = simulate(hmm3, 6, 1).observations
        per = []
        for N in (1000, 10_000):
            trace = run_filter(hmm3, obs, FilterConfig(N=N, seed=4))
            draws = backward_smooth(trace, hmm3)
            per.append(draws.total_attempts / (N * len(obs)))
        assert per[1] < 1.3 * per[0]
        assert per[1] < 50

    def test_reproducible(self, hmm2):
        trace = run_filter(hmm2, [1, 1, 0], FilterConfig(N=300, seed=8))
        a = backward_smooth(trace, hmm2).trajectories
        b = backward_smooth(trace, hmm2).trajectories
        c = backward_smooth(trace, hmm2, stream=make_stream(99)).trajectories
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_missing_history(self, hmm2):
        trace = run_filter(hmm2, [1, 0], FilterConfig(N=50, seed=0))
        with pytest.raises(MissingHistory):
            backward_smooth(trace, hmm2, history=trace.history[:2])
        assert issubclass(MissingHistory, SmcError)

    def test_custom_tau(self, hmm2_run):
        m, obs, trace = hmm2_run
        draws = backward_smooth(trace, m, tau=lambda t, s: np.full(s.size, 1 / s.size))
        exact = hmm_smoother(m, obs)
        for t in range(len(obs) + 1):
            assert l1_distance(draws.marginal_pmf(t, 2), exact[t]) <= 0.03

    def test_lgm_runs(self, lgm):
        obs = simulate(lgm, 5, 2).observations
        trace = run_filter(lgm, obs, FilterConfig(N=400, seed=1))
        draws = backward_smooth(trace, lgm)
        assert draws.trajectories.shape == (400, 6)
        assert np.all(np.isfinite(draws.trajectories))


class TestHistoryOnDisk:
    def test_round_trip(self, tmp_path, hmm2):
        trace = run_filter(hmm2, [1, 0, 1], FilterConfig(N=100, seed=6))
        path = tmp_path / "hist.bin"
        save_history(path, trace.history)
        lazy = DiskHistory(path)
        assert len(lazy) == 4
        for a, b in zip(load_history(path), trace.history):
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.weights, b.weights)
        d1 = backward_smooth(trace, hmm2).trajectories
        d2 = backward_smooth(trace, hmm2, history=lazy).trajectories
        assert np.array_equal(d1, d2)

    def test_float_values(self, tmp_path):
        sys = WeightedParticleSystem(np.array([0.5, -1.25]), np.array([0.25, 0.75]))
        path = tmp_path / "h.bin"
        save_history(path, [sys])
        back = load_history(path)[0]
        assert back.values.dtype == np.float64
        np.testing.assert_array_equal(back.values, sys.values)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTAHIST" + bytes(8))
        with pytest.raises(ValueError):
            load_history(path)


class TestCsvExport:
    def test_layout(self, tmp_path, hmm2):
        trace = run_filter(hmm2, [1], FilterConfig(N=3, seed=0))
        draws = backward_smooth(trace, hmm2)
        out = tmp_path / "s.csv"
        draws.to_csv(out)
        lines = out.read_text().splitlines()
        assert lines[0] == "path,t,value"
        assert len(lines) == 1 + 3 * 2
        assert lines[1].startswith("0,0,")
