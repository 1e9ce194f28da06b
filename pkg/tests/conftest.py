import itertools

import numpy as np
import pytest

from smcfilter.models import DiscreteHmm, fixture


def enumerate_paths(model: DiscreteHmm, obs):
    """All state paths x_{0:T} with joint weight a_0 * prod a_t b_t (independent of the forward code)."""
    M = model.n_states
    T = len(obs)
    paths = np.array(list(itertools.product(range(M), repeat=T + 1)), dtype=int)
    w = model.initial[paths[:, 0]].copy()
    for t in range(1, T + 1):
        w *= model.transition[paths[:, t - 1], paths[:, t]] * model.emission[paths[:, t], obs[t - 1]]
    return paths, w


def path_marginals(model, obs, upto=None):
    """Filter marginals f_{t|t} (upto=None) from enumeration, shape (T+1, M)."""
    out = []
    for t in range(len(obs) + 1):
        paths, w = enumerate_paths(model, obs[:t])
        out.append(np.bincount(paths[:, t], weights=w, minlength=model.n_states) / w.sum())
    return np.array(out)


def random_hmm(rng, M, K, positive=True):
    lo = 0.05 if positive else 0.0
    init = rng.dirichlet(np.ones(M))
    trans = rng.dirichlet(np.ones(M), size=M) * (1 - lo * M) + lo
    em = rng.dirichlet(np.ones(K), size=M)
    for a in (init, *trans, *em):
        a /= a.sum()
    return DiscreteHmm(init, trans, em)


@pytest.fixture
def hmm2():
    return fixture("hmm2")


@pytest.fixture
def hmm3():
    return fixture("hmm3")


@pytest.fixture
def lgm():
    return fixture("lgm")


@pytest.fixture(params=["cython", "python"])
def backend_kernels(request):
    from smcfilter import _fallback

    if request.param == "python":
        return _fallback
    try:
        from smcfilter import _kernels
    except ImportError:
        pytest.skip("compiled extension not built")
    return _kernels


# PASS/FAIL lines from tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
