"""Property checks shared by the CLI check modes and the test-suite.

Each check returns :class:`CheckResult` rows so callers can print or
serialize them without re-deriving thresholds.
"""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple

import numpy as np

from . import rng as rngmod
from .resample import SCHEMES, resample, systematic_pair_covariance, systematic_pair_moment


class CheckResult(NamedTuple):
    group: str
    name: str
    statistic: float
    threshold: float
    passed: bool


def _row(group, name, statistic, threshold, passed):
    return CheckResult(group, name, float(statistic), float(threshold), bool(passed))


def systematic_moment_bruteforce(r_l: float, r_m: float, r_u: float) -> float:
    """``E[M_j M_k]`` by integrating the grid-point counts over U.

    Cells j, middle and k sit back to back from offset 0 with scaled
    masses ``r_l``, ``r_m``, ``r_u``; the counts are piecewise constant in
    U, so the integral is exact over the breakpoints.
    """
    edges = np.cumsum([0.0, r_l, r_m, r_u])
    brk = {0.0, 1.0}
    for e in edges:
        for k in range(0, 4):
            b = k - e
            if 0.0 < b < 1.0:
                brk.add(b)
    pts = np.array(sorted(brk))
    mids = 0.5 * (pts[1:] + pts[:-1])
    widths = np.diff(pts)
    c = np.ceil(mids[:, None] + edges[None, :])
    mj = c[:, 1] - c[:, 0]
    mk = c[:, 3] - c[:, 2]
    return float(np.sum(widths * mj * mk))


def pair_moment_grid(n: int = 9):
    """Largest |closed form - brute force| over an n^3 grid, and the r_m-averaged covariance."""
    grid = (np.arange(n) + 0.5) / n
    err = 0.0
    for r_l, r_m, r_u in itertools.product(grid, repeat=3):
        err = max(err, abs(systematic_pair_moment(r_l, r_m, r_u) - systematic_moment_bruteforce(r_l, r_m, r_u)))
    fine = (np.arange(20000) + 0.5) / 20000
    avg = 0.0
    for r_l, r_u in itertools.product(grid, repeat=2):
        avg = max(avg, abs(np.mean([systematic_pair_covariance(r_l, r, r_u) for r in fine])))
    return err, avg


def unbiasedness(scheme, pi, N, rng, trials):
    """Largest z-score of the mean counts against ``N pi``."""
    counts = resample(scheme, pi, N, rng, size=trials)
    mean = counts.mean(axis=0)
    sd = counts.std(axis=0, ddof=1)
    target = N * np.asarray(pi)
    dev = np.abs(mean - target)
    z = np.where(sd > 0, dev / np.where(sd > 0, sd, 1.0) * math.sqrt(trials), np.where(dev > 1e-9, np.inf, 0.0))
    return float(z.max()), counts


def negative_covariance(counts):
    """Largest off-diagonal covariance in units of its standard error."""
    c = counts - counts.mean(axis=0)
    n = counts.shape[0]
    worst = -np.inf
    R = counts.shape[1]
    for i in range(R):
        for j in range(i + 1, R):
            prod = c[:, i] * c[:, j]
            se = prod.std(ddof=1) / math.sqrt(n)
            cov = prod.mean()
            if se > 0:
                worst = max(worst, cov / se)
            elif cov > 1e-12:
                worst = np.inf
    return float(worst)


def tree_tail(counts, pi, N, subsets, eps_grid):
    """Worst excess of ``P[|sum_A (N_j - N pi_j)| >= eps]`` over ``2 exp(-4 eps^2 / R)``.

    The excess is measured in binomial standard errors of the bound.
    """
    R = counts.shape[1]
    n = counts.shape[0]
    dev = counts - N * np.asarray(pi)[None, :]
    worst = -np.inf
    for A in subsets:
        s = np.abs(dev[:, A].sum(axis=1))
        for eps in eps_grid:
            bound = 2.0 * math.exp(-4.0 * eps * eps / R)
            if bound >= 1.0:
                continue
            freq = float(np.mean(s >= eps - 1e-9))
            se = math.sqrt(bound * (1 - bound) / n)
            worst = max(worst, (freq - bound) / se)
    return worst


def resample_suite(seed=0, trials=100_000, R=6, N=13):
    """Run the resampling property checks; one :class:`CheckResult` per property."""
    rng = rngmod.make_stream(rngmod.as_seed_sequence(seed))
    pi = rng.dirichlet(np.ones(R))
    pi /= pi.sum()
    out = []
    tree_counts = None
    for scheme in SCHEMES:
        z, counts = unbiasedness(scheme, pi, N, rng, trials)
        out.append(_row("unbiased", scheme, z, 4.0, z <= 4.0))
        tot = int(np.abs(counts.sum(axis=1) - N).max())
        out.append(_row("total", scheme, tot, 0.0, tot == 0))
        if scheme in ("systematic", "tree"):
            gap = float(np.abs(counts - N * pi).max())
            out.append(_row("balanced", scheme, gap, 1.0, gap < 1.0))
        if scheme == "tree":
            tree_counts = counts
    cz = negative_covariance(tree_counts)
    out.append(_row("tree-covariance", "max cov/SE", cz, 4.0, cz <= 4.0))
    subsets = [list(A) for k in range(1, R) for A in itertools.combinations(range(R), k)]
    tz = tree_tail(tree_counts, pi, N, subsets, np.linspace(0.25, 3.0, 12))
    out.append(_row("tree-tail", "max excess/SE", tz, 4.0, tz <= 4.0))
    err, avg = pair_moment_grid(9)
    out.append(_row("pair-moment", "closed form vs U integral", err, 1e-6, err <= 1e-6))
    out.append(_row("pair-moment", "r_m-averaged covariance", avg, 1e-6, avg <= 1e-6))
    return out


def replicate_estimates(model, obs, psi, t, cfg, replicates, seed):
    """``M_{N,t}(psi)`` from ``replicates`` independent filter runs on ``obs[:t]``."""
    from dataclasses import replace

    from .filter import run_filter

    out = np.empty(replicates)
    for k in range(replicates):
        trace = run_filter(model, obs[:t], replace(cfg, seed=rngmod.child(seed, k)))
        out[k] = trace.history[t].mean(psi)
    return out


def clt_check(model, obs, psi, t, N, replicates, seed, tolerance=0.15):
    """Compare replicate variances of the accept-reject and multinomial SIR filters with the exact values."""
    from .exact import clt_variance_ar, clt_variance_sir
    from .filter import FilterConfig

    psi_vec = psi(np.arange(model.n_states)).astype(float)
    ar = clt_variance_ar(model, obs, psi_vec, t)
    sir = clt_variance_sir(model, obs, psi_vec, t)
    rows = []
    seeds = [rngmod.child(seed, 0), rngmod.child(seed, 1)]
    for label, exact, cfg, ss in (
        ("accept-reject", ar.value, FilterConfig(N=N, sampler="accept-reject"), seeds[0]),
        ("sir-multinomial", sir.value, FilterConfig(N=N, sampler="sir", scheme="multinomial"), seeds[1]),
    ):
        est = replicate_estimates(model, obs, psi, t, cfg, replicates, ss)
        emp = float(N * est.var(ddof=1))
        rel = abs(emp / exact - 1.0) if exact > 0 else (0.0 if emp == 0 else math.inf)
        rows.append(dict(sampler=label, exact=exact, empirical=emp, ratio=emp / exact if exact > 0 else math.nan,
                         rel_error=float(rel), passed=bool(rel <= tolerance)))
    dominated = bool(np.all(sir.terms >= ar.terms))
    return rows, ar, sir, dominated
