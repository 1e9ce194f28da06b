"""Resampling schemes and the closed-form pair moment of systematic sampling.

Every scheme maps inclusion probabilities ``pi`` (length R) and a target
size ``N`` to integer multiplicities that sum to ``N`` exactly and are
unbiased, ``E[N_j] = N pi_j``.  Passing ``size`` draws that many
independent replicates at once and returns an ``(size, R)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .core import MASS_TOL
from .errors import InvalidDensity

SCHEMES = ("multinomial", "residual", "systematic", "tree")


@dataclass(frozen=True)
class InclusionProbabilities:
    """Validated probability vector for a resampling call."""

    pi: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.pi, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise InvalidDensity("inclusion probabilities must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidDensity("inclusion probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise InvalidDensity(f"inclusion probabilities sum to {p.sum()!r}")
        object.__setattr__(self, "pi", p)


@dataclass(frozen=True)
class ResampleCounts:
    counts: np.ndarray
    N: int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if np.any(c < 0) or int(c.sum()) != self.N:
            raise ValueError("counts must be nonnegative and sum to N")
        object.__setattr__(self, "counts", c)

    def indices(self) -> np.ndarray:
        return counts_to_indices(self.counts)


def _probs(pi) -> np.ndarray:
    if isinstance(pi, InclusionProbabilities):
        return pi.pi
    return InclusionProbabilities(pi).pi


def _check_n(N):
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    return int(N)


def _finish(counts, size):
    return counts[0] if size is None else counts


def multinomial_resample(pi, N: int, rng: np.random.Generator, size: int | None = None):
    """Multiplicities ``~ Multinomial(N, pi)``."""
    p = _probs(pi)
    N = _check_n(N)
    n = 1 if size is None else size
    return _finish(rng.multinomial(N, p / p.sum(), size=n).astype(np.int64), size)


def residual_resample(pi, N: int, rng: np.random.Generator, size: int | None = None):
    """Integer parts ``floor(N pi)`` plus a multinomial draw of the remainder.

    When every ``N pi_j`` is integral no randomness is consumed.
    """
    p = _probs(pi)
    N = _check_n(N)
    n = 1 if size is None else size
    scaled = N * p
    base = np.floor(scaled + 1e-9)
    frac = np.clip(scaled - base, 0.0, None)
    base = base.astype(np.int64)
    n_rest = N - int(base.sum())
    counts = np.tile(base, (n, 1))
    if n_rest > 0:
        counts += rng.multinomial(n_rest, frac / frac.sum(), size=n)
    elif n_rest < 0:  # pragma: no cover - only reachable with pathological rounding
        raise ArithmeticError("residual integer parts exceed N")
    return _finish(counts, size)


def systematic_resample(
    pi, N: int, rng: np.random.Generator, permute: bool = True, size: int | None = None
):
    """Whitley's single-uniform scheme.

    The unit interval ``[0, N)`` is cut at the scaled cumulative sums of
    ``pi`` (in a uniformly random order when ``permute``) and ``N_j`` counts
    the grid points ``U + k`` falling in cell ``j``, cells taken left-closed
    and right-open.  Each ``N_j`` is ``floor(N pi_j)`` or one more.
    """
    p = _probs(pi)
    N = _check_n(N)
    n = 1 if size is None else size
    R = p.shape[0]
    order = np.tile(np.arange(R, dtype=np.int64), (n, 1))
    if permute:
        order = rng.permuted(order, axis=1)
    u = rng.random(n)
    return _finish(kernels.systematic_counts(p, N, u, order), size)


def tree_resample(pi, N: int, rng: np.random.Generator, size: int | None = None):
    """Binary-tree scheme of balanced splits.

    Particles are pushed from the root of a balanced, left-heavy binary tree
    over the R leaves.  At each internal node the count sent left is
    ``floor(mu)`` or one more with the probability that keeps both children
    unbiased; node decisions use independent uniforms.
    """
    p = _probs(pi)
    N = _check_n(N)
    n = 1 if size is None else size
    R = p.shape[0]
    u = rng.random((n, max(R - 1, 0)))
    return _finish(kernels.tree_counts(p, N, u), size)


def resample(scheme: str, pi, N: int, rng: np.random.Generator, size: int | None = None, **kw):
    """Dispatch by scheme name: multinomial | residual | systematic | tree."""
    try:
        fn = _DISPATCH[scheme]
    except KeyError:
        raise ValueError(f"unknown resampling scheme {scheme!r}; expected one of {SCHEMES}") from None
    return fn(pi, N, rng, size=size, **kw)


_DISPATCH = {
    "multinomial": multinomial_resample,
    "residual": residual_resample,
    "systematic": systematic_resample,
    "tree": tree_resample,
}


def counts_to_indices(counts) -> np.ndarray:
    """Expand multiplicities into a sorted index array, e.g. (2, 0, 1) -> (0, 0, 2)."""
    counts = np.asarray(counts, dtype=np.int64)
    return np.repeat(np.arange(counts.shape[0]), counts)


def systematic_pair_moment(r_l: float, r_m: float, r_u: float) -> float:
    """``E[M_j M_k]`` for the unpermuted systematic scheme.

    ``M_j = N_j - floor(N pi_j)`` and likewise for ``k > j``; ``r_l`` and
    ``r_u`` are the fractional parts of ``N pi_j`` and ``N pi_k``, ``r_m``
    that of the scaled mass strictly between them.  Subtract ``r_l * r_u``
    for the covariance.
    """
    for name, r in (("r_l", r_l), ("r_m", r_m), ("r_u", r_u)):
        if not 0.0 <= r < 1.0:
            raise ValueError(f"{name}={r!r} outside [0, 1)")
    if r_l + r_m + r_u > 2:
        return r_l + r_u - 1.0
    lo_ok = r_l + r_m <= 1
    hi_ok = r_m + r_u <= 1
    if lo_ok and hi_ok:
        return max(r_l + r_m + r_u - 1.0, 0.0)
    if hi_ok:
        return r_u
    if lo_ok:
        return r_l
    return 1.0 - r_m


def systematic_pair_covariance(r_l: float, r_m: float, r_u: float) -> float:
    return systematic_pair_moment(r_l, r_m, r_u) - r_l * r_u


def multinomial_covariance(pi, N: int) -> np.ndarray:
    """Exact covariance matrix of multinomial multiplicities."""
    p = _probs(pi)
    return N * (np.diag(p) - np.outer(p, p))


def residual_covariance(pi, N: int) -> np.ndarray:
    """Exact covariance of residual multiplicities: that of Multinomial(N', pi')."""
    p = _probs(pi)
    scaled = N * p
    base = np.floor(scaled + 1e-9)
    frac = np.clip(scaled - base, 0.0, None)
    n_rest = N - int(base.sum())
    if n_rest == 0:
        return np.zeros((p.size, p.size))
    q = frac / frac.sum()
    return n_rest * (np.diag(q) - np.outer(q, q))
