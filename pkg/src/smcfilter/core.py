"""Probability operators on finite state spaces and shared particle types.

Densities are plain probability vectors.  The Markov and Bayes operators,
the L1 metric and the contraction coefficients below are the building
blocks for the exact recursions in :mod:`smcfilter.exact` and the
stability checks in the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import IncompatibleSpaces, InvalidDensity, ZeroPosteriorMass

#: absolute tolerance on the total mass of a probability vector
MASS_TOL = 1e-12


def _check_probs(p, what="density", axis=-1):
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        raise InvalidDensity(f"{what} is empty")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidDensity(f"{what} has negative or non-finite entries")
    total = p.sum(axis=axis)
    if np.any(np.abs(total - 1.0) > MASS_TOL):
        raise InvalidDensity(f"{what} sums to {total}, not 1 (tol {MASS_TOL:g})")
    return p


@dataclass(frozen=True)
class DiscreteDensity:
    """Probability vector over ``{0, ..., M-1}``.

    Inputs whose mass differs from one by more than ``MASS_TOL`` are
    rejected rather than renormalized.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = _check_probs(self.probs)
        if p.ndim != 1:
            raise InvalidDensity("density must be one-dimensional")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def __len__(self):
        return self.size

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def expect(self, psi) -> float:
        return float(np.dot(self.probs, np.asarray(psi, dtype=float)))


@dataclass(frozen=True)
class TransitionKernel:
    """Row-stochastic ``M x M`` matrix; ``matrix[x_prev, x]`` is a(x_prev, x)."""

    matrix: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.matrix, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise InvalidDensity(f"transition matrix must be square, got shape {k.shape}")
        k = _check_probs(k, "transition row", axis=1).copy()
        k.setflags(write=False)
        object.__setattr__(self, "matrix", k)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class WeightedParticleSystem:
    """Particles ``values`` with normalized ``weights`` at time ``generation``."""

    values: np.ndarray
    weights: np.ndarray
    generation: int = 0
    _uniform: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        w = np.asarray(self.weights, dtype=float)
        if v.ndim != 1 or w.ndim != 1 or v.shape[0] != w.shape[0] or v.shape[0] < 1:
            raise ValueError("values and weights must be 1-d arrays of equal length >= 1")
        if np.any(w < 0) or abs(w.sum() - 1.0) > MASS_TOL:
            raise InvalidDensity("particle weights must be nonnegative and sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def equal(cls, values, generation=0):
        values = np.asarray(values)
        n = values.shape[0]
        return cls(values, np.full(n, 1.0 / n), generation, _uniform=True)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def is_uniform(self) -> bool:
        return self._uniform or bool(np.all(self.weights == self.weights[0]))

    def mean(self, psi=None) -> float:
        vals = self.values if psi is None else psi(self.values)
        return float(np.dot(self.weights, vals))

    def var(self, psi=None) -> float:
        vals = np.asarray(self.values if psi is None else psi(self.values), dtype=float)
        m = np.dot(self.weights, vals)
        return float(np.dot(self.weights, (vals - m) ** 2))

    def pmf(self, n_states: int) -> np.ndarray:
        """Weighted histogram over ``n_states`` integer-valued states."""
        return np.bincount(self.values.astype(np.intp), weights=self.weights, minlength=n_states)


def _vec(f):
    return f.probs if isinstance(f, DiscreteDensity) else np.asarray(f, dtype=float)


def _mat(k):
    return k.matrix if isinstance(k, TransitionKernel) else np.asarray(k, dtype=float)


def l1_distance(f, g) -> float:
    """L1 distance ``sum |f_i - g_i|`` between two densities, in ``[0, 2]``."""
    f, g = _vec(f), _vec(g)
    if f.shape != g.shape:
        raise IncompatibleSpaces(f"state spaces differ: {f.shape[0]} vs {g.shape[0]}")
    return float(np.abs(f - g).sum())


class BayesResult(NamedTuple):
    posterior: DiscreteDensity
    normalizer: float


def bayes_update(f, b) -> BayesResult:
    """Posterior ``f*b / sum(f*b)`` and the normalizer ``sum(f*b)``.

    The normalizer is the one-step likelihood increment.

    Raises
    ------
    ZeroPosteriorMass
        If ``sum(f*b) == 0``.
    """
    f = _vec(f)
    b = np.asarray(b, dtype=float)
    if f.shape != b.shape:
        raise IncompatibleSpaces(f"likelihood has {b.shape[0]} entries, density {f.shape[0]}")
    if np.any(b < 0):
        raise ValueError("likelihood must be nonnegative")
    post = f * b
    z = post.sum()
    if not z > 0:
        raise ZeroPosteriorMass()
    return BayesResult(DiscreteDensity(post / z), float(z))


def markov_propagate(f, k) -> DiscreteDensity:
    """One-step prediction ``f @ K``."""
    f, k = _vec(f), _mat(k)
    if k.shape[0] != f.shape[0]:
        raise IncompatibleSpaces(f"kernel is {k.shape[0]}x{k.shape[1]}, density has {f.shape[0]} states")
    out = f @ k
    return DiscreteDensity(out / out.sum())


def dobrushin_coefficient(k) -> float:
    """Half the largest L1 distance between two rows of ``k``."""
    k = _mat(k)
    diffs = np.abs(k[:, None, :] - k[None, :, :]).sum(axis=-1)
    return float(0.5 * diffs.max())


def bayes_expansion_coefficient(f, b) -> float:
    """Lipschitz constant ``max(b) / sum(f*b)`` of the Bayes operator in its prior."""
    f = _vec(f)
    b = np.asarray(b, dtype=float)
    z = float(np.dot(f, b))
    if not z > 0:
        raise ZeroPosteriorMass()
    return float(b.max() / z)


class KernelRatioBounds(NamedTuple):
    c_a: float
    C_a: float
    gamma_a: float
    violated: bool
    h: np.ndarray


def kernel_ratio_bounds(k) -> KernelRatioBounds:
    """Two-sided bounds ``c_a h(x) <= a(x', x) <= C_a h(x)``.

    ``h`` is the vector of column maxima normalized to a density.  A zero
    entry in a column with positive maximum makes ``c_a = 0``; this is
    reported through ``violated`` instead of raised.
    """
    k = _mat(k)
    colmax = k.max(axis=0)
    if np.any(colmax <= 0):
        raise ValueError("every column of the kernel needs a positive entry")
    h = colmax / colmax.sum()
    ratio = k / h
    c_a = float(ratio.min())
    C_a = float(ratio.max())
    violated = c_a <= 0.0
    if violated:
        c_a = 0.0
    return KernelRatioBounds(c_a, C_a, c_a / C_a, violated, h)


def make_psi(name: str):
    """Test function by name: ``identity``, ``square`` or ``indicator:k``."""
    if name == "identity":
        return lambda x: np.asarray(x, dtype=float)
    if name == "square":
        return lambda x: np.asarray(x, dtype=float) ** 2
    if name.startswith("indicator:"):
        try:
            k = int(name.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad indicator test function {name!r}") from None
        return lambda x: (np.asarray(x) == k).astype(float)
    raise ValueError(f"unknown test function {name!r}; use identity, square or indicator:k")
