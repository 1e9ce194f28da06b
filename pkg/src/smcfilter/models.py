"""State space models: discrete HMM, scalar linear-Gaussian, stochastic volatility.

A model exposes the generative pieces used by the filters, all vectorized
over particles and working on log densities:

* ``sample_initial`` / ``log_initial``   -- the initial density a_0
* ``sample_transition`` / ``log_transition`` -- a_t(x_prev, x)
* ``log_obs`` / ``log_obs_sup``          -- b_t(x, y) and its supremum over x
* ``sample_obs``                         -- draws y_t given x_t

States are scalars; a particle cloud is a 1-d array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DiscreteDensity, TransitionKernel, _check_probs
from .rng import make_stream

LOG_2PI = math.log(2.0 * math.pi)


class StateSpaceModel:
    """Base class; subclasses fill in the densities for their state space."""

    #: number of states for finite models, ``None`` for continuous ones
    n_states: int | None = None

    def sample_initial(self, n, rng):
        raise NotImplementedError

    def log_initial(self, x):
        raise NotImplementedError

    def sample_transition(self, x_prev, t, rng):
        raise NotImplementedError

    def log_transition(self, x_prev, x, t):
        raise NotImplementedError

    def transition_mean(self, x_prev, t):
        raise NotImplementedError

    def log_transition_sup_prev(self, x_next, t):
        """``log sup_x a_t(x, x_next)``, the envelope for backward steps at t = 0."""
        raise NotImplementedError

    def log_obs(self, x, y, t):
        raise NotImplementedError

    def log_obs_sup(self, y, t):
        """``log sup_x b_t(x, y)`` or ``None`` when b is unbounded."""
        return None

    def log_backward_envelope(self, x_next, y, t):
        """Upper bound on ``log a_{t+1}(x, x_next) + log b_t(x, y)`` over x.

        The default multiplies the two separate suprema, which is valid but
        loose; models with a tighter closed form override it.
        """
        sup_b = self.log_obs_sup(y, t)
        if sup_b is None:
            raise NotImplementedError(f"{type(self).__name__} needs a backward envelope")
        return self.log_transition_sup_prev(x_next, t + 1) + sup_b

    def sample_obs(self, x, t, rng):
        raise NotImplementedError

    def auxiliary_proposal(self, prev_values, y, t):
        """Per-particle proposal for the auxiliary accept-reject sampler."""
        raise NotImplementedError(f"{type(self).__name__} has no auxiliary proposal")


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    seed: object = None

    def __post_init__(self):
        if len(self.states) != len(self.observations) + 1:
            raise ValueError("a trajectory has T+1 states and T observations")

    @property
    def T(self) -> int:
        return len(self.observations)


def simulate(model: StateSpaceModel, T: int, seed) -> Trajectory:
    """Draw ``x_{0:T}`` and ``y_{1:T}`` from the model; deterministic in ``seed``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    rng = make_stream(seed)
    x = model.sample_initial(1, rng)
    states = [x[0]]
    obs = []
    for t in range(1, T + 1):
        x = model.sample_transition(x, t, rng)
        states.append(x[0])
        obs.append(model.sample_obs(x, t, rng)[0])
    return Trajectory(np.asarray(states), np.asarray(obs), seed)


def _categorical_rows(cum, rows, rng):
    # inverse-cdf draw from each selected row of a cumulative matrix
    u = rng.random(rows.shape[0])
    c = cum[rows]
    return np.minimum((u[:, None] >= c).sum(axis=1), cum.shape[1] - 1)


@dataclass(frozen=True, eq=False)
class DiscreteHmm(StateSpaceModel):
    """Finite-state HMM with a finite observation alphabet.

    ``emission[x, y]`` is the probability of symbol ``y`` in state ``x``.
    """

    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        init = DiscreteDensity(self.initial).probs
        trans = TransitionKernel(self.transition).matrix
        em = _check_probs(self.emission, "emission row", axis=1)
        if em.ndim != 2 or em.shape[0] != init.shape[0] or trans.shape[0] != init.shape[0]:
            raise ValueError("initial, transition and emission dimensions disagree")
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "emission", em)
        with np.errstate(divide="ignore"):
            self._cache["log_init"] = np.log(init)
            self._cache["log_trans"] = np.log(trans)
            self._cache["log_em"] = np.log(em)
        self._cache["cum_init"] = np.cumsum(init)[None, :]
        self._cache["cum_trans"] = np.cumsum(trans, axis=1)
        self._cache["cum_em"] = np.cumsum(em, axis=1)

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emission.shape[1]

    def likelihood_vector(self, y) -> np.ndarray:
        return self.emission[:, int(y)]

    def sample_initial(self, n, rng):
        return _categorical_rows(self._cache["cum_init"], np.zeros(n, dtype=np.intp), rng)

    def log_initial(self, x):
        return self._cache["log_init"][np.asarray(x, dtype=np.intp)]

    def sample_transition(self, x_prev, t, rng):
        return _categorical_rows(self._cache["cum_trans"], np.asarray(x_prev, dtype=np.intp), rng)

    def log_transition(self, x_prev, x, t):
        return self._cache["log_trans"][np.asarray(x_prev, dtype=np.intp), np.asarray(x, dtype=np.intp)]

    def transition_mean(self, x_prev, t):
        return self.transition[np.asarray(x_prev, dtype=np.intp)] @ np.arange(self.n_states)

    def log_transition_sup_prev(self, x_next, t):
        with np.errstate(divide="ignore"):
            return np.log(self.transition.max(axis=0))[np.asarray(x_next, dtype=np.intp)]

    def log_obs(self, x, y, t):
        return self._cache["log_em"][np.asarray(x, dtype=np.intp), int(y)]

    def log_obs_sup(self, y, t):
        return float(self._cache["log_em"][:, int(y)].max())

    def log_backward_envelope(self, x_next, y, t):
        joint = self._cache["log_trans"][:, np.asarray(x_next, dtype=np.intp)] + self._cache["log_em"][:, int(y)][:, None]
        return joint.max(axis=0)

    def sample_obs(self, x, t, rng):
        return _categorical_rows(self._cache["cum_em"], np.asarray(x, dtype=np.intp), rng)

    def auxiliary_proposal(self, prev_values, y, t):
        # fully adapted: rho(j, .) proportional to a(j, .) b(.), so M_j = beta_j
        from .reject import AuxiliaryProposal

        prev = np.asarray(prev_values, dtype=np.intp)
        joint = self.transition[prev] * self.emission[:, int(y)][None, :]
        beta = joint.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = joint / beta[:, None]
        rho[beta == 0] = 1.0 / self.n_states
        cum = np.cumsum(rho, axis=1)
        with np.errstate(divide="ignore"):
            log_rho = np.log(rho)

        def sample(j, rng):
            return _categorical_rows(cum, np.asarray(j, dtype=np.intp), rng)

        def log_density(j, x):
            return log_rho[np.asarray(j, dtype=np.intp), np.asarray(x, dtype=np.intp)]

        with np.errstate(divide="ignore"):
            log_m = np.log(beta)
        return AuxiliaryProposal.optimal(log_m, sample, log_density)


def _norm_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


@dataclass(frozen=True, eq=False)
class LinearGaussianModel(StateSpaceModel):
    """Scalar model ``X_t = phi X_{t-1} + sqrt(q) Z_t``, ``Y_t = c X_t + sqrt(r) W_t``."""

    phi: float = 0.9
    q: float = 1.0
    c: float = 1.0
    r: float = 1.0
    m0: float = 0.0
    p0: float = 1.0

    def __post_init__(self):
        if not (self.q > 0 and self.r > 0 and self.p0 > 0):
            raise ValueError("q, r and p0 must be positive")

    def sample_initial(self, n, rng):
        return self.m0 + math.sqrt(self.p0) * rng.standard_normal(n)

    def log_initial(self, x):
        return _norm_logpdf(np.asarray(x, dtype=float), self.m0, self.p0)

    def sample_transition(self, x_prev, t, rng):
        x_prev = np.asarray(x_prev, dtype=float)
        return self.phi * x_prev + math.sqrt(self.q) * rng.standard_normal(x_prev.shape[0])

    def log_transition(self, x_prev, x, t):
        return _norm_logpdf(np.asarray(x, dtype=float), self.phi * np.asarray(x_prev, dtype=float), self.q)

    def transition_mean(self, x_prev, t):
        return self.phi * np.asarray(x_prev, dtype=float)

    def log_transition_sup_prev(self, x_next, t):
        x_next = np.asarray(x_next, dtype=float)
        if self.phi == 0:
            return _norm_logpdf(x_next, 0.0, self.q)
        return np.full(x_next.shape, -0.5 * (LOG_2PI + math.log(self.q)))

    def log_obs(self, x, y, t):
        return _norm_logpdf(float(y), self.c * np.asarray(x, dtype=float), self.r)

    def log_obs_sup(self, y, t):
        if self.c == 0:
            return float(_norm_logpdf(float(y), 0.0, self.r))
        return -0.5 * (LOG_2PI + math.log(self.r))

    def log_backward_envelope(self, x_next, y, t):
        # both factors are Gaussian in x, so the maximum of their product is closed form
        s = np.asarray(x_next, dtype=float)
        prec = self.phi**2 / self.q + self.c**2 / self.r
        const = -(LOG_2PI + 0.5 * math.log(self.q) + 0.5 * math.log(self.r))
        if prec == 0:
            return const - 0.5 * s**2 / self.q - 0.5 * float(y) ** 2 / self.r
        xhat = (self.phi * s / self.q + self.c * float(y) / self.r) / prec
        return const - 0.5 * (s - self.phi * xhat) ** 2 / self.q - 0.5 * (float(y) - self.c * xhat) ** 2 / self.r

    def sample_obs(self, x, t, rng):
        x = np.asarray(x, dtype=float)
        return self.c * x + math.sqrt(self.r) * rng.standard_normal(x.shape[0])

    def auxiliary_proposal(self, prev_values, y, t):
        # a(j, x) b(x) = beta_j N(x; mu_j, s2): exact proposal, M_j = beta_j
        from .reject import AuxiliaryProposal

        m = self.phi * np.asarray(prev_values, dtype=float)
        s2 = 1.0 / (1.0 / self.q + self.c**2 / self.r)
        mu = s2 * (m / self.q + self.c * float(y) / self.r)
        log_beta = _norm_logpdf(float(y), self.c * m, self.c**2 * self.q + self.r)

        def sample(j, rng):
            return mu[j] + math.sqrt(s2) * rng.standard_normal(len(j))

        def log_density(j, x):
            return _norm_logpdf(x, mu[j], s2)

        return AuxiliaryProposal.optimal(log_beta, sample, log_density)


def sv_observation_loglik(x, y):
    """Log of the unnormalized SV likelihood, ``-x/2 - (y^2/2) exp(-x)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = -0.5 * x - 0.5 * y * y * np.exp(-x)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class StochasticVolatilityModel(StateSpaceModel):
    """Log-variance AR(1): ``X_t = phi X_{t-1} + sigma Z_t``, ``Y_t ~ N(0, exp(X_t))``.

    The initial state is the stationary law when ``|phi| < 1`` unless
    ``m0``/``p0`` are given.
    """

    phi: float = 0.95
    sigma2: float = 0.1
    m0: float = 0.0
    p0: float | None = None
    #: proposal center for the auxiliary sampler: "optimized" or "reference"
    center: str = "optimized"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.p0 is None:
            if abs(self.phi) >= 1:
                raise ValueError("p0 is required for a nonstationary chain")
            object.__setattr__(self, "p0", self.sigma2 / (1.0 - self.phi**2))
        if self.center not in ("optimized", "reference"):
            raise ValueError(f"unknown proposal center {self.center!r}")

    def sample_initial(self, n, rng):
        return self.m0 + math.sqrt(self.p0) * rng.standard_normal(n)

    def log_initial(self, x):
        return _norm_logpdf(np.asarray(x, dtype=float), self.m0, self.p0)

    def sample_transition(self, x_prev, t, rng):
        x_prev = np.asarray(x_prev, dtype=float)
        return self.phi * x_prev + math.sqrt(self.sigma2) * rng.standard_normal(x_prev.shape[0])

    def log_transition(self, x_prev, x, t):
        return _norm_logpdf(np.asarray(x, dtype=float), self.phi * np.asarray(x_prev, dtype=float), self.sigma2)

    def transition_mean(self, x_prev, t):
        return self.phi * np.asarray(x_prev, dtype=float)

    def log_transition_sup_prev(self, x_next, t):
        x_next = np.asarray(x_next, dtype=float)
        if self.phi == 0:
            return _norm_logpdf(x_next, 0.0, self.sigma2)
        return np.full(x_next.shape, -0.5 * (LOG_2PI + math.log(self.sigma2)))

    def log_obs(self, x, y, t):
        return sv_observation_loglik(x, float(y)) - 0.5 * LOG_2PI

    def log_obs_sup(self, y, t):
        if y == 0:
            return None
        return -0.5 * (1.0 + math.log(float(y) ** 2)) - 0.5 * LOG_2PI

    def log_backward_envelope(self, x_next, y, t):
        # log a(x, s) + log b(x) is strictly concave in x; Newton from the prior mode
        s = np.asarray(x_next, dtype=float)
        y2 = float(y) ** 2
        phi, s2 = self.phi, self.sigma2
        if phi == 0:
            return super().log_backward_envelope(x_next, y, t)
        x = s / phi
        for _ in range(100):
            e = np.exp(-x)
            grad = phi * (s - phi * x) / s2 - 0.5 + 0.5 * y2 * e
            hess = -phi * phi / s2 - 0.5 * y2 * e
            step = grad / hess
            x = x - step
            if np.all(np.abs(step) < 1e-12 * (1.0 + np.abs(x))):
                break
        val = self.log_transition(x, s, t + 1) + self.log_obs(x, y, t)
        return val + 1e-9

    def sample_obs(self, x, t, rng):
        x = np.asarray(x, dtype=float)
        return np.exp(0.5 * x) * rng.standard_normal(x.shape[0])

    def auxiliary_proposal(self, prev_values, y, t):
        from .reject import sv_auxiliary_proposal

        m = self.phi * np.asarray(prev_values, dtype=float)
        return sv_auxiliary_proposal(m, self.sigma2, float(y), center=self.center, log_b_offset=-0.5 * LOG_2PI)


FIXTURES = ("hmm2", "hmm3", "lgm", "sv")


def fixture(name: str, **params) -> StateSpaceModel:
    """Bundled models used by the test-suite and the CLI.

    ``hmm2``  2 states, 2 symbols, all transitions positive
    ``hmm3``  3 states, 4 symbols
    ``lgm``   phi=0.9, q=1, c=1, r=1, m0=0, p0=1
    ``sv``    phi=0.95, sigma2=0.1
    """
    if name == "hmm2":
        return DiscreteHmm(
            initial=params.get("initial", [0.5, 0.5]),
            transition=params.get("transition", [[0.8, 0.2], [0.3, 0.7]]),
            emission=params.get("emission", [[0.9, 0.1], [0.25, 0.75]]),
        )
    if name == "hmm3":
        return DiscreteHmm(
            initial=params.get("initial", [0.5, 0.3, 0.2]),
            transition=params.get("transition", [[0.6, 0.3, 0.1], [0.2, 0.6, 0.2], [0.1, 0.4, 0.5]]),
            emission=params.get(
                "emission",
                [[0.7, 0.2, 0.05, 0.05], [0.1, 0.6, 0.2, 0.1], [0.05, 0.1, 0.3, 0.55]],
            ),
        )
    if name == "lgm":
        return LinearGaussianModel(**{k: float(v) for k, v in params.items()})
    if name == "sv":
        return StochasticVolatilityModel(**params)
    raise ValueError(f"unknown model fixture {name!r}; expected one of {FIXTURES}")
