"""Accept-reject sampling from ``b(x) * sum_j a(j, x)`` mixture targets.

Three samplers share one target description:

* :func:`accept_reject_prior` -- propose from the mixture itself and accept
  with probability ``b(x) / sup b``;
* :func:`accept_reject_aux` -- propose an index/value pair from
  ``tau_j rho(j, x)`` and accept ``a(j,x) b(x) / (M tau_j rho(j,x))``;
* :func:`balanced_accept_reject` -- one proposal per mixture component per
  round, rounds repeated until at least N values are accepted.

The stochastic-volatility helpers compute the optimized Gaussian proposal
center and its exact log envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import (
    AcceptanceStalled,
    DegenerateObservation,
    EnvelopeRequired,
    EnvelopeViolated,
    ZeroPosteriorMass,
)

#: acceptance probabilities above 1 + this abort the run
ENVELOPE_TOL = 1e-9
_LOG_ENVELOPE_TOL = math.log1p(ENVELOPE_TOL)


@dataclass(frozen=True)
class MixtureTarget:
    """Unnormalized target ``b(x) * sum_j w_j a(j, x)``.

    ``sample_component(j, rng)`` draws one value from ``a(j, .)`` for every
    entry of the index array ``j``.  ``weights`` defaults to uniform, which
    is the equally weighted particle prior.
    """

    n_components: int
    sample_component: Callable
    log_likelihood: Callable
    log_sup_likelihood: float | None = None
    log_component_density: Callable | None = None
    weights: np.ndarray | None = None

    def draw_indices(self, n, rng):
        if self.weights is None:
            return rng.integers(self.n_components, size=n)
        return _draw_categorical(self.weights, n, rng)


@dataclass(frozen=True)
class AuxiliaryProposal:
    """Index distribution ``tau``, per-index proposals and log envelopes ``log M_j``."""

    tau: np.ndarray
    sample: Callable
    log_density: Callable
    log_envelope: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if np.any(tau < 0) or abs(tau.sum() - 1.0) > 1e-12:
            raise ValueError("tau must be a probability vector")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "log_envelope", np.asarray(self.log_envelope, dtype=float))

    @classmethod
    def optimal(cls, log_envelope, sample, log_density):
        """Proposal with ``tau_j`` proportional to ``M_j``."""
        log_envelope = np.asarray(log_envelope, dtype=float)
        if not np.any(log_envelope > -np.inf):
            raise ZeroPosteriorMass("every envelope constant is zero")
        tau = np.exp(log_envelope - logsumexp(log_envelope))
        tau /= tau.sum()
        return cls(tau, sample, log_density, log_envelope)

    @property
    def log_bound(self) -> float:
        """``log M`` with ``M = max_j M_j / tau_j`` over indices that can be drawn."""
        live = self.tau > 0
        return float(np.max(self.log_envelope[live] - np.log(self.tau[live])))


class ARResult(NamedTuple):
    sample: np.ndarray
    attempts: int


class BalancedResult(NamedTuple):
    sample: np.ndarray
    rounds: int
    accepted: int


def _draw_categorical(p, n, rng):
    cum = np.cumsum(p)
    idx = np.searchsorted(cum, rng.random(n) * cum[-1], side="right")
    return np.minimum(idx, len(p) - 1)


def _batch_size(need, accepted, attempts):
    rate = accepted / attempts if attempts else 0.5
    rate = max(rate, 1e-4)
    return int(min(max(need / rate * 1.1 + 16, 64), 1 << 21))


def _collect(log_accept, rng):
    """Positions (in proposal order) of accepted proposals; ``U < pi`` in log space."""
    with np.errstate(divide="ignore"):
        log_u = np.log(rng.random(log_accept.shape[0]))
    return np.flatnonzero(log_u < log_accept)


def _run(propose, count, rng, max_attempts):
    out = []
    need = count
    attempts = 0
    accepted = 0
    while need > 0:
        if attempts >= max_attempts:
            raise AcceptanceStalled(f"accept-reject stalled: {accepted} of {count} accepted after {attempts} proposals")
        batch = _batch_size(need, accepted, attempts)
        x, log_accept = propose(batch)
        if np.any(log_accept > _LOG_ENVELOPE_TOL):
            worst = float(np.exp(np.max(log_accept)))
            raise EnvelopeViolated(f"envelope violated: acceptance probability {worst!r} > 1")
        hit = _collect(log_accept, rng)
        if hit.size >= need:
            hit = hit[:need]
            attempts += int(hit[-1]) + 1
        else:
            attempts += batch
        out.append(x[hit])
        accepted += hit.size
        need -= hit.size
    return ARResult(np.concatenate(out) if out else np.empty(0), attempts)


def accept_reject_prior(target: MixtureTarget, count: int, rng, max_attempts: int = 10**9) -> ARResult:
    """Draw ``count`` exact samples by proposing from the mixture prior.

    ``attempts`` counts proposals up to and including the last accepted one.

    Raises
    ------
    EnvelopeRequired
        If the target carries no finite positive ``sup b``.
    """
    log_sup = target.log_sup_likelihood
    if log_sup is None or not np.isfinite(log_sup):
        raise EnvelopeRequired("envelope required: accept-reject with the prior proposal needs sup b")
    if count < 1:
        raise ValueError("count must be >= 1")

    def propose(n):
        j = target.draw_indices(n, rng)
        x = target.sample_component(j, rng)
        return x, target.log_likelihood(x) - log_sup

    return _run(propose, count, rng, max_attempts)


def accept_reject_aux(
    prop: AuxiliaryProposal, target: MixtureTarget, count: int, rng, max_attempts: int = 10**9
) -> ARResult:
    """Auxiliary-index accept-reject; the index is drawn, used, then discarded.

    Raises
    ------
    EnvelopeViolated
        When any proposal has acceptance probability above ``1 + 1e-9``,
        i.e. some ``M_j`` is not an upper bound.
    """
    if target.log_component_density is None:
        raise ValueError("auxiliary sampler needs the component densities a(j, x)")
    if count < 1:
        raise ValueError("count must be >= 1")
    if target.weights is not None:
        raise ValueError("auxiliary sampler expects an equally weighted mixture")
    log_m = prop.log_bound
    with np.errstate(divide="ignore"):
        log_tau = np.log(prop.tau)

    def propose(n):
        j = _draw_categorical(prop.tau, n, rng)
        x = prop.sample(j, rng)
        log_a = target.log_component_density(j, x)
        with np.errstate(invalid="ignore"):
            la = log_a + target.log_likelihood(x) - log_m - log_tau[j] - prop.log_density(j, x)
        return x, np.where(np.isnan(la), -np.inf, la)

    return _run(propose, count, rng, max_attempts)


def optimal_tau(M) -> np.ndarray:
    """Index distribution ``tau_j = M_j / sum M`` maximizing the acceptance rate."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 1 or M.size == 0 or np.any(M <= 0) or not np.all(np.isfinite(M)):
        raise ValueError("envelope constants must be finite and positive")
    return M / M.sum()


def balanced_accept_reject(
    target: MixtureTarget, N: int, rng, max_rounds: int = 10**6, exact_size: bool = False
) -> BalancedResult:
    """Stratified accept-reject: every round proposes once from each component.

    Round ``i`` draws ``X_ij ~ a(j, .)`` for all ``j`` and keeps ``X_ij`` when
    ``U_ij < b(X_ij)`` with ``U_ij`` uniform on ``(0, sup b)``.  Rounds stop
    as soon as ``N`` values have been accepted; all accepted values are
    returned in round-major, component order unless ``exact_size`` asks
    for a uniformly chosen subset of exactly ``N``.
    """
    log_sup = target.log_sup_likelihood
    if log_sup is None or not np.isfinite(log_sup):
        raise EnvelopeRequired("envelope required: balanced accept-reject needs sup b")
    comps = np.arange(target.n_components)
    kept = []
    total = 0
    rounds = 0
    while total < N:
        if rounds >= max_rounds:
            raise AcceptanceStalled(f"acceptance stalled: {total} of {N} accepted after {rounds} rounds")
        rounds += 1
        x = target.sample_component(comps, rng)
        log_accept = target.log_likelihood(x) - log_sup
        if np.any(log_accept > _LOG_ENVELOPE_TOL):
            raise EnvelopeViolated("envelope violated: b exceeds its stated supremum")
        hit = _collect(log_accept, rng)
        kept.append(x[hit])
        total += hit.size
    sample = np.concatenate(kept)
    if exact_size and sample.size > N:
        sample = sample[np.sort(rng.choice(sample.size, N, replace=False))]
    return BalancedResult(sample, rounds, total)


# -- stochastic volatility proposals -------------------------------------


def sv_proposal_center(m, sigma2: float, y: float):
    """Gaussian proposal mean minimizing a quadratic bound on the SV envelope.

    ``theta = m + (sigma2/2) * max(-1, 2 (log y^2 - m) / (4 + sigma2))``.

    Raises
    ------
    DegenerateObservation
        For ``y == 0``; callers clamp to ``theta = m - sigma2/2`` instead.
    """
    if y == 0:
        raise DegenerateObservation("degenerate observation y = 0: log y^2 is -inf")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    m = np.asarray(m, dtype=float)
    delta = _sv_center_delta(m, sigma2, y)
    out = m + sigma2 * delta
    return out if out.ndim else float(out)


def _sv_center_delta(m, sigma2, y):
    if y == 0:
        return np.full(np.shape(m), -0.5)
    return 0.5 * np.maximum(-1.0, 2.0 * (math.log(y * y) - m) / (4.0 + sigma2))


def _sv_log_envelope_delta(m, delta, sigma2, y):
    m = np.asarray(m, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < -0.5 - 1e-12):
        raise ValueError("proposal below admissible range: delta < -1/2 leaves the ratio unbounded")
    delta = np.maximum(delta, -0.5)
    half = 0.5 + delta
    out = 0.5 * sigma2 * delta**2 + m * delta
    if y == 0:
        if np.any(half > 0):
            raise DegenerateObservation("y = 0 requires delta = -1/2 (theta = m - sigma2/2)")
        return out
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = half * (np.log1p(2.0 * delta) - (1.0 + math.log(y * y)))
    return out + np.where(half > 0, tail, 0.0)


def sv_envelope(m, theta, sigma2: float, y: float):
    """Exact ``log sup_x a(j,x) b(x) / rho(theta, x)`` for the SV model.

    ``a(j, .) = N(m, sigma2)``, ``rho(theta, .) = N(theta, sigma2)`` and
    ``b(x) = exp(-x/2 - y^2 exp(-x) / 2)``.  At ``delta = (theta-m)/sigma2 =
    -1/2`` the terms carrying the factor ``1/2 + delta`` are zero, which
    also covers ``y = 0``.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    m = np.asarray(m, dtype=float)
    delta = (np.asarray(theta, dtype=float) - m) / sigma2
    # theta built as m - sigma2/2 may land a rounding error below -1/2
    delta = np.where(np.abs(delta + 0.5) < 1e-12, -0.5, delta)
    out = _sv_log_envelope_delta(m, delta, sigma2, y)
    return out if np.ndim(out) else float(out)


def sv_reference_center(m, sigma2: float, y: float):
    """Alternative center ``m + (sigma2/2)(y^2 exp(-m) - 1)`` (benchmark only)."""
    m = np.asarray(m, dtype=float)
    return m + 0.5 * sigma2 * (y * y * np.exp(-m) - 1.0)


def sv_auxiliary_proposal(m, sigma2: float, y: float, center: str = "optimized", log_b_offset: float = 0.0):
    """Auxiliary proposal ``rho(j, .) = N(theta_j, sigma2)`` for components ``N(m_j, sigma2)``.

    ``log_b_offset`` is added to every envelope when the target's likelihood
    carries a normalizing constant, e.g. ``-log(2 pi)/2``.
    """
    m = np.asarray(m, dtype=float)
    if center == "optimized":
        delta = _sv_center_delta(m, sigma2, y)
    elif center == "reference":
        delta = 0.5 * (y * y * np.exp(-m) - 1.0)
    else:
        raise ValueError(f"unknown center {center!r}")
    theta = m + sigma2 * delta
    log_m = _sv_log_envelope_delta(m, delta, sigma2, y) + log_b_offset
    sd = math.sqrt(sigma2)

    def sample(j, rng):
        return theta[j] + sd * rng.standard_normal(len(j))

    def log_density(j, x):
        return -0.5 * (math.log(2 * math.pi * sigma2) + (x - theta[j]) ** 2 / sigma2)

    return AuxiliaryProposal.optimal(log_m, sample, log_density)
