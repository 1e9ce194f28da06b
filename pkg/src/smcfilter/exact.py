"""Exact reference computations.

Discrete HMM forward/backward recursions, the scalar Kalman filter, and
the asymptotic variances of the accept-reject filter (i.i.d. sampling) and
of SIR with multinomial resampling, evaluated by exact matrix algebra on a
finite state space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import bayes_update, markov_propagate
from .errors import ZeroPosteriorMass


@dataclass(frozen=True)
class GaussianBelief:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")


@dataclass(frozen=True)
class ExactFilterResult:
    """Filter densities for t = 0..T and one-step likelihoods for t = 1..T.

    For discrete models ``filters`` is a ``(T+1, M)`` array; for the Kalman
    filter ``means`` and ``variances`` are filled instead.
    """

    increments: np.ndarray
    filters: np.ndarray | None = None
    predictions: np.ndarray | None = None
    means: np.ndarray | None = None
    variances: np.ndarray | None = None

    @property
    def log_increments(self) -> np.ndarray:
        return np.log(self.increments)

    @property
    def log_likelihood(self) -> float:
        return float(np.sum(np.log(self.increments)))

    @property
    def likelihood(self) -> float:
        return float(np.prod(self.increments))

    @property
    def beliefs(self) -> list[GaussianBelief]:
        return [GaussianBelief(float(m), float(v)) for m, v in zip(self.means, self.variances)]


def hmm_forward(model, obs, initial=None) -> ExactFilterResult:
    """Alternate prediction and Bayes update; increments are the normalizers."""
    f = np.asarray(model.initial if initial is None else initial, dtype=float)
    filters = [f]
    preds = [f]
    inc = []
    for t, y in enumerate(obs, start=1):
        pred = markov_propagate(f, model.transition)
        try:
            post, z = bayes_update(pred, model.likelihood_vector(y))
        except ZeroPosteriorMass:
            raise ZeroPosteriorMass("zero-probability observation", t=t) from None
        f = post.probs
        preds.append(pred.probs)
        filters.append(f)
        inc.append(z)
    return ExactFilterResult(np.asarray(inc), filters=np.stack(filters), predictions=np.stack(preds))


def hmm_smoother(model, obs, forward: ExactFilterResult | None = None) -> np.ndarray:
    """Marginal smoothing densities ``f_{t|T}`` for t = 0..T, shape (T+1, M).

    Uses the backward kernel ``p(x_t | x_{t+1}, y_{1:t})`` proportional to
    ``a(x_t, x_{t+1}) f_{t|t}(x_t)``.
    """
    fw = forward if forward is not None else hmm_forward(model, obs)
    F = fw.filters
    T = F.shape[0] - 1
    out = np.empty_like(F)
    out[T] = F[T]
    A = model.transition
    for t in range(T - 1, -1, -1):
        pred = F[t] @ A
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(pred > 0, out[t + 1] / pred, 0.0)
        s = F[t] * (A @ ratio)
        out[t] = s / s.sum()
    return out


def hmm_pair_smoother(model, obs, t: int, forward: ExactFilterResult | None = None) -> np.ndarray:
    """Joint smoothing pmf of ``(x_t, x_{t+1})``, shape (M, M)."""
    fw = forward if forward is not None else hmm_forward(model, obs)
    sm = hmm_smoother(model, obs, fw)
    F = fw.filters
    A = model.transition
    pred = F[t] @ A
    with np.errstate(divide="ignore", invalid="ignore"):
        back = F[t][:, None] * A / np.where(pred > 0, pred, np.inf)[None, :]
    joint = back * sm[t + 1][None, :]
    return joint / joint.sum()


def backward_likelihood(model, obs, s: int, t: int) -> np.ndarray:
    """``p(y_{s+1:t} | x_s)`` as a vector over ``x_s``."""
    beta = np.ones(model.n_states)
    for r in range(t, s, -1):
        beta = model.transition @ (model.likelihood_vector(obs[r - 1]) * beta)
    return beta


def kalman_filter(model, obs) -> ExactFilterResult:
    """Scalar Kalman predict/update; increments are Gaussian predictive densities."""
    m, p = float(model.m0), float(model.p0)
    means, variances, inc = [m], [p], []
    for y in obs:
        m_pred = model.phi * m
        p_pred = model.phi**2 * p + model.q
        s = model.c**2 * p_pred + model.r
        gain = p_pred * model.c / s
        resid = float(y) - model.c * m_pred
        inc.append(math.exp(-0.5 * (math.log(2 * math.pi * s) + resid * resid / s)))
        m = m_pred + gain * resid
        p = (1.0 - gain * model.c) * p_pred
        means.append(m)
        variances.append(p)
    return ExactFilterResult(np.asarray(inc), means=np.asarray(means), variances=np.asarray(variances))


def kalman_log_likelihood(model, obs) -> float:
    """Log-likelihood accumulated in log space (safe for long series)."""
    m, p, total = float(model.m0), float(model.p0), 0.0
    for y in obs:
        m_pred = model.phi * m
        p_pred = model.phi**2 * p + model.q
        s = model.c**2 * p_pred + model.r
        resid = float(y) - model.c * m_pred
        total += -0.5 * (math.log(2 * math.pi * s) + resid * resid / s)
        gain = p_pred * model.c / s
        m = m_pred + gain * resid
        p = (1.0 - gain * model.c) * p_pred
    return total


# -- asymptotic variances -------------------------------------------------


class _Quantities:
    """Filter densities, increments and L-operators of a finite model up to time t."""

    def __init__(self, model, obs, t):
        if t > len(obs):
            raise ValueError(f"t={t} exceeds the {len(obs)} available observations")
        fw = hmm_forward(model, obs[:t])
        self.model = model
        self.obs = obs
        self.f = fw.filters
        self.p = np.concatenate([[np.nan], fw.increments])
        if np.any(fw.increments <= 0):
            raise ZeroPosteriorMass("zero likelihood increment")
        self.b = [None] + [model.likelihood_vector(y) for y in obs[:t]]
        self.L = [None] + [model.transition * bs[None, :] for bs in self.b[1:]]

    def mean(self, s, g):
        return float(self.f[s] @ g)

    def var(self, s, g):
        c = g - self.mean(s, g)
        return float(self.f[s] @ (c * c))

    def future_likelihood(self, s, t):
        """``p(y_{s+1:t} | y_{1:s})`` by re-running the forward recursion from ``f_{s|s}``."""
        f = self.f[s]
        total = 1.0
        for r in range(s + 1, t + 1):
            pred = f @ self.model.transition
            post = pred * self.b[r]
            z = post.sum()
            total *= z
            f = post / z
        return total


def _psi_vector(psi, n_states):
    if callable(psi):
        return np.asarray(psi(np.arange(n_states)), dtype=float)
    v = np.asarray(psi, dtype=float)
    if v.shape != (n_states,):
        raise ValueError(f"psi must have {n_states} entries")
    return v


class CltVariance(NamedTuple):
    """Asymptotic variance with its decomposition.

    ``terms[0]`` is ``sigma_t^2(psi)``; ``terms[s]`` for s = 1..t is the
    contribution of the sampling at time s - 1 propagated to t.
    ``recursive`` is the same quantity from the one-step recursion.
    """

    value: float
    terms: np.ndarray
    recursive: float


def _v_ar(q, s, g):
    if s == 0:
        return q.var(0, g)
    phi = g - q.mean(s, g)
    return q.var(s, g) + _v_ar(q, s - 1, q.L[s] @ phi) / q.p[s] ** 2


def clt_variance_ar(model, obs, psi, t: int) -> CltVariance:
    """Asymptotic variance of the i.i.d. (accept-reject) particle filter at time t."""
    q = _Quantities(model, obs, t)
    psi = _psi_vector(psi, model.n_states)
    phi = psi - q.mean(t, psi)
    terms = np.zeros(t + 1)
    terms[0] = q.var(t, psi)
    g = phi
    denom = 1.0
    for s in range(t, 0, -1):
        g = q.L[s] @ g  # L_{s:t} phi
        denom *= q.p[s]
        terms[s] = q.var(s - 1, g) / denom**2
    rec = _v_ar(q, t, psi)
    total = float(terms.sum())
    if abs(total - rec) > 1e-10 * max(1.0, abs(rec)):
        raise ArithmeticError(f"iterated ({total!r}) and recursive ({rec!r}) variances disagree")
    return CltVariance(total, terms, rec)


def _v_sir(q, s, g):
    if s == 0:
        return q.var(0, g)
    phi = g - q.mean(s, g)
    h = q.L[s] @ phi
    return (
        q.var(s, g)
        + (_v_sir(q, s - 1, h) - q.var(s - 1, h)) / q.p[s] ** 2
        + q.mean(s, q.b[s] * phi * phi) / q.p[s]
    )


def clt_variance_sir(model, obs, psi, t: int) -> CltVariance:
    """Asymptotic variance of SIR with multinomial resampling (R = N) at time t."""
    q = _Quantities(model, obs, t)
    psi = _psi_vector(psi, model.n_states)
    phi = psi - q.mean(t, psi)
    terms = np.zeros(t + 1)
    terms[0] = q.var(t, psi)
    g = phi  # L_{s+1:t} phi, starting from L_{t+1:t} phi = phi
    for s in range(t, 0, -1):
        fut = q.future_likelihood(s, t)
        terms[s] = q.mean(s, q.b[s] * g * g) / (q.p[s] * fut**2)
        g = q.L[s] @ g
    rec = _v_sir(q, t, psi)
    total = float(terms.sum())
    if abs(total - rec) > 1e-10 * max(1.0, abs(rec)):
        raise ArithmeticError(f"summed ({total!r}) and recursive ({rec!r}) variances disagree")
    return CltVariance(total, terms, rec)


def clt_orthogonality(model, obs, psi, t: int) -> float:
    """``m_{t-1}(L_t(psi - m_t psi))``, zero in exact arithmetic."""
    q = _Quantities(model, obs, t)
    psi = _psi_vector(psi, model.n_states)
    return q.mean(t - 1, q.L[t] @ (psi - q.mean(t, psi)))


def clt_covariance_ar(model, obs, psi_r, r: int, psi_t, t: int) -> float:
    """Asymptotic covariance of the accept-reject filter estimates at times r <= t.

    Pulls ``psi_t`` back one step at a time, ``psi <- L_s(psi - m_s psi) / p_s``,
    until both functions live at time r, then polarizes.
    """
    if r > t:
        return clt_covariance_ar(model, obs, psi_t, t, psi_r, r)
    q = _Quantities(model, obs, t)
    a = _psi_vector(psi_r, model.n_states)
    g = _psi_vector(psi_t, model.n_states)
    for s in range(t, r, -1):
        g = q.L[s] @ (g - q.mean(s, g)) / q.p[s]
    return 0.5 * (_v_ar(q, r, a + g) - _v_ar(q, r, a) - _v_ar(q, r, g))


def forgetting_bound(gamma_a: float, steps: int) -> float:
    """``(1 - gamma_a)^steps / gamma_a``: L1 contraction of the filter over ``steps`` updates."""
    if not 0 < gamma_a <= 1:
        raise ValueError("gamma_a must lie in (0, 1]; the ratio condition fails otherwise")
    return (1.0 - gamma_a) ** steps / gamma_a


def variance_bound_bounded_psi(gamma_a: float, psi_range: float) -> float:
    """Uniform-in-time bound ``gamma_a^-3 (sup psi - inf psi)^2`` on the i.i.d. filter variance."""
    if not 0 < gamma_a <= 1:
        raise ValueError("gamma_a must lie in (0, 1]")
    return psi_range**2 / gamma_a**3
