"""Particle filter drivers.

``run_filter`` iterates one of three update steps over the observations:

* ``sir``               -- propose R values from the particle prior, resample N
                           with a configurable scheme (:func:`sir_step`);
* ``accept-reject``     -- N i.i.d. draws from the particle approximation of
  / ``aux-accept-reject``  the filter density by rejection (:func:`ar_step`);
* ``sis``               -- weights carried forward multiplicatively and
                           resampled every ``resample_interval`` steps.

Random streams are split per time step from ``FilterConfig.seed`` so a trace
is a pure function of (model, observations, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import rng as rngmod
from .core import WeightedParticleSystem
from .errors import EnvelopeRequired, FilterCollapse, SmcError, ZeroPosteriorMass
from .reject import MixtureTarget, accept_reject_aux, accept_reject_prior
from .resample import SCHEMES, counts_to_indices, resample, systematic_resample

SAMPLERS = ("sir", "accept-reject", "aux-accept-reject", "sis")


@dataclass(frozen=True)
class FilterConfig:
    """Particle filter settings.

    ``R`` defaults to ``N``.  ``resample_interval=None`` never resamples
    (SIS only); ``ess_threshold`` switches SIS to resampling whenever
    ESS < threshold * N.  ``two_stage`` draws SIR ancestors by a separate
    multinomial selection instead of reusing the resampled particles once
    each.  ``sir_tau="lookahead"`` selects SIR ancestors with probability
    proportional to b(mean of a(j, .)).  ``max_attempts`` caps the
    proposals of one accept-reject step.
    """

    N: int
    R: int | None = None
    scheme: str = "systematic"
    sampler: str = "sir"
    resample_interval: int | None = 1
    ess_threshold: float | None = None
    seed: int | np.random.SeedSequence = 0
    two_stage: bool = False
    sir_tau: str = "uniform"
    max_attempts: int = 10**8

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if self.R is None:
            object.__setattr__(self, "R", int(self.N))
        if self.R < self.N:
            raise ValueError(f"R={self.R} must be >= N={self.N}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if self.resample_interval is not None and self.resample_interval < 1:
            raise ValueError("resample_interval must be >= 1 (or None for never)")
        if self.ess_threshold is not None and not 0 < self.ess_threshold <= 1:
            raise ValueError("ess_threshold must lie in (0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.sir_tau not in ("uniform", "lookahead"):
            raise ValueError(f"unknown sir_tau {self.sir_tau!r}")


class StepResult(NamedTuple):
    system: WeightedParticleSystem
    log_increment: float
    ess: float
    accept_rate: float = math.nan
    attempts: int = 0
    resampled: bool = True


@dataclass
class FilterTrace:
    """Per-step filter output.

    ``history[0]`` is the initial particle system, ``history[t]`` the system
    after assimilating ``observations[t-1]``; ``records`` holds one
    :class:`StepResult` per observation.
    """

    config: FilterConfig
    observations: np.ndarray
    history: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def T(self) -> int:
        return len(self.observations)

    @property
    def complete(self) -> bool:
        return len(self.records) == len(self.observations) and len(self.history) == len(self.observations) + 1

    @property
    def log_increments(self) -> np.ndarray:
        return np.array([r.log_increment for r in self.records])

    @property
    def ess(self) -> np.ndarray:
        return np.array([r.ess for r in self.records])

    def system(self, t: int) -> WeightedParticleSystem:
        return self.history[t]

    def means(self, psi=None) -> np.ndarray:
        return np.array([s.mean(psi) for s in self.history[1:]])

    def pmfs(self, n_states: int) -> np.ndarray:
        """Particle pmf at every t = 0..T, shape (T+1, n_states)."""
        return np.stack([s.pmf(n_states) for s in self.history])


def effective_sample_size(weights) -> float:
    """``1 / sum w^2`` for normalized weights; between 1 and N."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def _log_mean_exp(logw):
    top = np.max(logw)
    if not np.isfinite(top):
        return top
    return float(top + math.log(np.mean(np.exp(logw - top))))


def _normalize(logw):
    top = np.max(logw)
    w = np.exp(logw - top)
    return w / w.sum()


def _balanced_ancestors(N, R, rng):
    # every particle used floor(R/N) times, the remainder spread without replacement
    base, extra = divmod(R, N)
    counts = np.full(N, base, dtype=np.int64)
    if extra:
        counts[rng.choice(N, extra, replace=False)] += 1
    return counts_to_indices(counts)


def sir_step(prev: WeightedParticleSystem, model, y, t: int, cfg: FilterConfig, rng) -> StepResult:
    """Sampling importance resampling update for observation ``y`` at time ``t``.

    Ancestors are the previous (resampled) particles, each used R/N times;
    with ``R == N`` every particle is propagated exactly once, so the end
    of one step and the index choice of the next form a single selection.
    Proposals ``z_k ~ a_t(ancestor, .)`` get inclusion weights
    ``b_t(z_k, y)`` times ``w_j / tau_j`` when ancestors are drawn from a
    non-uniform ``tau``.  The log increment estimates ``log p(y_t | y_{1:t-1})``.
    """
    N, R = cfg.N, cfg.R
    v = prev.values
    log_corr = 0.0
    if prev.is_uniform and cfg.sir_tau == "uniform":
        anc = rng.integers(prev.size, size=R) if cfg.two_stage else _balanced_ancestors(prev.size, R, rng)
    else:
        w = prev.weights
        tau = w
        if cfg.sir_tau == "lookahead":
            lb = model.log_obs(model.transition_mean(v, t), y, t)
            look = np.exp(lb - np.max(lb))
            tau = w * np.maximum(look, 1e-12)
            tau = tau / tau.sum()
        if cfg.two_stage:
            anc = rng.choice(prev.size, size=R, p=tau)
        else:
            anc = counts_to_indices(systematic_resample(tau, R, rng))
        with np.errstate(divide="ignore"):
            log_corr = np.log(w[anc]) - np.log(tau[anc])
    z = model.sample_transition(v[anc], t, rng)
    logw = model.log_obs(z, y, t) + log_corr
    if not np.any(np.isfinite(logw)):
        raise FilterCollapse(t)
    inc = _log_mean_exp(logw)
    pi = _normalize(logw)
    ess = effective_sample_size(pi)
    counts = resample(cfg.scheme, pi, N, rng)
    system = WeightedParticleSystem.equal(z[counts_to_indices(counts)], generation=t)
    return StepResult(system, inc, ess)


def _mixture_target(prev, model, y, t, with_density):
    v = prev.values

    def sample_component(j, rng):
        return model.sample_transition(v[j], t, rng)

    def log_b(x):
        return model.log_obs(x, y, t)

    log_a = (lambda j, x: model.log_transition(v[j], x, t)) if with_density else None
    return MixtureTarget(
        n_components=prev.size,
        sample_component=sample_component,
        log_likelihood=log_b,
        log_sup_likelihood=model.log_obs_sup(y, t),
        log_component_density=log_a,
        weights=None if prev.is_uniform else prev.weights,
    )


def _unbiased_log_rate(count, attempts):
    # (n-1)/(attempts-1) is unbiased for the success probability under negative binomial stopping
    if count < 2:
        return math.log(count / attempts)
    return math.log((count - 1) / (attempts - 1)) if attempts > 1 else 0.0


def ar_step(prev: WeightedParticleSystem, model, y, t: int, cfg: FilterConfig, rng) -> StepResult:
    """N i.i.d. draws from ``b_t(., y) * mean_j a_t(x_j, .)`` by rejection.

    The log increment is ``log(sup b) + log((N-1)/(attempts-1))`` for the
    prior proposal and ``log(M/N) + ...`` for the auxiliary one; both are
    unbiased for the particle approximation of ``p(y_t | y_{1:t-1})``.
    """
    N = cfg.N
    if cfg.sampler == "aux-accept-reject":
        if not prev.is_uniform:
            raise ValueError("auxiliary accept-reject needs an equally weighted particle system")
        try:
            prop = model.auxiliary_proposal(prev.values, y, t)
        except ZeroPosteriorMass:
            raise FilterCollapse(t, "every mixture component has zero likelihood mass") from None
        target = _mixture_target(prev, model, y, t, with_density=True)
        sample, attempts = accept_reject_aux(prop, target, N, rng, cfg.max_attempts)
        inc = prop.log_bound - math.log(prev.size) + _unbiased_log_rate(N, attempts)
    else:
        target = _mixture_target(prev, model, y, t, with_density=False)
        if target.log_sup_likelihood is None:
            raise EnvelopeRequired(f"envelope required: model gives no sup of b_t at t={t}")
        sample, attempts = accept_reject_prior(target, N, rng, cfg.max_attempts)
        inc = target.log_sup_likelihood + _unbiased_log_rate(N, attempts)
    system = WeightedParticleSystem.equal(sample, generation=t)
    return StepResult(system, inc, float(N), N / attempts, attempts)


def _sis_step(prev, log_prev, model, y, t, cfg, rng):
    # log_prev: normalized log-weights of prev, kept in log space across steps
    x = model.sample_transition(prev.values, t, rng)
    new = log_prev + model.log_obs(x, y, t)
    top = np.max(new)
    if not np.isfinite(top):
        raise FilterCollapse(t, "all log-weights underflowed")
    inc = float(top + math.log(np.sum(np.exp(new - top))))
    log_w = new - inc
    w = _normalize(new)
    ess = effective_sample_size(w)
    if cfg.ess_threshold is not None:
        do_resample = ess < cfg.ess_threshold * cfg.N
    else:
        k = cfg.resample_interval
        do_resample = k is not None and t % k == 0
    if do_resample:
        counts = resample(cfg.scheme, w, cfg.N, rng)
        system = WeightedParticleSystem.equal(x[counts_to_indices(counts)], generation=t)
        log_w = np.full(cfg.N, -math.log(cfg.N))
    else:
        system = WeightedParticleSystem(x, w, generation=t)
    return StepResult(system, inc, ess, resampled=bool(do_resample)), log_w


_STEPS = {"sir": sir_step, "accept-reject": ar_step, "aux-accept-reject": ar_step}


def _streams(cfg, T, stream):
    if stream is None:
        return rngmod.split(cfg.seed, T + 1)
    return rngmod.spawn(stream, T + 1)


def run_filter(model, obs, cfg: FilterConfig, stream=None) -> FilterTrace:
    """Initialize from ``a_0`` and apply the configured step for t = 1..T.

    Errors raised inside a step carry the offending time index in ``.t``.
    """
    obs = np.asarray(obs)
    streams = _streams(cfg, len(obs), stream)
    trace = FilterTrace(cfg, obs)
    system = WeightedParticleSystem.equal(model.sample_initial(cfg.N, streams[0]), generation=0)
    trace.history.append(system)
    sis = cfg.sampler == "sis"
    step = None if sis else _STEPS[cfg.sampler]
    log_w = np.full(cfg.N, -math.log(cfg.N))
    for t in range(1, len(obs) + 1):
        try:
            if sis:
                res, log_w = _sis_step(system, log_w, model, obs[t - 1], t, cfg, streams[t])
            else:
                res = step(system, model, obs[t - 1], t, cfg, streams[t])
        except SmcError as err:
            if getattr(err, "t", None) is None:
                err.t = t
                err.args = (f"t={t}: {err.args[0] if err.args else ''}",) + err.args[1:]
            raise
        system = res.system
        trace.history.append(system)
        trace.records.append(res)
    return trace


def sis_run(model, obs, cfg: FilterConfig, stream=None) -> FilterTrace:
    """Sequential importance sampling with periodic resampling."""
    return run_filter(model, obs, replace(cfg, sampler="sis"), stream)


def likelihood_estimate(trace: FilterTrace) -> float:
    """``log p_hat(y_{1:T})``: the sum of the per-step log increments."""
    if not trace.complete:
        raise ValueError(f"incomplete trace: {len(trace.records)} of {trace.T} steps")
    return float(np.sum(trace.log_increments)) if trace.records else 0.0
