"""Backward simulation smoother.

Given the stored filter particles, each path is drawn backward from
``x_T``: at step t the new state has density proportional to
``a_{t+1}(x, x_{t+1}) b_t(x, y_t) sum_i w_i a_t(x_{i,t-1}, x)``, sampled by
accept-reject with proposals from the particle prior mixture.  At t = 0
the mixture is replaced by ``a_0``.  All paths share one index
distribution ``tau`` per step, so the work is O(T N) proposals.

Histories can be spilled to disk in a fixed little-endian layout::

    magic  b"SMCHIST\\0"        8 bytes
    version                     uint32
    steps                       uint32
    per step: n (uint64), kind (uint8: 0=float64, 1=int64), values (n), weights (n float64)
"""

from __future__ import annotations

import csv
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .core import WeightedParticleSystem
from .errors import AcceptanceStalled, EnvelopeViolated, MissingHistory
from .reject import ENVELOPE_TOL

_LOG_TOL = math.log1p(ENVELOPE_TOL)
_MAGIC = b"SMCHIST\0"
_VERSION = 1
_KINDS = {0: np.dtype("<f8"), 1: np.dtype("<i8")}


@dataclass(frozen=True)
class SmoothingDraws:
    """``trajectories[j, t]`` is path j at time t; ``attempts[t]`` counts proposals at step t."""

    trajectories: np.ndarray
    attempts: np.ndarray
    source: object = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return self.trajectories.shape[0]

    @property
    def T(self) -> int:
        return self.trajectories.shape[1] - 1

    @property
    def total_attempts(self) -> int:
        return int(self.attempts.sum())

    def marginal_pmf(self, t: int, n_states: int) -> np.ndarray:
        return np.bincount(self.trajectories[:, t].astype(np.intp), minlength=n_states) / self.n_paths

    def pair_pmf(self, t: int, n_states: int) -> np.ndarray:
        """Empirical joint pmf of ``(x_t, x_{t+1})``."""
        a = self.trajectories[:, t].astype(np.intp)
        b = self.trajectories[:, t + 1].astype(np.intp)
        counts = np.bincount(a * n_states + b, minlength=n_states * n_states)
        return counts.reshape(n_states, n_states) / self.n_paths

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "t", "value"])
            for j, row in enumerate(self.trajectories):
                for t, v in enumerate(row):
                    w.writerow([j, t, _fmt(v)])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _propose_accept(pending, k, propose, rng):
    """Run ``k`` proposals for every pending path; return (accepted mask, values, attempts used)."""
    n = pending.shape[0]
    x, logp = propose(np.repeat(pending, k), rng)
    logp = logp.reshape(n, k)
    if np.any(logp > _LOG_TOL):
        raise EnvelopeViolated(f"backward acceptance probability {math.exp(logp.max()):.12g} exceeds 1")
    hit = np.log(rng.random((n, k))) < logp
    got = hit.any(axis=1)
    first = np.argmax(hit, axis=1)
    used = np.where(got, first + 1, k)
    chosen = x.reshape(n, k)[np.arange(n), first]
    return got, chosen, used


def _sample_backward(n_paths, propose, rng, max_rounds):
    """Accept-reject loop over all paths at one time step."""
    out = None
    pending = np.arange(n_paths)
    attempts = 0
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > max_rounds:
            raise AcceptanceStalled(f"{pending.size} backward paths unresolved after {max_rounds} rounds")
        k = int(min(64, max(1, n_paths // pending.size)))
        got, chosen, used = _propose_accept(pending, k, propose, rng)
        attempts += int(used.sum())
        if out is None:
            out = np.empty(n_paths, dtype=chosen.dtype)
        out[pending[got]] = chosen[got]
        pending = pending[~got]
    return out, attempts


def backward_smooth(trace, model, obs=None, stream=None, history=None, tau=None, max_rounds=10**6) -> SmoothingDraws:
    """Draw one smoothing trajectory per filter particle.

    Parameters
    ----------
    trace : FilterTrace
        Filter run whose particle history is smoothed.
    model : StateSpaceModel
        Must provide ``log_backward_envelope`` and ``log_transition_sup_prev``.
    obs : array_like, optional
        Observations; defaults to ``trace.observations``.
    stream : numpy.random.Generator, optional
        Defaults to a stream seeded from ``trace.config.seed``.
    history : sequence of WeightedParticleSystem, optional
        Overrides ``trace.history`` (for example a :class:`DiskHistory`).
    tau : callable, optional
        ``tau(t, system)`` gives the shared index distribution at step t;
        defaults to the particle weights (uniform for resampled systems).
    """
    obs = np.asarray(trace.observations if obs is None else obs)
    hist = trace.history if history is None else history
    T = len(obs)
    if len(hist) != T + 1:
        raise MissingHistory(f"need {T + 1} stored particle systems, got {len(hist)}")
    if stream is None:
        stream = rngmod.make_stream(rngmod.child(trace.config.seed, 1))
    streams = rngmod.spawn(stream, T + 1)

    final = hist[T]
    N = final.size
    paths = np.empty((N, T + 1), dtype=final.values.dtype)
    attempts = np.zeros(T + 1, dtype=np.int64)
    if final.is_uniform:
        paths[:, T] = final.values
    else:
        paths[:, T] = final.values[streams[T].choice(N, size=N, p=final.weights)]
    if T == 0:
        return SmoothingDraws(paths, attempts, trace)

    for t in range(T - 1, 0, -1):
        prev = hist[t - 1]
        nxt = paths[:, t + 1]
        y = obs[t - 1]
        log_env = np.asarray(model.log_backward_envelope(nxt, y, t), dtype=float)
        if tau is None:
            probs, log_ratio = prev.weights, None
        else:
            probs = np.asarray(tau(t, prev), dtype=float)
            with np.errstate(divide="ignore"):
                r = np.log(prev.weights) - np.log(probs)
            log_ratio = r - r[probs > 0].max()
        cum = np.cumsum(probs)
        cum[-1] = 1.0

        def propose(j, rng, t=t, prev=prev, nxt=nxt, y=y, log_env=log_env, cum=cum, log_ratio=log_ratio):
            i = np.searchsorted(cum, rng.random(j.size), side="right")
            x = model.sample_transition(prev.values[i], t, rng)
            logp = model.log_transition(x, nxt[j], t + 1) + model.log_obs(x, y, t) - log_env[j]
            if log_ratio is not None:
                logp = logp + log_ratio[i]
            return x, logp

        paths[:, t], attempts[t] = _sample_backward(N, propose, streams[t], max_rounds)

    nxt = paths[:, 1]
    log_env0 = np.asarray(model.log_transition_sup_prev(nxt, 1), dtype=float)

    def propose0(j, rng):
        x = model.sample_initial(j.size, rng)
        return x, model.log_transition(x, nxt[j], 1) - log_env0[j]

    paths[:, 0], attempts[0] = _sample_backward(N, propose0, streams[0], max_rounds)
    return SmoothingDraws(paths, attempts, trace)


# -- spill to disk ------------------------------------------------------------


def save_history(path, history) -> None:
    """Write particle systems in the versioned little-endian layout."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(history)))
        for sys_ in history:
            v = np.asarray(sys_.values)
            kind = 1 if np.issubdtype(v.dtype, np.integer) else 0
            fh.write(struct.pack("<QB", v.shape[0], kind))
            fh.write(v.astype(_KINDS[kind]).tobytes())
            fh.write(np.asarray(sys_.weights).astype("<f8").tobytes())


class DiskHistory(Sequence):
    """Lazy read-only view of a history written by :func:`save_history`."""

    def __init__(self, path):
        self.path = path
        self._index = []
        with open(path, "rb") as fh:
            head = fh.read(16)
            if len(head) < 16 or head[:8] != _MAGIC:
                raise ValueError(f"{path}: not a particle history file")
            version, steps = struct.unpack("<II", head[8:])
            if version != _VERSION:
                raise ValueError(f"{path}: unsupported history version {version}")
            pos = 16
            for _ in range(steps):
                fh.seek(pos)
                rec = fh.read(9)
                if len(rec) < 9:
                    raise ValueError(f"{path}: truncated history")
                n, kind = struct.unpack("<QB", rec)
                if kind not in _KINDS:
                    raise ValueError(f"{path}: unknown value kind {kind}")
                self._index.append((pos + 9, n, kind))
                pos += 9 + 16 * n

    def __len__(self):
        return len(self._index)

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [self[i] for i in range(*t.indices(len(self)))]
        off, n, kind = self._index[t]
        values = np.fromfile(self.path, dtype=_KINDS[kind], count=n, offset=off)
        weights = np.fromfile(self.path, dtype="<f8", count=n, offset=off + 8 * n)
        uniform = bool(np.all(weights == weights[0]))
        return WeightedParticleSystem(values.astype(values.dtype.newbyteorder("=")), weights.astype(float), t, _uniform=uniform)


def load_history(path) -> list:
    """Read a whole history into memory."""
    return list(DiskHistory(path))
