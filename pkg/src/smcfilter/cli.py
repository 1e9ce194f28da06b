"""Command-line experiment runner.

``smcfilter run <config> [--mode M] [--seed S] [--out DIR]``

Exit codes: 0 success, 1 a check failed, 2 invalid configuration or
input, 3 the filter collapsed or another numerical failure, 4 I/O error.
The output directory is taken from ``--out``, then the ``SMCFILTER_OUT``
environment variable, then ``experiment.out``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from ._backend import BACKEND
from .checks import clt_check, resample_suite
from .config import ExperimentConfig, load_config
from .errors import ConfigError, SmcError
from .exact import hmm_forward, hmm_smoother, kalman_filter
from .filter import likelihood_estimate, run_filter
from .models import DiscreteHmm, LinearGaussianModel, simulate
from .smoother import DiskHistory, backward_smooth, save_history

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_COMPUTE, EXIT_IO = 0, 1, 2, 3, 4
FILTER_HEADER = ("t", "estimate_mean", "estimate_var", "ess", "log_lik_increment", "accept_rate", "resampled")
OUT_ENV = "SMCFILTER_OUT"

# child keys of experiment.seed
_OBS_KEY, _FILTER_KEY, _SMOOTH_KEY, _CHECK_KEY = 0, 1, 2, 3


def fmt(v) -> str:
    """17 significant digits for floats, plain integers, 1/0 for flags."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    x = float(v)
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def observations_for(cfg: ExperimentConfig, model):
    """Configured observations, else a simulated series from seed child 0."""
    if cfg.observations is not None:
        obs = np.asarray(cfg.observations, dtype=float)
    elif cfg.T == 0:
        obs = np.zeros(0)
    else:
        obs = simulate(model, cfg.T, rngmod.child(cfg.seed, _OBS_KEY)).observations
    if isinstance(model, DiscreteHmm):
        if np.any(obs != np.round(obs)) or np.any(obs < 0) or np.any(obs >= model.n_symbols):
            raise ConfigError([(cfg.source.get("experiment.observations"),
                                f"observations must be symbols 0..{model.n_symbols - 1}")])
        obs = obs.astype(np.int64)
    return obs


def filter_config(cfg: ExperimentConfig, replicate: int):
    return replace(cfg.filter, seed=rngmod.child(cfg.seed, _FILTER_KEY, replicate))


def filter_rows(trace, psi):
    rows = []
    for t, rec in enumerate(trace.records, start=1):
        s = rec.system
        rows.append((t, s.mean(psi), s.var(psi), rec.ess, rec.log_increment, rec.accept_rate, rec.resampled))
    return rows


def oracle_rows(model, obs, psi):
    """Exact filter mean/variance of psi per step, or ``None`` without a closed form."""
    if isinstance(model, DiscreteHmm):
        fw = hmm_forward(model, obs)
        vals = psi(np.arange(model.n_states))
        rows = []
        for t in range(1, len(obs) + 1):
            f = fw.filters[t]
            m = float(f @ vals)
            rows.append((t, m, float(f @ (vals - m) ** 2), fw.log_increments[t - 1]))
        return rows
    if isinstance(model, LinearGaussianModel):
        kf = kalman_filter(model, obs)
        probe = psi(np.array([0.0, 1.0, 2.0]))
        rows = []
        for t in range(1, len(obs) + 1):
            m, p = kf.means[t], kf.variances[t]
            if np.array_equal(probe, [0.0, 1.0, 2.0]):
                mean, var = m, p
            elif np.array_equal(probe, [0.0, 1.0, 4.0]):
                mean, var = m * m + p, 2 * p * p + 4 * m * m * p
            else:
                return None
            rows.append((t, mean, var, kf.log_increments[t - 1]))
        return rows
    return None


def _replicate(job):
    mode, cfg, k, obs = job
    model = cfg.build_model()
    psi = cfg.psi_function()
    trace = run_filter(model, obs, filter_config(cfg, k))
    if mode == "filter":
        return filter_rows(trace, psi)
    if mode == "likelihood":
        return likelihood_estimate(trace)
    raise ValueError(mode)


def _map(cfg, jobs):
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_replicate, jobs))
    return [_replicate(j) for j in jobs]


def _suffix(cfg, k):
    return "" if cfg.replicates == 1 else f"_{k:03d}"


def _run_filter_mode(cfg, model, obs, out, files, log):
    psi = cfg.psi_function()
    results = _map(cfg, [("filter", cfg, k, obs) for k in range(cfg.replicates)])
    for k, rows in enumerate(results):
        name = f"filter{_suffix(cfg, k)}.csv"
        write_csv(out / name, FILTER_HEADER, rows)
        files.append(name)
    orc = oracle_rows(model, obs, psi)
    if orc is not None:
        write_csv(out / "oracle.csv", ("t", "exact_mean", "exact_var", "exact_log_lik_increment"), orc)
        files.append("oracle.csv")
    log(f"filter: {cfg.replicates} replicate(s), T={len(obs)}")
    return EXIT_OK, {}


def _run_smooth_mode(cfg, model, obs, out, files, log):
    exact = hmm_smoother(model, obs) if isinstance(model, DiscreteHmm) else None
    for k in range(cfg.replicates):
        trace = run_filter(model, obs, filter_config(cfg, k))
        history = None
        if cfg.store_history:
            path = out / f"{cfg.store_history}{_suffix(cfg, k)}"
            save_history(path, trace.history)
            history = DiskHistory(path)
        draws = backward_smooth(trace, model, stream=rngmod.make_stream(rngmod.child(cfg.seed, _SMOOTH_KEY, k)),
                                history=history)
        name = f"smooth{_suffix(cfg, k)}.csv"
        draws.to_csv(out / name)
        files.append(name)
        if exact is not None:
            rows = []
            for t in range(len(obs) + 1):
                emp = draws.marginal_pmf(t, model.n_states)
                rows.extend((t, s, emp[s], exact[t, s]) for s in range(model.n_states))
            mname = f"smooth_marginals{_suffix(cfg, k)}.csv"
            write_csv(out / mname, ("t", "state", "empirical", "exact"), rows)
            files.append(mname)
    log(f"smooth: {cfg.replicates} replicate(s), {cfg.filter.N} paths each")
    return EXIT_OK, {}


def _run_likelihood_mode(cfg, model, obs, out, files, log):
    lls = _map(cfg, [("likelihood", cfg, k, obs) for k in range(cfg.replicates)])
    write_csv(out / "likelihood.csv", ("replicate", "log_likelihood"), list(enumerate(lls)))
    files.append("likelihood.csv")
    exact = None
    if isinstance(model, DiscreteHmm):
        exact = hmm_forward(model, obs).log_likelihood
    elif isinstance(model, LinearGaussianModel):
        exact = kalman_filter(model, obs).log_likelihood
    summary = {"replicates": cfg.replicates}
    if exact is not None:
        ratio = np.exp(np.asarray(lls) - exact)
        se = float(ratio.std(ddof=1) / math.sqrt(len(ratio))) if len(ratio) > 1 else math.nan
        z = (float(ratio.mean()) - 1.0) / se if se > 0 else math.nan
        summary.update(exact_log_likelihood=exact, mean_ratio=float(ratio.mean()), se_ratio=se, z=z)
        write_csv(out / "likelihood_summary.csv", ("replicates", "exact_log_likelihood", "mean_ratio", "se_ratio", "z"),
                  [(cfg.replicates, exact, ratio.mean(), se, z)])
        files.append("likelihood_summary.csv")
        log(f"likelihood: mean p_hat/p = {ratio.mean():.6f} (z = {z:.3f})")
    return EXIT_OK, summary


def _run_clt_mode(cfg, model, obs, out, files, log):
    if not isinstance(model, DiscreteHmm):
        raise ConfigError([(cfg.source.get("model.name"), "clt-check needs a finite-state model")])
    if cfg.replicates < 2:
        raise ConfigError([(cfg.source.get("experiment.replicates"), "clt-check needs experiment.replicates >= 2")])
    t = cfg.T if cfg.t is None else cfg.t
    rows, ar, sir, dominated = clt_check(model, obs, cfg.psi_function(), t, cfg.filter.N, cfg.replicates,
                                         rngmod.child(cfg.seed, _CHECK_KEY), cfg.tolerance)
    write_csv(out / "clt.csv", ("sampler", "exact_variance", "empirical_variance", "ratio", "rel_error", "passed"),
              [(r["sampler"], r["exact"], r["empirical"], r["ratio"], r["rel_error"], r["passed"]) for r in rows])
    write_csv(out / "clt_terms.csv", ("s", "ar_term", "sir_term", "sir_ge_ar"),
              [(s, a, b, b >= a) for s, (a, b) in enumerate(zip(ar.terms, sir.terms))])
    files += ["clt.csv", "clt_terms.csv"]
    for r in rows:
        log(f"clt {r['sampler']}: exact {r['exact']:.6g} empirical {r['empirical']:.6g} ratio {r['ratio']:.4f} "
            f"{'PASS' if r['passed'] else 'FAIL'}")
    log(f"clt summand dominance: {'PASS' if dominated else 'FAIL'}")
    ok = dominated and all(r["passed"] for r in rows)
    return (EXIT_OK if ok else EXIT_CHECK), {"passed": ok}


def _run_resample_mode(cfg, model, obs, out, files, log):
    results = resample_suite(seed=rngmod.child(cfg.seed, _CHECK_KEY), trials=cfg.trials)
    write_csv(out / "resample_check.csv", ("group", "name", "statistic", "threshold", "passed"), results)
    files.append("resample_check.csv")
    for r in results:
        log(f"{r.group:16s} {r.name:28s} {r.statistic:.4g} (limit {r.threshold:g}) {'PASS' if r.passed else 'FAIL'}")
    ok = all(r.passed for r in results)
    return (EXIT_OK if ok else EXIT_CHECK), {"passed": ok}


_MODES = {
    "filter": _run_filter_mode,
    "smooth": _run_smooth_mode,
    "likelihood": _run_likelihood_mode,
    "clt-check": _run_clt_mode,
    "resample-check": _run_resample_mode,
}


def resolve_out(cli_out=None, cfg: ExperimentConfig | None = None) -> Path:
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env)
    return Path(cfg.out if cfg is not None else "smcfilter-out")


def run_experiment(cfg: ExperimentConfig, out_dir=None, log=print) -> int:
    """Execute ``cfg.mode``, write CSVs and ``manifest.json`` into ``out_dir``; return the exit code."""
    out = Path(out_dir) if out_dir is not None else resolve_out(None, cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        log(f"error: cannot create output directory {out}: {err}")
        return EXIT_IO
    files = []
    try:
        model = cfg.build_model()
        obs = observations_for(cfg, model)
        write_csv(out / "observations.csv", ("t", "y"), [(t, y) for t, y in enumerate(obs, start=1)])
        files.append("observations.csv")
        code, summary = _MODES[cfg.mode](cfg, model, obs, out, files, log)
    except ConfigError as err:
        log(f"error: {err}")
        return EXIT_CONFIG
    except SmcError as err:
        log(f"error: {type(err).__name__}: {err}")
        return EXIT_COMPUTE
    except OSError as err:
        log(f"error: {err}")
        return EXIT_IO
    manifest = {
        "library": "smcfilter",
        "version": __version__,
        "backend": BACKEND,
        "seed": cfg.seed,
        "seed_derivation": "SeedSequence(seed) children: observations (0,), filter (1, replicate), "
                           "smoother (2, replicate), checks (3,)",
        "config": cfg.echo(),
        "files": files,
        "summary": summary,
        "exit_code": code,
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return code


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(type(v).__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcfilter", description="Seeded particle filter experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="config file (section.key = value lines)")
    run.add_argument("--mode", help="override experiment.mode")
    run.add_argument("--seed", type=int, help="override experiment.seed")
    run.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and experiment.out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(mode=args.mode, seed=args.seed)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO

    def log(msg):
        print(msg, file=sys.stderr if msg.startswith("error") else sys.stdout)

    return run_experiment(cfg, resolve_out(args.out, cfg), log=log)


if __name__ == "__main__":
    sys.exit(main())
