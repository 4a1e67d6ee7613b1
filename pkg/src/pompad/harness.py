"""Command-line interface and experiment orchestration.

Subcommands: ``filter``, ``score``, ``biasvar``, ``if2``, ``ifad``,
``nuts``, ``simulate``, ``selftest``.  Each reads an optional INI config
file plus flag overrides, writes CSV/JSON artifacts into the output
directory, prints a one-line summary, and exits 0 on success, 1 on a
usage error, 2 on a numerical failure.  Everything an invocation emits is
reproducible from (config, seed); the only exception is the campaign
summary's ``wall_time`` field.

The config grammar and every CSV/JSON schema are documented in
``docs/formats.md``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import prng
from .bayes import diagnostics, kde_fit, make_mop_logpost, nuts_sample
from .errors import PompadError, UsageError
from .ifad import IfadConfig, IfadResult, mop_objective, refine, run_ifad
from .mif2 import (CoolingSchedule, load_swarm, run_if2, save_swarm,
                   swarm_from_box, swarm_from_theta)
from .mop import MopConfig, mop_loglik_and_score, run_bootstrap, run_mop, run_replicates, score_sweep
from .oracle import kalman_score_fd
from .pomp import (CholeraModel, Dataset, LinearGaussianModel, PompModel,
                   load_dataset, save_dataset)
from .selftest import run_selftest

__all__ = ["main", "cli", "search_campaign", "RunConfig"]

_MODEL_OPTION_KEYS = {"name", "free", "population", "dt", "t0"}


@dataclass
class RunConfig:
    """Merged file + flag settings for one invocation."""

    seed: int = 0
    out: Path = Path("results")
    workers: int = 1
    model: str = "lgssm"
    free: tuple[str, ...] | None = None
    theta: dict | None = None
    model_options: dict | None = None
    dataset: str | None = None
    simulate: bool = False
    n_obs: int = 50
    j: int = 1000
    alpha: float = 0.97
    estimator: str = "before_resampling"
    truncation_lag: int | None = None
    # if2 / ifad
    if2_iterations: int = 40
    sigma0: float = 0.02
    cooling: float = 0.95
    warm_start: int = 40
    max_iterations: int = 100
    learning_rate: float = 0.2
    method: str = "gradient"
    starts: int = 1
    box: dict | None = None
    eval_j: int | None = None
    # sweeps
    alphas: tuple[float, ...] = (0.0, 0.9, 0.97, 1.0)
    replicates: int = 100
    # nuts
    swarm_path: str | None = None
    chains: int = 4
    nuts_iterations: int = 500
    warmup: int = 300

    def mop_config(self) -> MopConfig:
        return MopConfig(J=self.j, alpha=self.alpha, seed=self.seed,
                         estimator=self.estimator, truncation_lag=self.truncation_lag)

    def schedule(self) -> CoolingSchedule:
        return CoolingSchedule(self.sigma0, self.cooling)

    def ifad_config(self) -> IfadConfig:
        return IfadConfig(warm_start_iterations=self.warm_start, alpha=self.alpha,
                          learning_rate=self.learning_rate,
                          max_iterations=self.max_iterations, method=self.method)


def _parse_config_file(path: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise UsageError(f"config file not found: {path}")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    file_cfg = _parse_config_file(args.config) if getattr(args, "config", None) else {}

    run = file_cfg.get("run", {})
    cfg.seed = int(run.get("seed", cfg.seed))
    cfg.out = Path(run.get("out", cfg.out))
    cfg.workers = int(run.get("workers", cfg.workers))

    model = dict(file_cfg.get("model", {}))
    cfg.model = model.get("name", cfg.model)
    if "free" in model:
        cfg.free = tuple(x.strip() for x in model["free"].split(",") if x.strip())
    cfg.model_options = {k: float(model[k]) for k in ("population", "dt", "t0")
                         if k in model}
    cfg.theta = {k: float(v) for k, v in model.items() if k not in _MODEL_OPTION_KEYS}

    datasec = file_cfg.get("data", {})
    cfg.dataset = datasec.get("dataset", cfg.dataset)
    cfg.simulate = datasec.get("simulate", "false").lower() in ("1", "true", "yes") \
        if "simulate" in datasec else cfg.simulate
    cfg.n_obs = int(datasec.get("n", cfg.n_obs))

    mopsec = file_cfg.get("mop", {})
    cfg.j = int(mopsec.get("j", cfg.j))
    cfg.alpha = float(mopsec.get("alpha", cfg.alpha))
    cfg.estimator = mopsec.get("estimator", cfg.estimator)
    if "truncation_lag" in mopsec:
        cfg.truncation_lag = int(mopsec["truncation_lag"])
    if "alphas" in mopsec:
        cfg.alphas = _floats(mopsec["alphas"])
    cfg.replicates = int(mopsec.get("replicates", cfg.replicates))

    if2sec = file_cfg.get("if2", {})
    cfg.if2_iterations = int(if2sec.get("iterations", cfg.if2_iterations))
    cfg.sigma0 = float(if2sec.get("sigma0", cfg.sigma0))
    cfg.cooling = float(if2sec.get("cooling", cfg.cooling))

    ifadsec = file_cfg.get("ifad", {})
    cfg.warm_start = int(ifadsec.get("warm_start", cfg.warm_start))
    cfg.max_iterations = int(ifadsec.get("max_iterations", cfg.max_iterations))
    cfg.learning_rate = float(ifadsec.get("learning_rate", cfg.learning_rate))
    cfg.method = ifadsec.get("method", cfg.method)
    cfg.starts = int(ifadsec.get("starts", cfg.starts))
    if "eval_j" in ifadsec:
        cfg.eval_j = int(ifadsec["eval_j"])

    if "box" in file_cfg:
        cfg.box = {k: _floats(v) for k, v in file_cfg["box"].items()}

    nutssec = file_cfg.get("nuts", {})
    cfg.swarm_path = nutssec.get("swarm", cfg.swarm_path)
    cfg.chains = int(nutssec.get("chains", cfg.chains))
    cfg.nuts_iterations = int(nutssec.get("iterations", cfg.nuts_iterations))
    cfg.warmup = int(nutssec.get("warmup", cfg.warmup))

    # flags override file values
    for attr, flag in [
        ("seed", "seed"), ("workers", "workers"), ("model", "model"),
        ("dataset", "dataset"), ("n_obs", "n"), ("j", "j"), ("alpha", "alpha"),
        ("estimator", "estimator"), ("if2_iterations", "iterations"),
        ("sigma0", "sigma0"), ("cooling", "cooling"), ("warm_start", "warm_start"),
        ("max_iterations", "max_iterations"), ("learning_rate", "learning_rate"),
        ("method", "method"), ("starts", "starts"), ("replicates", "replicates"),
        ("swarm_path", "swarm"), ("chains", "chains"),
        ("nuts_iterations", "nuts_iterations"), ("warmup", "warmup"),
        ("eval_j", "eval_j"),
    ]:
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, attr, val)
    if getattr(args, "out", None) is not None:
        cfg.out = Path(args.out)
    if getattr(args, "simulate", False):
        cfg.simulate = True
    if getattr(args, "alphas", None) is not None:
        cfg.alphas = _floats(args.alphas)

    if cfg.dataset and cfg.simulate:
        raise UsageError("dataset and simulate are mutually exclusive")
    return cfg


def build_model(cfg: RunConfig) -> PompModel:
    opts = cfg.model_options or {}
    if cfg.model == "lgssm":
        free = cfg.free or ("a", "sigma", "tau")
        fixed_overrides = {k: v for k, v in (cfg.theta or {}).items() if k not in free}
        return LinearGaussianModel(free=free, fixed=fixed_overrides)
    if cfg.model == "cholera":
        kwargs = {}
        if "population" in opts:
            kwargs["population"] = opts["population"]
        if "dt" in opts:
            kwargs["dt"] = opts["dt"]
        if "t0" in opts:
            kwargs["t0"] = opts["t0"]
        return CholeraModel(**kwargs)
    raise UsageError(f"unknown model {cfg.model!r} (expected lgssm or cholera)")


def default_theta(model: PompModel, cfg: RunConfig) -> dict:
    if isinstance(model, CholeraModel):
        theta = CholeraModel.default_theta()
    else:
        theta = {"a": 0.8, "sigma": 1.0, "tau": 1.0, "mu0": 0.0, "s0": 1.0}
    theta.update(cfg.theta or {})
    return {k: v for k, v in theta.items() if k in model.params.names}


def get_dataset(cfg: RunConfig, model: PompModel) -> Dataset:
    if cfg.dataset:
        return load_dataset(cfg.dataset)
    theta = default_theta(model, cfg)
    return model.simulate(theta, cfg.n_obs, seed=prng.derive_seed(cfg.seed, 91))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig) -> int:
    model = build_model(cfg)
    data = model.simulate(default_theta(model, cfg), cfg.n_obs,
                          seed=prng.derive_seed(cfg.seed, 91))
    out = cfg.out / "dataset.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out)
    print(f"simulate: wrote {len(data)} observations to {out}")
    return 0


def cmd_filter(cfg: RunConfig) -> int:
    model = build_model(cfg)
    data = get_dataset(cfg, model)
    theta = default_theta(model, cfg)
    out = run_bootstrap(model, data, theta, cfg.mop_config())
    rows = [[n + 1, float(t), float(y), float(cl)] for n, (t, y, cl) in
            enumerate(zip(data.times, data.observations, out.cond_logliks))]
    _write_csv(cfg.out / "filter.csv", ["n", "time", "obs", "cond_loglik"], rows)
    print(f"filter: loglik={out.loglik:.4f} J={cfg.j} seed={cfg.seed} "
          f"-> {cfg.out / 'filter.csv'}")
    return 0


def cmd_score(cfg: RunConfig) -> int:
    model = build_model(cfg)
    data = get_dataset(cfg, model)
    theta = default_theta(model, cfg)
    out = mop_loglik_and_score(model, data, theta, cfg.mop_config())
    rows = [[i, nm, float(s)] for i, (nm, s) in
            enumerate(zip(model.params.names, out.score))]
    _write_csv(cfg.out / "score.csv", ["coord", "name", "value"], rows)
    print(f"score: loglik={out.loglik:.4f} |score|={np.linalg.norm(out.score):.4f} "
          f"alpha={cfg.alpha} -> {cfg.out / 'score.csv'}")
    return 0


def cmd_biasvar(cfg: RunConfig) -> int:
    model = build_model(cfg)
    if not isinstance(model, LinearGaussianModel):
        raise UsageError("biasvar needs the lgssm model (exact reference score)")
    data = get_dataset(cfg, model)
    theta = default_theta(model, cfg)
    reference = kalman_score_fd(data, model.params, theta)
    rows_out = score_sweep(model, data, theta, cfg.alphas, cfg.j, cfg.replicates,
                           cfg.seed, reference, cfg.estimator, cfg.workers)
    rows = [[r.alpha, r.coord, r.name, r.bias, r.variance, r.mse] for r in rows_out]
    _write_csv(cfg.out / "biasvar.csv",
               ["alpha", "coord", "name", "bias", "variance", "mse"], rows)
    print(f"biasvar: {len(cfg.alphas)} alphas x {cfg.replicates} replicates "
          f"-> {cfg.out / 'biasvar.csv'}")
    return 0


def cmd_if2(cfg: RunConfig) -> int:
    model = build_model(cfg)
    data = get_dataset(cfg, model)
    theta = default_theta(model, cfg)
    swarm0 = swarm_from_theta(model.params, theta, cfg.j)
    res = run_if2(model, data, swarm0, cfg.schedule(), cfg.if2_iterations, cfg.seed)
    _write_csv(cfg.out / "if2_trace.csv", ["iteration", "loglik"],
               [[m, float(ll)] for m, ll in enumerate(res.loglik_trace)])
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_swarm(model.params, res.swarm, cfg.out / "swarm.csv")
    final = res.loglik_trace[-1] if len(res.loglik_trace) else float("nan")
    print(f"if2: {cfg.if2_iterations} iterations, final loglik={final:.4f} "
          f"-> {cfg.out / 'swarm.csv'}")
    return 0


def _trace_rows(result: IfadResult, names) -> list[list]:
    rows = []
    for i, rec in enumerate(result.trace):
        theta = rec.theta_natural or {}
        rows.append([i, rec.stage, rec.loglik, rec.score_norm, rec.step_norm]
                    + [theta.get(nm, float("nan")) for nm in names])
    return rows


def cmd_ifad(cfg: RunConfig) -> int:
    model = build_model(cfg)
    data = get_dataset(cfg, model)
    if cfg.starts > 1:
        if not cfg.box:
            raise UsageError("a [box] section is required for multi-start searches")
        table, summary = search_campaign(model, data, cfg)
        rows = [[r["rank"], r["start"], r["method"], r["loglik"], r["status"]]
                + [r["theta"].get(nm, float("nan")) for nm in model.params.names]
                for r in table]
        _write_csv(cfg.out / "results.csv",
                   ["rank", "start", "method", "loglik", "status"]
                   + list(model.params.names), rows)
        (cfg.out / "summary.json").write_text(json.dumps(summary, indent=2))
        print(f"ifad campaign: best loglik={summary['best_loglik']:.4f} over "
              f"{cfg.starts} starts -> {cfg.out / 'results.csv'}")
        return 0
    theta = default_theta(model, cfg)
    result = run_ifad(model, data, model.params.to_unconstrained(theta),
                      cfg.ifad_config(), cfg.mop_config(), cfg.schedule(), cfg.seed)
    _write_csv(cfg.out / "opttrace.csv",
               ["iteration", "stage", "loglik", "score_norm", "step_norm"]
               + list(model.params.names),
               _trace_rows(result, model.params.names))
    print(f"ifad: status={result.status} best loglik={result.loglik:.4f} "
          f"-> {cfg.out / 'opttrace.csv'}")
    return 0


def cmd_nuts(cfg: RunConfig) -> int:
    model = build_model(cfg)
    data = get_dataset(cfg, model)
    if cfg.swarm_path:
        swarm = load_swarm(model.params, cfg.swarm_path)
    else:
        theta = default_theta(model, cfg)
        warm = run_if2(model, data, swarm_from_theta(model.params, theta, cfg.j),
                       cfg.schedule(), cfg.if2_iterations,
                       prng.derive_seed(cfg.seed, 17))
        swarm = warm.swarm
    prior = kde_fit(swarm)
    logpost = make_mop_logpost(model, data, prior, cfg.mop_config(), cfg.seed)
    theta0 = swarm.mean(axis=0)
    chains = nuts_sample(logpost, theta0, cfg.chains, cfg.nuts_iterations,
                         cfg.warmup, prng.derive_seed(cfg.seed, 23))
    rows = []
    for c in range(chains.n_chains):
        for it in range(chains.draws.shape[1]):
            nat = model.params.to_natural(chains.draws[c, it])
            rows.append([c, it] + [nat[nm] for nm in model.params.names])
    _write_csv(cfg.out / "draws.csv", ["chain", "iteration"] + list(model.params.names),
               rows)
    diag = diagnostics(chains)
    (cfg.out / "diagnostics.json").write_text(json.dumps(diag, indent=2))
    print(f"nuts: {cfg.chains} chains x {cfg.nuts_iterations} draws, "
          f"max rhat={max(diag['rhat']):.4f}, divergences={diag['divergences']} "
          f"-> {cfg.out / 'draws.csv'}")
    return 0


def cmd_selftest(cfg: RunConfig) -> int:
    results = run_selftest(verbose=True)
    failed = [name for name, ok, _ in results if not ok]
    print(f"selftest: {len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 2


# ---------------------------------------------------------------- campaign


def search_campaign(model: PompModel, data: Dataset, cfg: RunConfig
                    ) -> tuple[list[dict], dict]:
    """Paired global searches from a shared set of box-uniform starts.

    Per start, the refined search (warm start + gradient stage) and a
    pure iterated-filtering run of equal total iteration budget share the
    same derived seed.  Final candidates are re-evaluated under one common
    seed and particle count so ranking noise is shared.
    """
    t_begin = time.perf_counter()
    params = model.params
    starts = swarm_from_box(params, cfg.box, cfg.starts, prng.derive_seed(cfg.seed, 777))
    schedule = cfg.schedule()
    mop_cfg = cfg.mop_config()
    ifad_cfg = cfg.ifad_config()
    budget = ifad_cfg.warm_start_iterations + ifad_cfg.max_iterations
    eval_seed = prng.derive_seed(cfg.seed, 424242)
    eval_cfg = MopConfig(J=cfg.eval_j or cfg.j, alpha=cfg.alpha, seed=eval_seed,
                         estimator=cfg.estimator)

    def one_start(s: int) -> list[dict]:
        seed_s = cfg.seed ^ s
        v0 = starts[s]
        out = []
        try:
            res = run_ifad(model, data, v0, ifad_cfg, mop_cfg, schedule, seed_s)
            ll = run_bootstrap(model, data, res.theta_unconstrained, eval_cfg).loglik
            out.append({"start": s, "method": "ifad", "loglik": ll,
                        "theta": res.theta_natural, "status": res.status})
        except PompadError as exc:
            out.append({"start": s, "method": "ifad", "loglik": float("-inf"),
                        "theta": {}, "status": f"failed: {exc}"})
        try:
            swarm0 = swarm_from_theta(params, v0, mop_cfg.J)
            res2 = run_if2(model, data, swarm0, schedule, budget,
                           prng.derive_seed(seed_s, 1))
            ll2 = run_bootstrap(model, data, res2.theta_unconstrained, eval_cfg).loglik
            out.append({"start": s, "method": "if2", "loglik": ll2,
                        "theta": res2.theta_natural, "status": "ok"})
        except PompadError as exc:
            out.append({"start": s, "method": "if2", "loglik": float("-inf"),
                        "theta": {}, "status": f"failed: {exc}"})
        return out

    nested = run_replicates(one_start, cfg.starts, cfg.workers)
    rows = [r for sub in nested for r in sub]
    rows.sort(key=lambda r: (-(r["loglik"] if np.isfinite(r["loglik"]) else -np.inf),
                             r["start"], r["method"]))
    for rank, r in enumerate(rows, start=1):
        r["rank"] = rank

    finite = [r for r in rows if np.isfinite(r["loglik"])]
    n_failed = len(rows) - len(finite)
    best = finite[0] if finite else {"loglik": float("nan"), "theta": {}}
    improvements = []
    for s in range(cfg.starts):
        pair = {r["method"]: r["loglik"] for r in rows if r["start"] == s}
        if np.isfinite(pair.get("ifad", -np.inf)) and np.isfinite(pair.get("if2", -np.inf)):
            improvements.append(pair["ifad"] - pair["if2"])
    summary = {
        "best_loglik": best["loglik"],
        "best_theta": best["theta"],
        "n_failed": n_failed,
        "wall_time": time.perf_counter() - t_begin,
        "paired_median_improvement": float(np.median(improvements)) if improvements else None,
        "paired_win_fraction": float(np.mean([d >= 0 for d in improvements]))
        if improvements else None,
    }
    return rows, summary


# ---------------------------------------------------------------- CLI


_COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "score": cmd_score,
    "biasvar": cmd_biasvar,
    "if2": cmd_if2,
    "ifad": cmd_ifad,
    "nuts": cmd_nuts,
    "selftest": cmd_selftest,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pompad",
        description="Likelihood inference for partially observed Markov processes")
    sub = parser.add_subparsers(dest="command")
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--model", type=str, default=None)
        p.add_argument("--dataset", type=str, default=None)
        p.add_argument("--simulate", action="store_true")
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--j", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--estimator", type=str, default=None)
        p.add_argument("--alphas", type=str, default=None)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--sigma0", type=float, default=None)
        p.add_argument("--cooling", type=float, default=None)
        p.add_argument("--warm-start", dest="warm_start", type=int, default=None)
        p.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
        p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
        p.add_argument("--method", type=str, default=None)
        p.add_argument("--starts", type=int, default=None)
        p.add_argument("--eval-j", dest="eval_j", type=int, default=None)
        p.add_argument("--swarm", type=str, default=None)
        p.add_argument("--chains", type=int, default=None)
        p.add_argument("--nuts-iterations", dest="nuts_iterations", type=int, default=None)
        p.add_argument("--warmup", type=int, default=None)
    return parser


def cli(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage()
        return 1
    try:
        cfg = build_run_config(args)
        return _COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PompadError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())
