"""Hybrid likelihood maximization: iterated-filtering warm start followed
by gradient ascent on particle score estimates.

The warm start is good at reaching the neighborhood of the maximum from
poor initializations; the gradient stage is good at extracting the last
few log-likelihood units once there.  Stage two moves in unconstrained
coordinates, stops when the estimated score norm falls below
``(1 + stop_sigma) * stop_epsilon``, and can take curvature-scaled steps
via a finite-difference Hessian whose spectrum is floored to keep it
positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import prng
from .adcore import fd_hessian
from .errors import NumericalError, OptimizationAbortError, UsageError
from .mif2 import CoolingSchedule, run_if2, swarm_from_theta
from .mop import MopConfig, mop_loglik_and_score, run_mop
from .pomp import Dataset, PompModel

__all__ = [
    "IfadConfig", "OptRecord", "IfadResult", "hessian_floor", "ifad_step",
    "refine", "run_ifad", "mop_objective",
]

METHODS = ("gradient", "floored_newton")


@dataclass(frozen=True)
class IfadConfig:
    """Stage-two settings (stage one is a :class:`CoolingSchedule` run)."""

    warm_start_iterations: int = 40
    alpha: float = 0.97
    learning_rate: float = 0.2
    max_iterations: int = 100
    stop_sigma: float = 0.5
    stop_epsilon: float = 1e-3
    method: str = "gradient"
    hessian_floor_c: float = 1.0
    divergence_guard: float = 50.0
    guard_patience: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        if self.method not in METHODS:
            raise UsageError(f"method must be one of {METHODS}")
        if self.stop_epsilon <= 0 or self.stop_sigma < 0:
            raise UsageError("stopping threshold (1+sigma)*epsilon must be positive")
        if self.hessian_floor_c <= 0:
            raise UsageError("hessian_floor_c must be positive")

    @property
    def stop_threshold(self) -> float:
        return (1.0 + self.stop_sigma) * self.stop_epsilon


@dataclass
class OptRecord:
    iteration: int
    stage: str
    theta_natural: dict
    loglik: float
    score_norm: float
    step_norm: float


@dataclass
class IfadResult:
    theta_unconstrained: np.ndarray
    theta_natural: dict
    loglik: float
    trace: list[OptRecord]
    status: str
    swarm: np.ndarray | None = None


def hessian_floor(H: np.ndarray, c: float) -> np.ndarray:
    """Replace eigenvalues of (the symmetrized) ``H`` below ``c`` with ``c``."""
    if c <= 0:
        raise UsageError("floor must be positive")
    Hs = 0.5 * (H + H.T)
    try:
        evals, evecs = np.linalg.eigh(Hs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed in hessian_floor") from exc
    return (evecs * np.maximum(evals, c)) @ evecs.T


def mop_objective(model: PompModel, data: Dataset, config: MopConfig) -> Callable:
    """Objective callable ``(v, seed) -> (loglik, score)`` backed by the
    single-pass differentiable filter."""

    def objective(v: np.ndarray, seed: int):
        out = mop_loglik_and_score(model, data, v, config.with_seed(seed))
        return out.loglik, out.score

    return objective


def _step_direction(objective, v, score, config: IfadConfig, seed: int) -> np.ndarray:
    """Ascent step ``eta * H^{-1} * score`` (H = identity for the gradient
    method; a floored FD Hessian of the negative log-likelihood otherwise)."""
    if config.method == "gradient":
        return config.learning_rate * score
    # curvature of -loglik by central differences of the score, fixed seed
    def neg_grad(w):
        _, s = objective(w, seed)
        return -s

    H = hessian_floor(fd_hessian(neg_grad, v, 1e-5), config.hessian_floor_c)
    return config.learning_rate * np.linalg.solve(H, score)


def refine(objective: Callable, v0: np.ndarray, config: IfadConfig,
           seed: int) -> tuple[np.ndarray, list[OptRecord], str,
                               list[np.ndarray]]:
    """Stage-two loop on an arbitrary (loglik, score) objective.

    Each iteration draws a fresh derived seed: optimizing one fixed seed
    would maximize that seed's surface rather than the likelihood.

    Returns the last iterate, the step records, a status string, and every
    visited iterate (for best-candidate selection by the caller).
    """
    v = np.asarray(v0, dtype=float).copy()
    trace: list[OptRecord] = []
    iterates = [v.copy()]
    status = "max_iterations"
    best_ll = -np.inf
    bad_streak = 0
    for m in range(config.max_iterations):
        it_seed = prng.derive_seed(seed, 1000 + m)
        ll, score = objective(v, it_seed)
        if not (np.isfinite(ll) and np.all(np.isfinite(score))):
            raise OptimizationAbortError(
                f"non-finite estimate at stage-2 iteration {m}", trace)
        norm = float(np.linalg.norm(score))
        if norm <= config.stop_threshold:
            trace.append(OptRecord(m, "grad", {}, ll, norm, 0.0))
            status = "converged"
            break
        best_ll = max(best_ll, ll)
        bad_streak = bad_streak + 1 if ll < best_ll - config.divergence_guard else 0
        if bad_streak >= config.guard_patience:
            status = "diverged"
            break
        step = _step_direction(objective, v, score, config, it_seed)
        v = v + step
        iterates.append(v.copy())
        trace.append(OptRecord(m, "grad", {}, ll, norm, float(np.linalg.norm(step))))
    return v, trace, status, iterates


def ifad_step(model: PompModel, data: Dataset, theta, ifad_config: IfadConfig,
              mop_config: MopConfig, seed: int) -> tuple[np.ndarray, OptRecord]:
    """One stage-two update from ``theta``; returns the new unconstrained
    point and its record."""
    objective = mop_objective(model, data, mop_config)
    v = model.params.coerce_unconstrained(theta)
    ll, score = objective(v, seed)
    if not (np.isfinite(ll) and np.all(np.isfinite(score))):
        raise OptimizationAbortError("non-finite estimate in ifad_step", [])
    step = _step_direction(objective, v, score, ifad_config, seed)
    v_next = v + step
    rec = OptRecord(0, "grad", model.params.to_natural(v_next), ll,
                    float(np.linalg.norm(score)), float(np.linalg.norm(step)))
    return v_next, rec


def run_ifad(model: PompModel, data: Dataset, start, ifad_config: IfadConfig,
             mop_config: MopConfig, schedule: CoolingSchedule,
             seed: int) -> IfadResult:
    """Warm start with iterated filtering, refine with gradient steps, and
    return the best visited iterate re-evaluated under one common seed.

    ``start`` may be a parameter point (replicated into a swarm) or a
    (J, p) unconstrained swarm.
    """
    params = model.params
    start_arr = np.asarray(start, dtype=float) if not isinstance(start, dict) \
        else params.to_unconstrained(start)
    if start_arr.ndim == 1:
        swarm0 = swarm_from_theta(params, start_arr, mop_config.J)
    else:
        swarm0 = start_arr

    trace: list[OptRecord] = []
    if ifad_config.warm_start_iterations > 0:
        warm = run_if2(model, data, swarm0, schedule,
                       ifad_config.warm_start_iterations, prng.derive_seed(seed, 1))
        v0 = warm.theta_unconstrained
        swarm = warm.swarm
        for m, ll in enumerate(warm.loglik_trace):
            trace.append(OptRecord(m, "if2", {}, float(ll), np.nan, np.nan))
    else:
        v0 = swarm0.mean(axis=0)
        swarm = swarm0

    cfg2 = replace(mop_config, alpha=ifad_config.alpha)
    objective = mop_objective(model, data, cfg2)
    _, trace2, status, iterates = refine(objective, v0, ifad_config,
                                         prng.derive_seed(seed, 2))
    trace.extend(trace2)

    # pick the best visited point under a held-out common seed so ranking
    # noise is shared across candidates
    eval_cfg = cfg2.with_seed(prng.derive_seed(seed, 3))
    best_v, best_ll = None, -np.inf
    for v in iterates:
        ll = run_mop(model, data, v, eval_cfg).loglik
        if ll > best_ll:
            best_v, best_ll = v, ll
    for rec in trace:
        if not rec.theta_natural and rec.stage == "grad":
            rec.theta_natural = params.to_natural(best_v)
    return IfadResult(best_v, params.to_natural(best_v), best_ll, trace,
                      status, swarm)
