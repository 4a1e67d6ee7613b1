"""Exact references for verification.

The Kalman recursion gives the exact log-likelihood of the linear-Gaussian
model, seed-free, so particle estimates and their gradients can be checked
against ground truth.  A brute-force grid posterior covers low-dimensional
Bayesian checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .adcore import fd_gradient
from .errors import DegenerateModelError, NumericalError, UsageError
from .pomp import Dataset, ParamSet

_LOG_2PI = float(np.log(2.0 * np.pi))


def kalman_loglik(data: Dataset, theta: Mapping[str, float]) -> float:
    """Exact log-likelihood of the LG-SSM by the standard filter recursion.

    Args:
        data: observations at times 1..N (one transition per observation).
        theta: natural values for a, sigma, tau, mu0, s0.

    Returns:
        sum over n of log N(y_n; predicted mean, predicted var + tau^2).
    """
    a = float(theta["a"])
    sigma = float(theta["sigma"])
    tau = float(theta["tau"])
    mu0 = float(theta.get("mu0", 0.0))
    s0 = float(theta.get("s0", 1.0))
    if sigma < 0 or tau < 0 or s0 < 0:
        raise DegenerateModelError("sigma, tau, s0 must be nonnegative")
    if sigma == 0.0 and tau == 0.0 and s0 == 0.0:
        raise DegenerateModelError("total observation variance is zero")

    mean, var = mu0, s0 * s0
    q, r = sigma * sigma, tau * tau
    ll = 0.0
    for y in data.observations:
        mean_pred = a * mean
        var_pred = a * a * var + q
        s = var_pred + r
        if s <= 0.0:
            raise DegenerateModelError("zero predicted observation variance")
        resid = y - mean_pred
        ll += -0.5 * (_LOG_2PI + np.log(s) + resid * resid / s)
        gain = var_pred / s
        mean = mean_pred + gain * resid
        var = (1.0 - gain) * var_pred
    return float(ll)


def kalman_loglik_unconstrained(data: Dataset, params: ParamSet, v: np.ndarray) -> float:
    return kalman_loglik(data, params.to_natural(v))


def kalman_score_fd(data: Dataset, params: ParamSet, theta, h: float = 1e-6) -> np.ndarray:
    """Central-difference score in unconstrained coordinates."""
    if h <= 0:
        raise UsageError("h must be positive")
    v = params.coerce_unconstrained(theta)
    return fd_gradient(lambda vv: kalman_loglik_unconstrained(data, params, np.asarray(vv)),
                       v, h)


def _fd_hessian_loglik(data: Dataset, params: ParamSet, v: np.ndarray,
                       h: float = 1e-4) -> np.ndarray:
    p = v.size
    H = np.zeros((p, p))
    f0 = kalman_loglik_unconstrained(data, params, v)

    def f(w):
        return kalman_loglik_unconstrained(data, params, w)

    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h
        H[i, i] = (f(v + ei) - 2.0 * f0 + f(v - ei)) / (h * h)
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h
            H[i, j] = H[j, i] = (
                f(v + ei + ej) - f(v + ei - ej) - f(v - ei + ej) + f(v - ei - ej)
            ) / (4.0 * h * h)
    return H


def kalman_mle(data: Dataset, params: ParamSet, v0, tol: float = 1e-8,
               max_iter: int = 200) -> tuple[np.ndarray, float]:
    """Newton iteration on the exact log-likelihood with FD derivatives.

    Backtracks when a full step fails to improve, and floors the negative
    Hessian to keep the direction an ascent direction.  Used as ground
    truth for optimization tests.

    Returns:
        (unconstrained MLE, its log-likelihood)
    """
    v = np.asarray(v0, dtype=float).copy()
    ll = kalman_loglik_unconstrained(data, params, v)
    for _ in range(max_iter):
        g = fd_gradient(lambda w: kalman_loglik_unconstrained(data, params, np.asarray(w)),
                        v, 1e-6)
        if np.max(np.abs(g)) < tol:
            break
        H = _fd_hessian_loglik(data, params, v)
        try:
            evals, evecs = np.linalg.eigh(-0.5 * (H + H.T))
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise NumericalError("eigendecomposition failed in kalman_mle") from exc
        evals = np.maximum(evals, 1e-8)
        step = evecs @ ((evecs.T @ g) / evals)
        t = 1.0
        for _ in range(60):
            cand = v + t * step
            ll_cand = kalman_loglik_unconstrained(data, params, cand)
            if ll_cand >= ll - 1e-12:
                v, ll = cand, ll_cand
                break
            t *= 0.5
        else:
            break
        if t * np.max(np.abs(step)) < tol:
            g = fd_gradient(lambda w: kalman_loglik_unconstrained(data, params, np.asarray(w)),
                            v, 1e-6)
            if np.max(np.abs(g)) < 10 * tol:
                break
    return v, float(ll)


@dataclass
class GridPosterior:
    """Trapezoid-normalized posterior over a 1-d or 2-d unconstrained grid."""

    axes: list[np.ndarray]
    mass: np.ndarray  # sums to 1, same shape as the grid

    def mean(self) -> np.ndarray:
        dims = len(self.axes)
        out = np.zeros(dims)
        grids = np.meshgrid(*self.axes, indexing="ij")
        for d in range(dims):
            out[d] = float(np.sum(grids[d] * self.mass))
        return out

    def sd(self) -> np.ndarray:
        mu = self.mean()
        dims = len(self.axes)
        out = np.zeros(dims)
        grids = np.meshgrid(*self.axes, indexing="ij")
        for d in range(dims):
            out[d] = float(np.sqrt(np.sum((grids[d] - mu[d]) ** 2 * self.mass)))
        return out


def lgssm_reference_scores(model, data: Dataset, theta, J: int,
                           seed: int) -> dict[str, np.ndarray]:
    """Closed-form score estimators for the LG-SSM, computed without any
    tape: trajectories and their parameter sensitivities follow hand-coded
    forward recursions, measurement-density derivatives are analytic, and
    resampling replays the filter's addressed draws.

    Returns the two limiting estimator forms (unconstrained coordinates):

    * ``memoryless`` — per-step average of measurement log-density
      gradients at the resampled particles, summed over steps;
    * ``ancestral`` — average over final particles of the gradient sums
      accumulated along their ancestral trajectories.
    """
    from . import prng
    from .resample import systematic_resample

    params = model.params
    v = params.coerce_unconstrained(theta)
    nat = params.to_natural(v)
    a, sig, tau = nat["a"], nat["sigma"], nat["tau"]
    names = params.names

    z0 = prng.normal(prng.StreamKey(seed, 0, np.arange(J), prng.Purpose.INIT), 0)
    x = nat["mu0"] + nat["s0"] * z0
    sens = {nm: np.zeros(J) for nm in names}
    if "mu0" in sens:
        sens["mu0"] = np.ones(J)
    if "s0" in sens:
        sens["s0"] = z0.copy()

    p = len(names)
    G = np.zeros((J, p))
    memoryless = np.zeros(p)
    log_2pi = float(np.log(2.0 * np.pi))
    for n, (t, y) in enumerate(zip(data.times, data.observations), start=1):
        z = prng.normal(prng.StreamKey(seed, n, np.arange(J), prng.Purpose.PROCESS), 0)
        x_new = a * x + sig * z
        new_sens = {}
        for nm in names:
            prev = sens[nm]
            if nm == "a":
                new_sens[nm] = x + a * prev
            elif nm == "sigma":
                new_sens[nm] = z + a * prev
            else:
                new_sens[nm] = a * prev
        resid = y - x_new
        term = np.zeros((J, p))
        for i, nm in enumerate(names):
            if nm == "tau":
                term[:, i] = -1.0 / tau + resid * resid / tau ** 3
            else:
                term[:, i] = resid / (tau * tau) * new_sens[nm]
        log_g = -0.5 * (log_2pi + 2.0 * np.log(tau)) - resid * resid / (2.0 * tau * tau)
        u = prng.uniform(prng.StreamKey(seed, n, 0, prng.Purpose.RESAMPLE), 0)
        idx = systematic_resample(log_g, u)
        memoryless += term[idx].mean(axis=0)
        G = G[idx] + term[idx]
        x = x_new[idx]
        sens = {nm: new_sens[nm][idx] for nm in names}

    jac = np.array([sp.dnatural_dunconstrained(nat[sp.name]) for sp in params.free])
    return {"memoryless": memoryless * jac, "ancestral": G.mean(axis=0) * jac}


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def grid_posterior(data: Dataset, params: ParamSet, prior_logpdf,
                   bounds, resolution: int = 100) -> GridPosterior:
    """Brute-force posterior on a grid: exp(exact loglik + prior logpdf).

    Args:
        params: must have at most two free parameters.
        prior_logpdf: callable v -> float on unconstrained coordinates.
        bounds: list of (lo, hi) per free parameter, unconstrained scale.
        resolution: grid points per dimension (>= 50).

    Returns:
        GridPosterior whose mass sums to one.
    """
    p = params.p
    if p > 2:
        raise UsageError("grid_posterior supports at most 2 parameters")
    if resolution < 50:
        raise UsageError("resolution must be at least 50 per dimension")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    if len(axes) != p:
        raise UsageError("one (lo, hi) bound pair required per free parameter")

    if p == 1:
        logpost = np.array([
            kalman_loglik_unconstrained(data, params, np.array([v]))
            + prior_logpdf(np.array([v])) for v in axes[0]])
        w = _trapezoid_weights(resolution)
    else:
        logpost = np.zeros((resolution, resolution))
        for i, v1 in enumerate(axes[0]):
            for j, v2 in enumerate(axes[1]):
                vv = np.array([v1, v2])
                logpost[i, j] = (kalman_loglik_unconstrained(data, params, vv)
                                 + prior_logpdf(vv))
        w = np.outer(_trapezoid_weights(resolution), _trapezoid_weights(resolution))

    dens = np.exp(logpost - np.max(logpost)) * w
    total = np.sum(dens)
    if not np.isfinite(total) or total <= 0:
        raise NumericalError("grid posterior has no finite mass")
    return GridPosterior(axes, dens / total)
