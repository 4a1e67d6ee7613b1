"""Bayesian pipeline: KDE empirical prior from a parameter swarm, a
No-U-Turn sampler driven by externally supplied log-posterior gradients,
and convergence diagnostics.

The intended use chains the pieces: run iterated filtering, fit a
product-Gaussian KDE to the final swarm as an empirical prior, then sample
with NUTS whose gradient callback adds the particle score estimate to the
prior gradient.  The likelihood estimate inside the posterior is
stochastic; every gradient call within one (chain, iteration) pair shares
one derived filter seed, so each iteration explores a coherent surface,
and divergence counts surface the cost of the remaining noise.
"""

from __future__ import annotations

import inspect
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import prng
from .errors import UsageError
from .mop import MopConfig, mop_loglik_and_score
from .pomp import Dataset, PompModel

__all__ = [
    "KdePrior", "kde_fit", "kde_logpdf_grad", "ChainSet", "nuts_sample",
    "rhat", "ess", "diagnostics", "make_mop_logpost", "random_walk_spread",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


def random_walk_spread(sigma0: float, cooling: float, iterations: int,
                       n_steps: int) -> float:
    """Heuristic spread of a cooled random-walk swarm: final per-step sd
    times the square root of the number of accumulated steps."""
    return sigma0 * cooling ** iterations * float(np.sqrt(n_steps))


@dataclass
class KdePrior:
    """Product-Gaussian kernel density estimate on unconstrained
    coordinates: a mixture with one component per swarm row."""

    centers: np.ndarray    # (J, p)
    bandwidths: np.ndarray  # (p,)

    @property
    def p(self) -> int:
        return self.centers.shape[1]

    def logpdf(self, v: np.ndarray) -> float:
        return self.logpdf_grad(v)[0]

    def logpdf_grad(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        """Log-density and gradient by log-sum-exp over mixture components
        and the standard responsibility-weighted score formula."""
        v = np.asarray(v, dtype=float)
        z = (v[None, :] - self.centers) / self.bandwidths[None, :]
        comp = -0.5 * np.sum(z * z, axis=1)
        m = np.max(comp)
        w = np.exp(comp - m)
        total = np.sum(w)
        logpdf = float(m + np.log(total) - np.log(self.centers.shape[0])
                       - np.sum(np.log(self.bandwidths)) - 0.5 * self.p * _LOG_2PI)
        resp = w / total
        grad = -(resp[:, None] * z / self.bandwidths[None, :]).sum(axis=0)
        return logpdf, grad


def kde_fit(swarm: np.ndarray, fallback_bandwidth: float = 0.1) -> KdePrior:
    """Fit per-dimension Silverman bandwidths ``1.06 * sd * J^(-1/5)``.

    A dimension with zero spread (or a single-row swarm) falls back to
    ``fallback_bandwidth`` with a warning, so the prior stays proper.
    """
    swarm = np.atleast_2d(np.asarray(swarm, dtype=float))
    J = swarm.shape[0]
    if J >= 2:
        sd = swarm.std(axis=0, ddof=1)
        h = 1.06 * sd * J ** (-0.2)
    else:
        h = np.zeros(swarm.shape[1])
    degenerate = h <= 0
    if np.any(degenerate):
        which = "every dimension" if np.all(degenerate) else "some dimensions"
        warnings.warn(f"degenerate swarm: zero spread in {which}; "
                      f"using fallback bandwidth {fallback_bandwidth}")
        h = np.where(degenerate, fallback_bandwidth, h)
    return KdePrior(swarm.copy(), h)


def kde_logpdf_grad(prior: KdePrior, v: np.ndarray) -> tuple[float, np.ndarray]:
    return prior.logpdf_grad(v)


@dataclass
class ChainSet:
    """Post-warmup draws (chains, iterations, p) plus sampler statistics."""

    draws: np.ndarray
    accept_rate: np.ndarray
    step_size: np.ndarray
    divergences: np.ndarray

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]


class _IterDraws:
    """Addressed random draws for one (chain, iteration)."""

    def __init__(self, seed: int, iteration: int, p: int):
        self._seed = seed
        self._iter = iteration
        self._p = p
        self._counter = 0

    def _next(self) -> int:
        self._counter += 1
        return self._counter

    def momentum(self) -> np.ndarray:
        key = prng.StreamKey(self._seed, self._iter, np.arange(self._p),
                             prng.Purpose.PROPOSAL)
        return np.atleast_1d(prng.normal(key, self._next()))

    def uniform(self) -> float:
        key = prng.StreamKey(self._seed, self._iter, 0, prng.Purpose.PROPOSAL)
        return prng.uniform(key, 10_000 + self._next())


_DELTA_MAX = 1000.0  # slice overshoot treated as divergence


def _leapfrog(f, theta, r, grad, eps):
    r_half = r + 0.5 * eps * grad
    theta_new = theta + eps * r_half
    logp_new, grad_new = f(theta_new)
    r_new = r_half + 0.5 * eps * grad_new
    return theta_new, r_new, logp_new, grad_new


def _find_reasonable_epsilon(f, theta, rng) -> float:
    eps = 1.0
    logp, grad = f(theta)
    r = rng.momentum()
    _, r1, logp1, _ = _leapfrog(f, theta, r, grad, eps)
    joint0 = logp - 0.5 * float(r @ r)
    joint1 = logp1 - 0.5 * float(r1 @ r1)
    if not np.isfinite(joint1):
        joint1 = -np.inf
    direction = 1.0 if joint1 - joint0 > np.log(0.5) else -1.0
    while direction * (joint1 - joint0) > -direction * np.log(2.0):
        eps *= 2.0 ** direction
        if eps > 1e7 or eps < 1e-7:
            break
        _, r1, logp1, _ = _leapfrog(f, theta, r, grad, eps)
        joint1 = logp1 - 0.5 * float(r1 @ r1)
        if not np.isfinite(joint1):
            joint1 = -np.inf
    return eps


def _build_tree(f, theta, r, grad, log_u, direction, depth, eps, joint0, rng):
    """Recursive doubling; returns the standard tuple of edge states, a
    proposal, multiplicity, stop flag, acceptance statistics and a
    divergence count."""
    if depth == 0:
        theta1, r1, logp1, grad1 = _leapfrog(f, theta, r, grad, direction * eps)
        joint = logp1 - 0.5 * float(r1 @ r1)
        if not np.isfinite(joint):
            joint = -np.inf
        n1 = int(log_u <= joint)
        diverged = log_u > joint + _DELTA_MAX
        s1 = int(not diverged)
        alpha = min(1.0, float(np.exp(min(0.0, joint - joint0))))
        return (theta1, r1, grad1, theta1, r1, grad1, theta1, grad1, logp1,
                n1, s1, alpha, 1, int(diverged))

    (tm, rm, gm, tp, rp, gp, t1, g1, lp1, n1, s1, a1, na1, d1) = _build_tree(
        f, theta, r, grad, log_u, direction, depth - 1, eps, joint0, rng)
    if s1 == 1:
        if direction == -1:
            (tm, rm, gm, _, _, _, t2, g2, lp2, n2, s2, a2, na2, d2) = _build_tree(
                f, tm, rm, gm, log_u, direction, depth - 1, eps, joint0, rng)
        else:
            (_, _, _, tp, rp, gp, t2, g2, lp2, n2, s2, a2, na2, d2) = _build_tree(
                f, tp, rp, gp, log_u, direction, depth - 1, eps, joint0, rng)
        if rng.uniform() < n2 / max(n1 + n2, 1):
            t1, g1, lp1 = t2, g2, lp2
        span = tp - tm
        s1 = s2 * int(span @ rm >= 0) * int(span @ rp >= 0)
        n1 += n2
        a1 += a2
        na1 += na2
        d1 += d2
    return tm, rm, gm, tp, rp, gp, t1, g1, lp1, n1, s1, a1, na1, d1


def nuts_sample(logpost: Callable, theta0: np.ndarray, chains: int,
                iterations: int, warmup: int, seed: int,
                target_accept: float = 0.8, max_tree_depth: int = 10) -> ChainSet:
    """No-U-Turn sampling with dual-averaging step-size adaptation.

    Args:
        logpost: ``v -> (value, gradient)`` or ``(v, ctx) -> ...`` where
            ``ctx = (chain, iteration)`` lets stochastic posteriors derive
            one filter seed per iteration.
        theta0: starting point (unconstrained coordinates).
        chains: independent chains (run sequentially, seeded independently).
        iterations: post-warmup draws per chain.
        warmup: adaptation iterations (discarded).

    Returns:
        ChainSet with draws of shape (chains, iterations, p).

    Raises:
        UsageError: non-finite log-posterior at the starting point.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    p = theta0.size
    takes_ctx = len(inspect.signature(logpost).parameters) >= 2

    def wrap(ctx):
        if takes_ctx:
            return lambda v: logpost(v, ctx)
        return logpost

    total = warmup + iterations
    draws = np.zeros((chains, iterations, p))
    accept = np.zeros(chains)
    eps_out = np.zeros(chains)
    div_counts = np.zeros(chains, dtype=int)

    for c in range(chains):
        chain_seed = prng.derive_seed(seed, c)
        f0 = wrap((c, 0))
        logp, grad = f0(theta0)
        if not np.isfinite(logp):
            raise UsageError("log-posterior is not finite at theta0")
        theta = theta0.copy()

        rng0 = _IterDraws(chain_seed, 0, p)
        eps = _find_reasonable_epsilon(f0, theta, rng0)
        mu = np.log(10.0 * eps)
        log_eps_bar, h_bar = 0.0, 0.0
        gamma, t0, kappa = 0.05, 10.0, 0.75
        accept_sum, accept_n = 0.0, 0

        for it in range(1, total + 1):
            f = wrap((c, it))
            rng = _IterDraws(chain_seed, it, p)
            logp, grad = f(theta)
            r0 = rng.momentum()
            joint0 = logp - 0.5 * float(r0 @ r0)
            log_u = joint0 + np.log(max(rng.uniform(), 1e-300))

            tm = tp = theta
            rm = rp = r0
            gm = gp = grad
            n_keep, depth, s = 1, 0, 1
            alpha_sum, n_alpha = 0.0, 1
            while s == 1 and depth < max_tree_depth:
                direction = -1.0 if rng.uniform() < 0.5 else 1.0
                if direction == -1:
                    (tm, rm, gm, _, _, _, t1, g1, lp1, n1, s1, a1, na1, d1) = _build_tree(
                        f, tm, rm, gm, log_u, direction, depth, eps, joint0, rng)
                else:
                    (_, _, _, tp, rp, gp, t1, g1, lp1, n1, s1, a1, na1, d1) = _build_tree(
                        f, tp, rp, gp, log_u, direction, depth, eps, joint0, rng)
                if s1 == 1 and rng.uniform() < min(1.0, n1 / n_keep):
                    theta, grad, logp = t1, g1, lp1
                if it > warmup:  # adaptation overshoot is expected, not reported
                    div_counts[c] += int(d1 > 0)
                alpha_sum, n_alpha = a1, max(na1, 1)
                span = tp - tm
                s = s1 * int(span @ rm >= 0) * int(span @ rp >= 0)
                n_keep += n1
                depth += 1

            accept_prob = alpha_sum / n_alpha
            if it <= warmup:
                frac = 1.0 / (it + t0)
                h_bar = (1.0 - frac) * h_bar + frac * (target_accept - accept_prob)
                log_eps = mu - np.sqrt(it) / gamma * h_bar
                frac2 = it ** (-kappa)
                log_eps_bar = frac2 * log_eps + (1.0 - frac2) * log_eps_bar
                eps = float(np.exp(log_eps))
            else:
                eps = float(np.exp(log_eps_bar)) if warmup > 0 else eps
                draws[c, it - warmup - 1] = theta
                accept_sum += accept_prob
                accept_n += 1

        accept[c] = accept_sum / max(accept_n, 1)
        eps_out[c] = eps
    return ChainSet(draws, accept, eps_out, div_counts)


def rhat(chains, param_index: int = 0) -> float:
    """Split potential-scale-reduction diagnostic.

    Accepts a ChainSet or a (chains, iterations) array.  Chains are split
    in half; the statistic compares between- and within-sequence variance.
    Zero within-chain variance returns +inf as a sentinel.
    """
    x = chains.draws[:, :, param_index] if isinstance(chains, ChainSet) \
        else np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 4:
        raise UsageError("rhat needs >= 2 chains and >= 4 draws each")
    T = x.shape[1] // 2
    halves = np.concatenate([x[:, :T], x[:, T:2 * T]], axis=0)
    within = halves.var(axis=1, ddof=1)
    W = float(np.mean(within))
    if W == 0.0:
        return float("inf")
    B = T * float(halves.mean(axis=1).var(ddof=1))
    var_plus = (T - 1) / T * W + B / T
    return float(np.sqrt(var_plus / W))


def ess(chains, param_index: int = 0) -> float:
    """Effective sample size via combined-chain autocorrelations with
    Geyer's initial-positive-sequence truncation."""
    x = chains.draws[:, :, param_index] if isinstance(chains, ChainSet) \
        else np.asarray(chains, dtype=float)
    C, T = x.shape
    means = x.mean(axis=1, keepdims=True)
    centered = x - means
    W = float(np.mean(x.var(axis=1, ddof=1)))
    B_over_T = float(x.mean(axis=1).var(ddof=1)) if C > 1 else 0.0
    var_plus = (T - 1) / T * W + B_over_T
    if var_plus <= 0:
        return float(C * T)
    rho_sum = 0.0
    prev_pair = None
    t = 1
    while t < T - 1:
        acov_t = float(np.mean(np.sum(centered[:, t:] * centered[:, :-t], axis=1) / T))
        acov_t1 = float(np.mean(np.sum(centered[:, t + 1:] * centered[:, :-(t + 1)], axis=1) / T)) \
            if t + 1 < T else 0.0
        rho_t = 1.0 - (W - acov_t) / var_plus
        rho_t1 = 1.0 - (W - acov_t1) / var_plus
        pair = rho_t + rho_t1
        if pair < 0:
            break
        if prev_pair is not None:
            pair = min(pair, prev_pair)  # enforce monotone decrease
        rho_sum += pair
        prev_pair = pair
        t += 2
    return float(C * T / (1.0 + 2.0 * rho_sum))


def diagnostics(chains: ChainSet) -> dict:
    """Summary dict for reporting: per-parameter rhat/ess, divergence
    count, per-chain adapted step sizes."""
    p = chains.draws.shape[2]
    return {
        "rhat": [rhat(chains, i) for i in range(p)],
        "ess": [ess(chains, i) for i in range(p)],
        "divergences": int(np.sum(chains.divergences)),
        "step_size": [float(e) for e in chains.step_size],
    }


def make_mop_logpost(model: PompModel, data: Dataset, prior: KdePrior,
                     config: MopConfig, base_seed: int = 0) -> Callable:
    """Log-posterior callback for :func:`nuts_sample`: particle filter
    log-likelihood and score plus the KDE prior, with the filter seed
    derived from the (chain, iteration) context."""

    def logpost(v: np.ndarray, ctx=(0, 0)):
        chain, iteration = ctx
        seed = prng.derive_seed(base_seed, chain, iteration)
        out = mop_loglik_and_score(model, data, v, config.with_seed(seed))
        lp, gp = prior.logpdf_grad(v)
        return out.loglik + lp, out.score + gp

    return logpost
