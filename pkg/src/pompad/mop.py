"""Differentiable particle filtering with off-parameter resampling.

The filter evaluates the likelihood at a target parameter ``theta`` while
selecting resampling indices from a baseline parameter ``phi``.  Because
the indices depend only on ``phi`` (and the fixed seed), the likelihood
estimate is a smooth function of ``theta``, and reverse-mode AD through
the measurement-density ratios and the reparameterized simulator yields a
score estimate.  Per-particle correction weights accumulate the
discrepancy between the two parameters; a discount factor ``alpha`` in
[0, 1] controls how much of that memory is kept, trading bias against
variance:

* ``alpha = 0`` keeps one step of memory (low variance, asymptotic bias),
* ``alpha = 1`` keeps whole ancestral trajectories (consistent score,
  variance growing with the horizon),
* intermediate values interpolate, and often dominate both in MSE.

When ``theta == phi`` the baseline quantities are produced by
``stop_gradient`` on the target-side quantities — values bitwise equal,
derivative contribution zero — so a single pass suffices and the filter
reduces exactly (bitwise) to the bootstrap filter.  For ``theta != phi``
a first pass at ``phi`` with the same seed supplies baseline densities
and indices.

An alternative to discounting truncates per-particle memory at a fixed
lag ``k``: with ``truncation_lag`` set, weights are the sum of the last
``k`` log-ratio increments along the ancestry.  The after-resampling
conditional term then compares the window with and without the newest
increment along one shared (post-resampling) alignment, which makes the
lag-1 variant reproduce the alpha = 0 score bitwise at equal parameters.

All weights are carried in log space; the discount is a multiplication
there, which avoids the over/underflow that linear-space powers produce
on long series.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import adcore, prng
from .adcore import Dual, Tape
from .errors import DegenerateFilterError, UsageError
from .pomp import Dataset, PompModel
from .resample import offparam_indices_log, systematic_resample

__all__ = [
    "MopConfig", "FilterOutput", "Baseline", "run_bootstrap", "run_mop",
    "mop_score", "mop_loglik_and_score", "prepare_baseline",
    "fixed_seed_fd_score", "score_sweep", "SweepRow", "run_replicates",
]

ESTIMATORS = ("before_resampling", "after_resampling")


@dataclass(frozen=True)
class MopConfig:
    """Filter settings.

    ``truncation_lag`` switches the weight memory from alpha-discounting to
    a fixed-lag window (use together with ``alpha=1`` for the pure
    truncated variant).
    """

    J: int = 1000
    alpha: float = 1.0
    seed: int = 0
    estimator: str = "before_resampling"
    truncation_lag: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise UsageError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.J < 1:
            raise UsageError("J must be at least 1")
        if self.estimator not in ESTIMATORS:
            raise UsageError(f"estimator must be one of {ESTIMATORS}")
        if self.truncation_lag is not None and self.truncation_lag < 1:
            raise UsageError("truncation_lag must be >= 1 when present")

    def with_seed(self, seed: int) -> "MopConfig":
        return MopConfig(self.J, self.alpha, seed, self.estimator, self.truncation_lag)


@dataclass
class CloudSnapshot:
    """Per-step particle record (values only, no derivative tracking)."""

    pred_states: dict[str, np.ndarray]
    log_g: np.ndarray
    indices: np.ndarray
    log_wF: np.ndarray


@dataclass
class FilterOutput:
    """Result of one filter pass.

    ``cond_logliks`` holds the configured estimator's per-step terms;
    both series are retained because the after-resampling form has the
    telescoping structure used by several exact identities.
    """

    loglik: float
    cond_logliks: np.ndarray
    cond_logliks_before: np.ndarray
    cond_logliks_after: np.ndarray
    final_log_weights: np.ndarray
    baseline_cond_logliks: np.ndarray
    score: np.ndarray | None = None
    clouds: list[CloudSnapshot] | None = None
    loglik_dual: Dual | None = None


@dataclass
class Baseline:
    """First-pass record at the baseline parameter: per-step measurement
    log-densities of the baseline particles and the selected indices."""

    log_g_phi: list[np.ndarray]
    indices: list[np.ndarray]
    cond_logliks: np.ndarray
    loglik: float


def _proc_noise(seed: int, n: int, J: int) -> prng.NoiseStream:
    return prng.NoiseStream(seed, n, prng.Purpose.PROCESS, np.arange(J))


def _resample_key(seed: int, n: int) -> prng.StreamKey:
    return prng.StreamKey(seed, n, 0, prng.Purpose.RESAMPLE)


def _gather_state(state: Mapping[str, Dual], idx: np.ndarray) -> dict[str, Dual]:
    return {name: adcore.gather(comp, idx) for name, comp in state.items()}


def run_bootstrap(model: PompModel, data: Dataset, theta, config: MopConfig,
                  save_clouds: bool = False) -> FilterOutput:
    """Plain bootstrap filter: propagate, weight by the measurement
    density, resample systematically at every step.

    No derivative flows out of this function; all model arithmetic runs on
    constants.  The log-likelihood is the sum over steps of
    ``log(mean g_n)``, computed with the same log-sum-exp primitive the
    off-parameter filter uses, so the two agree bitwise at equal
    parameters and seed.
    """
    J, seed = config.J, config.seed
    v = model.params.coerce_unconstrained(theta)
    theta_c = model.params.constants(v)

    state = model.rinit(theta_c, J, prng.NoiseStream(seed, 0, prng.Purpose.INIT, np.arange(J)))
    terms = np.zeros(len(data))
    log_j = float(np.log(J))
    clouds: list[CloudSnapshot] | None = [] if save_clouds else None
    t_prev = model.t0
    for n, (t, y) in enumerate(zip(data.times, data.observations), start=1):
        state = model.rprocess_step(state, t_prev, t, theta_c, _proc_noise(seed, n, J))
        log_g = np.asarray(adcore.value_of(model.dmeasure_log(y, state, theta_c)),
                           dtype=float)
        if not np.isfinite(np.max(log_g)):
            raise DegenerateFilterError(n, "all measurement weights vanished")
        terms[n - 1] = adcore.logsumexp_values(log_g) - log_j
        idx = systematic_resample(log_g, prng.uniform(_resample_key(seed, n), 0))
        if clouds is not None:
            clouds.append(CloudSnapshot(
                {k: np.array(adcore.value_of(c), dtype=float) for k, c in state.items()},
                log_g.copy(), idx.copy(), np.zeros(J)))
        state = _gather_state(state, idx)
        t_prev = t

    loglik = float(np.sum(terms))
    return FilterOutput(loglik, terms, terms, terms, np.zeros(J), terms, clouds=clouds)


def _mop_pass(model: PompModel, data: Dataset, theta_map: Mapping[str, Dual],
              config: MopConfig, baseline: Baseline | None,
              save_clouds: bool = False) -> FilterOutput:
    """Shared filtering loop for single-pass (baseline None: baseline
    quantities come from stop_gradient) and replay mode (baseline given)."""
    J, seed, alpha = config.J, config.seed, config.alpha
    if J < 2:
        raise UsageError("off-parameter filtering needs J >= 2")
    lag = config.truncation_lag

    state = model.rinit(theta_map, J, prng.NoiseStream(seed, 0, prng.Purpose.INIT, np.arange(J)))
    log_wF = adcore.constant(np.zeros(J))
    window: list[Dual] = []  # last `lag` log-ratio increments, ancestrally aligned

    N = len(data)
    before = np.zeros(N)
    after = np.zeros(N)
    base_terms = np.zeros(N)
    before_duals: list[Dual] = []
    after_duals: list[Dual] = []
    clouds: list[CloudSnapshot] | None = [] if save_clouds else None
    log_j = float(np.log(J))

    t_prev = model.t0
    for n, (t, y) in enumerate(zip(data.times, data.observations), start=1):
        # discounted (or truncated-window) prediction weights
        if lag is None:
            log_wP = alpha * log_wF
        else:
            log_wP = adcore.constant(np.zeros(J))
            for m_idx, row in enumerate(window):
                coef = alpha ** (len(window) - m_idx)
                log_wP = log_wP + (row if coef == 1.0 else coef * row)

        state = model.rprocess_step(state, t_prev, t, theta_map, _proc_noise(seed, n, J))
        log_g = model.dmeasure_log(y, state, theta_map)

        if baseline is None:
            log_g_phi = np.asarray(adcore.value_of(log_g), dtype=float)
            if not np.isfinite(np.max(log_g_phi)):
                raise DegenerateFilterError(n, "all measurement weights vanished")
            idx = offparam_indices_log(log_g_phi, _resample_key(seed, n))
        else:
            log_g_phi = baseline.log_g_phi[n - 1]
            idx = baseline.indices[n - 1]

        lse_num = adcore.logsumexp(log_g + log_wP)
        lse_den = adcore.logsumexp(log_wP)
        logLB = lse_num - lse_den
        logLphi = adcore.logsumexp_values(log_g_phi) - log_j

        state = _gather_state(state, idx)
        log_g_k = adcore.gather(log_g, idx)
        ratio_k = log_g_k - adcore.constant(log_g_phi[idx])
        if lag is None:
            log_wF = adcore.gather(log_wP, idx) + ratio_k
            # denominator of the after-resampling form: pre-resampling
            # prediction weights, which is what telescopes over steps
            logLA = logLphi + (adcore.logsumexp(log_wF) - lse_den)
        else:
            # fixed-lag window: the after-resampling form compares the
            # window with and without the newest increment along the SAME
            # (post-resampling) ancestry, which is what makes lag 1
            # reproduce the memoryless (alpha=0) score exactly
            window = [adcore.gather(row, idx) for row in window]
            log_wP_post = adcore.gather(log_wP, idx)
            log_wF = log_wP_post + ratio_k
            window.append(ratio_k)
            if len(window) > lag:
                window.pop(0)
            logLA = logLphi + (adcore.logsumexp(log_wF)
                               - adcore.logsumexp(log_wP_post))

        before[n - 1] = adcore.value_of(logLB)
        after[n - 1] = adcore.value_of(logLA)
        base_terms[n - 1] = logLphi
        before_duals.append(logLB)
        after_duals.append(logLA)
        if clouds is not None:
            clouds.append(CloudSnapshot(
                {k: np.array(adcore.value_of(c), dtype=float) for k, c in state.items()},
                np.asarray(adcore.value_of(log_g), dtype=float).copy(),
                np.asarray(idx).copy(),
                np.asarray(adcore.value_of(log_wF), dtype=float).copy()))
        t_prev = t

    chosen = before_duals if config.estimator == "before_resampling" else after_duals
    total = chosen[0]
    for term in chosen[1:]:
        total = total + term

    cond = before if config.estimator == "before_resampling" else after
    return FilterOutput(
        loglik=float(adcore.value_of(total)),
        cond_logliks=cond,
        cond_logliks_before=before,
        cond_logliks_after=after,
        final_log_weights=np.asarray(adcore.value_of(log_wF), dtype=float).copy(),
        baseline_cond_logliks=base_terms,
        clouds=clouds,
        loglik_dual=total,
    )


def prepare_baseline(model: PompModel, data: Dataset, phi, config: MopConfig) -> Baseline:
    """First pass at the baseline parameter: run the filter at ``phi`` with
    the configured seed and record measurement log-densities and indices."""
    J, seed = config.J, config.seed
    v = model.params.coerce_unconstrained(phi)
    theta_c = model.params.constants(v)
    state = model.rinit(theta_c, J, prng.NoiseStream(seed, 0, prng.Purpose.INIT, np.arange(J)))
    log_g_list: list[np.ndarray] = []
    idx_list: list[np.ndarray] = []
    terms = np.zeros(len(data))
    log_j = float(np.log(J))
    t_prev = model.t0
    for n, (t, y) in enumerate(zip(data.times, data.observations), start=1):
        state = model.rprocess_step(state, t_prev, t, theta_c, _proc_noise(seed, n, J))
        log_g = np.asarray(adcore.value_of(model.dmeasure_log(y, state, theta_c)),
                           dtype=float)
        if not np.isfinite(np.max(log_g)):
            raise DegenerateFilterError(n, "baseline pass degenerate")
        idx = offparam_indices_log(log_g, _resample_key(seed, n))
        log_g_list.append(log_g)
        idx_list.append(idx)
        terms[n - 1] = adcore.logsumexp_values(log_g) - log_j
        state = _gather_state(state, idx)
        t_prev = t
    return Baseline(log_g_list, idx_list, terms, float(np.sum(terms)))


def run_mop(model: PompModel, data: Dataset, theta, config: MopConfig,
            phi=None, baseline: Baseline | None = None,
            save_clouds: bool = False) -> FilterOutput:
    """Off-parameter filter at ``theta``.

    With ``phi`` (and no precomputed ``baseline``) a first pass runs at
    ``phi`` under the same seed.  With neither, the filter runs in
    single-pass mode (theta is its own baseline via stop-gradient).
    Values only; use :func:`mop_loglik_and_score` for derivatives.
    """
    v = model.params.coerce_unconstrained(theta)
    if baseline is None and phi is not None:
        v_phi = model.params.coerce_unconstrained(phi)
        if not np.array_equal(v_phi, v):
            baseline = prepare_baseline(model, data, phi, config)
    theta_map = model.params.constants(v)
    return _mop_pass(model, data, theta_map, config, baseline, save_clouds)


def mop_loglik_and_score(model: PompModel, data: Dataset, theta, config: MopConfig,
                         save_clouds: bool = False) -> FilterOutput:
    """Single-pass filter at ``theta`` with reverse-mode differentiation.

    The score is reported in unconstrained coordinates; the chain rule
    through the parameter transforms happens on the tape.
    """
    v = model.params.coerce_unconstrained(theta)
    tape = Tape()
    theta_map = model.params.lift(v, tape)
    out = _mop_pass(model, data, theta_map, config, None, save_clouds)
    out.score = adcore.backward(tape, out.loglik_dual)
    return out


def mop_score(model: PompModel, data: Dataset, theta, config: MopConfig) -> np.ndarray:
    """Score estimate at ``theta`` (single-pass mode)."""
    return mop_loglik_and_score(model, data, theta, config).score


def fixed_seed_fd_score(model: PompModel, data: Dataset, theta, config: MopConfig,
                        h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the filter log-likelihood, holding the
    seed and the baseline pass fixed (baseline = ``theta``).

    A direct validation of the smooth construction: because the indices
    and noise never move, the perturbed evaluations differentiate the same
    function the tape differentiates.
    """
    if h <= 0:
        raise UsageError("h must be positive")
    v = model.params.coerce_unconstrained(theta)
    baseline = prepare_baseline(model, data, v, config)
    g = np.zeros(v.size)
    for i in range(v.size):
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        lp = _mop_pass(model, data, model.params.constants(vp), config, baseline).loglik
        lm = _mop_pass(model, data, model.params.constants(vm), config, baseline).loglik
        g[i] = (lp - lm) / (2.0 * h)
    return g


def run_replicates(fn: Callable[[int], object], n: int, workers: int = 1) -> list:
    """Evaluate ``fn(i)`` for i in 0..n-1, optionally on a thread pool.

    Results are collected by index, so the output is identical for any
    worker count (every replicate is a pure function of its index).
    """
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


@dataclass
class SweepRow:
    """Per-(alpha, coordinate) summary of a replicated score experiment."""

    alpha: float
    coord: int
    name: str
    mean: float
    variance: float
    bias: float
    mse: float


def score_sweep(model: PompModel, data: Dataset, theta, alphas, J: int,
                replicates: int, seed0: int, reference_score: np.ndarray,
                estimator: str = "before_resampling",
                workers: int = 1) -> list[SweepRow]:
    """Replicated single-pass score estimates across discount factors.

    Replicate r of every alpha uses the same derived seed, so comparisons
    across alphas are paired.  Reports per-coordinate empirical mean,
    variance, bias and MSE against the supplied reference score.

    Raises:
        UsageError: fewer than 2 replicates.
    """
    if replicates < 2:
        raise UsageError("score_sweep needs at least 2 replicates")
    reference_score = np.asarray(reference_score, dtype=float)
    v = model.params.coerce_unconstrained(theta)
    names = model.params.names
    rows: list[SweepRow] = []
    for alpha in alphas:
        cfg = MopConfig(J=J, alpha=float(alpha), estimator=estimator)

        def one(r: int, cfg=cfg):
            return mop_score(model, data, v, cfg.with_seed(prng.derive_seed(seed0, r)))

        scores = np.stack(run_replicates(one, replicates, workers))
        mean = scores.mean(axis=0)
        var = scores.var(axis=0, ddof=1)
        bias = mean - reference_score
        mse = np.mean((scores - reference_score) ** 2, axis=0)
        for c in range(v.size):
            rows.append(SweepRow(float(alpha), c, names[c], float(mean[c]),
                                 float(var[c]), float(bias[c]), float(mse[c])))
    return rows
