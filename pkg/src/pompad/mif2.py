"""Iterated filtering: a particle filter over randomly perturbed
parameters with geometric cooling.

Each particle carries its own parameter vector; before every observation
time the vectors receive independent normal perturbations (in
unconstrained coordinates, so natural-space constraints can never be
violated), and particles resample together with their parameters.  Over
iterations the perturbation scale cools geometrically, concentrating the
swarm near high-likelihood parameters.  Used both standalone and as the
warm start for gradient refinement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import adcore, prng
from .errors import DegenerateFilterError, UsageError
from .mop import MopConfig, _gather_state, _proc_noise, _resample_key
from .pomp import Dataset, ParamSet, PompModel
from .resample import systematic_resample

__all__ = [
    "CoolingSchedule", "If2Result", "if2_iteration", "run_if2",
    "swarm_from_theta", "swarm_from_box", "save_swarm", "load_swarm",
]


@dataclass(frozen=True)
class CoolingSchedule:
    """Geometric cooling: iteration ``m`` perturbs with sd ``sigma0 * c^m``.

    ``sigma0`` may be a scalar (shared scale) or a per-parameter vector.
    """

    sigma0: object = 0.02
    multiplier: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.multiplier <= 1.0:
            raise UsageError("cooling multiplier must be in (0, 1]")
        if np.any(np.asarray(self.sigma0) < 0):
            raise UsageError("sigma0 must be nonnegative")

    def sd(self, m: int) -> np.ndarray:
        return np.asarray(self.sigma0, dtype=float) * self.multiplier ** m


def swarm_from_theta(params: ParamSet, theta, J: int) -> np.ndarray:
    """A (J, p) swarm of identical rows at ``theta``."""
    v = params.coerce_unconstrained(theta)
    return np.tile(v, (J, 1))


def swarm_from_box(params: ParamSet, box: Mapping[str, tuple], J: int,
                   seed: int) -> np.ndarray:
    """Uniform draws from a natural-space box, mapped to unconstrained
    coordinates.  Used to initialize global searches."""
    key = prng.StreamKey(seed, 0, np.arange(J), prng.Purpose.PROPOSAL)
    V = np.zeros((J, params.p))
    for i, sp in enumerate(params.free):
        lo, hi = box[sp.name]
        u = prng.uniform(key, i)
        naturals = lo + (hi - lo) * u
        V[:, i] = [sp.to_unconstrained(x) for x in naturals]
    return V


def if2_iteration(model: PompModel, data: Dataset, swarm: np.ndarray,
                  sd: np.ndarray, seed: int) -> tuple[np.ndarray, float]:
    """One filtering pass with parameter perturbations.

    Args:
        swarm: (J, p) unconstrained parameter matrix, one row per particle.
        sd: per-parameter perturbation standard deviations (may be zero).

    Returns:
        (end-of-pass swarm, log-likelihood estimate of this pass)
    """
    params = model.params
    thetas = np.array(swarm, dtype=float)
    J = thetas.shape[0]
    if thetas.shape[1] != params.p:
        raise UsageError("swarm width does not match the free parameter count")
    sd = np.broadcast_to(np.asarray(sd, dtype=float), (params.p,))

    ivp = set(model.ivp_names)
    regular_cols = [i for i, nm in enumerate(params.names) if nm not in ivp]
    ivp_cols = [i for i, nm in enumerate(params.names) if nm in ivp]

    def perturb(cols, time_index):
        if not cols:
            return
        key = prng.StreamKey(seed, time_index, np.arange(J), prng.Purpose.PERTURB)
        for c in cols:
            thetas[:, c] += sd[c] * prng.normal(key, c)

    # initial-value parameters move only at t0 of each pass
    perturb(ivp_cols, 0)
    state = model.rinit(params.natural_arrays(thetas), J,
                        prng.NoiseStream(seed, 0, prng.Purpose.INIT, np.arange(J)))

    loglik = 0.0
    log_j = float(np.log(J))
    t_prev = model.t0
    for n, (t, y) in enumerate(zip(data.times, data.observations), start=1):
        perturb(regular_cols, n)
        theta_map = params.natural_arrays(thetas)
        state = model.rprocess_step(state, t_prev, t, theta_map, _proc_noise(seed, n, J))
        log_g = np.asarray(adcore.value_of(model.dmeasure_log(y, state, theta_map)),
                           dtype=float)
        loglik += adcore.logsumexp_values(log_g) - log_j
        try:
            idx = systematic_resample(log_g, prng.uniform(_resample_key(seed, n), 0))
        except DegenerateFilterError:
            raise DegenerateFilterError(n, "all measurement weights vanished")
        state = _gather_state(state, idx)
        thetas = thetas[idx]
        t_prev = t
    return thetas, float(loglik)


@dataclass
class If2Result:
    swarm: np.ndarray
    theta_unconstrained: np.ndarray
    theta_natural: dict[str, float]
    loglik_trace: np.ndarray


def run_if2(model: PompModel, data: Dataset, swarm0: np.ndarray,
            schedule: CoolingSchedule, iterations: int, seed: int) -> If2Result:
    """Iterate the perturbed filter with cooling; the point estimate is the
    unconstrained swarm mean, reported in natural space."""
    swarm = np.array(swarm0, dtype=float)
    trace = np.zeros(iterations)
    for m in range(iterations):
        swarm, ll = if2_iteration(model, data, swarm, schedule.sd(m),
                                  prng.derive_seed(seed, m))
        trace[m] = ll
    mean_u = swarm.mean(axis=0)
    return If2Result(swarm, mean_u, model.params.to_natural(mean_u), trace)


def save_swarm(params: ParamSet, swarm: np.ndarray, path) -> None:
    """Checkpoint CSV: p named columns, J rows, unconstrained scale."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(params.names)
        for row in swarm:
            writer.writerow([repr(float(x)) for x in row])


def load_swarm(params: ParamSet, path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != params.names:
            raise UsageError(f"{path}: swarm columns {header} do not match "
                             f"model parameters {params.names}")
        rows = [[float(x) for x in row] for row in reader]
    if not rows:
        raise UsageError(f"{path}: empty swarm")
    return np.array(rows)
