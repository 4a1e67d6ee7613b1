"""Model abstraction: parameter transforms, datasets and the POMP contract.

A model is defined by an initializer, a one-step simulator written in
:mod:`pompad.adcore` ops (so parameter gradients flow through it at fixed
noise), a measurement log-density, and a per-parameter transform between
natural and unconstrained coordinates.  Optimization, perturbation and
sampling all happen in unconstrained space; models see natural values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import adcore, prng
from ..adcore import Dual, Tape
from ..errors import UsageError

__all__ = [
    "Param", "ParamSet", "Theta", "Dataset", "PompModel",
    "load_dataset", "save_dataset",
]


@dataclass(frozen=True)
class Param:
    """One estimable parameter and its natural-space domain.

    ``transform`` is one of ``identity`` (unbounded), ``log`` (positive) or
    ``logit`` (box ``(lo, hi)``).
    """

    name: str
    transform: str = "identity"
    lo: float = 0.0
    hi: float = 1.0

    def to_unconstrained(self, x: float) -> float:
        if self.transform == "identity":
            return float(x)
        if self.transform == "log":
            if x <= 0:
                raise UsageError(f"{self.name}={x} must be positive for log transform")
            return float(np.log(x))
        if self.transform == "logit":
            if not (self.lo < x < self.hi):
                raise UsageError(
                    f"{self.name}={x} outside ({self.lo}, {self.hi}) for logit transform")
            return float(np.log((x - self.lo) / (self.hi - x)))
        raise UsageError(f"unknown transform {self.transform!r}")

    def to_natural(self, u):
        if self.transform == "identity":
            return u
        if self.transform == "log":
            with np.errstate(over="ignore"):  # inf is a valid trial value
                return np.exp(u)
        if self.transform == "logit":
            s = 0.5 * (1.0 + np.tanh(0.5 * u))
            return self.lo + (self.hi - self.lo) * s
        raise UsageError(f"unknown transform {self.transform!r}")

    def to_natural_dual(self, u: Dual) -> Dual:
        if self.transform == "identity":
            return u
        if self.transform == "log":
            return adcore.exp(u)
        if self.transform == "logit":
            s = 0.5 * (1.0 + adcore.tanh(0.5 * u))
            return self.lo + (self.hi - self.lo) * s
        raise UsageError(f"unknown transform {self.transform!r}")

    def dnatural_dunconstrained(self, x: float) -> float:
        """Jacobian of the natural value with respect to its unconstrained
        coordinate, evaluated at natural value ``x``."""
        if self.transform == "identity":
            return 1.0
        if self.transform == "log":
            return float(x)
        if self.transform == "logit":
            return float((x - self.lo) * (self.hi - x) / (self.hi - self.lo))
        raise UsageError(f"unknown transform {self.transform!r}")


class ParamSet:
    """Ordered free parameters plus fixed values, with coordinate maps."""

    def __init__(self, free: Sequence[Param], fixed: Mapping[str, float] | None = None):
        self.free = tuple(free)
        self.names = tuple(p.name for p in self.free)
        if len(set(self.names)) != len(self.names):
            raise UsageError("duplicate parameter names")
        self.fixed = dict(fixed or {})
        overlap = set(self.names) & set(self.fixed)
        if overlap:
            raise UsageError(f"parameters both free and fixed: {sorted(overlap)}")

    @property
    def p(self) -> int:
        return len(self.free)

    def to_unconstrained(self, natural: Mapping[str, float]) -> np.ndarray:
        return np.array([sp.to_unconstrained(natural[sp.name]) for sp in self.free])

    def to_natural(self, v: np.ndarray) -> dict[str, float]:
        out = {sp.name: float(sp.to_natural(float(u))) for sp, u in zip(self.free, v)}
        out.update(self.fixed)
        return out

    def lift(self, v: np.ndarray, tape: Tape) -> dict[str, Dual]:
        """Lift unconstrained coordinates onto a tape and map to natural
        space with Dual ops, so scores come out in unconstrained coordinates."""
        out: dict[str, Dual] = {}
        for sp, u in zip(self.free, v):
            out[sp.name] = sp.to_natural_dual(adcore.lift(float(u), tape))
        for name, val in self.fixed.items():
            out[name] = adcore.constant(val)
        return out

    def constants(self, v: np.ndarray) -> dict[str, Dual]:
        """Natural values as constant Duals (no tape)."""
        out = {sp.name: adcore.constant(sp.to_natural(float(u)))
               for sp, u in zip(self.free, v)}
        for name, val in self.fixed.items():
            out[name] = adcore.constant(val)
        return out

    def natural_arrays(self, V: np.ndarray) -> dict[str, Dual]:
        """Per-particle natural values from a (J, p) unconstrained matrix,
        as constant Duals holding (J,) arrays."""
        out = {sp.name: adcore.constant(sp.to_natural(V[:, i]))
               for i, sp in enumerate(self.free)}
        for name, val in self.fixed.items():
            out[name] = adcore.constant(val)
        return out

    def coerce_unconstrained(self, theta) -> np.ndarray:
        """Accept a natural-space mapping, a Theta or a raw coordinate vector."""
        if isinstance(theta, Theta):
            return np.asarray(theta.unconstrained, dtype=float)
        if isinstance(theta, Mapping):
            return self.to_unconstrained(theta)
        return np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class Theta:
    """A parameter point carried in both coordinate systems."""

    params: ParamSet
    unconstrained: np.ndarray

    @classmethod
    def from_natural(cls, params: ParamSet, natural: Mapping[str, float]) -> "Theta":
        return cls(params, params.to_unconstrained(natural))

    @property
    def natural(self) -> dict[str, float]:
        return self.params.to_natural(self.unconstrained)


@dataclass(frozen=True)
class Dataset:
    """Observation times (strictly increasing, in years) and values."""

    times: np.ndarray
    observations: np.ndarray
    name: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.observations, dtype=float)
        if t.shape != y.shape:
            raise UsageError("times and observations must have equal length")
        if t.size and np.any(np.diff(t) <= 0):
            raise UsageError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "observations", y)

    def __len__(self) -> int:
        return self.times.size


def load_dataset(path, name: str = "") -> Dataset:
    """Read a `time,obs` CSV."""
    times, obs = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "time" not in reader.fieldnames \
                or "obs" not in reader.fieldnames:
            raise UsageError(f"{path}: expected header 'time,obs'")
        for row in reader:
            times.append(float(row["time"]))
            obs.append(float(row["obs"]))
    return Dataset(np.array(times), np.array(obs), name or str(path))


def save_dataset(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "obs"])
        for t, y in zip(data.times, data.observations):
            writer.writerow([repr(float(t)), repr(float(y))])


class PompModel:
    """Base contract for a partially observed Markov process model.

    Implementations must be pure given (state, noise address, theta): the
    same inputs always produce the same outputs, which is what makes a
    fixed random seed replayable at a different parameter value.

    State is a dict of named components; each component is a Dual holding
    a (J,)-array (or scalar for single-trajectory simulation).  ``theta``
    is a dict of named Duals; entries may hold scalars (shared across
    particles) or (J,)-arrays (per-particle values, used by the perturbed
    filter).
    """

    name: str = "pomp"
    state_names: tuple[str, ...] = ()
    params: ParamSet
    t0: float = 0.0
    ivp_names: tuple[str, ...] = ()

    def rinit(self, theta: Mapping[str, Dual], J: int, noise: prng.NoiseStream):
        raise NotImplementedError

    def rprocess_step(self, state, t_prev: float, t_next: float,
                      theta: Mapping[str, Dual], noise: prng.NoiseStream):
        raise NotImplementedError

    def dmeasure_log(self, y: float, state, theta: Mapping[str, Dual]) -> Dual:
        raise NotImplementedError

    def rmeasure(self, state, theta: Mapping[str, Dual], noise: prng.NoiseStream):
        raise NotImplementedError

    def default_times(self, n_obs: int) -> np.ndarray:
        return self.t0 + np.arange(1, n_obs + 1, dtype=float)

    def simulate(self, theta, n_obs: int, seed: int, times: np.ndarray | None = None,
                 name: str = "") -> Dataset:
        """Draw one trajectory plus measurements at the observation times."""
        if times is None:
            times = self.default_times(n_obs)
        v = self.params.coerce_unconstrained(theta)
        theta_c = self.params.constants(v)
        state = self.rinit(theta_c, 1, prng.NoiseStream(seed, 0, prng.Purpose.INIT, np.arange(1)))
        t_prev = self.t0
        ys = np.zeros(len(times))
        for n, t in enumerate(times, start=1):
            noise = prng.NoiseStream(seed, n, prng.Purpose.PROCESS, np.arange(1))
            state = self.rprocess_step(state, t_prev, t, theta_c, noise)
            meas_noise = prng.NoiseStream(seed, n, prng.Purpose.PROPOSAL, np.arange(1))
            y = adcore.value_of(self.rmeasure(state, theta_c, meas_noise))
            ys[n - 1] = float(np.asarray(y).reshape(-1)[0])
            t_prev = t
        return Dataset(np.asarray(times, dtype=float), ys,
                       name or f"{self.name}-sim")
