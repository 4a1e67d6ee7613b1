"""Deterministic, counter-based random streams.

Every draw is addressed by ``(seed, time_index, particle_index, purpose,
counter)`` and computed as a keyed hash of that tuple, so fixing the seed
fixes every draw independently of evaluation order or thread scheduling.
Replaying a filter at a different parameter value with the same seed
therefore reuses exactly the same noise, which is what the two-pass
off-parameter filter requires.

Not cryptographic; the mixer is the splitmix64 finalizer applied per
tuple component, which is plenty for Monte Carlo work.
"""

from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple

import numpy as np
from scipy.special import ndtri

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = float(2.0 ** -53)


class Purpose(IntEnum):
    """Separates streams so draws are never reused across roles."""

    PROCESS = 0
    RESAMPLE = 1
    INIT = 2
    PERTURB = 3
    PROPOSAL = 4


class StreamKey(NamedTuple):
    """Address of one random stream.

    ``particle_index`` may be an integer or an integer array; an array
    yields one independent stream per particle in a single call.
    """

    seed: int
    time_index: int
    particle_index: object
    purpose: Purpose


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _bits(key: StreamKey, counter) -> np.ndarray:
    """64 hashed bits per (key, counter) combination."""
    with np.errstate(over="ignore"):
        j = np.asarray(key.particle_index, dtype=np.uint64)
        c = np.asarray(counter, dtype=np.uint64)
        h = _mix(np.uint64(int(key.seed) & 0xFFFFFFFFFFFFFFFF) ^ _GOLD)
        h = _mix(h + _GOLD * (np.uint64(int(key.time_index)) + np.uint64(1)))
        h = _mix(h + _GOLD * (j + np.uint64(2)))
        h = _mix(h + _GOLD * (np.uint64(int(key.purpose)) + np.uint64(3)))
        h = _mix(h + _GOLD * (c + np.uint64(5)))
    return h


def uniform(key: StreamKey, counter=0):
    """Deterministic uniform draw(s) in ``[0, 1)`` for (key, counter)."""
    bits = _bits(key, counter)
    u = (bits >> np.uint64(11)).astype(np.float64) * _INV53
    return float(u) if u.ndim == 0 else u


def normal_icdf(u):
    """Inverse standard-normal CDF (double-precision library routine)."""
    return ndtri(u)


def normal(key: StreamKey, counter=0):
    """Deterministic standard-normal draw(s) via the inverse CDF.

    The underlying uniform is shifted onto bin centers of ``(0, 1)`` so the
    inverse CDF never sees an endpoint.  Draws carry no dependence on any
    model parameter: differentiating a simulator built on them leaves the
    noise fixed (reparameterized simulation).
    """
    bits = _bits(key, counter)
    u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53
    z = ndtri(u)
    return float(z) if np.ndim(z) == 0 else z


def derive_seed(seed: int, *indices: int) -> int:
    """A child seed deterministically derived from ``seed`` and indices."""
    with np.errstate(over="ignore"):
        h = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        for ix in indices:
            h = _mix(h ^ (_GOLD * (np.uint64(int(ix) & 0xFFFFFFFFFFFFFFFF) + np.uint64(7))))
    return int(h)


class NoiseStream:
    """Per-(time step, purpose) noise source for a population of particles.

    ``normal(counter)`` returns one draw per particle; repeated calls with
    distinct counters give independent draws.  The object is stateless
    apart from its address, so identical addresses reproduce identical
    draws in any call order.
    """

    __slots__ = ("key",)

    def __init__(self, seed: int, time_index: int, purpose: Purpose, particles):
        self.key = StreamKey(seed, time_index, particles, purpose)

    def normal(self, counter=0):
        return normal(self.key, counter)

    def uniform(self, counter=0):
        return uniform(self.key, counter)
