"""Cholera transmission model with seasonal forcing and an environmental
reservoir.

An SIR model whose recovered class is split into three compartments of
waning immunity, driven by stochastic differential equations that are
integrated with Euler-Maruyama substeps between monthly observations.
The force of infection combines human-to-human transmission, seasonal on a
six-function periodic spline basis and subject to a long-run trend, with a
seasonal environmental reservoir.  Observed monthly death counts are
normally distributed around the accumulated model deaths with a standard
deviation proportional to the count.

Eighteen parameters are estimable: five positive rates (gamma, eps, m,
sigma, tau), the transmission trend, six seasonal transmission
coefficients and six reservoir coefficients.  Initial compartment
fractions and the population demography are held fixed; they are not part
of the estimated vector.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .. import adcore, prng
from ..adcore import Dual
from ..errors import ParameterDomainError, SimulationBlowupError
from .core import Param, ParamSet, PompModel
from .splines import N_BASIS, spline_values

_LOG_2PI = float(np.log(2.0 * np.pi))

N_IMMUNE_CLASSES = 3
POPULATION_DEATH_RATE = 0.02  # per year, fixed

# Soft lower clamp keeping compartments positive without killing gradients:
# hard clamps produce zero-gradient plateaus, so we use a softplus ramp.
# Width is a power of two (exact scaling) small enough that the value
# injected at zero (~width * log 2) is far below one person.
_CLAMP_FLOOR = 1e-10
_CLAMP_WIDTH = 2.0 ** -10


def soft_clamp(x):
    """Smooth approximation of max(x, floor); identity for x >> width."""
    return _CLAMP_FLOOR + _CLAMP_WIDTH * adcore.softplus(
        (x - _CLAMP_FLOOR) / _CLAMP_WIDTH)


def cholera_dmeasure(y, M, tau) -> Dual:
    """Monthly-death log-density: N(y; M, (tau * max(M, 1))^2).

    The floor inside the standard deviation keeps the density proper when
    the simulated epidemic dies out (M -> 0 would otherwise give a
    zero-variance Gaussian).
    """
    tau_min = np.min(np.asarray(adcore.value_of(tau)))
    if tau_min <= 0:
        raise ParameterDomainError(f"tau must be positive, got {tau_min}")
    sd = tau * adcore.maximum(M, 1.0)
    r = y - M
    return -0.5 * _LOG_2PI - adcore.log(sd) - (r * r) / (2.0 * sd * sd)


def _beta_names():
    return tuple(f"beta{j}" for j in range(1, N_BASIS + 1))


def _omega_names():
    return tuple(f"omega{j}" for j in range(1, N_BASIS + 1))


class CholeraModel(PompModel):
    """Six-compartment cholera model: S, I, R1..R3 and the running death
    count M for the current observation interval."""

    name = "cholera"
    state_names = ("S", "I", "R1", "R2", "R3", "M")

    def __init__(self, population: float = 300_000.0, dt: float = 1.0 / 365.25,
                 t0: float = 0.0,
                 init_fractions: tuple[float, ...] = (0.62, 0.005, 0.125, 0.125, 0.125),
                 population_series: tuple[np.ndarray, np.ndarray] | None = None):
        free = [Param("gamma", "log"), Param("eps", "log"), Param("m", "log"),
                Param("sigma", "log"), Param("tau", "log"), Param("btrend")]
        free += [Param(nm) for nm in _beta_names()]
        free += [Param(nm) for nm in _omega_names()]
        self.params = ParamSet(free, {"delta": POPULATION_DEATH_RATE})
        if dt <= 0:
            raise ParameterDomainError("dt must be positive")
        if len(init_fractions) != 5 or min(init_fractions) < 0 or sum(init_fractions) > 1.0 + 1e-9:
            raise ParameterDomainError("init_fractions must be 5 nonnegative values summing <= 1")
        self.population = float(population)
        self.dt = float(dt)
        self.t0 = float(t0)
        self.init_fractions = tuple(float(f) for f in init_fractions)
        self.population_series = population_series

    @staticmethod
    def default_theta() -> dict[str, float]:
        """A stable synthetic regime with pronounced seasonality."""
        theta = {
            "gamma": 8.0, "eps": 0.5, "m": 5.0, "sigma": 0.15, "tau": 0.25,
            "btrend": -0.005,
        }
        seasonal = [0.6, -0.3, 0.5, -0.6, 0.4, -0.2]
        for j, amp in enumerate(seasonal, start=1):
            theta[f"beta{j}"] = 3.2 + amp
        reservoir = [0.3, -0.4, 0.5, -0.3, 0.2, -0.4]
        for j, amp in enumerate(reservoir, start=1):
            theta[f"omega{j}"] = -7.3 + amp
        return theta

    def _population_at(self, t: float) -> tuple[float, float]:
        """(P(t), dP/dt) from the covariate series, or the constant default."""
        if self.population_series is None:
            return self.population, 0.0
        times, values = self.population_series
        P = float(np.interp(t, times, values))
        h = 1e-6
        dP = (np.interp(t + h, times, values) - np.interp(t - h, times, values)) / (2 * h)
        return P, float(dP)

    def rinit(self, theta, J, noise):
        P0, _ = self._population_at(self.t0)
        fS, fI, f1, f2, f3 = self.init_fractions
        full = lambda f: adcore.constant(np.full(J, f * P0))
        return {"S": full(fS), "I": full(fI), "R1": full(f1), "R2": full(f2),
                "R3": full(f3), "M": adcore.constant(np.zeros(J))}

    def rprocess_step(self, state, t_prev, t_next, theta, noise):
        k = N_IMMUNE_CLASSES
        gamma, eps, m, sigma, delta = (theta["gamma"], theta["eps"], theta["m"],
                                       theta["sigma"], theta["delta"])
        betas = [theta[nm] for nm in _beta_names()]
        omegas = [theta[nm] for nm in _omega_names()]

        nsub = max(1, int(round((t_next - t_prev) / self.dt)))
        h = (t_next - t_prev) / nsub
        sqrt_h = float(np.sqrt(h))

        S, I = state["S"], state["I"]
        R = [state["R1"], state["R2"], state["R3"]]
        M = adcore.constant(0.0 * adcore.value_of(state["M"]))  # fresh accumulator

        for i in range(nsub):
            t = t_prev + i * h
            P, dPdt = self._population_at(t)
            s = spline_values(t)

            seas_beta = betas[0] * s[0]
            seas_omega = omegas[0] * s[0]
            for j in range(1, N_BASIS):
                seas_beta = seas_beta + betas[j] * s[j]
                seas_omega = seas_omega + omegas[j] * s[j]
            # force of infection: seasonal human transmission plus reservoir
            lam = adcore.exp(theta["btrend"] * (t - self.t0) + seas_beta) * (I / P) \
                + adcore.exp(seas_omega)

            dB = sqrt_h * noise.normal(i)
            stoch = sigma * (S * I / P) * dB

            infections = lam * S
            outflow_I = (m + delta + gamma) * I
            dS = (k * eps * R[k - 1] + delta * (P - S) - infections) * h \
                + dPdt * h - stoch
            dI = (infections - outflow_I) * h + stoch
            dR = [(gamma * I - (k * eps + delta) * R[0]) * h]
            for c in range(1, k):
                dR.append((k * eps * R[c - 1] - (k * eps + delta) * R[c]) * h)

            M = M + gamma * I * h
            S = soft_clamp(S + dS)
            I = soft_clamp(I + dI)
            R = [soft_clamp(R[c] + dR[c]) for c in range(k)]

        new_state = {"S": S, "I": I, "R1": R[0], "R2": R[1], "R3": R[2], "M": M}
        for name, comp in new_state.items():
            if not np.all(np.isfinite(adcore.value_of(comp))):
                raise SimulationBlowupError(name, t_next)
        return new_state

    def dmeasure_log(self, y, state, theta):
        return cholera_dmeasure(y, state["M"], theta["tau"])

    def rmeasure(self, state, theta, noise):
        M = state["M"]
        sd = theta["tau"] * adcore.maximum(M, 1.0)
        return M + sd * noise.normal(0)

    def default_times(self, n_obs: int) -> np.ndarray:
        return self.t0 + np.arange(1, n_obs + 1, dtype=float) / 12.0
