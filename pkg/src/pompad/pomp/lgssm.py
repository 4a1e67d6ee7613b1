"""Linear-Gaussian state-space model.

    x_n = a * x_{n-1} + sigma * z_n,      x_0 ~ N(mu0, s0^2)
    y_n = x_n + tau * eps_n

Exists as the verification workhorse: its exact likelihood, score and MLE
are available from :mod:`pompad.oracle`, so every particle-based estimate
built here can be checked against a closed-form reference.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .. import adcore, prng
from ..adcore import Dual
from ..errors import ParameterDomainError
from .core import Param, ParamSet, PompModel

_LOG_2PI = float(np.log(2.0 * np.pi))

_DEFAULT_FIXED = {"a": 0.8, "sigma": 1.0, "tau": 1.0, "mu0": 0.0, "s0": 1.0}

_PARAM_SPECS = {
    "a": Param("a", "logit", -1.0, 1.0),
    "sigma": Param("sigma", "log"),
    "tau": Param("tau", "log"),
    "mu0": Param("mu0", "identity"),
    "s0": Param("s0", "log"),
}


def lgssm_step(x, theta: Mapping[str, Dual], z):
    """One transition: ``a*x + sigma*z`` with a parameter-free draw ``z``.

    Differentiable in (a, sigma, x); the gradient with respect to sigma is
    the raw draw itself.
    """
    return theta["a"] * x + theta["sigma"] * z


def lgssm_dmeasure(y, x, tau) -> Dual:
    """Gaussian measurement log-density ``N(y; x, tau^2)``."""
    tau_val = np.min(np.asarray(adcore.value_of(tau)))
    if tau_val <= 0:
        raise ParameterDomainError(f"tau must be positive, got {tau_val}")
    r = y - x
    return -0.5 * _LOG_2PI - adcore.log(tau) - (r * r) / (2.0 * tau * tau)


class LinearGaussianModel(PompModel):
    """LG-SSM with a configurable split of free vs fixed parameters."""

    name = "lgssm"
    state_names = ("x",)

    def __init__(self, free=("a", "sigma", "tau"), fixed: Mapping[str, float] | None = None):
        fixed_vals = dict(_DEFAULT_FIXED)
        fixed_vals.update(fixed or {})
        for nm in free:
            if nm not in _PARAM_SPECS:
                raise ParameterDomainError(f"unknown lgssm parameter {nm!r}")
            fixed_vals.pop(nm, None)
        self.params = ParamSet([_PARAM_SPECS[nm] for nm in free], fixed_vals)
        self.ivp_names = tuple(nm for nm in free if nm in ("mu0", "s0"))
        self.t0 = 0.0

    def rinit(self, theta, J, noise):
        z0 = noise.normal(0)
        return {"x": theta["mu0"] + theta["s0"] * z0}

    def rprocess_step(self, state, t_prev, t_next, theta, noise):
        return {"x": lgssm_step(state["x"], theta, noise.normal(0))}

    def dmeasure_log(self, y, state, theta):
        return lgssm_dmeasure(y, state["x"], theta["tau"])

    def rmeasure(self, state, theta, noise):
        return state["x"] + theta["tau"] * noise.normal(0)
