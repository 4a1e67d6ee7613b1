"""Fast end-to-end identity checks, runnable from the CLI.

These are the exact structural identities of the off-parameter filter on
the linear-Gaussian model: reduction to the bootstrap filter at equal
parameters, agreement of the differentiated filter with the two
closed-form score estimators, and equivalence of the lag-1 truncated
variant with the memoryless discount.
"""

from __future__ import annotations

import numpy as np

from .mop import MopConfig, mop_score, run_bootstrap, run_mop
from .oracle import lgssm_reference_scores
from .pomp import LinearGaussianModel

__all__ = ["run_selftest"]

_THETA = {"a": 0.8, "sigma": 1.0, "tau": 1.0}


def _fixture(n_obs: int = 20, seed: int = 11):
    model = LinearGaussianModel()
    data = model.simulate(_THETA, n_obs, seed=seed)
    return model, data


def run_selftest(verbose: bool = True) -> list[tuple[str, bool, str]]:
    """Run the identity suite; returns (name, passed, detail) triples."""
    results: list[tuple[str, bool, str]] = []
    model, data = _fixture()

    # bootstrap reduction, bitwise, at several discount factors
    for alpha in (0.0, 0.5, 0.97, 1.0):
        for estimator in ("before_resampling", "after_resampling"):
            cfg = MopConfig(J=200, alpha=alpha, seed=5, estimator=estimator)
            boot = run_bootstrap(model, data, _THETA, cfg)
            mop = run_mop(model, data, _THETA, cfg)
            ok = boot.loglik == mop.loglik and np.array_equal(
                boot.cond_logliks, mop.cond_logliks)
            results.append((f"reduction alpha={alpha} {estimator.split('_')[0]}",
                            ok, f"boot={boot.loglik:.12f} mop={mop.loglik:.12f}"))

    # differentiated filter vs closed-form estimators
    for seed in (1, 2, 3, 4, 5):
        cfg0 = MopConfig(J=100, alpha=0.0, seed=seed, estimator="after_resampling")
        cfg1 = MopConfig(J=100, alpha=1.0, seed=seed, estimator="after_resampling")
        ref = lgssm_reference_scores(model, data, _THETA, J=100, seed=seed)
        s0 = mop_score(model, data, _THETA, cfg0)
        s1 = mop_score(model, data, _THETA, cfg1)
        e0 = float(np.max(np.abs(s0 - ref["memoryless"])))
        e1 = float(np.max(np.abs(s1 - ref["ancestral"])))
        results.append((f"memoryless score form seed={seed}", e0 < 1e-8, f"max err {e0:.2e}"))
        results.append((f"ancestral score form seed={seed}", e1 < 1e-8, f"max err {e1:.2e}"))

    # lag-1 truncation reproduces the memoryless score
    cfg0 = MopConfig(J=100, alpha=0.0, seed=7, estimator="after_resampling")
    cfgk = MopConfig(J=100, alpha=1.0, seed=7, estimator="after_resampling",
                     truncation_lag=1)
    s0 = mop_score(model, data, _THETA, cfg0)
    sk = mop_score(model, data, _THETA, cfgk)
    ek = float(np.max(np.abs(s0 - sk)))
    results.append(("lag-1 equals memoryless score", ek < 1e-8, f"max err {ek:.2e}"))

    if verbose:
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return results
