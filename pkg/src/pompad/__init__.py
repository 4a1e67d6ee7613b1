"""pompad: plug-and-play likelihood inference for partially observed
Markov processes, built on a differentiable particle filter.

The pieces, bottom up:

* :mod:`pompad.adcore` — scalar/array reverse-mode AD tape with
  stop-gradient;
* :mod:`pompad.prng` — counter-based random streams (replayable noise);
* :mod:`pompad.resample` — systematic and off-parameter resampling;
* :mod:`pompad.pomp` — the model contract plus the linear-Gaussian and
  cholera benchmark models;
* :mod:`pompad.mop` — the off-parameter discounted-weight filter, its
  score estimates and bias/variance sweeps;
* :mod:`pompad.mif2` — iterated filtering with perturbed parameters;
* :mod:`pompad.ifad` — hybrid search: iterated-filtering warm start plus
  gradient refinement;
* :mod:`pompad.bayes` — KDE empirical prior, No-U-Turn sampling,
  diagnostics;
* :mod:`pompad.oracle` — exact Kalman references and a grid posterior;
* :mod:`pompad.harness` — command-line interface and experiment
  campaigns.
"""

from . import adcore, bayes, harness, ifad, mif2, mop, oracle, pomp, prng, resample
from .adcore import (Dual, Tape, backward, finite_diff_check, grad, lift,
                     stop_gradient)
from .errors import (DegenerateFilterError, DegenerateModelError, DomainError,
                     NumericalError, OptimizationAbortError, ParameterDomainError,
                     PompadError, SimulationBlowupError, UsageError)
from .mop import (FilterOutput, MopConfig, fixed_seed_fd_score, mop_loglik_and_score,
                  mop_score, prepare_baseline, run_bootstrap, run_mop, score_sweep)
from .pomp import (CholeraModel, Dataset, LinearGaussianModel, Param, ParamSet,
                   PompModel, Theta, load_dataset, save_dataset, spline_basis)

__version__ = "0.1.0"
