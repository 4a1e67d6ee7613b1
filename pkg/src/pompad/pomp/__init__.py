"""POMP model abstraction and the built-in benchmark models."""

from .core import Dataset, Param, ParamSet, PompModel, Theta, load_dataset, save_dataset
from .lgssm import LinearGaussianModel, lgssm_dmeasure, lgssm_step
from .cholera import CholeraModel, cholera_dmeasure, soft_clamp
from .splines import spline_basis, spline_values

__all__ = [
    "Dataset", "Param", "ParamSet", "PompModel", "Theta",
    "load_dataset", "save_dataset",
    "LinearGaussianModel", "lgssm_step", "lgssm_dmeasure",
    "CholeraModel", "cholera_dmeasure", "soft_clamp",
    "spline_basis", "spline_values",
]
