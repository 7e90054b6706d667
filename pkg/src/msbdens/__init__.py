"""Multiscale stick-breaking mixtures for conditional density estimation.

The pipeline whitens the predictors, links nearby samples in a kernel
similarity graph, recursively bisects that graph into a partition tree,
and fits a tree-structured Gaussian mixture over the response by Gibbs
sampling.  Predictive densities at new points follow the routed path.
"""

__version__ = "0.1.0"

from .dataio import Dataset, load_dataset, save_dataset  # noqa: E402
from .model import FittedModel, PipelineConfig, fit_model  # noqa: E402
from .predict import point_predict, predictive_density  # noqa: E402

__all__ = [
    "__version__",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "PipelineConfig",
    "FittedModel",
    "fit_model",
    "predictive_density",
    "point_predict",
]
