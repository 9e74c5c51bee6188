"""Multitemporal hyperspectral unmixing with a deep variational state-space model.

The package estimates per-pixel abundances and smoothly varying endmember
matrices from a sequence of co-registered hyperspectral images, detecting
abrupt material changes along the way.  ``redsunn.cli`` is the command-line
surface; the modules below are the library API.
"""

from .abundances import dirichlet_softmax_logpdf, softmax_pi
from .baselines import fcls, fcls_cube, vca
from .cubeio import RunConfig, read_cube, write_cube
from .elbo import ElboBreakdown, elbo_minibatch, estimate, kl_diag_gaussians
from .metrics import MetricsReport, count_parameters, evaluate
from .mixing import EndmemberBasis, SglmmConfig
from .posterior import simplex_project_np
from .synthdata import Ds1Config, Ds2Config, GroundTruth, gen_ds1, gen_ds2
from .trainer import DivergenceError, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Ds1Config",
    "Ds2Config",
    "DivergenceError",
    "ElboBreakdown",
    "EndmemberBasis",
    "GroundTruth",
    "MetricsReport",
    "RunConfig",
    "SglmmConfig",
    "TrainConfig",
    "count_parameters",
    "dirichlet_softmax_logpdf",
    "elbo_minibatch",
    "estimate",
    "evaluate",
    "fcls",
    "fcls_cube",
    "gen_ds1",
    "gen_ds2",
    "kl_diag_gaussians",
    "read_cube",
    "simplex_project_np",
    "softmax_pi",
    "train",
    "vca",
    "write_cube",
]
