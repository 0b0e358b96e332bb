"""Bayesian factor analysis with inequality-constrained loadings.

The analysis runs in four steps: pick the number of factors by posterior
model probability, fit an unrestricted factor model by Gibbs sampling,
state competing sign and order constraints on the loadings, and rank them
by encompassing-prior Bayes factors.
"""

__version__ = "0.1.0"

from .compare import compare_models, encompassing_bf, pmp
from .dimension import chib_log_marginal, rank_screen, select_dimension
from .dsl import DslError, expand, parse, parse_models
from .preprocess import prepare
from .sampler import NumericalError, PriorSpec, gibbs_run, sample_prior
from .types import DataError, Dataset, FactorParams, PosteriorDraws, UcfmSpec

__all__ = [
    "compare_models", "encompassing_bf", "pmp", "chib_log_marginal", "rank_screen", "select_dimension",
    "DslError", "expand", "parse", "parse_models", "prepare", "NumericalError", "PriorSpec", "gibbs_run",
    "sample_prior", "DataError", "Dataset", "FactorParams", "PosteriorDraws", "UcfmSpec", "data_path",
]


def data_path(name: str):
    """Path of a bundled example file (``mbs.csv``, ``mbs.yaml``, ``mbs_models.txt``)."""
    from importlib.resources import files
    return files("ucfm") / "data" / name
