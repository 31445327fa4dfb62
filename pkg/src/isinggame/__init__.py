"""Approximate marginals of Ising models through learning dynamics in the induced potential game."""

from isinggame.classic import IterationSpec, Marginals
from isinggame.exact import ExactResult, exact
from isinggame.model import IsingModel, ModelClass, generate_model

__version__ = "0.1.0"

__all__ = ["ExactResult", "IsingModel", "IterationSpec", "Marginals", "ModelClass", "exact",
           "generate_model", "__version__"]
