"""Score-based generative modelling on function spaces with discretization-invariant operators."""

from .grid import Boundary, Dataset, DomainSpec, GridFunction, load_dataset, save_dataset
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Boundary",
    "Dataset",
    "DomainSpec",
    "GridFunction",
    "load_dataset",
    "save_dataset",
]
