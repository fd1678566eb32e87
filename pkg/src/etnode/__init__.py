"""Continuous-time multivariate forecasting with a tensorized GRU encoder,
tandem attention, a variational latent state and a GRU-form neural ODE decoder."""
from .config import ModelConfig, RunConfig
from .model import ETNODE
from .odenet import SolverConfig, TimeGrid

__all__ = ["ETNODE", "ModelConfig", "RunConfig", "SolverConfig", "TimeGrid"]
__version__ = "0.1.0"
