"""walkdiff: scale factors embedding scaled random walks into driftless diffusions."""

from . import config, convergence, embedding, measures, models, scale, walk
from .defaults import DEFAULTS

__all__ = ["config", "convergence", "embedding", "measures", "models", "scale",
           "walk", "DEFAULTS"]
__version__ = "0.1.0"
