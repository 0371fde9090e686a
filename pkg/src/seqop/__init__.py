"""Load-history surrogates: solvers, recurrent DeepONets and the experiment pipeline."""
from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
