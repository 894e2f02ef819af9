"""
fbcool - Feedback Cooling Pipeline

Phase-space simulation of measurement-based feedback cooling: coherent-feedback
truncated Wigner trajectories, exact Kraus and particle-filter references for
the two-mode system, and a stochastic field engine for quasi-1D gases.
"""

__version__ = "0.1.0"
__author__ = "Arjun Anil"
__email__ = "arjunanil.online@gmail.com"
__description__ = "Phase-space simulation of measurement-based feedback cooling"

# Core imports
from . import errors
from . import utils
from . import tools
from . import io

__all__ = [
    "__version__",
    "__author__",
    "__email__",
    "__description__",
    "errors",
    "utils",
    "tools",
    "io",
]
