"""Uniform matrix product states: ground states, time evolution and excitations."""

from .core import UmpsState, fixed_points, random_tensor
from .errors import UmpsError
from .models import TwoSiteHamiltonian, bilinear_biquadratic, heisenberg, transverse_field_ising

__version__ = "0.1.0"

__all__ = ["UmpsState", "fixed_points", "random_tensor", "UmpsError", "TwoSiteHamiltonian",
           "bilinear_biquadratic", "heisenberg", "transverse_field_ising", "__version__"]
