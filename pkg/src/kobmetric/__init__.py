"""Numerical Kobayashi metric estimates on strictly pseudoconvex domains in (R^4, J)."""

from .errors import KobmetricError
from .geometry import DefiningFunction, Domain, get_domain
from .structures import StructureField, standard_structure

__version__ = "0.1.0"

__all__ = [
    "DefiningFunction",
    "Domain",
    "KobmetricError",
    "StructureField",
    "get_domain",
    "standard_structure",
]
