"""Kinetic theory toolkit for polyatomic gases with continuous internal energy.

Submodules: ``core`` (states, brackets, moments), ``collision`` (collision
map and Jacobian), ``models`` (transition functions and partition
constants), ``analysis`` (Povzner constants and moment bounds), ``dsmc``
(particle solver and diagnostics), ``verify`` (invariant suites) and
``cli``.
"""

from .core import Ensemble, GasParams, MolecularState, MomentReport, bracket, exp_moment, observables, poly_moment
from .collision import CollisionPair, CollisionParams, jacobian, transform
from .models import Isotropic, ModelConstants, ModelSpec, TablePdf, partition_constants, transition
from .errors import PolykinError

__version__ = "0.1.0"

__all__ = [
    "CollisionPair", "CollisionParams", "Ensemble", "GasParams", "Isotropic", "ModelConstants", "ModelSpec",
    "MolecularState", "MomentReport", "PolykinError", "TablePdf", "bracket", "exp_moment", "jacobian",
    "observables", "partition_constants", "poly_moment", "transform", "transition",
]
