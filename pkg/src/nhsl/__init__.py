"""Sparse domination of Calderón--Zygmund operators on the line for upper doubling measures.

Modules: ``measure`` (atomic measures, dominating functions), ``lattice``
(the interval lattice and doubling cells), ``operators`` (kernels,
truncations, maximal operators), ``sparse`` (selection, sparse families,
certificates), ``weights`` (characteristics and weighted norms) and
``pipeline``/``cli`` (experiment orchestration).
"""

from .lattice import Lattice, LatticeParams, build_lattice, check_lattice
from .measure import AtomicMeasure, Ball, DominatingFunction, mu_ball
from .operators import Kernel
from .sparse import certify, recurse, select
from .weights import Weight

__all__ = ["AtomicMeasure", "Ball", "DominatingFunction", "Kernel", "Lattice", "LatticeParams",
           "Weight", "build_lattice", "certify", "check_lattice", "mu_ball", "recurse", "select"]
__version__ = "0.1.0"
