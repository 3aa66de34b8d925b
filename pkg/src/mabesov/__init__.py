"""Littlewood-Paley theory, Besov norms and singular integrals on Monge-Ampere sections,
discretized on small tensor grids."""

from .approx_id import AIStack, BumpProfile, build_stack, bump, verify_ai_properties
from .besov import BesovParams, besov_norm
from .calderon import CalderonOperator, almost_orthogonality_table, op_norm, reproduce
from .geometry import ConvexPotential, SectionConstants, estimate_constants, make_potential, rho, rho_bar
from .ma_sio import MAKernelFamily, build_canonical_family, verify_D_conditions
from .measure_grid import DiscretizedDomain, GridFunction, build_grid, integrate, lp_norm

__version__ = "0.1.0"

__all__ = [
    "AIStack",
    "BesovParams",
    "BumpProfile",
    "CalderonOperator",
    "ConvexPotential",
    "DiscretizedDomain",
    "GridFunction",
    "MAKernelFamily",
    "SectionConstants",
    "almost_orthogonality_table",
    "besov_norm",
    "build_canonical_family",
    "build_grid",
    "build_stack",
    "bump",
    "estimate_constants",
    "integrate",
    "lp_norm",
    "make_potential",
    "op_norm",
    "reproduce",
    "rho",
    "rho_bar",
    "verify_D_conditions",
    "verify_ai_properties",
]
