"""Symbol calculus for the electromagnetic Dirichlet-to-Neumann map and its boundary inversion."""

from .dtn import BoundaryField, DtnSymbol, apply_dtn, dtn_symbols
from .errors import EmdtnError
from .geometry import BoundaryMetricJet, Geometry
from .jets import Jet3
from .recon import MeasuredSymbols, ReconstructionState, layer_errors, reconstruct
from .scenario import Scenario, random_scenario
from .symalg import SymbolContext, SymbolElement, SymbolTable

__all__ = [
    "BoundaryField",
    "BoundaryMetricJet",
    "DtnSymbol",
    "EmdtnError",
    "Geometry",
    "Jet3",
    "MeasuredSymbols",
    "ReconstructionState",
    "Scenario",
    "SymbolContext",
    "SymbolElement",
    "SymbolTable",
    "apply_dtn",
    "dtn_symbols",
    "layer_errors",
    "random_scenario",
    "reconstruct",
]
