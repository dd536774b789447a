"""Multilevel spectral coarsening of mixed graph Laplacians."""
from .coarsen import CoarsenSpec, Hierarchy, build_hierarchy, rescale_coefficient
from .graph import FineMixedSystem, Graph, TpfaGrid, assemble_tpfa, build_incidence
from .partition import Partition, partition

__version__ = "0.1.0"

__all__ = [
    "CoarsenSpec",
    "FineMixedSystem",
    "Graph",
    "Hierarchy",
    "Partition",
    "TpfaGrid",
    "assemble_tpfa",
    "build_hierarchy",
    "build_incidence",
    "partition",
    "rescale_coefficient",
]
