"""Dense graph propagation and GCN baselines for zero-shot classifier regression."""

from .errors import NumericalError, ValidationError
from .sparse import SparseMatrix, csr_from_triplets, identity, row_normalize, spmm, sym_normalize, transpose
from .taxonomy import KHopAdjacency, TaxonomyDag, build_dag, dense_union, graph_stats, khop_decompose

__version__ = "0.1.0"

__all__ = [
    "NumericalError",
    "ValidationError",
    "SparseMatrix",
    "csr_from_triplets",
    "identity",
    "row_normalize",
    "spmm",
    "sym_normalize",
    "transpose",
    "KHopAdjacency",
    "TaxonomyDag",
    "build_dag",
    "dense_union",
    "graph_stats",
    "khop_decompose",
]
