"""Sparse tensor schedule lab: SpMM scheduling, lowering, and a SIMT simulator.

The package builds a scheduling language around the single kernel
``C(i,k) += A(i,j) * B(j,k)`` (CSR A, dense row-major B and C), enumerates a
parallelization design space over it, lowers scheduled kernels to a small
loop-level IR, and runs that IR on a deterministic warp-synchronous
simulator so results can be checked bit-for-bit against a dense oracle.
"""

__version__ = "0.1.0"

from .matrices import (
    CsrMatrix,
    DenseMatrix,
    MatrixFormatError,
    dense_spmm_oracle,
    load_matrix_market,
    loads_matrix_market,
    random_csr,
    random_dense,
)

__all__ = [
    "__version__",
    "CsrMatrix",
    "DenseMatrix",
    "MatrixFormatError",
    "dense_spmm_oracle",
    "load_matrix_market",
    "loads_matrix_market",
    "random_csr",
    "random_dense",
]
