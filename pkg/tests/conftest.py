"""Shared fixtures: the standard kernel configuration and the matrix zoo
used by the verification tests."""

import numpy as np
import pytest

from spmmlab.lowering import KernelConfig
from spmmlab.matrices import CsrMatrix, random_csr


def identity_csr(n: int) -> CsrMatrix:
    return CsrMatrix(n, n, np.arange(n + 1), np.arange(n), np.ones(n))


def empty_csr(rows: int, cols: int) -> CsrMatrix:
    return CsrMatrix(rows, cols, np.zeros(rows + 1, dtype=np.int64), [], [])


def dense_row_csr(rows: int, cols: int, seed: int) -> CsrMatrix:
    """All nonzeros packed into row 0; every other row empty."""
    rng = np.random.default_rng(seed)
    row_ptr = np.full(rows + 1, cols, dtype=np.int64)
    row_ptr[0] = 0
    return CsrMatrix(rows, cols, row_ptr, np.arange(cols), rng.uniform(-1, 1, cols))


def matrix_zoo() -> list[tuple[str, CsrMatrix, int]]:
    """(label, matrix, dense-operand seed) triples spanning sizes, densities,
    and the degenerate shapes that trip chunked kernels."""
    randoms = [
        (16, 16, 0.05, 11), (16, 16, 0.1, 12), (16, 16, 0.25, 13), (16, 16, 0.5, 14),
        (24, 24, 0.1, 21), (24, 24, 0.3, 22),
        (32, 32, 0.05, 31), (32, 32, 0.1, 32), (32, 32, 0.25, 33), (32, 32, 0.5, 34),
        (48, 48, 0.1, 41), (48, 48, 0.2, 42),
        (64, 64, 0.05, 51), (64, 64, 0.125, 52), (64, 64, 0.5, 53),
    ]
    zoo = [
        (f"random:{r}x{c}:{d:g}:{s}", random_csr(r, c, d, s), s + 1)
        for r, c, d, s in randoms
    ]
    zoo += [
        ("identity:16", identity_csr(16), 71),
        ("empty:16x16", empty_csr(16, 16), 72),
        ("dense-row:16x16", dense_row_csr(16, 16, seed=60), 73),
        ("single-row:1x32", random_csr(1, 32, 0.5, seed=61), 74),
        ("single-col:32x1", random_csr(32, 1, 0.5, seed=62), 75),
    ]
    return zoo


@pytest.fixture(scope="session")
def zoo():
    return matrix_zoo()


@pytest.fixture
def cfg4():
    return KernelConfig(n=4, p=256)


@pytest.fixture
def cfg8():
    return KernelConfig(n=8, p=256)
