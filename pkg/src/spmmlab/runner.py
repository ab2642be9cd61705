"""Driving layer: build, simulate, and check kernels for design-space points.

Everything here is plain data in / plain data out so the HTTP service and
the command line stay thin wrappers.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from .cuda import emit_cuda
from .lowering import KernelConfig, LoweredKernel, lower
from .matrices import (
    CsrMatrix,
    DenseMatrix,
    MatrixFormatError,
    dense_spmm_oracle,
    loads_matrix_market,
    random_csr,
    random_dense,
)
from .sim import SimMetrics, run
from .space import DEFAULT_C_VALUES, DEFAULT_G_VALUES, DEFAULT_R_VALUES, SchedulePoint, enumerate_space, parse_point
from .templates import algorithm_template, kernel_name, template_family

__all__ = [
    "DEFAULT_EMIT_MATRIX",
    "DEFAULT_TOLERANCE",
    "SWEEP_COLUMNS",
    "SWEEP_SCHEMA_VERSION",
    "MatrixInput",
    "VerifyReport",
    "build_kernel",
    "emit_text",
    "enumerate_report",
    "parse_random_spec",
    "resolve_matrix",
    "rows_to_csv",
    "rows_to_json",
    "sweep",
    "verify_point",
]

DEFAULT_TOLERANCE = 1e-4

# shape used by emission endpoints when no matrix is given
DEFAULT_EMIT_MATRIX = (64, 64, 0.0625, 1)

SWEEP_SCHEMA_VERSION = 1

SWEEP_COLUMNS = (
    "matrix",
    "point",
    "family",
    "status",
    "max_rel_error",
    "max_warp_steps",
    "total_steps",
    "atomic_ops",
    "idle_lane_steps",
    "grid_size",
    "block_size",
)


@dataclass(frozen=True)
class MatrixInput:
    """A labeled matrix, or the reason it could not be produced."""

    label: str
    matrix: CsrMatrix | None
    error: str | None = None


@dataclass(frozen=True)
class VerifyReport:
    point: str
    family: str | None
    status: str  # "pass" | "fail" | "no_template"
    max_rel_error: float | None
    grid_size: int | None
    block_size: int | None
    kernel: str | None
    metrics: SimMetrics | None
    output: DenseMatrix | None = None


def parse_random_spec(text: str) -> tuple[int, int, float, int]:
    """Parse "RxC:density[:seed]"; a missing seed falls back to the
    SGAP_SEED environment variable, then 0."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"expected 'RxC:density[:seed]', got {text!r}")
    shape = parts[0].lower().split("x")
    if len(shape) != 2:
        raise ValueError(f"expected 'RxC' shape, got {parts[0]!r}")
    try:
        rows, cols = int(shape[0]), int(shape[1])
        density = float(parts[1])
        if len(parts) == 3:
            seed = int(parts[2])
        else:
            seed = int(os.environ.get("SGAP_SEED", "0"))
    except ValueError as e:
        raise ValueError(f"bad random matrix spec {text!r}: {e}") from None
    if rows < 1 or cols < 1:
        raise ValueError("matrix shape must be positive")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    return rows, cols, density, seed


def resolve_matrix(
    *,
    random_spec: tuple[int, int, float, int] | None = None,
    matrix_market: str | None = None,
    label: str | None = None,
) -> MatrixInput:
    if (random_spec is None) == (matrix_market is None):
        raise ValueError("provide exactly one of random_spec / matrix_market")
    if random_spec is not None:
        rows, cols, density, seed = random_spec
        name = label or f"random:{rows}x{cols}:{density:g}:{seed}"
        try:
            return MatrixInput(name, random_csr(rows, cols, density, seed=seed))
        except (ValueError, MatrixFormatError) as e:
            return MatrixInput(name, None, str(e))
    name = label or "matrix.mtx"
    try:
        return MatrixInput(name, loads_matrix_market(matrix_market))
    except MatrixFormatError as e:
        return MatrixInput(name, None, str(e))


def build_kernel(
    point: SchedulePoint, config: KernelConfig, matrix: CsrMatrix
) -> LoweredKernel | None:
    """Template + lower in one go; None when no template covers the point.
    Raises IllegalPointError for illegal points."""
    tpl = algorithm_template(point, config)
    if tpl is None:
        return None
    return lower(
        tpl.cin,
        config,
        matrix,
        name=kernel_name(tpl.family),
        family=tpl.family,
        point=str(point),
    )


def _max_rel_error(got: DenseMatrix, want: DenseMatrix) -> float:
    if want.vals.size == 0:
        return 0.0
    return float(np.max(np.abs(got.vals - want.vals) / (np.abs(want.vals) + 1.0)))


def verify_point(
    matrix: CsrMatrix,
    point: SchedulePoint,
    config: KernelConfig,
    *,
    tolerance: float = DEFAULT_TOLERANCE,
    b: DenseMatrix | None = None,
    b_seed: int = 0,
    precision: str = "double",
    want_output: bool = False,
) -> VerifyReport:
    """Simulate the point on the matrix and compare against the dense
    reference product."""
    ptxt = str(point)
    kernel = build_kernel(point, config, matrix)
    if kernel is None:
        return VerifyReport(
            point=ptxt,
            family=template_family(point),
            status="no_template",
            max_rel_error=None,
            grid_size=None,
            block_size=None,
            kernel=None,
            metrics=None,
        )
    if b is None:
        b = random_dense(matrix.num_cols, config.n, seed=b_seed)
    got, metrics = run(kernel, matrix, b, precision=precision)
    want = dense_spmm_oracle(matrix, b)
    err = _max_rel_error(got, want)
    return VerifyReport(
        point=ptxt,
        family=kernel.family,
        status="pass" if err <= tolerance else "fail",
        max_rel_error=err,
        grid_size=kernel.grid_size,
        block_size=kernel.block_size,
        kernel=kernel.name,
        metrics=metrics,
        output=got if want_output else None,
    )


def _report_row(label: str, report: VerifyReport) -> dict:
    m = report.metrics
    return {
        "matrix": label,
        "point": report.point,
        "family": report.family,
        "status": report.status,
        "max_rel_error": report.max_rel_error,
        "max_warp_steps": m.max_warp_steps if m else None,
        "total_steps": m.total_steps if m else None,
        "atomic_ops": m.atomic_ops if m else None,
        "idle_lane_steps": m.idle_lane_steps if m else None,
        "grid_size": report.grid_size,
        "block_size": report.block_size,
    }


def _error_row(label: str, point: str, message: str) -> dict:
    row = {c: None for c in SWEEP_COLUMNS}
    row.update(matrix=label, point=point, status=f"matrix_error: {message}")
    return row


def sweep(
    matrices: list[MatrixInput],
    config: KernelConfig,
    *,
    points: list[SchedulePoint] | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
    b_seed: int = 0,
    precision: str = "double",
) -> list[dict]:
    """One row per (matrix, legal point).  Untemplated points report status
    "no_template"; unreadable matrices produce a single error row."""
    if points is None:
        points = list(enumerate_space().legal)
    rows: list[dict] = []
    for mi in matrices:
        if mi.matrix is None:
            rows.append(_error_row(mi.label, "", mi.error or "unreadable"))
            continue
        for pt in points:
            report = verify_point(
                mi.matrix,
                pt,
                config,
                tolerance=tolerance,
                b_seed=b_seed,
                precision=precision,
            )
            rows.append(_report_row(mi.label, report))
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow(
            ["" if row.get(c) is None else row.get(c) for c in SWEEP_COLUMNS]
        )
    return buf.getvalue()


def rows_to_json(rows: list[dict]) -> str:
    return json.dumps({"schema_version": SWEEP_SCHEMA_VERSION, "rows": rows})


def enumerate_report(
    config: KernelConfig,
    *,
    g_values=DEFAULT_G_VALUES,
    c_values=DEFAULT_C_VALUES,
    r_values=DEFAULT_R_VALUES,
) -> dict:
    space = enumerate_space(g_values=g_values, c_values=c_values, r_values=r_values)
    legal = []
    for pt in space.legal:
        family = template_family(pt)
        templated = family is not None and algorithm_template(pt, config) is not None
        legal.append({"point": str(pt), "family": family, "templated": templated})
    rejected = [{"point": str(pt), "rule": rule} for pt, rule in space.rejected]
    return {"legal": legal, "rejected": rejected}


def emit_text(
    point: SchedulePoint,
    config: KernelConfig,
    matrix: CsrMatrix | None = None,
) -> dict:
    """CUDA source for the point's template; raises for illegal or
    untemplated points."""
    if matrix is None:
        rows, cols, density, seed = DEFAULT_EMIT_MATRIX
        matrix = random_csr(rows, cols, density, seed=seed)
    kernel = build_kernel(point, config, matrix)
    if kernel is None:
        raise ValueError(f"no template covers point {point}")
    return {
        "source": emit_cuda(kernel),
        "kernel": kernel.name,
        "family": kernel.family,
        "point": str(point),
        "grid_size": kernel.grid_size,
        "block_size": kernel.block_size,
    }
