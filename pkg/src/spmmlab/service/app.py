"""HTTP service exposing the compiler and simulator.

All endpoints are synchronous; simulation runs sequentially in the worker
process, which keeps results deterministic.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__, runner
from ..lowering import KernelConfig, LoweringError
from ..space import PointError, SchedulePoint, enumerate_space, parse_point
from ..templates import IllegalPointError
from .schemas import (
    EmitRequest,
    EmitResponse,
    EnumerateRequest,
    EnumerateResponse,
    MatrixSpec,
    MetricsModel,
    SweepRequest,
    SweepResponse,
    VerifyRequest,
    VerifyResponse,
)


def _resolve(spec: MatrixSpec) -> runner.MatrixInput:
    if spec.random is not None:
        r = spec.random
        return runner.resolve_matrix(
            random_spec=(r.rows, r.cols, r.density, r.seed), label=spec.label
        )
    return runner.resolve_matrix(matrix_market=spec.matrix_market, label=spec.label)


def _require_matrix(spec: MatrixSpec) -> runner.MatrixInput:
    mi = _resolve(spec)
    if mi.matrix is None:
        raise HTTPException(status_code=400, detail=f"{mi.label}: {mi.error}")
    return mi


def _parse_point(text: str) -> SchedulePoint:
    try:
        return parse_point(text)
    except PointError as e:
        raise HTTPException(status_code=400, detail=str(e)) from None


def _config(n: int, p: int) -> KernelConfig:
    try:
        return KernelConfig(n=n, p=p)
    except LoweringError as e:
        raise HTTPException(status_code=400, detail=str(e)) from None


def create_app() -> FastAPI:
    app = FastAPI(title="spmmlab", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest) -> VerifyResponse:
        mi = _require_matrix(req.matrix)
        point = _parse_point(req.point)
        config = _config(req.n, req.p)
        if req.precision not in ("double", "single"):
            raise HTTPException(400, f"unknown precision {req.precision!r}")
        try:
            report = runner.verify_point(
                mi.matrix,
                point,
                config,
                tolerance=req.tolerance,
                b_seed=req.b_seed,
                precision=req.precision,
                want_output=req.include_output,
            )
        except IllegalPointError as e:
            raise HTTPException(status_code=400, detail=str(e)) from None
        metrics = None
        if report.metrics is not None:
            m = report.metrics
            metrics = MetricsModel(
                max_warp_steps=m.max_warp_steps,
                total_steps=m.total_steps,
                atomic_ops=m.atomic_ops,
                idle_lane_steps=m.idle_lane_steps,
                per_warp_steps={str(k): v for k, v in m.per_warp_steps.items()},
            )
        return VerifyResponse(
            point=report.point,
            family=report.family,
            status=report.status,
            max_rel_error=report.max_rel_error,
            grid_size=report.grid_size,
            block_size=report.block_size,
            kernel=report.kernel,
            metrics=metrics,
            output=None if report.output is None else report.output.vals.tolist(),
        )

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest) -> SweepResponse:
        config = _config(req.n, req.p)
        if req.precision not in ("double", "single"):
            raise HTTPException(400, f"unknown precision {req.precision!r}")
        matrices = [_resolve(spec) for spec in req.matrices]
        points = None
        if req.points is not None:
            points = [_parse_point(p) for p in req.points]
            for pt in points:
                try:
                    runner.template_family(pt)
                except IllegalPointError as e:
                    raise HTTPException(status_code=400, detail=str(e)) from None
        else:
            points = list(
                enumerate_space(
                    g_values=tuple(req.g_values),
                    c_values=tuple(req.c_values),
                    r_values=tuple(req.r_values),
                ).legal
            )
        rows = runner.sweep(
            matrices,
            config,
            points=points,
            tolerance=req.tolerance,
            b_seed=req.b_seed,
            precision=req.precision,
        )
        return SweepResponse(schema_version=runner.SWEEP_SCHEMA_VERSION, rows=rows)

    @app.post("/enumerate", response_model=EnumerateResponse)
    def enumerate_points(req: EnumerateRequest) -> EnumerateResponse:
        config = _config(req.n, req.p)
        report = runner.enumerate_report(
            config,
            g_values=tuple(req.g_values),
            c_values=tuple(req.c_values),
            r_values=tuple(req.r_values),
        )
        return EnumerateResponse(**report)

    @app.post("/emit", response_model=EmitResponse)
    def emit(req: EmitRequest) -> EmitResponse:
        point = _parse_point(req.point)
        config = _config(req.n, req.p)
        matrix = None
        if req.matrix is not None:
            matrix = _require_matrix(req.matrix).matrix
        try:
            result = runner.emit_text(point, config, matrix)
        except IllegalPointError as e:
            raise HTTPException(status_code=400, detail=str(e)) from None
        except (ValueError, LoweringError) as e:
            raise HTTPException(status_code=400, detail=str(e)) from None
        return EmitResponse(**result)

    return app


app = create_app()
