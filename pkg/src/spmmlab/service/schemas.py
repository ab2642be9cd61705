"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator

from ..runner import DEFAULT_TOLERANCE
from ..space import DEFAULT_C_VALUES, DEFAULT_G_VALUES, DEFAULT_R_VALUES


class RandomMatrixSpec(BaseModel):
    rows: int = Field(ge=1)
    cols: int = Field(ge=1)
    density: float = Field(ge=0.0, le=1.0)
    seed: int = 0


class MatrixSpec(BaseModel):
    """Exactly one of `random` / `matrix_market` (inline file text)."""

    random: RandomMatrixSpec | None = None
    matrix_market: str | None = None
    label: str | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.random is None) == (self.matrix_market is None):
            raise ValueError("provide exactly one of random / matrix_market")
        return self


class MetricsModel(BaseModel):
    max_warp_steps: int
    total_steps: int
    atomic_ops: int
    idle_lane_steps: int
    per_warp_steps: dict[str, int]


class VerifyRequest(BaseModel):
    matrix: MatrixSpec
    point: str
    n: int = Field(default=4, ge=1)
    p: int = Field(default=256, ge=32)
    tolerance: float = Field(default=DEFAULT_TOLERANCE, gt=0)
    b_seed: int = 0
    precision: str = "double"
    include_output: bool = False


class VerifyResponse(BaseModel):
    point: str
    family: str | None
    status: str
    max_rel_error: float | None
    grid_size: int | None
    block_size: int | None
    kernel: str | None
    metrics: MetricsModel | None
    output: list[float] | None = None


class SweepRequest(BaseModel):
    matrices: list[MatrixSpec] = Field(min_length=1)
    points: list[str] | None = None
    n: int = Field(default=4, ge=1)
    p: int = Field(default=256, ge=32)
    tolerance: float = Field(default=DEFAULT_TOLERANCE, gt=0)
    b_seed: int = 0
    precision: str = "double"
    g_values: list[int] = Field(default_factory=lambda: list(DEFAULT_G_VALUES))
    c_values: list[int] = Field(default_factory=lambda: list(DEFAULT_C_VALUES))
    r_values: list[int] = Field(default_factory=lambda: list(DEFAULT_R_VALUES))


class SweepRow(BaseModel):
    matrix: str
    point: str
    family: str | None
    status: str
    max_rel_error: float | None
    max_warp_steps: int | None
    total_steps: int | None
    atomic_ops: int | None
    idle_lane_steps: int | None
    grid_size: int | None
    block_size: int | None


class SweepResponse(BaseModel):
    schema_version: int = 1
    rows: list[SweepRow]


class EnumerateRequest(BaseModel):
    n: int = Field(default=4, ge=1)
    p: int = Field(default=256, ge=32)
    g_values: list[int] = Field(default_factory=lambda: list(DEFAULT_G_VALUES))
    c_values: list[int] = Field(default_factory=lambda: list(DEFAULT_C_VALUES))
    r_values: list[int] = Field(default_factory=lambda: list(DEFAULT_R_VALUES))


class LegalPointInfo(BaseModel):
    point: str
    family: str | None
    templated: bool


class RejectedPointInfo(BaseModel):
    point: str
    rule: int


class EnumerateResponse(BaseModel):
    legal: list[LegalPointInfo]
    rejected: list[RejectedPointInfo]


class EmitRequest(BaseModel):
    point: str
    matrix: MatrixSpec | None = None
    n: int = Field(default=4, ge=1)
    p: int = Field(default=256, ge=32)


class EmitResponse(BaseModel):
    source: str
    kernel: str
    family: str
    point: str
    grid_size: int
    block_size: int
