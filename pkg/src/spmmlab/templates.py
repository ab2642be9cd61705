"""Schedule templates for the four recommended corners of the design space.

A template is a fixed list of schedule commands whose split factors are
derived from the point and the kernel config.  Points the corners do not
cover are still legal; they just come back as None and need a hand-written
schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cin import (
    Access,
    ParallelAnnotation,
    ParallelUnit,
    RaceStrategy,
    ReductionStrategy,
    SuchThat,
    build_spmm_cin,
)
from .lowering import KernelConfig
from .schedule import (
    Bound,
    Fuse,
    Parallelize,
    Pos,
    Precompute,
    ScheduleCmd,
    Split,
    apply_all,
)
from .space import AmountKind, DataKind, SchedulePoint, legality_rule

__all__ = [
    "FAMILIES",
    "FAMILY_NNZ_MULTIPLE",
    "FAMILY_NNZ_ONE",
    "FAMILY_ROW_MULTIPLE",
    "FAMILY_ROW_RECIPROCAL",
    "AlgorithmTemplate",
    "IllegalPointError",
    "algorithm_template",
    "kernel_name",
    "template_family",
]

FAMILY_NNZ_MULTIPLE = "nnz-multiple"
FAMILY_ROW_MULTIPLE = "row-multiple"
FAMILY_ROW_RECIPROCAL = "row-reciprocal"
FAMILY_NNZ_ONE = "nnz-one"

FAMILIES = (
    FAMILY_NNZ_MULTIPLE,
    FAMILY_ROW_MULTIPLE,
    FAMILY_ROW_RECIPROCAL,
    FAMILY_NNZ_ONE,
)


class IllegalPointError(ValueError):
    """A point rejected by the legality rules; carries the rule number."""

    def __init__(self, rule: int):
        super().__init__(f"illegal point (rule {rule})")
        self.rule = rule


@dataclass(frozen=True)
class AlgorithmTemplate:
    family: str
    point: SchedulePoint
    config: KernelConfig
    commands: tuple[ScheduleCmd, ...]
    cin: SuchThat


def kernel_name(family: str) -> str:
    return "spmm_" + family.replace("-", "_")


def template_family(point: SchedulePoint) -> str | None:
    """Template corner covering the point, or None for legal points the
    corners leave to hand scheduling.  Illegal points raise."""
    rule = legality_rule(point)
    if rule is not None:
        raise IllegalPointError(rule)
    if point.col_amount.kind is AmountKind.RECIPROCAL:
        return None
    amount, r = point.data_amount, point.r
    if point.data_kind is DataKind.NNZ:
        if amount.kind is AmountKind.ONE:
            return FAMILY_NNZ_ONE
        if amount.kind is AmountKind.MULTIPLE and r == 1:
            return FAMILY_NNZ_MULTIPLE
        return None
    if amount.kind is AmountKind.RECIPROCAL:
        return FAMILY_ROW_RECIPROCAL if r == amount.param else None
    return FAMILY_ROW_MULTIPLE if r == 1 else None


def _col_width(point: SchedulePoint) -> int:
    return 1 if point.col_amount.kind is AmountKind.ONE else point.col_amount.param


def _ann(unit: ParallelUnit, race: RaceStrategy) -> ParallelAnnotation:
    return ParallelAnnotation(unit, race)


def _group_ann(strategy: ReductionStrategy, size: int) -> ParallelAnnotation:
    return ParallelAnnotation(ParallelUnit.GPU_GROUP, RaceStrategy.ATOMICS, strategy, size)


def _nnz_multiple_cmds(point, config):
    g = point.data_amount.param
    c = _col_width(point)
    n, p = config.n, config.p
    if n % c or (p * c) % n or (p * g * c) % n:
        return None
    chunk = p * g * c // n  # fused nonzero positions per block
    if (p * c // n) * c % 32:
        return None
    return (
        Fuse("i", "j", "f"),
        Pos("f", "fpos", Access("A", ("i", "j"))),
        Split("fpos", "block", "fpos1", chunk),
        Split("fpos1", "warp", "nnz", g),
        Split("k", "ko", "thread", c),
        Bound("ko", "dense_val", n // c),
        Precompute("tnnzC", "nnz"),
        Parallelize("block", _ann(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)),
        Parallelize("warp", _ann(ParallelUnit.GPU_WARP, RaceStrategy.NO_RACES)),
        Parallelize("thread", _ann(ParallelUnit.GPU_THREAD, RaceStrategy.ATOMICS)),
    )


def _row_multiple_cmds(point, config):
    amount = point.data_amount
    g = 1 if amount.kind is AmountKind.ONE else amount.param
    c = _col_width(point)
    n, p = config.n, config.p
    if n % c or (p * g * c) % n or (p * c) % n or p % 32:
        return None
    rows_per_block = p * g * c // n
    return (
        Split("i", "block", "io", rows_per_block),
        Split("io", "warp", "row", g),
        Split("k", "ko", "col", c),
        Bound("ko", "thread", n // c),
        Precompute("tjC", "j"),
        Parallelize("block", _ann(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)),
        Parallelize("warp", _ann(ParallelUnit.GPU_WARP, RaceStrategy.NO_RACES)),
        Parallelize("thread", _ann(ParallelUnit.GPU_THREAD, RaceStrategy.NO_RACES)),
    )


def _row_reciprocal_cmds(point, config):
    g = point.data_amount.param
    c = _col_width(point)
    n, p = config.n, config.p
    if point.r != g:
        return None
    if n % c or (c * p) % g or p % g or 32 % g or p % 32:
        return None
    fused_per_block = c * p // g  # output cells per block
    return (
        Fuse("i", "k", "io"),
        Split("io", "ko", "ki", fused_per_block),
        Split("ki", "warp", "kii", c),
        Pos("j", "jpos", Access("A", ("i", "j"))),
        Precompute("tjpos1C", "jpos"),
        Split("jpos", "jpos0", "jpos1", g, placement="strided"),
        Parallelize("ko", _ann(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)),
        Parallelize("warp", _ann(ParallelUnit.GPU_WARP, RaceStrategy.ATOMICS)),
        Parallelize("jpos1", _ann(ParallelUnit.GPU_THREAD, RaceStrategy.ATOMICS)),
        Parallelize("jpos1", _group_ann(ReductionStrategy.PARALLEL, point.r)),
    )


def _nnz_one_cmds(point, config):
    c = _col_width(point)
    n, p = config.n, config.p
    r = point.r
    if n % c or (p * c) % n or p % 32:
        return None
    npb = p * c // n  # nonzero positions per block, one per thread
    if r > 1 and (32 % r or npb % r or r > npb):
        return None
    cmds = [
        Fuse("i", "j", "f"),
        Pos("f", "fpos", Access("A", ("i", "j"))),
        Split("fpos", "block", "fpos1", npb, placement="sink_inner"),
        Split("k", "ko", "ki", c),
        Bound("ko", "warp", n // c),
        Precompute("tmp", None),
        Parallelize("block", _ann(ParallelUnit.GPU_BLOCK, RaceStrategy.IGNORE_RACES)),
        Parallelize("warp", _ann(ParallelUnit.GPU_WARP, RaceStrategy.NO_RACES)),
        Parallelize("fpos1", _ann(ParallelUnit.GPU_THREAD, RaceStrategy.ATOMICS)),
    ]
    if r > 1:
        cmds.append(Parallelize("fpos1", _group_ann(ReductionStrategy.SEGMENT, r)))
    return tuple(cmds)


_BUILDERS = {
    FAMILY_NNZ_MULTIPLE: _nnz_multiple_cmds,
    FAMILY_ROW_MULTIPLE: _row_multiple_cmds,
    FAMILY_ROW_RECIPROCAL: _row_reciprocal_cmds,
    FAMILY_NNZ_ONE: _nnz_one_cmds,
}

_BASE_ORDER = {
    FAMILY_NNZ_MULTIPLE: ("i", "j", "k"),
    FAMILY_ROW_MULTIPLE: ("i", "j", "k"),
    FAMILY_ROW_RECIPROCAL: ("i", "k", "j"),
    FAMILY_NNZ_ONE: ("i", "j", "k"),
}


def algorithm_template(
    point: SchedulePoint, config: KernelConfig
) -> AlgorithmTemplate | None:
    """Build the scheduled tree for a legal point.

    Returns None when no corner covers the point or its factors do not
    divide out under `config`; raises IllegalPointError for illegal points.
    """
    family = template_family(point)
    if family is None:
        return None
    commands = _BUILDERS[family](point, config)
    if commands is None:
        return None
    cin = apply_all(build_spmm_cin(_BASE_ORDER[family]), commands)
    return AlgorithmTemplate(family, point, config, commands, cin)
