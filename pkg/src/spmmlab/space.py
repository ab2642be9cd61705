"""The atomic-parallelism design space for SpMM schedules.

A schedule point fixes three choices: how much sparse data each thread owns
(a fraction of a row, a whole unit, or several units, counted either in
nonzeros or rows), how many dense output columns it covers, and the lane
group width ``r`` used when several threads cooperate on one reduction.

Legality is decided by three rules, checked in order; the first rule that
fires names the rejection.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "DataKind",
    "AmountKind",
    "Amount",
    "SchedulePoint",
    "PointError",
    "parse_point",
    "format_point",
    "legality_rule",
    "is_legal",
    "SpaceEnumeration",
    "enumerate_space",
    "da_spmm_points",
    "DEFAULT_G_VALUES",
    "DEFAULT_C_VALUES",
    "DEFAULT_R_VALUES",
    "FineGrainedConfig",
    "enumerate_fine_grained",
]


class PointError(ValueError):
    pass


class DataKind(enum.Enum):
    NNZ = "nnz"
    ROW = "row"


class AmountKind(enum.Enum):
    RECIPROCAL = "reciprocal"
    ONE = "one"
    MULTIPLE = "multiple"


@dataclass(frozen=True)
class Amount:
    """1/g, 1, or g units per thread.  Explicit parameters are >= 2; a
    parameter of one is spelled as ONE."""

    kind: AmountKind
    param: int | None = None

    def __post_init__(self):
        if self.kind is AmountKind.ONE:
            if self.param is not None:
                raise PointError("a unit amount takes no parameter")
        else:
            if self.param is None or self.param < 2:
                raise PointError(
                    f"{self.kind.value} amounts need an integer parameter >= 2"
                )

    @classmethod
    def reciprocal(cls, g: int) -> "Amount":
        return cls(AmountKind.RECIPROCAL, g)

    @classmethod
    def one(cls) -> "Amount":
        return cls(AmountKind.ONE)

    @classmethod
    def multiple(cls, g: int) -> "Amount":
        return cls(AmountKind.MULTIPLE, g)

    @property
    def units_per_thread(self) -> Fraction:
        if self.kind is AmountKind.RECIPROCAL:
            return Fraction(1, self.param)
        if self.kind is AmountKind.ONE:
            return Fraction(1)
        return Fraction(self.param)

    def __str__(self):
        if self.kind is AmountKind.RECIPROCAL:
            return f"1/{self.param}"
        if self.kind is AmountKind.ONE:
            return "1"
        return str(self.param)

    # ordering rank used for deterministic enumeration output
    def _key(self) -> tuple[int, int]:
        rank = {AmountKind.RECIPROCAL: 0, AmountKind.ONE: 1, AmountKind.MULTIPLE: 2}
        return (rank[self.kind], self.param or 0)


@dataclass(frozen=True)
class SchedulePoint:
    data_kind: DataKind
    data_amount: Amount
    col_amount: Amount
    r: int

    def __post_init__(self):
        if self.r < 1:
            raise PointError("group width r must be >= 1")

    def __str__(self):
        return format_point(self)

    def _key(self):
        kind_rank = 0 if self.data_kind is DataKind.NNZ else 1
        return (kind_rank, self.data_amount._key(), self.col_amount._key(), self.r)


def format_point(point: SchedulePoint) -> str:
    return (
        f"{point.data_kind.value}:{point.data_amount},"
        f"col:{point.col_amount},r:{point.r}"
    )


def _parse_amount(text: str) -> Amount:
    if text == "1":
        return Amount.one()
    if text.startswith("1/"):
        try:
            g = int(text[2:])
        except ValueError:
            raise PointError(f"bad amount {text!r}") from None
        return Amount.reciprocal(g)
    try:
        g = int(text)
    except ValueError:
        raise PointError(f"bad amount {text!r}") from None
    return Amount.multiple(g)


def parse_point(text: str) -> SchedulePoint:
    """Parse 'nnz:1,col:4,r:32' style point syntax."""
    parts = text.replace(" ", "").split(",")
    if len(parts) != 3:
        raise PointError(
            f"expected 'kind:amount,col:amount,r:N', got {text!r}"
        )
    fields = {}
    for part in parts:
        if ":" not in part:
            raise PointError(f"bad point field {part!r}")
        key, _, value = part.partition(":")
        fields[key] = value
    kinds = [k for k in fields if k in ("nnz", "row")]
    if len(kinds) != 1 or "col" not in fields or "r" not in fields:
        raise PointError(
            f"expected 'kind:amount,col:amount,r:N', got {text!r}"
        )
    kind = DataKind.NNZ if kinds[0] == "nnz" else DataKind.ROW
    try:
        r = int(fields["r"])
    except ValueError:
        raise PointError(f"bad group width {fields['r']!r}") from None
    return SchedulePoint(kind, _parse_amount(fields[kinds[0]]), _parse_amount(fields["col"]), r)


# --- legality --------------------------------------------------------------


def legality_rule(point: SchedulePoint) -> int | None:
    """Number of the first rejection rule that fires, or None if legal.

    1. Nonzero-kind data cannot be subdivided below one nonzero, and a
       nonzero owner cannot share a column bundle: nnz with any reciprocal
       amount is out.
    2. A fractional row owner supplies one partial result per group; fewer
       lanes than the sharing factor (r/g < 1) cannot carry the reduction.
    3. A fractional row owner cannot also share columns fractionally.
    """
    data, col = point.data_amount, point.col_amount
    if point.data_kind is DataKind.NNZ and (
        data.kind is AmountKind.RECIPROCAL or col.kind is AmountKind.RECIPROCAL
    ):
        return 1
    if (
        point.data_kind is DataKind.ROW
        and data.kind is AmountKind.RECIPROCAL
        and Fraction(point.r, data.param) < 1
    ):
        return 2
    if (
        point.data_kind is DataKind.ROW
        and data.kind is AmountKind.RECIPROCAL
        and col.kind is AmountKind.RECIPROCAL
    ):
        return 3
    return None


def is_legal(point: SchedulePoint) -> bool:
    return legality_rule(point) is None


# --- enumeration -----------------------------------------------------------


@dataclass(frozen=True)
class SpaceEnumeration:
    legal: tuple[SchedulePoint, ...]
    rejected: tuple[tuple[SchedulePoint, int], ...]


def _amounts(params) -> list[Amount]:
    out = [Amount.reciprocal(g) for g in sorted(set(params)) if g >= 2]
    out.append(Amount.one())
    out.extend(Amount.multiple(g) for g in sorted(set(params)) if g >= 2)
    return out


DEFAULT_G_VALUES = (2, 4, 8, 16, 32)
DEFAULT_C_VALUES = (1, 2, 4)
DEFAULT_R_VALUES = (1, 2, 4, 8, 16, 32)


def enumerate_space(
    g_values=DEFAULT_G_VALUES,
    c_values=DEFAULT_C_VALUES,
    r_values=DEFAULT_R_VALUES,
) -> SpaceEnumeration:
    """Every point over the given parameter grids, split into legal points
    and (point, rule) rejections.  Ordering is deterministic: nnz before
    row, reciprocal < one < multiple with ascending parameters, then
    ascending r."""
    legal: list[SchedulePoint] = []
    rejected: list[tuple[SchedulePoint, int]] = []
    for kind, data, col, r in itertools.product(
        (DataKind.NNZ, DataKind.ROW),
        _amounts(g_values),
        _amounts(c_values),
        sorted(set(r_values)),
    ):
        point = SchedulePoint(kind, data, col, r)
        rule = legality_rule(point)
        if rule is None:
            legal.append(point)
        else:
            rejected.append((point, rule))
    legal.sort(key=SchedulePoint._key)
    rejected.sort(key=lambda pr: pr[0]._key())
    return SpaceEnumeration(tuple(legal), tuple(rejected))


def da_spmm_points() -> tuple[SchedulePoint, ...]:
    """The four classic SpMM strategies as points of this space: chunked
    nonzeros with a serial reduction, whole rows with a serial reduction,
    shared rows with a parallel lane reduction, and one nonzero per lane
    with a segment reduction."""
    return (
        parse_point("nnz:32,col:1,r:1"),
        parse_point("row:1,col:1,r:1"),
        parse_point("row:1/32,col:1,r:32"),
        parse_point("nnz:1,col:1,r:32"),
    )


# --- finer-grained configuration space --------------------------------------


def _next_pow2(x: int) -> int:
    out = 1
    while out < x:
        out *= 2
    return out


_GROUP_SIZES = (2, 4, 8, 16, 32)
_BLOCK_SIZES = (128, 256, 512)
_WORKER_SCALES = (
    Fraction(1, 4),
    Fraction(1, 2),
    Fraction(1),
    Fraction(2),
    Fraction(4),
)


@dataclass(frozen=True)
class FineGrainedConfig:
    """One cell of the tuning grid layered under a schedule point.

    worker_size (lanes per hardware warp) and thread_rows are fixed by the
    machine model; coarsen_size follows the dense width's divisibility.
    worker_scale stretches or shrinks the worker-dimension row allotment.
    """

    group_size: int
    block_size: int
    tile_size: int
    worker_scale: Fraction
    coarsen_size: int
    worker_size: int = 32
    thread_rows: int = 1


def _coarsen_for(n: int) -> int:
    if n % 4 == 0:
        return 4
    if n % 2 == 0:
        return 2
    return 1


def enumerate_fine_grained(n: int) -> tuple[FineGrainedConfig, ...]:
    """All tuning cells for dense width n, deterministically ordered.

    tile_size runs over powers of two from group_size up to
    max(group_size, next_pow2(n)): a tile never splits its group, and only
    stretches past the group when the dense width still has columns to
    cover.
    """
    if n < 1:
        raise ValueError("dense width must be positive")
    coarsen = _coarsen_for(n)
    cells = []
    for group in _GROUP_SIZES:
        tile_cap = max(group, _next_pow2(n))
        tile = group
        tiles = []
        while tile <= tile_cap:
            tiles.append(tile)
            tile *= 2
        for block, tile_size, scale in itertools.product(
            _BLOCK_SIZES, tiles, _WORKER_SCALES
        ):
            cells.append(
                FineGrainedConfig(group, block, tile_size, scale, coarsen)
            )
    cells.sort(
        key=lambda c: (c.group_size, c.block_size, c.tile_size, c.worker_scale)
    )
    return tuple(cells)
