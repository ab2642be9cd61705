"""Low-level IR executed by the simulator and printed by the CUDA emitter.

Statements form trees of loops, guards, and memory operations over named
per-lane registers and named global arrays.  Expressions are side-effect
free.  Everything is a frozen dataclass; kernels are immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "IntConst",
    "FloatConst",
    "VarRef",
    "HardwareIdx",
    "BinOp",
    "ArrayLoad",
    "BinarySearchBefore",
    "LlirExpr",
    "VarDecl",
    "Assign",
    "Store",
    "AtomicAdd",
    "MacroInstr",
    "ForLoop",
    "WhileLoop",
    "If",
    "Break",
    "LlirStmt",
    "BINOP_OPS",
    "MACRO_ATOMIC_ADD_GROUP",
    "MACRO_SEG_REDUCE_GROUP",
]

BINOP_OPS = ("+", "-", "*", "/", "%", "min", "==", "!=", "<", "<=", ">", ">=")

MACRO_ATOMIC_ADD_GROUP = "AtomicAddGroup"
MACRO_SEG_REDUCE_GROUP = "SegReduceGroup"


@dataclass(frozen=True)
class IntConst:
    value: int


@dataclass(frozen=True)
class FloatConst:
    value: float


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class HardwareIdx:
    """blockIdx.x ("block") or threadIdx.x ("thread")."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("block", "thread"):
            raise ValueError(f"unknown hardware index {self.kind!r}")


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: "LlirExpr"
    rhs: "LlirExpr"

    def __post_init__(self):
        if self.op not in BINOP_OPS:
            raise ValueError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class ArrayLoad:
    array: str
    index: "LlirExpr"


@dataclass(frozen=True)
class BinarySearchBefore:
    """Largest position p in [lo, hi) with array[p] <= target (lo if none)."""

    array: str
    lo: "LlirExpr"
    hi: "LlirExpr"
    target: "LlirExpr"


LlirExpr = (
    IntConst | FloatConst | VarRef | HardwareIdx | BinOp | ArrayLoad | BinarySearchBefore
)


@dataclass(frozen=True)
class VarDecl:
    name: str
    init: LlirExpr
    dtype: str = "int"  # "int" or "double"

    def __post_init__(self):
        if self.dtype not in ("int", "double"):
            raise ValueError(f"unknown register type {self.dtype!r}")


@dataclass(frozen=True)
class Assign:
    """Register write.  zero_extension marks the value as padding for lanes
    past the end of the data; the simulator counts such lanes as idle while
    they hold the flagged value through a group reduction."""

    name: str
    value: LlirExpr
    zero_extension: bool = False


@dataclass(frozen=True)
class Store:
    array: str
    index: LlirExpr
    value: LlirExpr


@dataclass(frozen=True)
class AtomicAdd:
    array: str
    index: LlirExpr
    value: LlirExpr


@dataclass(frozen=True)
class MacroInstr:
    """Group-cooperative reduction over a warp's lane groups."""

    kind: str
    group_size: int
    array: str
    index: LlirExpr
    value: LlirExpr

    def __post_init__(self):
        if self.kind not in (MACRO_ATOMIC_ADD_GROUP, MACRO_SEG_REDUCE_GROUP):
            raise ValueError(f"unknown macro {self.kind!r}")


@dataclass(frozen=True)
class ForLoop:
    """for (int var = begin; var < end; var++) { body }"""

    var: str
    begin: LlirExpr
    end: LlirExpr
    body: tuple["LlirStmt", ...]


@dataclass(frozen=True)
class WhileLoop:
    cond: LlirExpr
    body: tuple["LlirStmt", ...]


@dataclass(frozen=True)
class If:
    cond: LlirExpr
    then_body: tuple["LlirStmt", ...]
    else_body: tuple["LlirStmt", ...] = ()


@dataclass(frozen=True)
class Break:
    pass


LlirStmt = VarDecl | Assign | Store | AtomicAdd | MacroInstr | ForLoop | WhileLoop | If | Break
