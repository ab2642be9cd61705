"""Lowering: scheduled iteration trees down to executable kernels.

The walker is driven by the tree plus its relation list.  Three data
decompositions are understood, detected from the root ancestry of the
block-mapped loop:

  position chunks   the block loop splits the whole-matrix nonzero position
                    space (roots {i, j}); rows are recovered with a clamped
                    binary search over precomputed block starts and tracked
                    forward as positions advance,
  row chunks        the block loop splits the row dimension (roots {i}),
  fused row-column  the block loop splits the fused output space
                    (roots {i, k}).

Emitted register and array names follow compressed-sparse conventions:
A2_pos / A2_crd / A_vals for the sparse operand, B_vals / C_vals for the
dense side, i_blockStarts for the search index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cin import (
    Assignment,
    CinStmt,
    Forall,
    FuseRel,
    GroupRel,
    Mul,
    ParallelUnit,
    PosRel,
    ReductionStrategy,
    SplitRel,
    BoundRel,
    SuchThat,
    Where,
    find_group_rel,
    forall_map,
    relations_of,
    root_ancestors,
)
from .llir import (
    ArrayLoad,
    Assign,
    AtomicAdd,
    BinarySearchBefore,
    BinOp,
    Break,
    FloatConst,
    ForLoop,
    HardwareIdx,
    If,
    IntConst,
    LlirExpr,
    LlirStmt,
    MACRO_ATOMIC_ADD_GROUP,
    MACRO_SEG_REDUCE_GROUP,
    MacroInstr,
    Store,
    VarDecl,
    VarRef,
    WhileLoop,
)
from .matrices import CsrMatrix
from .schedule import _forall_ancestry, static_extents, validate_schedule

__all__ = [
    "KernelConfig",
    "LoweredKernel",
    "LoweringError",
    "binary_search_before",
    "compute_block_starts",
    "lower",
]


class LoweringError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Kernel-wide scalars: n is the dense column count of B and C, p the
    parallelism budget the template math is scaled around."""

    n: int = 4
    p: int = 256

    def __post_init__(self):
        if self.n < 1:
            raise LoweringError("dense width n must be positive")
        if self.p < 32 or self.p % 32 != 0:
            raise LoweringError("parallelism p must be a positive warp multiple")


def binary_search_before(array, lo: int, hi: int, target: int) -> int:
    """Largest p in [lo, hi) with array[p] <= target.

    The array must be non-decreasing on the window.  If no position
    qualifies (or the window is empty) the result clamps to lo.
    """
    if hi <= lo:
        return lo
    if array[lo] > target:
        return lo
    lo, hi = int(lo), int(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if array[mid] <= target:
            lo = mid
        else:
            hi = mid
    return lo


def compute_block_starts(row_ptr, chunk_size: int, num_blocks: int) -> np.ndarray:
    """Row owning the first position of each block chunk; length
    num_blocks + 1.  Entry b is the largest row whose segment starts at or
    before position b * chunk_size."""
    if chunk_size < 1:
        raise LoweringError("chunk size must be positive")
    row_ptr = np.asarray(row_ptr, dtype=np.int64)
    targets = np.arange(num_blocks + 1, dtype=np.int64) * chunk_size
    starts = np.searchsorted(row_ptr, targets, side="right") - 1
    return starts.astype(np.int64)


@dataclass(frozen=True)
class LoweredKernel:
    name: str
    body: tuple[LlirStmt, ...]
    grid_size: int
    block_size: int
    block_starts: np.ndarray | None = None
    family: str | None = None
    point: str | None = None


# emitted name space
_POS = "A2_pos"
_CRD = "A2_crd"
_AVALS = "A_vals"
_BVALS = "B_vals"
_CVALS = "C_vals"
_STARTS = "i_blockStarts"
_ROWS = "A1_dimension"
_BDIM = "B2_dimension"
_CDIM = "C2_dimension"

_ROOT_DIMS = {"i": _ROWS, "k": _CDIM}


def _sum(terms: list[LlirExpr]) -> LlirExpr:
    expr = terms[0]
    for t in terms[1:]:
        expr = BinOp("+", expr, t)
    return expr


class _Lowerer:
    def __init__(self, stmt: SuchThat, config: KernelConfig, matrix: CsrMatrix):
        self.stmt = stmt
        self.config = config
        self.matrix = matrix
        self.rels = relations_of(stmt)
        self.fmap = forall_map(stmt)
        self.ext = static_extents(
            stmt,
            n=config.n,
            num_rows=matrix.num_rows,
            num_cols=matrix.num_cols,
            nnz=matrix.nnz,
        )

        self.units: dict[ParallelUnit, str] = {}
        self.any_atomic = False
        for var, f in self.fmap.items():
            if f.annotation is not None:
                self.units[f.annotation.unit] = var
                if f.annotation.race.value == "Atomics":
                    self.any_atomic = True
        self.block_var = self.units[ParallelUnit.GPU_BLOCK]
        self.warp_var = self.units.get(ParallelUnit.GPU_WARP)
        self.thread_var = self.units[ParallelUnit.GPU_THREAD]
        self.hw_vars = {v for v in (self.block_var, self.warp_var, self.thread_var) if v}
        self.group: GroupRel | None = find_group_rel(stmt)

        self.split_of = {r.var: r for r in self.rels if isinstance(r, SplitRel)}
        self.bound_of = {r.var: r for r in self.rels if isinstance(r, BoundRel)}
        self.fuse_part = {}
        for r in self.rels:
            if isinstance(r, FuseRel):
                self.fuse_part[r.left] = (r, "left")
                self.fuse_part[r.right] = (r, "right")

        pos_rels = [r for r in self.rels if isinstance(r, PosRel)]
        self.abs_pos = None
        self.row_pos = None
        for r in pos_rels:
            roots = root_ancestors(stmt, r.var)
            if roots == {"i", "j"}:
                self.abs_pos = r
            elif roots == {"j"}:
                self.row_pos = r
            else:
                raise LoweringError(f"unsupported position space over {sorted(roots)}")

        self.bound: dict[str, LlirExpr] = {}
        self.current_ws: str | None = None
        self.prelude_done = False
        self._classify()

    # --- shape classification --------------------------------------------

    def _classify(self):
        block_roots = root_ancestors(self.stmt, self.block_var)
        owner = next(
            (r for r in self.rels if isinstance(r, SplitRel) and r.outer == self.block_var),
            None,
        )
        if owner is None:
            raise LoweringError("the block loop must come from a split")
        self.chunk = owner.factor

        m, n = self.matrix, self.config.n
        if block_roots == {"i", "j"}:
            if self.abs_pos is None:
                raise LoweringError("position-chunked schedule without a pos relation")
            self.mode = "pos_chunk"
            self.grid = -(-m.nnz // self.chunk) if m.nnz else 0
        elif block_roots == {"i"}:
            self.mode = "row_chunk"
            self.grid = -(-m.num_rows // self.chunk)
        elif block_roots == {"i", "k"}:
            self.mode = "fused_ik"
            self.grid = -(-(m.num_rows * n) // self.chunk)
        else:
            raise LoweringError(
                f"unsupported block decomposition over roots {sorted(block_roots)}"
            )

        # serial component of the position walk, if any (chunked positions
        # iterated by a serial loop under the thread split)
        self.pos_walk_var = None
        if self.mode == "pos_chunk":
            serial = [
                v
                for v in self._leaves(self.abs_pos.pos_var)
                if v not in self.hw_vars and v != self.block_var
            ]
            if len(serial) > 1:
                raise LoweringError("more than one serial position component")
            self.pos_walk_var = serial[0] if serial else None

        # strided split of a per-row position space (thread lanes stride the
        # row segment)
        self.strided_outer = None
        if self.row_pos is not None:
            sp = self.split_of.get(self.row_pos.pos_var)
            if sp is not None:
                if sp.inner != self.thread_var:
                    raise LoweringError(
                        "a split row-position space must map its inner part "
                        "to the thread loop"
                    )
                self.strided_outer = sp.outer

        self.on_enter: dict[str, list] = {}
        if self.mode == "row_chunk":
            self._attach(self._completer("i"), self._emit_row_index)
            self._attach(self._completer("k"), self._emit_col_index)
        elif self.mode == "fused_ik":
            fused = self.fuse_part["i"][0].fused
            self._attach(self._completer(fused), self._emit_fused_index)
        else:
            self._attach(self._completer("k"), self._emit_col_index)

    def _leaves(self, var: str) -> list[str]:
        out = []
        stack = [var]
        while stack:
            v = stack.pop()
            children = []
            if v in self.split_of:
                children = [self.split_of[v].outer, self.split_of[v].inner]
            elif v in self.bound_of:
                children = [self.bound_of[v].bounded]
            if children:
                stack.extend(children)
            else:
                out.append(v)
        return out

    def _completer(self, var: str) -> str | None:
        serial = [v for v in self._leaves(var) if v in self.fmap and v not in self.hw_vars]
        if not serial:
            return None
        depth = {v: len(a) for v, a in _forall_ancestry(self.stmt).items()}
        return max(serial, key=lambda v: depth.get(v, 0))

    def _attach(self, var: str | None, action):
        if var is None:
            raise LoweringError("index must close over at least one serial loop")
        self.on_enter.setdefault(var, []).append(action)

    # --- index expressions --------------------------------------------------

    def _resolve(self, var: str, omit: frozenset[str] = frozenset()) -> LlirExpr | None:
        """Expression for a derived variable in terms of bound registers.
        Variables in `omit` contribute nothing (used for search bases)."""
        if var in omit:
            return None
        if var in self.bound:
            return self.bound[var]
        if var in self.bound_of:
            return self._resolve(self.bound_of[var].bounded, omit)
        if var in self.split_of:
            rel = self.split_of[var]
            outer = self._resolve(rel.outer, omit)
            inner = self._resolve(rel.inner, omit)
            terms = []
            if outer is not None:
                terms.append(BinOp("*", outer, IntConst(rel.factor)))
            if inner is not None:
                terms.append(inner)
            if not terms:
                return None
            return _sum(terms)
        raise LoweringError(f"cannot resolve index variable {var!r}")

    def _extent_expr(self, var: str) -> LlirExpr:
        if var in _ROOT_DIMS:
            return VarRef(_ROOT_DIMS[var])
        rel = next(
            (r for r in self.rels if isinstance(r, FuseRel) and r.fused == var), None
        )
        if rel is not None:
            return BinOp("*", self._extent_expr(rel.left), self._extent_expr(rel.right))
        value = self.ext.get(var)
        if value is None:
            raise LoweringError(f"no extent for {var!r}")
        return IntConst(value)

    def _out_index(self) -> LlirExpr:
        return BinOp(
            "+", BinOp("*", self.bound["i"], VarRef(_CDIM)), self.bound["k"]
        )

    # --- kernel assembly ----------------------------------------------------

    def build(self) -> tuple[LlirStmt, ...]:
        out: list[LlirStmt] = []
        out.append(VarDecl(self.block_var, HardwareIdx("block")))
        self.bound[self.block_var] = VarRef(self.block_var)
        thread_ext = self.ext[self.thread_var]
        if self.warp_var is not None:
            out.append(
                VarDecl(
                    self.warp_var,
                    BinOp("/", HardwareIdx("thread"), IntConst(thread_ext)),
                )
            )
            out.append(
                VarDecl(
                    self.thread_var,
                    BinOp("%", HardwareIdx("thread"), IntConst(thread_ext)),
                )
            )
            self.bound[self.warp_var] = VarRef(self.warp_var)
        else:
            out.append(VarDecl(self.thread_var, HardwareIdx("thread")))
        self.bound[self.thread_var] = VarRef(self.thread_var)
        out.extend(self._stmt(self.stmt.body))
        return tuple(out)

    def _stmt(self, node: CinStmt) -> list[LlirStmt]:
        if isinstance(node, Forall):
            return self._forall(node)
        if isinstance(node, Where):
            return self._where(node)
        raise LoweringError(f"cannot lower bare statement {node!r}")

    def _forall(self, node: Forall) -> list[LlirStmt]:
        var = node.var
        if var in self.hw_vars:
            return self._stmt(node.body)

        if self.mode == "pos_chunk" and var == self.pos_walk_var:
            return self._pos_walk_loop(node)
        if self.row_pos is not None and var == self.strided_outer:
            return self._strided_pos_loop(node)
        if self.row_pos is not None and var == self.row_pos.pos_var:
            return self._direct_pos_loop(node, loop_name=var)
        if var == "j" and self.row_pos is None and self.mode == "row_chunk":
            # a loop over the raw sparse coordinate: iterate its positions
            return self._direct_pos_loop(node, loop_name="jpos")

        extent = self.ext.get(var)
        if extent is None:
            raise LoweringError(f"loop {var!r} has no static extent")
        self.bound[var] = VarRef(var)
        body = self._enter(var) + self._stmt(node.body)
        return [ForLoop(var, IntConst(0), IntConst(extent), tuple(body))]

    def _enter(self, var: str) -> list[LlirStmt]:
        out: list[LlirStmt] = []
        for action in self.on_enter.get(var, ()):
            out.extend(action())
        return out

    # --- on-enter index emitters ---------------------------------------------

    def _emit_row_index(self) -> list[LlirStmt]:
        decl = VarDecl("i", self._resolve("i"))
        self.bound["i"] = VarRef("i")
        guard = If(BinOp(">=", VarRef("i"), VarRef(_ROWS)), (Break(),))
        return [decl, guard]

    def _emit_col_index(self) -> list[LlirStmt]:
        decl = VarDecl("k", self._resolve("k"))
        self.bound["k"] = VarRef("k")
        return [decl]

    def _emit_fused_index(self) -> list[LlirStmt]:
        rel = self.fuse_part["i"][0]
        fused = rel.fused
        decl = VarDecl(fused, self._resolve(fused))
        self.bound[fused] = VarRef(fused)
        limit = BinOp("*", self._extent_expr(rel.left), self._extent_expr(rel.right))
        guard = If(BinOp(">=", VarRef(fused), limit), (Break(),))
        right_ext = self._extent_expr(rel.right)
        i_decl = VarDecl("i", BinOp("/", VarRef(fused), right_ext))
        k_decl = VarDecl("k", BinOp("%", VarRef(fused), right_ext))
        self.bound["i"] = VarRef("i")
        self.bound["k"] = VarRef("k")
        return [decl, guard, i_decl, k_decl]

    # --- where / reduction ----------------------------------------------------

    def _where(self, node: Where) -> list[LlirStmt]:
        ws = node.consumer.rhs.name
        self.current_ws = ws
        out: list[LlirStmt] = []
        if self.mode == "pos_chunk":
            out.extend(self._pos_prelude())
        out.append(VarDecl(ws, FloatConst(0.0), "double"))

        if isinstance(node.producer, Assignment):
            out.extend(self._thread_owned_position(node.producer, ws))
        else:
            out.extend(self._stmt(node.producer))

        out.extend(self._writeback(ws))
        return out

    def _pos_prelude(self) -> list[LlirStmt]:
        if self.prelude_done:
            raise LoweringError("only one position decomposition per kernel")
        self.prelude_done = True
        out = [
            VarDecl("pA2_begin", ArrayLoad(_STARTS, self.bound[self.block_var])),
            VarDecl(
                "pA2_end",
                ArrayLoad(_STARTS, BinOp("+", self.bound[self.block_var], IntConst(1))),
            ),
        ]
        pos_var = self.abs_pos.pos_var
        if self.pos_walk_var is None:
            out.append(VarDecl("fposA", self._resolve(pos_var)))
            target: LlirExpr = VarRef("fposA")
        else:
            target = self._resolve(pos_var, omit=frozenset((self.pos_walk_var,)))
        # window widened by one row and clamped: chunk boundaries can land
        # inside a row, and lanes past the last position must still resolve
        # to an in-range row
        hi = BinOp("min", BinOp("+", VarRef("pA2_end"), IntConst(1)), VarRef(_ROWS))
        out.append(
            VarDecl(
                "i_pos",
                BinarySearchBefore(_POS, VarRef("pA2_begin"), hi, target),
            )
        )
        out.append(VarDecl("i", VarRef("i_pos")))
        self.bound["i"] = VarRef("i")
        return out

    def _advance_walk(self) -> WhileLoop:
        cond = BinOp(
            "==", VarRef("fposA"), ArrayLoad(_POS, BinOp("+", VarRef("i_pos"), IntConst(1)))
        )
        return WhileLoop(
            cond,
            (
                Assign("i_pos", BinOp("+", VarRef("i_pos"), IntConst(1))),
                Assign("i", VarRef("i_pos")),
            ),
        )

    def _oob_cond(self) -> LlirExpr:
        return BinOp(">=", VarRef("fposA"), ArrayLoad(_POS, VarRef(_ROWS)))

    def _access_product(self, pos: LlirExpr, coord: str, assign: Assignment):
        """f/j and kB declarations plus the A*B product expression."""
        if not isinstance(assign.rhs, Mul):
            raise LoweringError("expected a two-operand multiply")
        decls = [
            VarDecl(coord, ArrayLoad(_CRD, pos)),
            VarDecl(
                "kB",
                BinOp("+", BinOp("*", VarRef(coord), VarRef(_BDIM)), self.bound["k"]),
            ),
        ]
        product = BinOp(
            "*", ArrayLoad(_AVALS, pos), ArrayLoad(_BVALS, VarRef("kB"))
        )
        return decls, product

    def _ws_update(self, assign: Assignment, ws: str, product: LlirExpr) -> Assign:
        if assign.op == "=":
            return Assign(ws, product)
        return Assign(ws, BinOp("+", VarRef(ws), product))

    def _thread_owned_position(self, assign: Assignment, ws: str) -> list[LlirStmt]:
        decls, product = self._access_product(VarRef("fposA"), "f", assign)
        access = [*decls, self._advance_walk(), self._ws_update(assign, ws, product)]
        if self.group is not None and self.group.strategy is ReductionStrategy.SEGMENT:
            return [
                If(
                    self._oob_cond(),
                    (Assign(ws, FloatConst(0.0), zero_extension=True),),
                    tuple(access),
                )
            ]
        return [If(self._oob_cond(), (Break(),)), *access]

    def _pos_walk_loop(self, node: Forall) -> list[LlirStmt]:
        var = node.var
        extent = self.ext.get(var)
        if extent is None:
            raise LoweringError(f"position walk {var!r} has no static extent")
        if not self.any_atomic:
            raise LoweringError("a chunked position walk needs atomic output writes")
        self.bound[var] = VarRef(var)
        if not isinstance(node.body, Assignment):
            raise LoweringError("the position walk must directly wrap the compute")
        ws = self.current_ws
        pos_expr = self._resolve(self.abs_pos.pos_var)
        flush = If(
            BinOp(
                "==",
                VarRef("fposA"),
                ArrayLoad(_POS, BinOp("+", VarRef("i_pos"), IntConst(1))),
            ),
            (
                AtomicAdd(_CVALS, self._out_index(), VarRef(ws)),
                Assign(ws, FloatConst(0.0)),
                self._advance_walk(),
            ),
        )
        decls, product = self._access_product(VarRef("fposA"), "f", node.body)
        body: list[LlirStmt] = [
            VarDecl("fposA", pos_expr),
            If(self._oob_cond(), (Break(),)),
            flush,
            *decls,
            self._ws_update(node.body, ws, product),
        ]
        return [ForLoop(var, IntConst(0), IntConst(extent), tuple(body))]

    def _direct_pos_loop(self, node: Forall, loop_name: str) -> list[LlirStmt]:
        i = self.bound.get("i")
        if i is None:
            raise LoweringError("row position loop before the row index is known")
        begin = ArrayLoad(_POS, i)
        end = ArrayLoad(_POS, BinOp("+", i, IntConst(1)))
        body_assign = node.body
        if not isinstance(body_assign, Assignment):
            raise LoweringError("the position loop must directly wrap the compute")
        ws = self.current_ws
        decls, product = self._access_product(VarRef(loop_name), "j", body_assign)
        body = [*decls, self._ws_update(body_assign, ws, product)]
        return [ForLoop(loop_name, begin, end, tuple(body))]

    def _strided_pos_loop(self, node: Forall) -> list[LlirStmt]:
        sp = self.split_of[self.row_pos.pos_var]
        g = sp.factor
        i = self.bound.get("i")
        if i is None:
            raise LoweringError("row position loop before the row index is known")
        out: list[LlirStmt] = [
            VarDecl("pA2_begin", ArrayLoad(_POS, i)),
            VarDecl("pA2_end", ArrayLoad(_POS, BinOp("+", i, IntConst(1)))),
        ]
        trips = BinOp(
            "/",
            BinOp(
                "+",
                BinOp("-", VarRef("pA2_end"), VarRef("pA2_begin")),
                IntConst(g - 1),
            ),
            IntConst(g),
        )
        if not isinstance(node.body, Assignment):
            raise LoweringError("the position loop must directly wrap the compute")
        ws = self.current_ws
        self.bound[node.var] = VarRef(node.var)
        pos = _sum(
            [
                VarRef("pA2_begin"),
                BinOp("*", VarRef(node.var), IntConst(g)),
                self.bound[self.thread_var],
            ]
        )
        decls, product = self._access_product(VarRef("jposA"), "j", node.body)
        guarded = If(
            BinOp("<", VarRef("jposA"), VarRef("pA2_end")),
            (*decls, self._ws_update(node.body, ws, product)),
        )
        body = (VarDecl("jposA", pos), guarded)
        out.append(ForLoop(node.var, IntConst(0), trips, body))
        return out

    def _writeback(self, ws: str) -> list[LlirStmt]:
        idx = self._out_index()
        if self.group is not None:
            kind = (
                MACRO_SEG_REDUCE_GROUP
                if self.group.strategy is ReductionStrategy.SEGMENT
                else MACRO_ATOMIC_ADD_GROUP
            )
            return [
                VarDecl("kC", idx),
                MacroInstr(kind, self.group.size, _CVALS, VarRef("kC"), VarRef(ws)),
            ]
        if self.any_atomic:
            if self.mode == "pos_chunk" and self.pos_walk_var is not None:
                # row tracking reuses this exact index in mid-walk flushes
                return [AtomicAdd(_CVALS, idx, VarRef(ws))]
            return [VarDecl("kC", idx), AtomicAdd(_CVALS, VarRef("kC"), VarRef(ws))]
        return [
            VarDecl("kC", idx),
            Store(_CVALS, VarRef("kC"), BinOp("+", ArrayLoad(_CVALS, VarRef("kC")), VarRef(ws))),
        ]


def lower(
    stmt: CinStmt,
    config: KernelConfig,
    matrix: CsrMatrix,
    *,
    name: str | None = None,
    family: str | None = None,
    point: str | None = None,
) -> LoweredKernel:
    """Lower a validated schedule to an executable kernel for `matrix`.

    Grid size and (for position-chunked schedules) the block-start search
    table depend on the matrix; everything else is shape-independent.
    """
    if not isinstance(stmt, SuchThat):
        stmt = SuchThat(stmt, ())
    problems = validate_schedule(stmt, config)
    if problems:
        raise LoweringError("; ".join(problems))

    lw = _Lowerer(stmt, config, matrix)
    thread_ext = lw.ext[lw.thread_var]
    warp_ext = lw.ext[lw.warp_var] if lw.warp_var else 1
    block_size = thread_ext * warp_ext
    if block_size % 32 != 0:
        raise LoweringError(f"thread-block size {block_size} is not a warp multiple")

    if lw.group is not None and lw.group.strategy is ReductionStrategy.SEGMENT:
        if thread_ext % lw.group.size != 0:
            raise LoweringError(
                f"segment group width {lw.group.size} must divide the thread "
                f"tile extent {thread_ext}"
            )

    body = lw.build()
    starts = None
    if lw.mode == "pos_chunk":
        starts = compute_block_starts(matrix.row_ptr, lw.chunk, lw.grid)

    return LoweredKernel(
        name=name or "spmm_kernel",
        body=body,
        grid_size=lw.grid,
        block_size=block_size,
        block_starts=starts,
        family=family,
        point=point,
    )
