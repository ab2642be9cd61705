"""Deterministic 32-lane SIMT interpreter for lowered kernels.

Blocks and warps execute sequentially in ascending order, lanes in vector
lockstep over numpy arrays, so every run of the same kernel on the same
inputs is bit-identical.  The step counter is a coarse cost proxy: one step
per executed instruction per warp, loops charged once at entry plus their
body per iteration, binary searches charged log2 of the widest active
window, group reductions charged log2(group) + 1.

Divergence is masked execution: an If runs each arm under the lanes that
took it, a Break removes its lanes until the innermost loop exits, and all
lanes reconverge after the loop.  idle_lane_steps accumulates, for every
charged step, how many of the 32 lanes were masked off (plus lanes that
only carry zero-extension padding through a group reduction).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

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
    MACRO_SEG_REDUCE_GROUP,
    MacroInstr,
    Store,
    VarDecl,
    VarRef,
    WhileLoop,
)
from .lowering import LoweredKernel
from .matrices import CsrMatrix, DenseMatrix

__all__ = [
    "WARP_LANES",
    "SimMetrics",
    "SimState",
    "SimulationFault",
    "collect_metrics",
    "exec_atomic_add_group",
    "exec_seg_reduce_group",
    "run",
]

WARP_LANES = 32


class SimulationFault(RuntimeError):
    """A lane did something a GPU would not survive (bad access, broken
    group invariant).  Carries the lane and the offending node when known."""

    def __init__(self, message: str, *, lane: int | None = None, node=None):
        super().__init__(message)
        self.lane = lane
        self.node = node


@dataclass(frozen=True)
class SimMetrics:
    max_warp_steps: int
    total_steps: int
    atomic_ops: int
    idle_lane_steps: int
    per_warp_steps: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "max_warp_steps": self.max_warp_steps,
                "total_steps": self.total_steps,
                "atomic_ops": self.atomic_ops,
                "idle_lane_steps": self.idle_lane_steps,
                "per_warp_steps": {str(k): v for k, v in sorted(self.per_warp_steps.items())},
            }
        )


# --- warp-cooperative reduction primitives ---------------------------------


def _as_groups(idx, val, active, group_size: int):
    idx = np.asarray(idx, dtype=np.int64)
    val = np.asarray(val)
    if active is None:
        active = np.ones(idx.shape[0], dtype=bool)
    else:
        active = np.asarray(active, dtype=bool)
    if group_size < 1:
        raise ValueError("group size must be positive")
    if idx.shape[0] % group_size != 0:
        raise ValueError(
            f"lane count {idx.shape[0]} is not a multiple of group size {group_size}"
        )
    return idx, val, active


def exec_atomic_add_group(idx, val, out, active=None, *, group_size: int) -> int:
    """All-active-lanes-same-index reduction: each lane group adds the sum
    of its active lanes to out[index] in one atomic.  Returns the number of
    atomic writebacks issued."""
    idx, val, active = _as_groups(idx, val, active, group_size)
    gi = idx.reshape(-1, group_size)
    gv = val.reshape(-1, group_size)
    ga = active.reshape(-1, group_size)
    have = ga.any(axis=1)
    if not have.any():
        return 0

    lo = np.where(ga, gi, np.iinfo(np.int64).max).min(axis=1)
    hi = np.where(ga, gi, np.iinfo(np.int64).min).max(axis=1)
    bad = have & (lo != hi)
    if bad.any():
        g = int(np.argmax(bad))
        lane = g * group_size + int(np.argmax(ga[g]))
        raise SimulationFault(
            f"group atomic add with diverging indices in lane group {g}",
            lane=lane,
        )
    sums = np.where(ga, gv, 0).sum(axis=1)
    np.add.at(out, lo[have], sums[have])
    return int(have.sum())


def exec_seg_reduce_group(idx, val, out, active=None, *, group_size: int) -> int:
    """Segmented reduction: active lane indices must be non-decreasing in
    lane order within each group; the last lane of every run of equal
    indices adds the run's total.  Returns the number of writebacks."""
    idx, val, active = _as_groups(idx, val, active, group_size)
    writebacks = 0
    n_groups = idx.shape[0] // group_size
    for g in range(n_groups):
        s = slice(g * group_size, (g + 1) * group_size)
        lanes = np.flatnonzero(active[s])
        if lanes.size == 0:
            continue
        gi = idx[s][lanes]
        gv = val[s][lanes]
        if np.any(np.diff(gi) < 0):
            off = int(np.argmax(np.diff(gi) < 0)) + 1
            raise SimulationFault(
                f"segmented reduction with decreasing indices in lane group {g}",
                lane=g * group_size + int(lanes[off]),
            )
        run_start = 0
        for t in range(1, lanes.size + 1):
            if t == lanes.size or gi[t] != gi[run_start]:
                out[gi[run_start]] += gv[run_start:t].sum()
                writebacks += 1
                run_start = t
    return writebacks


# --- interpreter state ------------------------------------------------------


class SimState:
    """Global memory, kernel scalars, and accumulated counters."""

    def __init__(self, arrays: dict[str, np.ndarray], scalars: dict[str, int]):
        self.arrays = arrays
        self.scalars = scalars
        self.atomic_ops = 0
        self.idle_lane_steps = 0
        self.per_warp_steps: dict[int, int] = {}

    def record_warp(self, warp_gid: int, steps: int):
        self.per_warp_steps[warp_gid] = steps


def collect_metrics(state: SimState) -> SimMetrics:
    steps = state.per_warp_steps
    return SimMetrics(
        max_warp_steps=max(steps.values(), default=0),
        total_steps=sum(steps.values()),
        atomic_ops=state.atomic_ops,
        idle_lane_steps=state.idle_lane_steps,
        per_warp_steps=dict(steps),
    )


class _Warp:
    """One warp's execution: private registers, masked recursion over the
    statement tree."""

    def __init__(self, state: SimState, block: int, warp_in_block: int, dtype):
        self.state = state
        self.block = block
        self.warp = warp_in_block
        self.dtype = dtype
        self.regs: dict[str, np.ndarray] = {}
        self.zero_ext: dict[str, np.ndarray] = {}
        self.steps = 0
        self._extra = 0

    # accounting

    def _charge(self, steps: int, mask: np.ndarray):
        self.steps += steps
        self.state.idle_lane_steps += steps * int(WARP_LANES - mask.sum())

    # expression evaluation (full-width, bounds-checked on active lanes)

    def _eval(self, e: LlirExpr, mask: np.ndarray) -> np.ndarray:
        if isinstance(e, IntConst):
            return np.full(WARP_LANES, e.value, dtype=np.int64)
        if isinstance(e, FloatConst):
            return np.full(WARP_LANES, e.value, dtype=self.dtype)
        if isinstance(e, VarRef):
            if e.name in self.regs:
                return self.regs[e.name]
            if e.name in self.state.scalars:
                return np.full(WARP_LANES, self.state.scalars[e.name], dtype=np.int64)
            raise SimulationFault(f"read of undefined register {e.name!r}", node=e)
        if isinstance(e, HardwareIdx):
            if e.kind == "block":
                return np.full(WARP_LANES, self.block, dtype=np.int64)
            return self.warp * WARP_LANES + np.arange(WARP_LANES, dtype=np.int64)
        if isinstance(e, ArrayLoad):
            idx = self._eval(e.index, mask)
            return self._gather(e.array, idx, mask, e)
        if isinstance(e, BinarySearchBefore):
            return self._search(e, mask)
        if isinstance(e, BinOp):
            lhs = self._eval(e.lhs, mask)
            rhs = self._eval(e.rhs, mask)
            return self._binop(e.op, lhs, rhs)
        raise TypeError(f"cannot evaluate {e!r}")

    def _binop(self, op: str, lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        if op == "+":
            return lhs + rhs
        if op == "-":
            return lhs - rhs
        if op == "*":
            return lhs * rhs
        if op == "/":
            if lhs.dtype.kind == "f" or rhs.dtype.kind == "f":
                return lhs / rhs
            return lhs // rhs
        if op == "%":
            return lhs % rhs
        if op == "min":
            return np.minimum(lhs, rhs)
        if op == "==":
            return lhs == rhs
        if op == "!=":
            return lhs != rhs
        if op == "<":
            return lhs < rhs
        if op == "<=":
            return lhs <= rhs
        if op == ">":
            return lhs > rhs
        if op == ">=":
            return lhs >= rhs
        raise TypeError(f"unknown operator {op!r}")

    def _array(self, name: str) -> np.ndarray:
        arr = self.state.arrays.get(name)
        if arr is None:
            raise SimulationFault(f"unknown array {name!r}")
        return arr

    def _check_bounds(self, name, arr, idx, mask, node):
        oob = mask & ((idx < 0) | (idx >= arr.shape[0]))
        if oob.any():
            lane = int(np.argmax(oob))
            raise SimulationFault(
                f"lane {lane}: {name}[{int(idx[lane])}] outside [0, {arr.shape[0]})",
                lane=lane,
                node=node,
            )

    def _gather(self, name, idx, mask, node):
        arr = self._array(name)
        self._check_bounds(name, arr, idx, mask, node)
        safe = np.clip(idx, 0, arr.shape[0] - 1)
        return arr[safe]

    def _search(self, e: BinarySearchBefore, mask: np.ndarray) -> np.ndarray:
        arr = self._array(e.array)
        lo = self._eval(e.lo, mask)
        hi = self._eval(e.hi, mask)
        target = self._eval(e.target, mask)
        window = hi - lo
        widest = int(window[mask].max()) if mask.any() else 0
        if widest > 1:
            self._extra += int(math.ceil(math.log2(widest)))
        found = np.searchsorted(arr, target, side="right") - 1
        found = np.minimum(found, hi - 1)
        return np.maximum(found, lo)

    # register writes

    def _declare(self, name: str, value: np.ndarray, dtype):
        self.regs[name] = value.astype(dtype, copy=True)
        self.zero_ext[name] = np.zeros(WARP_LANES, dtype=bool)

    def _write(self, name: str, value: np.ndarray, mask: np.ndarray, flagged: bool):
        reg = self.regs.get(name)
        if reg is None:
            raise SimulationFault(f"write to undeclared register {name!r}")
        self.regs[name] = np.where(mask, value.astype(reg.dtype), reg)
        flags = self.zero_ext[name]
        self.zero_ext[name] = np.where(mask, flagged, flags)

    # statements: each returns the fall-through mask

    def _exec_body(self, body, mask: np.ndarray) -> np.ndarray:
        for s in body:
            if not mask.any():
                break
            mask = self._exec(s, mask)
        return mask

    def _exec(self, s: LlirStmt, mask: np.ndarray) -> np.ndarray:
        if isinstance(s, VarDecl):
            self._extra = 0
            value = self._eval(s.init, mask)
            self._charge(1 + self._extra, mask)
            self._extra = 0
            self._declare(s.name, value, np.int64 if s.dtype == "int" else self.dtype)
            return mask
        if isinstance(s, Assign):
            value = self._eval(s.value, mask)
            self._charge(1, mask)
            self._write(s.name, value, mask, s.zero_extension)
            return mask
        if isinstance(s, Store):
            self._charge(1, mask)
            arr = self._array(s.array)
            idx = self._eval(s.index, mask)
            val = self._eval(s.value, mask)
            self._check_bounds(s.array, arr, idx, mask, s)
            # overlapping lanes: the highest lane wins, like a real SIMT store
            arr[idx[mask]] = val[mask]
            return mask
        if isinstance(s, AtomicAdd):
            self._charge(1, mask)
            arr = self._array(s.array)
            idx = self._eval(s.index, mask)
            val = self._eval(s.value, mask)
            self._check_bounds(s.array, arr, idx, mask, s)
            np.add.at(arr, idx[mask], val[mask])
            self.state.atomic_ops += int(mask.sum())
            return mask
        if isinstance(s, MacroInstr):
            return self._exec_macro(s, mask)
        if isinstance(s, Break):
            self._charge(1, mask)
            return np.zeros(WARP_LANES, dtype=bool)
        if isinstance(s, ForLoop):
            return self._exec_for(s, mask)
        if isinstance(s, WhileLoop):
            return self._exec_while(s, mask)
        if isinstance(s, If):
            return self._exec_if(s, mask)
        raise TypeError(f"cannot execute {s!r}")

    def _exec_macro(self, s: MacroInstr, mask: np.ndarray) -> np.ndarray:
        steps = int(math.log2(s.group_size)) + 1
        self._charge(steps, mask)
        arr = self._array(s.array)
        idx = self._eval(s.index, mask)
        val = self._eval(s.value, mask)
        self._check_bounds(s.array, arr, idx, mask, s)
        # lanes holding zero-extension padding occupy the reduction without
        # contributing work
        if isinstance(s.value, VarRef):
            flags = self.zero_ext.get(s.value.name)
            if flags is not None:
                self.state.idle_lane_steps += steps * int((mask & flags).sum())
        if s.kind == MACRO_SEG_REDUCE_GROUP:
            wb = exec_seg_reduce_group(idx, val, arr, mask, group_size=s.group_size)
        else:
            wb = exec_atomic_add_group(idx, val, arr, mask, group_size=s.group_size)
        self.state.atomic_ops += wb
        return mask

    def _exec_for(self, s: ForLoop, mask: np.ndarray) -> np.ndarray:
        self._charge(1, mask)
        begin = self._eval(s.begin, mask)
        end = self._eval(s.end, mask)
        self._declare(s.var, begin, np.int64)
        live = mask.copy()
        while True:
            active = live & (self.regs[s.var] < end)
            if not active.any():
                break
            fall = self._exec_body(s.body, active)
            live &= ~(active & ~fall)
            self.regs[s.var] = np.where(fall, self.regs[s.var] + 1, self.regs[s.var])
        return mask

    def _exec_while(self, s: WhileLoop, mask: np.ndarray) -> np.ndarray:
        self._charge(1, mask)
        live = mask.copy()
        while True:
            active = live & self._eval(s.cond, live).astype(bool)
            if not active.any():
                break
            fall = self._exec_body(s.body, active)
            live &= ~(active & ~fall)
        return mask

    def _exec_if(self, s: If, mask: np.ndarray) -> np.ndarray:
        self._charge(1, mask)
        cond = self._eval(s.cond, mask).astype(bool)
        taken = mask & cond
        fallen = mask & ~cond
        t_out = self._exec_body(s.then_body, taken) if taken.any() else taken
        f_out = self._exec_body(s.else_body, fallen) if fallen.any() else fallen
        return t_out | f_out


def run(
    kernel: LoweredKernel,
    a: CsrMatrix,
    b: DenseMatrix,
    c0: DenseMatrix | None = None,
    *,
    precision: str = "double",
) -> tuple[DenseMatrix, SimMetrics]:
    """Execute a lowered kernel; returns the output matrix and metrics.

    c0 seeds the output accumulator (the kernel computes C += A @ B);
    precision "single" runs all value arithmetic in float32.
    """
    if precision not in ("double", "single"):
        raise ValueError(f"unknown precision {precision!r}")
    if a.num_cols != b.num_rows:
        raise ValueError(
            f"shape mismatch: A is {a.num_rows}x{a.num_cols}, B has {b.num_rows} rows"
        )
    if kernel.block_size % WARP_LANES != 0:
        raise ValueError(f"block size {kernel.block_size} is not a warp multiple")
    dtype = np.float64 if precision == "double" else np.float32
    n = b.num_cols
    if c0 is None:
        c_vals = np.zeros(a.num_rows * n, dtype=dtype)
    else:
        if (c0.num_rows, c0.num_cols) != (a.num_rows, n):
            raise ValueError("output seed shape mismatch")
        c_vals = np.asarray(c0.vals, dtype=dtype).copy()

    starts = kernel.block_starts
    arrays = {
        "A2_pos": np.asarray(a.row_ptr, dtype=np.int64),
        "A2_crd": np.asarray(a.col_idx, dtype=np.int64),
        "A_vals": np.asarray(a.vals, dtype=dtype),
        "B_vals": np.asarray(b.vals, dtype=dtype),
        "C_vals": c_vals,
        "i_blockStarts": (
            np.zeros(1, dtype=np.int64) if starts is None else np.asarray(starts, np.int64)
        ),
    }
    scalars = {
        "A1_dimension": a.num_rows,
        "B2_dimension": n,
        "C2_dimension": n,
    }
    state = SimState(arrays, scalars)
    warps_per_block = kernel.block_size // WARP_LANES
    full = np.ones(WARP_LANES, dtype=bool)
    for block in range(kernel.grid_size):
        for w in range(warps_per_block):
            warp = _Warp(state, block, w, dtype)
            warp._exec_body(kernel.body, full.copy())
            state.record_warp(block * warps_per_block + w, warp.steps)

    out = DenseMatrix(a.num_rows, n, arrays["C_vals"].astype(np.float64))
    return out, collect_metrics(state)
