"""CUDA C++ source emission for lowered kernels.

The printer is deliberately rigid: two-space indent, always-braced bodies,
parentheses only where precedence demands them.  Emission is a pure function
of the kernel, so generated sources are stable byte-for-byte.
"""

from __future__ import annotations

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
    MacroInstr,
    Store,
    VarDecl,
    VarRef,
    WhileLoop,
)
from .lowering import LoweredKernel

__all__ = ["DEVICE_PRELUDE", "emit_cuda"]


DEVICE_PRELUDE = """\
__device__ __forceinline__ int binary_search_before(const int *array, int lo, int hi, int target) {
  if (array[lo] > target) {
    return lo;
  }
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    if (array[mid] <= target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

template <typename T, int G>
__device__ void atomicAddGroup(T *array, int index, T value);

template <typename T, int G>
__device__ void segReduceGroup(T *array, int index, T value);
"""

_PARAMS = (
    "const int *A2_pos, const int *A2_crd, const double *A_vals, "
    "const double *B_vals, double *C_vals, const int *i_blockStarts, "
    "int A1_dimension, int B2_dimension, int C2_dimension"
)

_PREC_ATOM = 9
_PREC = {
    "==": 1,
    "!=": 1,
    "<": 1,
    "<=": 1,
    ">": 1,
    ">=": 1,
    "+": 2,
    "-": 2,
    "*": 3,
    "/": 3,
    "%": 3,
}
# ops whose right operand cannot keep an equal-precedence subtree bare
_RIGHT_FRAGILE = ("-", "/", "%")

_HW = {"block": "blockIdx.x", "thread": "threadIdx.x"}

_MACRO_FN = {MACRO_ATOMIC_ADD_GROUP: "atomicAddGroup"}


def _prec(e: LlirExpr) -> int:
    if isinstance(e, BinOp) and e.op != "min":
        return _PREC[e.op]
    return _PREC_ATOM


def _expr(e: LlirExpr) -> str:
    if isinstance(e, IntConst):
        return str(e.value)
    if isinstance(e, FloatConst):
        return repr(e.value)
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, HardwareIdx):
        return _HW[e.kind]
    if isinstance(e, ArrayLoad):
        return f"{e.array}[{_expr(e.index)}]"
    if isinstance(e, BinarySearchBefore):
        return (
            f"binary_search_before({e.array}, {_expr(e.lo)}, "
            f"{_expr(e.hi)}, {_expr(e.target)})"
        )
    if isinstance(e, BinOp):
        if e.op == "min":
            return f"min({_expr(e.lhs)}, {_expr(e.rhs)})"
        p = _PREC[e.op]
        lhs = _expr(e.lhs)
        if _prec(e.lhs) < p:
            lhs = f"({lhs})"
        rhs = _expr(e.rhs)
        rp = _prec(e.rhs)
        if rp < p or (rp == p and e.op in _RIGHT_FRAGILE):
            rhs = f"({rhs})"
        return f"{lhs} {e.op} {rhs}"
    raise TypeError(f"cannot print expression {e!r}")


def _emit_block(body, indent: int, out: list[str]):
    for s in body:
        _emit_stmt(s, indent, out)


def _emit_stmt(s: LlirStmt, indent: int, out: list[str]):
    pad = "  " * indent
    if isinstance(s, VarDecl):
        ctype = "int" if s.dtype == "int" else "double"
        out.append(f"{pad}{ctype} {s.name} = {_expr(s.init)};")
    elif isinstance(s, Assign):
        out.append(f"{pad}{s.name} = {_expr(s.value)};")
    elif isinstance(s, Store):
        out.append(f"{pad}{s.array}[{_expr(s.index)}] = {_expr(s.value)};")
    elif isinstance(s, AtomicAdd):
        out.append(f"{pad}atomicAdd(&{s.array}[{_expr(s.index)}], {_expr(s.value)});")
    elif isinstance(s, MacroInstr):
        fn = _MACRO_FN.get(s.kind, "segReduceGroup")
        out.append(
            f"{pad}{fn}<double,{s.group_size}>"
            f"({s.array}, {_expr(s.index)}, {_expr(s.value)});"
        )
    elif isinstance(s, Break):
        out.append(f"{pad}break;")
    elif isinstance(s, ForLoop):
        out.append(
            f"{pad}for (int {s.var} = {_expr(s.begin)}; "
            f"{s.var} < {_expr(s.end)}; {s.var}++) {{"
        )
        _emit_block(s.body, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, WhileLoop):
        out.append(f"{pad}while ({_expr(s.cond)}) {{")
        _emit_block(s.body, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, If):
        out.append(f"{pad}if ({_expr(s.cond)}) {{")
        _emit_block(s.then_body, indent + 1, out)
        if s.else_body:
            out.append(f"{pad}}} else {{")
            _emit_block(s.else_body, indent + 1, out)
        out.append(f"{pad}}}")
    else:
        raise TypeError(f"cannot print statement {s!r}")


def emit_cuda(kernel: LoweredKernel) -> str:
    """Full translation unit for one kernel: search helper, group reduction
    declarations, launch geometry comments, then the kernel itself."""
    lines = [DEVICE_PRELUDE]
    if kernel.point is not None:
        lines.append(f"// point: {kernel.point}")
    lines.append(f"// grid_size = {kernel.grid_size}")
    lines.append(f"// block_size = {kernel.block_size}")
    lines.append(f"__global__ void {kernel.name}({_PARAMS}) {{")
    body: list[str] = []
    _emit_block(kernel.body, 1, body)
    lines.extend(body)
    lines.append("}")
    return "\n".join(lines) + "\n"
