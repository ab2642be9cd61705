"""Schedule commands: provenance-recording rewrites of the iteration tree.

Each command takes a statement tree (usually the unscheduled SpMM nest from
:func:`spmmlab.cin.build_spmm_cin`), performs one structural transformation,
and appends the matching relation so the derivation of every loop variable
stays recoverable.  ``apply`` never mutates its input.

Commands mirror the relation vocabulary: Fuse, Pos, Split, Bound,
Parallelize, plus Precompute which introduces the scalar-workspace ``where``
used by every reduction schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cin import (
    Access,
    Assignment,
    BoundRel,
    CinError,
    CinStmt,
    Forall,
    FuseRel,
    GroupRel,
    ParallelAnnotation,
    ParallelUnit,
    PosRel,
    ReductionStrategy,
    SplitRel,
    SuchThat,
    Where,
    WorkspaceRef,
    check_cin,
    find_group_rel,
    forall_map,
    relations_of,
    root_ancestors,
)

__all__ = [
    "ScheduleError",
    "Fuse",
    "Pos",
    "Split",
    "Bound",
    "Parallelize",
    "Precompute",
    "ScheduleCmd",
    "apply",
    "apply_all",
    "validate_schedule",
    "static_extents",
]


class ScheduleError(ValueError):
    pass


_PLACEMENTS = ("nested", "strided", "sink_inner")

# The sparse operand of the multiply.  Position iteration (pos/compressed
# walks) is only meaningful against its compressed level.
SPARSE_TENSOR = "A"


@dataclass(frozen=True)
class Fuse:
    """Collapse two directly nested loops into one over their product."""

    left: str
    right: str
    fused: str


@dataclass(frozen=True)
class Pos:
    """Move a loop from coordinate space into the position space of a
    compressed tensor level."""

    var: str
    pos_var: str
    access: Access


@dataclass(frozen=True)
class Split:
    """var = outer * factor + inner.

    placement picks where the two loops land in the tree:
      nested     outer directly around inner (the default),
      strided    inner outside outer, giving each inner value a strided
                 slice of the range,
      sink_inner outer at the original position, inner pushed down to wrap
                 the innermost assignment (or where) of the old body.
    The recorded relation is identical for all three; the tree shape is the
    only difference.
    """

    var: str
    outer: str
    inner: str
    factor: int
    placement: str = "nested"

    def __post_init__(self):
        if self.factor < 1:
            raise ScheduleError(f"split factor must be positive, got {self.factor}")
        if self.placement not in _PLACEMENTS:
            raise ScheduleError(f"unknown split placement {self.placement!r}")


@dataclass(frozen=True)
class Bound:
    """Rename a loop whose extent is known exactly, pinning that extent."""

    var: str
    bounded: str
    extent: int
    bound_type: str = "MaxExact"

    def __post_init__(self):
        if self.bound_type != "MaxExact":
            raise ScheduleError(f"unsupported bound type {self.bound_type!r}")
        if self.extent < 1:
            raise ScheduleError("bound extent must be positive")


@dataclass(frozen=True)
class Parallelize:
    """Attach a hardware annotation, or record a lane-group reduction.

    Hardware units annotate the forall in place; the loop structure is not
    rearranged.  GPUGroup does not touch the tree at all: it appends a group
    relation, which is how the textual form keeps group reductions in the
    relation list.
    """

    var: str
    annotation: ParallelAnnotation


@dataclass(frozen=True)
class Precompute:
    """Introduce a scalar workspace between compute and the output tensor.

    With ``var`` given, the loop over ``var`` is sunk into the where-producer
    past any loops it used to enclose:

        forall(v, X[C(i,k) += rhs])
            -> X[where(C(i,k) += ws, forall(v, ws += rhs))]

    With ``var`` omitted the assignment is rewritten in place and the
    producer is a plain copy (``ws = rhs``).
    """

    workspace: str
    var: str | None = None


ScheduleCmd = Fuse | Pos | Split | Bound | Parallelize | Precompute


# --- tree helpers ---------------------------------------------------------


def _rewrite_forall(body: CinStmt, var: str, fn) -> CinStmt:
    """Replace the unique forall binding `var` with fn(node)."""
    hits = 0

    def go(s: CinStmt) -> CinStmt:
        nonlocal hits
        if isinstance(s, Forall):
            if s.var == var:
                hits += 1
                return fn(s)
            return Forall(s.var, go(s.body), s.annotation)
        if isinstance(s, Where):
            return Where(go(s.consumer), go(s.producer))
        if isinstance(s, SuchThat):
            raise ScheduleError("nested suchthat is not a valid tree")
        return s

    out = go(body)
    if hits == 0:
        raise ScheduleError(f"no loop binds {var!r}")
    return out


def _assignments(s: CinStmt) -> list[Assignment]:
    if isinstance(s, Assignment):
        return [s]
    if isinstance(s, Forall):
        return _assignments(s.body)
    if isinstance(s, Where):
        return _assignments(s.consumer) + _assignments(s.producer)
    if isinstance(s, SuchThat):
        return _assignments(s.body)
    return []


def _replace_assignment(s: CinStmt, replacement: CinStmt) -> CinStmt:
    if isinstance(s, Assignment):
        return replacement
    if isinstance(s, Forall):
        return Forall(s.var, _replace_assignment(s.body, replacement), s.annotation)
    raise ScheduleError("expected a plain loop nest around the assignment")


def _used_names(body: CinStmt, rels) -> set[str]:
    names = set(forall_map(body))
    for rel in rels:
        for f in ("var", "outer", "inner", "left", "right", "fused", "pos_var", "bounded"):
            v = getattr(rel, f, None)
            if isinstance(v, str):
                names.add(v)
    return names


def _fresh(name: str, body: CinStmt, rels):
    if name in _used_names(body, rels):
        raise ScheduleError(f"variable name {name!r} is already in use")


def _lhs_roots(body: CinStmt, stmt_for_rels: CinStmt) -> set[str]:
    targets = [a for a in _assignments(body) if isinstance(a.lhs, Access)]
    if not targets:
        raise ScheduleError("no output assignment found")
    roots: set[str] = set()
    for idx in targets[0].lhs.indices:
        roots |= root_ancestors(stmt_for_rels, idx) or {idx}
    return roots


# --- apply ----------------------------------------------------------------


def apply(stmt: CinStmt, cmd: ScheduleCmd) -> CinStmt:
    """Apply one schedule command, returning the transformed tree."""
    if isinstance(stmt, SuchThat):
        body, rels = stmt.body, stmt.relations
    else:
        body, rels = stmt, ()

    if isinstance(cmd, Fuse):
        body, rels = _apply_fuse(body, rels, cmd)
    elif isinstance(cmd, Pos):
        body, rels = _apply_pos(body, rels, cmd)
    elif isinstance(cmd, Split):
        body, rels = _apply_split(body, rels, cmd)
    elif isinstance(cmd, Bound):
        body, rels = _apply_bound(body, rels, cmd)
    elif isinstance(cmd, Parallelize):
        body, rels = _apply_parallelize(body, rels, cmd)
    elif isinstance(cmd, Precompute):
        body, rels = _apply_precompute(body, rels, cmd)
    else:
        raise ScheduleError(f"unknown schedule command {cmd!r}")

    return SuchThat(body, tuple(rels)) if rels else body


def apply_all(stmt: CinStmt, cmds) -> CinStmt:
    for cmd in cmds:
        stmt = apply(stmt, cmd)
    return stmt


def _apply_fuse(body, rels, cmd: Fuse):
    _fresh(cmd.fused, body, rels)

    def fn(f: Forall) -> CinStmt:
        if not isinstance(f.body, Forall) or f.body.var != cmd.right:
            raise ScheduleError(
                f"fuse needs forall({cmd.right}) directly inside forall({cmd.left})"
            )
        if f.annotation is not None or f.body.annotation is not None:
            raise ScheduleError("cannot fuse annotated loops")
        return Forall(cmd.fused, f.body.body)

    return _rewrite_forall(body, cmd.left, fn), rels + (
        FuseRel(cmd.left, cmd.right, cmd.fused),
    )


def _apply_pos(body, rels, cmd: Pos):
    if not isinstance(cmd.access, Access) or cmd.access.tensor != SPARSE_TENSOR:
        raise ScheduleError(
            f"pos() needs an access to the sparse operand {SPARSE_TENSOR}"
        )
    probe = SuchThat(body, tuple(rels))
    roots = root_ancestors(probe, cmd.var) or {cmd.var}
    if not roots <= set(cmd.access.indices):
        raise ScheduleError(f"{cmd.var!r} does not index {cmd.access}")
    _fresh(cmd.pos_var, body, rels)

    def fn(f: Forall) -> CinStmt:
        return Forall(cmd.pos_var, f.body, f.annotation)

    return _rewrite_forall(body, cmd.var, fn), rels + (
        PosRel(cmd.var, cmd.pos_var, cmd.access),
    )


def _apply_split(body, rels, cmd: Split):
    _fresh(cmd.outer, body, rels)
    _fresh(cmd.inner, body, rels)

    def sink(sub: CinStmt) -> CinStmt:
        if isinstance(sub, (Assignment, Where)):
            return Forall(cmd.inner, sub)
        if isinstance(sub, Forall):
            return Forall(sub.var, sink(sub.body), sub.annotation)
        raise ScheduleError("cannot sink a split loop through this subtree")

    def fn(f: Forall) -> CinStmt:
        if f.annotation is not None:
            raise ScheduleError("split the loop before annotating it")
        if cmd.placement == "nested":
            return Forall(cmd.outer, Forall(cmd.inner, f.body))
        if cmd.placement == "strided":
            return Forall(cmd.inner, Forall(cmd.outer, f.body))
        return Forall(cmd.outer, sink(f.body))

    return _rewrite_forall(body, cmd.var, fn), rels + (
        SplitRel(cmd.var, cmd.outer, cmd.inner, cmd.factor),
    )


def _apply_bound(body, rels, cmd: Bound):
    _fresh(cmd.bounded, body, rels)

    def fn(f: Forall) -> CinStmt:
        return Forall(cmd.bounded, f.body, f.annotation)

    return _rewrite_forall(body, cmd.var, fn), rels + (
        BoundRel(cmd.var, cmd.bounded, cmd.extent, cmd.bound_type),
    )


def _apply_parallelize(body, rels, cmd: Parallelize):
    ann = cmd.annotation
    fmap = forall_map(body)
    if cmd.var not in fmap:
        raise ScheduleError(f"no loop binds {cmd.var!r}")

    if ann.unit is ParallelUnit.GPU_GROUP:
        probe = SuchThat(body, tuple(rels))
        roots = root_ancestors(probe, cmd.var) or {cmd.var}
        lhs = _lhs_roots(body, probe)
        if not (roots - lhs):
            raise ScheduleError(
                "group parallelization needs a reduction axis; "
                f"{cmd.var!r} derives only from output indices"
            )
        if (roots & lhs) and ann.reduction_strategy is not ReductionStrategy.SEGMENT:
            raise ScheduleError(
                f"{cmd.var!r} spans multiple output rows; Segment strategy required"
            )
        return body, rels + (
            GroupRel(cmd.var, ann.reduction_strategy, ann.group_size),
        )

    def fn(f: Forall) -> CinStmt:
        if f.annotation is not None:
            raise ScheduleError(f"loop {cmd.var!r} is already annotated")
        return Forall(f.var, f.body, ann)

    return _rewrite_forall(body, cmd.var, fn), rels


def _apply_precompute(body, rels, cmd: Precompute):
    _fresh(cmd.workspace, body, rels)
    found = _assignments(body)
    if len(found) != 1 or not isinstance(found[0].lhs, Access):
        raise ScheduleError("precompute needs exactly one tensor assignment")
    assign = found[0]
    ws = WorkspaceRef(cmd.workspace)
    consumer = Assignment(assign.lhs, assign.op, ws)

    if cmd.var is None:
        replacement = Where(consumer, Assignment(ws, "=", assign.rhs))
        return _replace_assignment(body, replacement), rels

    producer = Forall(cmd.var, Assignment(ws, "+=", assign.rhs))
    replacement = Where(consumer, producer)

    def fn(f: Forall) -> CinStmt:
        if f.annotation is not None:
            raise ScheduleError("cannot sink an annotated loop into a producer")
        return _replace_assignment(f.body, replacement)

    return _rewrite_forall(body, cmd.var, fn), rels


# --- static extents -------------------------------------------------------


def static_extents(
    stmt: CinStmt,
    *,
    n: int | None = None,
    num_rows: int | None = None,
    num_cols: int | None = None,
    nnz: int | None = None,
) -> dict[str, int | None]:
    """Extent of each loop variable where derivable, else None.

    Split factors and exact bounds give static extents even without shape
    information; root and fused extents need the dense width / matrix shape.
    Position spaces are sized only for whole-tensor position variables (the
    fused sparse walk); per-row position extents stay dynamic.
    """
    ext: dict[str, int | None] = {"i": num_rows, "j": num_cols, "k": n}
    rels = relations_of(stmt)
    for _ in range(len(rels) + 1):
        changed = False

        def put(name: str, value: int | None):
            nonlocal changed
            if value is not None and ext.get(name) is None:
                ext[name] = value
                changed = True

        for rel in rels:
            if isinstance(rel, SplitRel):
                put(rel.inner, rel.factor)
                parent = ext.get(rel.var)
                if parent is not None:
                    put(rel.outer, -(-parent // rel.factor))
            elif isinstance(rel, FuseRel):
                left, right = ext.get(rel.left), ext.get(rel.right)
                if left is not None and right is not None:
                    put(rel.fused, left * right)
            elif isinstance(rel, BoundRel):
                put(rel.bounded, rel.extent)
            elif isinstance(rel, PosRel):
                probe_roots = root_ancestors(stmt, rel.var)
                if probe_roots == {"i", "j"}:
                    put(rel.pos_var, nnz)
        if not changed:
            break
    for v in forall_map(stmt):
        ext.setdefault(v, None)
    return ext


# --- validation -----------------------------------------------------------

_GROUP_SIZES = (2, 4, 8, 16, 32)


def _forall_ancestry(stmt: CinStmt) -> dict[str, tuple[str, ...]]:
    out: dict[str, tuple[str, ...]] = {}

    def walk(s: CinStmt, above: tuple[str, ...]):
        if isinstance(s, SuchThat):
            walk(s.body, above)
        elif isinstance(s, Forall):
            out[s.var] = above
            walk(s.body, above + (s.var,))
        elif isinstance(s, Where):
            walk(s.consumer, above)
            walk(s.producer, above)

    walk(stmt, ())
    return out


def validate_schedule(stmt: CinStmt, config=None) -> list[str]:
    """Structural and sizing diagnostics for a scheduled tree.

    Returns a list of human-readable problems; an empty list means the
    schedule can be lowered.  `config` (a lowering KernelConfig) enables the
    checks that need the dense column count.
    """
    diags: list[str] = []
    try:
        check_cin(stmt)
    except CinError as e:
        return [str(e)]

    fmap = forall_map(stmt)
    units: dict[ParallelUnit, str] = {}
    for var, f in fmap.items():
        if f.annotation is not None:
            units.setdefault(f.annotation.unit, var)

    for unit in (ParallelUnit.GPU_BLOCK, ParallelUnit.GPU_THREAD):
        if unit not in units:
            diags.append(f"schedule needs exactly one {unit.value} loop")
    block_var = units.get(ParallelUnit.GPU_BLOCK)
    warp_var = units.get(ParallelUnit.GPU_WARP)
    thread_var = units.get(ParallelUnit.GPU_THREAD)

    ancestry = _forall_ancestry(stmt)
    chain = [v for v in (block_var, warp_var, thread_var) if v is not None]
    for above, below in zip(chain, chain[1:]):
        if above not in ancestry.get(below, ()):
            diags.append(
                f"{fmap[above].annotation.unit.value} loop {above!r} must "
                f"enclose {below!r}"
            )

    n = getattr(config, "n", None)
    ext = static_extents(stmt, n=n)

    thread_ext = ext.get(thread_var) if thread_var else None
    warp_ext = ext.get(warp_var) if warp_var else 1
    if thread_var is not None and thread_ext is None:
        diags.append(f"thread loop {thread_var!r} has no static extent")
    if warp_var is not None and warp_ext is None:
        diags.append(f"warp loop {warp_var!r} has no static extent")
    if thread_ext is not None and warp_ext is not None:
        threads = thread_ext * warp_ext
        if threads % 32 != 0:
            diags.append(f"thread-block size {threads} is not a warp multiple")

    group = None
    try:
        group = find_group_rel(stmt)
    except CinError as e:
        diags.append(str(e))
    if group is not None:
        if group.size not in _GROUP_SIZES:
            diags.append(f"group size {group.size} must be one of {_GROUP_SIZES}")
        if thread_var is not None and group.var != thread_var:
            diags.append(
                "group parallelization is only supported on the thread-mapped "
                f"loop, not {group.var!r}"
            )
        if (
            group.strategy is ReductionStrategy.PARALLEL
            and thread_ext is not None
            and group.size != thread_ext
        ):
            diags.append(
                f"parallel group width {group.size} must equal the thread tile "
                f"extent {thread_ext}"
            )

    for rel in relations_of(stmt):
        if isinstance(rel, PosRel) and rel.access.tensor != SPARSE_TENSOR:
            diags.append(f"pos() over dense tensor {rel.access.tensor!r}")
        if isinstance(rel, BoundRel) and rel.bound_type == "MaxExact":
            derived = ext.get(rel.var)
            if derived is not None and derived != rel.extent:
                diags.append(
                    f"MaxExact bound {rel.extent} on {rel.var!r} differs from "
                    f"its derived extent {derived}"
                )

    return diags
