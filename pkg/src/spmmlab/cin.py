"""Concrete iteration-space notation for SpMM schedules.

The IR is a statement tree (suchthat / forall / where / assignment) plus a
relation list describing how loop variables derive from the root index
variables of ``C(i,k) += A(i,j) * B(j,k)``.  Group parallelization is kept
in the relation list, mirroring the textual form
``parallelize(v,GPUGroup,size,Atomics|Segment)``.

A canonical compact text format round-trips through :func:`parse_cin` /
:func:`print_cin` and is used for golden tests and CLI input.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

__all__ = [
    "ParallelUnit",
    "RaceStrategy",
    "ReductionStrategy",
    "ParallelAnnotation",
    "Access",
    "WorkspaceRef",
    "Mul",
    "Assignment",
    "Forall",
    "Where",
    "SuchThat",
    "SplitRel",
    "FuseRel",
    "PosRel",
    "BoundRel",
    "GroupRel",
    "IndexVar",
    "CinError",
    "CinParseError",
    "build_spmm_cin",
    "print_cin",
    "parse_cin",
    "normalize_cin",
    "check_cin",
    "index_vars",
    "forall_map",
    "find_group_rel",
]


class CinError(ValueError):
    pass


class CinParseError(CinError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class ParallelUnit(enum.Enum):
    GPU_BLOCK = "GPUBlock"
    GPU_WARP = "GPUWarp"
    GPU_THREAD = "GPUThread"
    GPU_GROUP = "GPUGroup"


class RaceStrategy(enum.Enum):
    NO_RACES = "NoRaces"
    IGNORE_RACES = "IgnoreRaces"
    ATOMICS = "Atomics"


class ReductionStrategy(enum.Enum):
    PARALLEL = "Parallel"
    SEGMENT = "Segment"


@dataclass(frozen=True)
class ParallelAnnotation:
    """Hardware mapping of a loop: unit plus output race strategy.

    ``reduction_strategy`` and ``group_size`` are populated only for the
    GPU_GROUP unit, which synchronizes a fixed-size lane group instead of
    carrying sync semantics of its own.
    """

    unit: ParallelUnit
    race: RaceStrategy
    reduction_strategy: ReductionStrategy | None = None
    group_size: int | None = None

    def __post_init__(self):
        if self.unit is ParallelUnit.GPU_GROUP:
            if self.reduction_strategy is None or self.group_size is None:
                raise CinError("GPUGroup annotation needs a strategy and a size")
        elif self.reduction_strategy is not None or self.group_size is not None:
            raise CinError("only GPUGroup annotations carry strategy/size")


# --- expressions ---------------------------------------------------------


@dataclass(frozen=True)
class Access:
    tensor: str
    indices: tuple[str, ...]

    def __str__(self):
        return f"{self.tensor}({','.join(self.indices)})"


@dataclass(frozen=True)
class WorkspaceRef:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Mul:
    lhs: "Access | WorkspaceRef | Mul"
    rhs: "Access | WorkspaceRef | Mul"

    def __str__(self):
        return f"{self.lhs}*{self.rhs}"


Expr = Access | WorkspaceRef | Mul


# --- statements ----------------------------------------------------------


@dataclass(frozen=True)
class Assignment:
    lhs: Access | WorkspaceRef
    op: str  # "=" or "+="
    rhs: Expr

    def __post_init__(self):
        if self.op not in ("=", "+="):
            raise CinError(f"bad assignment operator {self.op!r}")


@dataclass(frozen=True)
class Forall:
    var: str
    body: "CinStmt"
    annotation: ParallelAnnotation | None = None


@dataclass(frozen=True)
class Where:
    consumer: "CinStmt"
    producer: "CinStmt"


# --- index variable relations -------------------------------------------


@dataclass(frozen=True)
class SplitRel:
    var: str
    outer: str
    inner: str
    factor: int


@dataclass(frozen=True)
class FuseRel:
    left: str
    right: str
    fused: str


@dataclass(frozen=True)
class PosRel:
    var: str
    pos_var: str
    access: Access


@dataclass(frozen=True)
class BoundRel:
    var: str
    bounded: str
    extent: int
    bound_type: str = "MaxExact"


@dataclass(frozen=True)
class GroupRel:
    """parallelize(var, GPUGroup, size, strategy) kept in the relation list."""

    var: str
    strategy: ReductionStrategy
    size: int

    def annotation(self) -> ParallelAnnotation:
        return ParallelAnnotation(
            ParallelUnit.GPU_GROUP,
            RaceStrategy.ATOMICS,
            reduction_strategy=self.strategy,
            group_size=self.size,
        )


IndexVarRel = SplitRel | FuseRel | PosRel | BoundRel | GroupRel


@dataclass(frozen=True)
class SuchThat:
    body: "CinStmt"
    relations: tuple[IndexVarRel, ...] = field(default_factory=tuple)


CinStmt = Assignment | Forall | Where | SuchThat


def build_spmm_cin(order: tuple[str, str, str] = ("i", "j", "k")) -> Forall:
    """Unscheduled C(i,k) += A(i,j) * B(j,k) with the loop nest in `order`."""
    if sorted(order) != ["i", "j", "k"]:
        raise CinError("loop order must be a permutation of (i, j, k)")
    stmt: CinStmt = Assignment(
        Access("C", ("i", "k")), "+=", Mul(Access("A", ("i", "j")), Access("B", ("j", "k")))
    )
    for var in reversed(order):
        stmt = Forall(var, stmt)
    return stmt


# --- printing ------------------------------------------------------------


def _print_expr(e: Expr) -> str:
    return str(e)


def _print_rel(rel: IndexVarRel) -> str:
    if isinstance(rel, SplitRel):
        return f"split({rel.var},{rel.outer},{rel.inner},{rel.factor})"
    if isinstance(rel, FuseRel):
        return f"fuse({rel.left},{rel.right},{rel.fused})"
    if isinstance(rel, PosRel):
        return f"pos({rel.var},{rel.pos_var},{rel.access})"
    if isinstance(rel, BoundRel):
        return f"bound({rel.var},{rel.bounded},{rel.extent},{rel.bound_type})"
    if isinstance(rel, GroupRel):
        tail = "Segment" if rel.strategy is ReductionStrategy.SEGMENT else "Atomics"
        return f"parallelize({rel.var},GPUGroup,{rel.size},{tail})"
    raise CinError(f"unknown relation {rel!r}")


def print_cin(stmt: CinStmt) -> str:
    """Deterministic compact text; identical trees print identically."""
    if isinstance(stmt, SuchThat):
        rels = " and ".join(_print_rel(r) for r in stmt.relations)
        return f"suchthat({print_cin(stmt.body)},{rels})"
    if isinstance(stmt, Forall):
        if stmt.annotation is None:
            return f"forall({stmt.var},{print_cin(stmt.body)})"
        ann = stmt.annotation
        return (
            f"forall({stmt.var},{print_cin(stmt.body)},"
            f"{ann.unit.value},{ann.race.value})"
        )
    if isinstance(stmt, Where):
        return f"where({print_cin(stmt.consumer)},{print_cin(stmt.producer)})"
    if isinstance(stmt, Assignment):
        return f"{stmt.lhs}{stmt.op}{_print_expr(stmt.rhs)}"
    raise CinError(f"unknown statement {stmt!r}")


def format_cin(stmt: CinStmt, indent: int = 2) -> str:
    """Multi-line rendering for humans; not the canonical form."""

    pad = " " * indent

    def go(s: CinStmt, depth: int) -> str:
        lead = pad * depth
        if isinstance(s, SuchThat):
            rels = ("\n" + lead + pad + "and ").join(_print_rel(r) for r in s.relations)
            return (
                f"{lead}suchthat(\n{go(s.body, depth + 1)},\n{lead}{pad}{rels})"
            )
        if isinstance(s, Forall):
            tail = ""
            if s.annotation is not None:
                tail = f", {s.annotation.unit.value}, {s.annotation.race.value}"
            return f"{lead}forall({s.var},\n{go(s.body, depth + 1)}{tail})"
        if isinstance(s, Where):
            return (
                f"{lead}where(\n{go(s.consumer, depth + 1)},\n{go(s.producer, depth + 1)})"
            )
        return f"{lead}{print_cin(s)}"

    return go(stmt, 0)


# --- parsing -------------------------------------------------------------

_RACE_TOKENS = {
    "NoRaces": RaceStrategy.NO_RACES,
    "IgnoreRaces": RaceStrategy.IGNORE_RACES,
    "Atomics": RaceStrategy.ATOMICS,
    # legacy spelling for a thread-level cooperative reduction; the group
    # relation carries that meaning now, so the race collapses to Atomics
    "ParallelReduction": RaceStrategy.ATOMICS,
}

_UNIT_TOKENS = {
    "GPUBlock": ParallelUnit.GPU_BLOCK,
    "GPUWarp": ParallelUnit.GPU_WARP,
    "GPUThread": ParallelUnit.GPU_THREAD,
}


class _Tokenizer:
    _SYMBOLS = ("+=", "=", "(", ")", ",", "*")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def error(self, message: str):
        raise CinParseError(message, self.line, self.col)

    def _advance(self, n: int):
        for ch in self.text[self.pos : self.pos + n]:
            if ch == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.pos += n

    def next(self) -> tuple[str, str, int, int]:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self._advance(1)
        line, col = self.line, self.col
        if self.pos >= len(self.text):
            return ("eof", "", line, col)
        for sym in self._SYMBOLS:
            if self.text.startswith(sym, self.pos):
                self._advance(len(sym))
                return ("sym", sym, line, col)
        ch = self.text[self.pos]
        if ch.isdigit():
            j = self.pos
            while j < len(self.text) and self.text[j].isdigit():
                j += 1
            tok = self.text[self.pos : j]
            self._advance(j - self.pos)
            return ("int", tok, line, col)
        if ch.isalpha() or ch == "_":
            j = self.pos
            while j < len(self.text) and (self.text[j].isalnum() or self.text[j] == "_"):
                j += 1
            tok = self.text[self.pos : j]
            self._advance(j - self.pos)
            return ("name", tok, line, col)
        self.error(f"unexpected character {ch!r}")


class _Parser:
    def __init__(self, text: str):
        self._tok = _Tokenizer(text)
        self._peeked: tuple[str, str, int, int] | None = None

    def _next(self):
        if self._peeked is not None:
            t, self._peeked = self._peeked, None
            return t
        return self._tok.next()

    def _peek(self):
        if self._peeked is None:
            self._peeked = self._tok.next()
        return self._peeked

    def _error(self, message: str, tok=None):
        tok = tok or self._peek()
        raise CinParseError(message, tok[2], tok[3])

    def _expect(self, kind: str, value: str | None = None) -> str:
        tok = self._next()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            self._error(f"expected {want!r}, found {tok[1] or 'end of input'!r}", tok)
        return tok[1]

    def _expect_name(self) -> str:
        return self._expect("name")

    def _expect_int(self) -> int:
        return int(self._expect("int"))

    # statements

    def parse_stmt(self) -> CinStmt:
        kind, value, _, _ = self._peek()
        if kind == "name" and value == "suchthat":
            return self._parse_suchthat()
        if kind == "name" and value == "forall":
            return self._parse_forall()
        if kind == "name" and value == "where":
            return self._parse_where()
        return self._parse_assignment()

    def _parse_suchthat(self) -> SuchThat:
        self._expect("name", "suchthat")
        self._expect("sym", "(")
        body = self.parse_stmt()
        self._expect("sym", ",")
        rels = [self._parse_rel()]
        while self._peek()[:2] == ("name", "and"):
            self._next()
            rels.append(self._parse_rel())
        self._expect("sym", ")")
        return SuchThat(body, tuple(rels))

    def _parse_forall(self) -> Forall:
        self._expect("name", "forall")
        self._expect("sym", "(")
        var = self._expect_name()
        self._expect("sym", ",")
        body = self.parse_stmt()
        annotation = None
        if self._peek()[:2] == ("sym", ","):
            self._next()
            unit_tok = self._next()
            if unit_tok[0] != "name" or unit_tok[1] not in _UNIT_TOKENS:
                self._error(f"unknown parallel unit {unit_tok[1]!r}", unit_tok)
            self._expect("sym", ",")
            race_tok = self._next()
            if race_tok[0] != "name" or race_tok[1] not in _RACE_TOKENS:
                self._error(f"unknown race strategy {race_tok[1]!r}", race_tok)
            annotation = ParallelAnnotation(
                _UNIT_TOKENS[unit_tok[1]], _RACE_TOKENS[race_tok[1]]
            )
        self._expect("sym", ")")
        return Forall(var, body, annotation)

    def _parse_where(self) -> Where:
        self._expect("name", "where")
        self._expect("sym", "(")
        consumer = self.parse_stmt()
        self._expect("sym", ",")
        producer = self.parse_stmt()
        self._expect("sym", ")")
        return Where(consumer, producer)

    def _parse_assignment(self) -> Assignment:
        lhs = self._parse_atom()
        op_tok = self._next()
        if op_tok[0] != "sym" or op_tok[1] not in ("=", "+="):
            self._error("expected '=' or '+=' in assignment", op_tok)
        rhs = self._parse_expr()
        if isinstance(lhs, Mul):
            self._error("assignment target must be an access or workspace")
        return Assignment(lhs, op_tok[1], rhs)

    def _parse_expr(self) -> Expr:
        node = self._parse_atom()
        while self._peek()[:2] == ("sym", "*"):
            self._next()
            node = Mul(node, self._parse_atom())
        return node

    def _parse_atom(self) -> Expr:
        tok = self._next()
        if tok[0] != "name":
            self._error("expected tensor access or workspace name", tok)
        name = tok[1]
        if self._peek()[:2] == ("sym", "("):
            self._next()
            indices = [self._expect_name()]
            while self._peek()[:2] == ("sym", ","):
                self._next()
                indices.append(self._expect_name())
            self._expect("sym", ")")
            return Access(name, tuple(indices))
        return WorkspaceRef(name)

    # relations

    def _parse_rel(self) -> IndexVarRel:
        tok = self._next()
        if tok[0] != "name":
            self._error("expected a relation", tok)
        kind = tok[1]
        self._expect("sym", "(")
        if kind == "split":
            var = self._expect_name()
            self._expect("sym", ",")
            outer = self._expect_name()
            self._expect("sym", ",")
            inner = self._expect_name()
            self._expect("sym", ",")
            factor = self._expect_int()
            self._expect("sym", ")")
            return SplitRel(var, outer, inner, factor)
        if kind == "fuse":
            left = self._expect_name()
            self._expect("sym", ",")
            right = self._expect_name()
            self._expect("sym", ",")
            fused = self._expect_name()
            self._expect("sym", ")")
            return FuseRel(left, right, fused)
        if kind == "pos":
            var = self._expect_name()
            self._expect("sym", ",")
            pos_var = self._expect_name()
            self._expect("sym", ",")
            access = self._parse_atom()
            if not isinstance(access, Access):
                self._error("pos needs a tensor access", tok)
            self._expect("sym", ")")
            return PosRel(var, pos_var, access)
        if kind == "bound":
            var = self._expect_name()
            self._expect("sym", ",")
            bounded = self._expect_name()
            self._expect("sym", ",")
            extent = self._expect_int()
            self._expect("sym", ",")
            bound_type = self._expect_name()
            if bound_type != "MaxExact":
                self._error(f"unsupported bound type {bound_type!r}")
            self._expect("sym", ")")
            return BoundRel(var, bounded, extent, bound_type)
        if kind == "parallelize":
            var = self._expect_name()
            self._expect("sym", ",")
            unit = self._expect_name()
            if unit != "GPUGroup":
                self._error("only GPUGroup parallelize belongs in the relation list")
            self._expect("sym", ",")
            size = self._expect_int()
            self._expect("sym", ",")
            tail = self._expect_name()
            if tail in ("Atomics", "Parallel", "ParallelReduction"):
                strategy = ReductionStrategy.PARALLEL
            elif tail == "Segment":
                strategy = ReductionStrategy.SEGMENT
            else:
                self._error(f"unknown group strategy {tail!r}")
            self._expect("sym", ")")
            return GroupRel(var, strategy, size)
        self._error(f"unknown relation {kind!r}", tok)

    def parse(self) -> CinStmt:
        stmt = self.parse_stmt()
        tok = self._next()
        if tok[0] != "eof":
            self._error(f"trailing input {tok[1]!r}", tok)
        return stmt


def parse_cin(text: str) -> CinStmt:
    """Parse canonical CIN text; raises CinParseError with line:col on errors."""
    stmt = _Parser(text).parse()
    _check_bound_vars(stmt)
    return stmt


def normalize_cin(text: str) -> str:
    return print_cin(parse_cin(text))


# --- structural queries and invariants -----------------------------------


def forall_map(stmt: CinStmt) -> dict[str, Forall]:
    """Map of loop variable to its forall node; errors on duplicate binding."""
    out: dict[str, Forall] = {}

    def walk(s: CinStmt):
        if isinstance(s, SuchThat):
            walk(s.body)
        elif isinstance(s, Forall):
            if s.var in out:
                raise CinError(f"variable {s.var!r} bound by more than one forall")
            out[s.var] = s
            walk(s.body)
        elif isinstance(s, Where):
            walk(s.consumer)
            walk(s.producer)

    walk(stmt)
    return out


def relations_of(stmt: CinStmt) -> tuple[IndexVarRel, ...]:
    return stmt.relations if isinstance(stmt, SuchThat) else ()


def find_group_rel(stmt: CinStmt) -> GroupRel | None:
    rels = [r for r in relations_of(stmt) if isinstance(r, GroupRel)]
    if len(rels) > 1:
        raise CinError("at most one group parallelization is supported")
    return rels[0] if rels else None


@dataclass(frozen=True)
class IndexVar:
    """A loop variable together with how it derives from the root indices."""

    name: str
    provenance: str  # root | split_outer | split_inner | fused | pos_space | bounded
    parents: tuple[str, ...] = ()


def index_vars(stmt: CinStmt) -> dict[str, IndexVar]:
    """Derived-variable table from the relation list; roots are i, j, k."""
    table: dict[str, IndexVar] = {}

    def put(name: str, provenance: str, parents: tuple[str, ...]):
        if name in table and table[name].provenance != "root":
            raise CinError(f"variable {name!r} produced by more than one relation")
        table[name] = IndexVar(name, provenance, parents)

    for rel in relations_of(stmt):
        if isinstance(rel, SplitRel):
            put(rel.outer, "split_outer", (rel.var,))
            put(rel.inner, "split_inner", (rel.var,))
        elif isinstance(rel, FuseRel):
            put(rel.fused, "fused", (rel.left, rel.right))
        elif isinstance(rel, PosRel):
            put(rel.pos_var, "pos_space", (rel.var,))
        elif isinstance(rel, BoundRel):
            put(rel.bounded, "bounded", (rel.var,))
    for root in ("i", "j", "k"):
        table.setdefault(root, IndexVar(root, "root"))
    # cycle check: walking parents must terminate at roots
    for name in table:
        seen: set[str] = set()
        stack = [name]
        while stack:
            cur = stack.pop()
            if cur in seen:
                raise CinError(f"provenance cycle through {cur!r}")
            seen.add(cur)
            info = table.get(cur)
            if info is not None:
                stack.extend(info.parents)
    return table


def root_ancestors(stmt: CinStmt, var: str) -> set[str]:
    """Root index variables (i/j/k) reachable from `var` through relations."""
    table = index_vars(stmt)
    out: set[str] = set()
    stack = [var]
    while stack:
        cur = stack.pop()
        info = table.get(cur)
        if info is None:
            continue
        if info.provenance == "root":
            out.add(cur)
        stack.extend(info.parents)
    return out


def _known_vars(stmt: CinStmt) -> set[str]:
    known = set(forall_map(stmt))
    for rel in relations_of(stmt):
        if isinstance(rel, SplitRel):
            known.update((rel.var, rel.outer, rel.inner))
        elif isinstance(rel, FuseRel):
            known.update((rel.left, rel.right, rel.fused))
        elif isinstance(rel, PosRel):
            known.update((rel.var, rel.pos_var, *rel.access.indices))
        elif isinstance(rel, BoundRel):
            known.update((rel.var, rel.bounded))
    return known


def _check_bound_vars(stmt: CinStmt):
    bound = forall_map(stmt)  # also rejects duplicate binders
    known = _known_vars(stmt)

    def check_expr(e: Expr):
        if isinstance(e, Access):
            for v in e.indices:
                if v not in known:
                    raise CinError(f"unbound index variable {v!r}")
        elif isinstance(e, Mul):
            check_expr(e.lhs)
            check_expr(e.rhs)

    def walk(s: CinStmt):
        if isinstance(s, SuchThat):
            walk(s.body)
        elif isinstance(s, Forall):
            walk(s.body)
        elif isinstance(s, Where):
            walk(s.consumer)
            walk(s.producer)
        else:
            if isinstance(s.lhs, Access):
                check_expr(s.lhs)
            check_expr(s.rhs)

    walk(stmt)
    for rel in relations_of(stmt):
        if isinstance(rel, GroupRel) and rel.var not in bound:
            raise CinError(f"unbound index variable {rel.var!r}")


def check_cin(stmt: CinStmt):
    """Structural invariants shared by every well-formed tree.

    Raises CinError.  Checked: unique binders, at most one annotation per
    hardware unit, at most one group relation, acyclic single-producer
    provenance, where-producers writing only the workspace their consumer
    reads, no unbound access variables, and suchthat only at the root.
    """
    _check_bound_vars(stmt)
    index_vars(stmt)
    find_group_rel(stmt)
    units_seen: list[ParallelUnit] = []

    def walk(s: CinStmt):
        if isinstance(s, SuchThat):
            if s is not stmt:
                raise CinError("suchthat must be the outermost statement")
            walk(s.body)
        elif isinstance(s, Forall):
            if s.annotation is not None:
                if s.annotation.unit in units_seen:
                    raise CinError(
                        f"duplicate {s.annotation.unit.value} annotation"
                    )
                units_seen.append(s.annotation.unit)
            walk(s.body)
        elif isinstance(s, Where):
            ws = _consumer_workspace(s.consumer)
            _check_producer_targets(s.producer, ws)
            walk(s.consumer)
            walk(s.producer)

    walk(stmt)


def _consumer_workspace(consumer: CinStmt) -> str:
    if not isinstance(consumer, Assignment) or not isinstance(consumer.rhs, WorkspaceRef):
        raise CinError("where-consumer must read a scalar workspace")
    return consumer.rhs.name


def _check_producer_targets(producer: CinStmt, workspace: str):
    if isinstance(producer, Forall):
        _check_producer_targets(producer.body, workspace)
    elif isinstance(producer, Assignment):
        if not isinstance(producer.lhs, WorkspaceRef) or producer.lhs.name != workspace:
            raise CinError(
                f"where-producer must write only workspace {workspace!r}"
            )
    elif isinstance(producer, Where):
        raise CinError("nested where-producers are not supported")
    else:
        raise CinError("malformed where-producer")
