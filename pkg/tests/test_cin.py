"""Index-notation tree: printing, parsing, and structural checks."""

from pathlib import Path

import pytest

from spmmlab.cin import (
    Access,
    Assignment,
    CinError,
    CinParseError,
    Forall,
    GroupRel,
    Mul,
    ParallelAnnotation,
    ParallelUnit,
    RaceStrategy,
    ReductionStrategy,
    SuchThat,
    Where,
    WorkspaceRef,
    build_spmm_cin,
    check_cin,
    find_group_rel,
    forall_map,
    index_vars,
    normalize_cin,
    parse_cin,
    print_cin,
)

GOLDENS = Path(__file__).parent / "goldens"

BASE = "forall(i,forall(j,forall(k,C(i,k)+=A(i,j)*B(j,k))))"


def test_base_statement_prints_canonically():
    assert print_cin(build_spmm_cin()) == BASE


def test_base_statement_row_major_order():
    text = print_cin(build_spmm_cin(("i", "k", "j")))
    assert text == "forall(i,forall(k,forall(j,C(i,k)+=A(i,j)*B(j,k))))"


@pytest.mark.parametrize(
    "name",
    ["cin_nnz_multiple.txt", "cin_row_multiple.txt", "cin_row_reciprocal.txt", "cin_nnz_one.txt"],
)
def test_parse_print_roundtrip_on_canonical_texts(name):
    text = (GOLDENS / name).read_text().strip()
    stmt = parse_cin(text)
    check_cin(stmt)
    assert print_cin(stmt) == text


def test_normalize_is_whitespace_insensitive():
    spaced = "forall( i ,\n  forall(j, forall(k,\n    C(i, k) += A(i ,j) * B(j,k))))"
    assert normalize_cin(spaced) == BASE


def test_parse_annotations():
    stmt = parse_cin("forall(i,forall(j,forall(k,C(i,k)+=A(i,j)*B(j,k))),GPUBlock,NoRaces)")
    assert stmt.annotation == ParallelAnnotation(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)


def test_parse_group_relation():
    text = (
        "suchthat(forall(i,forall(j,forall(k,C(i,k)+=A(i,j)*B(j,k)))),"
        "parallelize(j,GPUGroup,16,Segment))"
    )
    stmt = parse_cin(text)
    rel = find_group_rel(stmt)
    assert rel == GroupRel("j", ReductionStrategy.SEGMENT, 16)
    assert print_cin(stmt) == text


def test_parallel_reduction_is_an_alias_for_atomics():
    a = parse_cin("suchthat(" + BASE + ",parallelize(j,GPUGroup,8,ParallelReduction))")
    b = parse_cin("suchthat(" + BASE + ",parallelize(j,GPUGroup,8,Atomics))")
    assert a == b


@pytest.mark.parametrize(
    "text",
    [
        "",
        "forall(i",
        "forall(i,)",
        "whatsit(i,C(i,k)+=A(i,j)*B(j,k))",
        "forall(i,C(i,k)+=A(i,j)*B(j,k),GPUBlock)",  # unit without race strategy
        "forall(i,C(i,k)+=A(i,j)*B(j,k),GPUBlock,NoRaces,extra)",
        "suchthat(forall(i,C(i,k)+=A(i,j)),split(x))",
        "forall(i,C(i,k)?=A(i,j))",
    ],
)
def test_parse_rejects_malformed(text):
    with pytest.raises(CinParseError):
        parse_cin(text)


def test_group_annotation_requires_strategy_and_size():
    with pytest.raises(CinError):
        ParallelAnnotation(ParallelUnit.GPU_GROUP, RaceStrategy.ATOMICS)
    ann = ParallelAnnotation(
        ParallelUnit.GPU_GROUP,
        RaceStrategy.ATOMICS,
        reduction_strategy=ReductionStrategy.SEGMENT,
        group_size=32,
    )
    assert ann.group_size == 32


def test_non_group_annotation_rejects_group_fields():
    with pytest.raises(CinError):
        ParallelAnnotation(
            ParallelUnit.GPU_THREAD,
            RaceStrategy.ATOMICS,
            reduction_strategy=ReductionStrategy.PARALLEL,
        )


def test_forall_map_and_index_vars():
    stmt = parse_cin((GOLDENS / "cin_nnz_multiple.txt").read_text().strip())
    fm = forall_map(stmt)
    assert set(fm) == {"block", "warp", "dense_val", "thread", "nnz"}
    assert fm["warp"].annotation.unit is ParallelUnit.GPU_WARP
    assert "fpos" in index_vars(stmt)  # relation-introduced vars count too


def test_check_rejects_duplicate_binders():
    inner = Forall("i", Assignment(Access("C", ("i", "k")), "+=", Mul(Access("A", ("i", "j")), Access("B", ("j", "k")))))
    with pytest.raises(CinError):
        check_cin(Forall("i", inner))


def test_check_rejects_duplicate_unit_annotations():
    text = (
        "forall(a,forall(b,forall(k,C(a,k)+=A(a,b)*B(b,k)),GPUBlock,NoRaces),GPUBlock,NoRaces)"
    )
    with pytest.raises(CinError):
        check_cin(parse_cin(text))


def test_check_rejects_producer_writing_foreign_workspace():
    bad = Where(
        Assignment(Access("C", ("i", "k")), "+=", WorkspaceRef("acc")),
        Assignment(WorkspaceRef("other"), "=", Access("A", ("i", "j"))),
    )
    with pytest.raises(CinError):
        check_cin(Forall("i", Forall("j", Forall("k", bad))))


def test_check_accepts_canonical_trees():
    for name in ("cin_nnz_multiple.txt", "cin_nnz_one.txt"):
        check_cin(parse_cin((GOLDENS / name).read_text().strip()))


def test_suchthat_must_wrap_outermost():
    nested = SuchThat(build_spmm_cin(), ())
    with pytest.raises(CinError):
        check_cin(Forall("z", nested))
