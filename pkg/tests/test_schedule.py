"""Schedule commands: each elementary transform, and full replays of the
four algorithm templates against their checked-in trees."""

from pathlib import Path

import pytest

from spmmlab.cin import (
    Access,
    ParallelAnnotation,
    ParallelUnit,
    RaceStrategy,
    ReductionStrategy,
    build_spmm_cin,
    check_cin,
    find_group_rel,
    parse_cin,
    print_cin,
)
from spmmlab.lowering import KernelConfig
from spmmlab.schedule import (
    Bound,
    Fuse,
    Parallelize,
    Pos,
    Precompute,
    ScheduleError,
    Split,
    apply,
    apply_all,
    static_extents,
    validate_schedule,
)
from spmmlab.space import parse_point
from spmmlab.templates import algorithm_template

GOLDENS = Path(__file__).parent / "goldens"

A_IJ = Access("A", ("i", "j"))


def test_fuse_collapses_adjacent_loops():
    s = apply(build_spmm_cin(), Fuse("i", "j", "f"))
    assert print_cin(s) == "suchthat(forall(f,forall(k,C(i,k)+=A(i,j)*B(j,k))),fuse(i,j,f))"


def test_fuse_requires_directly_nested_loops():
    with pytest.raises(ScheduleError):
        apply(build_spmm_cin(), Fuse("i", "k", "f"))


def test_pos_moves_fused_var_to_position_space():
    s = apply_all(build_spmm_cin(), [Fuse("i", "j", "f"), Pos("f", "fpos", A_IJ)])
    assert "pos(f,fpos,A(i,j))" in print_cin(s)
    assert "forall(fpos," in print_cin(s)


def test_pos_accepts_plain_index_var():
    s = apply(build_spmm_cin(), Pos("j", "jpos", A_IJ))
    assert print_cin(s) == (
        "suchthat(forall(i,forall(jpos,forall(k,C(i,k)+=A(i,j)*B(j,k)))),pos(j,jpos,A(i,j)))"
    )


def test_pos_rejects_var_outside_access():
    with pytest.raises(ScheduleError):
        apply(build_spmm_cin(), Pos("k", "kpos", A_IJ))


def test_split_nested_orders_outer_then_inner():
    s = apply_all(
        build_spmm_cin(),
        [Fuse("i", "j", "f"), Pos("f", "fpos", A_IJ), Split("fpos", "blk", "fp1", 64)],
    )
    assert "forall(blk,forall(fp1," in print_cin(s)
    assert "split(fpos,blk,fp1,64)" in print_cin(s)


def test_split_strided_orders_inner_then_outer():
    s = apply_all(
        build_spmm_cin(),
        [Pos("j", "jpos", A_IJ), Split("jpos", "jp0", "jp1", 32, placement="strided")],
    )
    assert "forall(jp1,forall(jp0," in print_cin(s)


def test_split_sink_inner_pushes_serial_loop_below_siblings():
    s = apply_all(
        build_spmm_cin(),
        [
            Fuse("i", "j", "f"),
            Pos("f", "fpos", A_IJ),
            Split("fpos", "block", "fpos1", 64, placement="sink_inner"),
        ],
    )
    # the serial fpos1 walk ends up inside the k loop
    assert "forall(block,forall(k,forall(fpos1," in print_cin(s)


def test_split_rejects_unknown_variable():
    with pytest.raises(ScheduleError):
        apply(build_spmm_cin(), Split("q", "a", "b", 4))


def test_split_rejects_reused_name():
    with pytest.raises(ScheduleError):
        apply(build_spmm_cin(), Split("i", "j", "i2", 4))


def test_split_rejects_nonpositive_factor():
    with pytest.raises(ScheduleError):
        Split("i", "a", "b", 0)


def test_bound_renames_and_records_extent():
    s = apply_all(build_spmm_cin(), [Split("k", "ko", "ki", 1), Bound("ko", "kb", 4, "MaxExact")])
    text = print_cin(s)
    assert "forall(kb," in text
    assert "bound(ko,kb,4,MaxExact)" in text


def test_bound_preserves_annotation():
    s = apply_all(
        build_spmm_cin(),
        [
            Split("k", "ko", "ki", 1),
            Parallelize("ko", ParallelAnnotation(ParallelUnit.GPU_WARP, RaceStrategy.NO_RACES)),
            Bound("ko", "kb", 4, "MaxExact"),
        ],
    )
    assert "forall(kb,forall(ki,C(i,k)+=A(i,j)*B(j,k)),GPUWarp,NoRaces)" in print_cin(s)


def test_parallelize_annotates_loop():
    s = apply(
        build_spmm_cin(),
        Parallelize("i", ParallelAnnotation(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)),
    )
    assert "forall(i,forall(j,forall(k,C(i,k)+=A(i,j)*B(j,k))),GPUBlock,NoRaces)" in print_cin(s)


def test_parallelize_group_appends_relation():
    ann = ParallelAnnotation(
        ParallelUnit.GPU_GROUP,
        RaceStrategy.ATOMICS,
        reduction_strategy=ReductionStrategy.SEGMENT,
        group_size=8,
    )
    s = apply_all(
        build_spmm_cin(),
        [
            Pos("j", "jpos", A_IJ),
            Parallelize("jpos", ParallelAnnotation(ParallelUnit.GPU_THREAD, RaceStrategy.ATOMICS)),
            Parallelize("jpos", ann),
        ],
    )
    rel = find_group_rel(s)
    assert rel is not None and rel.size == 8 and rel.strategy is ReductionStrategy.SEGMENT


def test_parallelize_group_rejects_output_only_var():
    # "i" derives purely from output indices; nothing to reduce across
    ann = ParallelAnnotation(
        ParallelUnit.GPU_GROUP,
        RaceStrategy.ATOMICS,
        reduction_strategy=ReductionStrategy.SEGMENT,
        group_size=8,
    )
    with pytest.raises(ScheduleError):
        apply(build_spmm_cin(), Parallelize("i", ann))


def test_parallelize_group_spanning_rows_needs_segment():
    parallel_ann = ParallelAnnotation(
        ParallelUnit.GPU_GROUP,
        RaceStrategy.ATOMICS,
        reduction_strategy=ReductionStrategy.PARALLEL,
        group_size=8,
    )
    cmds = [Fuse("i", "j", "f"), Pos("f", "fpos", A_IJ)]
    fused = apply_all(build_spmm_cin(), cmds)
    with pytest.raises(ScheduleError):
        apply(fused, Parallelize("fpos", parallel_ann))
    segment_ann = ParallelAnnotation(
        ParallelUnit.GPU_GROUP,
        RaceStrategy.ATOMICS,
        reduction_strategy=ReductionStrategy.SEGMENT,
        group_size=8,
    )
    s = apply(fused, Parallelize("fpos", segment_ann))
    assert find_group_rel(s).strategy is ReductionStrategy.SEGMENT


def test_validate_flags_group_off_thread_loop():
    ann = ParallelAnnotation(
        ParallelUnit.GPU_GROUP,
        RaceStrategy.ATOMICS,
        reduction_strategy=ReductionStrategy.SEGMENT,
        group_size=8,
    )
    s = apply_all(
        build_spmm_cin(),
        [
            Split("i", "io", "ii", 32),
            Parallelize("io", ParallelAnnotation(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)),
            Parallelize("ii", ParallelAnnotation(ParallelUnit.GPU_THREAD, RaceStrategy.ATOMICS)),
            Parallelize("j", ann),
        ],
    )
    diags = validate_schedule(s)
    assert any("thread-mapped" in d for d in diags)


def test_parallelize_rejects_second_annotation():
    ann = ParallelAnnotation(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)
    with pytest.raises(ScheduleError):
        apply_all(build_spmm_cin(), [Parallelize("i", ann), Parallelize("i", ann)])


def test_parallelize_unknown_var():
    ann = ParallelAnnotation(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)
    with pytest.raises(ScheduleError):
        apply(build_spmm_cin(), Parallelize("zz", ann))


def test_precompute_in_place_builds_where():
    s = apply(build_spmm_cin(), Precompute("tmp", None))
    assert "where(C(i,k)+=tmp,tmp=A(i,j)*B(j,k))" in print_cin(s)
    check_cin(s)


def test_precompute_over_var_sinks_reduction_loop():
    s = apply(build_spmm_cin(), Precompute("acc", "j"))
    assert "where(C(i,k)+=acc,forall(j,acc+=A(i,j)*B(j,k)))" in print_cin(s)
    check_cin(s)


def test_precompute_unknown_var():
    with pytest.raises(ScheduleError):
        apply(build_spmm_cin(), Precompute("acc", "nope"))


CANONICAL = [
    ("nnz:32,col:1,r:1", ("i", "j", "k"), "cin_nnz_multiple.txt"),
    ("row:32,col:1,r:1", ("i", "j", "k"), "cin_row_multiple.txt"),
    ("row:1/32,col:1,r:32", ("i", "k", "j"), "cin_row_reciprocal.txt"),
    ("nnz:1,col:1,r:32", ("i", "j", "k"), "cin_nnz_one.txt"),
]


@pytest.mark.parametrize("point, order, golden", CANONICAL)
def test_template_commands_replay_to_canonical_tree(point, order, golden):
    """The command list stored on each template must regenerate the tree
    from the unscheduled statement."""
    tpl = algorithm_template(parse_point(point), KernelConfig(4, 256))
    replayed = apply_all(build_spmm_cin(order), tpl.commands)
    want = (GOLDENS / golden).read_text().strip()
    assert print_cin(replayed) == want
    assert print_cin(tpl.cin) == want


def test_static_extents_resolves_through_splits():
    tpl = algorithm_template(parse_point("nnz:32,col:1,r:1"), KernelConfig(4, 256))
    ext = static_extents(tpl.cin, n=4)
    assert ext["nnz"] == 32
    assert ext["thread"] == 1
    assert ext["warp"] == 64
    assert ext["dense_val"] == 4
    assert ext["block"] is None  # data-dependent chunk count


def test_static_extents_without_n():
    tpl = algorithm_template(parse_point("nnz:32,col:1,r:1"), KernelConfig(4, 256))
    ext = static_extents(tpl.cin)
    assert ext["k"] is None


def test_validate_unscheduled_statement():
    diags = validate_schedule(build_spmm_cin())
    assert any("GPUBlock" in d for d in diags)
    assert any("GPUThread" in d for d in diags)


@pytest.mark.parametrize("point, order, golden", CANONICAL)
def test_validate_accepts_templates(point, order, golden):
    tpl = algorithm_template(parse_point(point), KernelConfig(4, 256))
    assert validate_schedule(tpl.cin, KernelConfig(4, 256)) == []


def test_validate_flags_bad_group_width():
    text = (GOLDENS / "cin_row_reciprocal.txt").read_text().strip()
    broken = text.replace("parallelize(jpos1,GPUGroup,32,Atomics)", "parallelize(jpos1,GPUGroup,3,Atomics)")
    diags = validate_schedule(parse_cin(broken), KernelConfig(4, 256))
    assert any("group size 3" in d for d in diags)


def test_validate_flags_non_warp_multiple_block():
    s = apply_all(
        build_spmm_cin(),
        [
            Split("i", "io", "ii", 3),
            Parallelize("io", ParallelAnnotation(ParallelUnit.GPU_BLOCK, RaceStrategy.NO_RACES)),
            Parallelize("ii", ParallelAnnotation(ParallelUnit.GPU_THREAD, RaceStrategy.ATOMICS)),
        ],
    )
    diags = validate_schedule(s)
    assert any("not a warp multiple" in d for d in diags)
