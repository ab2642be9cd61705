"""Template selection: family matching, factor divisibility, and the
66-points-per-width coverage invariant."""

import pytest

from spmmlab.cin import check_cin, find_group_rel, print_cin
from spmmlab.lowering import KernelConfig
from spmmlab.schedule import validate_schedule
from spmmlab.space import enumerate_space, parse_point
from spmmlab.templates import (
    FAMILIES,
    FAMILY_NNZ_MULTIPLE,
    FAMILY_NNZ_ONE,
    FAMILY_ROW_MULTIPLE,
    FAMILY_ROW_RECIPROCAL,
    IllegalPointError,
    algorithm_template,
    kernel_name,
    template_family,
)


@pytest.mark.parametrize(
    "text, family",
    [
        ("nnz:32,col:1,r:1", FAMILY_NNZ_MULTIPLE),
        ("nnz:2,col:1,r:1", FAMILY_NNZ_MULTIPLE),
        ("row:1,col:1,r:1", FAMILY_ROW_MULTIPLE),
        ("row:16,col:1,r:1", FAMILY_ROW_MULTIPLE),
        ("row:16,col:4,r:1", FAMILY_ROW_MULTIPLE),
        ("row:1/32,col:1,r:32", FAMILY_ROW_RECIPROCAL),
        ("row:1/8,col:2,r:8", FAMILY_ROW_RECIPROCAL),
        ("nnz:1,col:1,r:32", FAMILY_NNZ_ONE),
        ("nnz:1,col:1,r:1", FAMILY_NNZ_ONE),
        ("nnz:1,col:4,r:2", FAMILY_NNZ_ONE),
    ],
)
def test_family_matching(text, family):
    assert template_family(parse_point(text)) == family


@pytest.mark.parametrize(
    "text",
    [
        "row:1,col:1/2,r:1",     # reciprocal columns have no template
        "row:1/32,col:1,r:32000",
        "nnz:2,col:1,r:2",       # multi-nnz chunks reduce serially only
        "row:2,col:1,r:4",
        "row:1/8,col:1,r:16",    # lane group must equal the row sharing factor
    ],
)
def test_family_gaps(text):
    assert template_family(parse_point(text)) is None


def test_family_names_and_kernel_names():
    assert FAMILIES == (
        FAMILY_NNZ_MULTIPLE,
        FAMILY_ROW_MULTIPLE,
        FAMILY_ROW_RECIPROCAL,
        FAMILY_NNZ_ONE,
    )
    assert kernel_name(FAMILY_NNZ_MULTIPLE) == "spmm_nnz_multiple"
    assert kernel_name(FAMILY_ROW_RECIPROCAL) == "spmm_row_reciprocal"


def test_illegal_point_raises_with_rule():
    with pytest.raises(IllegalPointError) as exc:
        algorithm_template(parse_point("nnz:1/2,col:1,r:1"), KernelConfig(4, 256))
    assert exc.value.rule == 1
    assert str(exc.value) == "illegal point (rule 1)"


def test_untemplated_legal_point_returns_none():
    assert algorithm_template(parse_point("row:1,col:1/2,r:1"), KernelConfig(4, 256)) is None


def test_template_carries_point_and_config():
    cfg = KernelConfig(4, 256)
    point = parse_point("nnz:1,col:1,r:32")
    tpl = algorithm_template(point, cfg)
    assert tpl.family == FAMILY_NNZ_ONE
    assert tpl.point == point
    assert tpl.config == cfg
    check_cin(tpl.cin)
    assert validate_schedule(tpl.cin, cfg) == []


def test_divisibility_gates_return_none():
    # p*c/N must divide into whole warps: p=256, N=8, c=1 -> 32 rows/block is
    # fine, but N=64 leaves fractional chunks for a g=2 nonzero template
    cfg = KernelConfig(n=64, p=256)
    assert algorithm_template(parse_point("nnz:2,col:1,r:1"), cfg) is None


def test_segment_group_only_for_wide_groups():
    cfg = KernelConfig(4, 256)
    serial = algorithm_template(parse_point("nnz:1,col:1,r:1"), cfg)
    assert find_group_rel(serial.cin) is None
    grouped = algorithm_template(parse_point("nnz:1,col:1,r:32"), cfg)
    assert find_group_rel(grouped.cin).size == 32


def test_group_width_must_divide_warp():
    # r=32 works; r values that do not divide the warp evenly are skipped
    cfg = KernelConfig(4, 256)
    for r in (2, 4, 8, 16, 32):
        tpl = algorithm_template(parse_point(f"nnz:1,col:1,r:{r}"), cfg)
        assert tpl is not None
        assert find_group_rel(tpl.cin).size == r


def count_templated(config: KernelConfig) -> dict[str, int]:
    counts: dict[str, int] = {}
    for point in enumerate_space().legal:
        tpl = algorithm_template(point, config)
        if tpl is not None:
            counts[tpl.family] = counts.get(tpl.family, 0) + 1
    return counts


@pytest.mark.parametrize("n", [4, 8])
def test_sixty_six_templated_points_per_width(n):
    counts = count_templated(KernelConfig(n=n, p=256))
    assert counts == {
        FAMILY_NNZ_MULTIPLE: 15,
        FAMILY_ROW_MULTIPLE: 18,
        FAMILY_ROW_RECIPROCAL: 15,
        FAMILY_NNZ_ONE: 18,
    }
    assert sum(counts.values()) == 66


def test_templates_print_reproducibly():
    cfg = KernelConfig(4, 256)
    point = parse_point("row:32,col:1,r:1")
    a = algorithm_template(point, cfg)
    b = algorithm_template(point, cfg)
    assert print_cin(a.cin) == print_cin(b.cin)
    assert a.commands == b.commands
