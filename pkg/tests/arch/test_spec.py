from dataclasses import replace

import pytest

from cresnet.arch.registry import registry_get
from cresnet.arch.spec import (
    BlockKind,
    JumperKind,
    StemOp,
    block_layout,
    ensure_valid,
    narrowed,
    validate,
    with_imagenet_stem,
)
from cresnet.errors import SpecValidationError


@pytest.mark.parametrize(
    "kind, kernels, taps",
    [
        (BlockKind.BASIC_BLOCK, (3, 3), ((0, 2),)),
        (BlockKind.BOTTLENECK, (1, 3, 1), ((0, 3),)),
        (BlockKind.CROSS_BLOCK_A, (3, 3, 3), ((0, 2), (1, 3))),
        (BlockKind.CROSS_BLOCK_A1, (3, 3, 3), ((0, 2), (1, 3))),
        (BlockKind.CROSS_BLOCK_A2, (3, 3, 3), ((0, 2), (1, 3))),
        (BlockKind.CROSS_BOTTLENECK3, (1, 3, 1), ((0, 2), (1, 3))),
        (BlockKind.CROSS_BOTTLENECK6, (1, 3, 1, 1, 3, 1), ((0, 4), (2, 5), (3, 6))),
    ],
)
def test_block_kind_wiring(kind: BlockKind, kernels, taps):
    assert kind.kernels == kernels
    assert kind.taps == taps
    assert kind.jumper_count == len(taps)
    # strideは最初の3x3
    assert kernels[kind.stride_layer] == 3
    assert kind.stride_layer == kernels.index(3)


def test_cross_jumpers_interleave():
    for kind in BlockKind:
        if not kind.is_cross:
            continue
        for (sa, da), (sb, db) in zip(kind.taps, kind.taps[1:]):
            assert sa < sb < da < db


@pytest.mark.parametrize(
    "kind, in_ch, plan, stride, expected",
    [
        # (in_ch, out_ch, stride) per jumper
        (BlockKind.CROSS_BLOCK_A, 64, (128, 128, 128), 2, [(64, 128, 2), (128, 128, 1)]),
        (BlockKind.CROSS_BLOCK_A, 64, (64, 64, 64), 1, [(64, 64, 1), (64, 64, 1)]),
        (BlockKind.BASIC_BLOCK, 128, (256, 256), 2, [(128, 256, 2)]),
        (BlockKind.BOTTLENECK, 64, (64, 64, 256), 1, [(64, 256, 1)]),
        (BlockKind.CROSS_BOTTLENECK3, 256, (128, 128, 512), 2, [(256, 128, 2), (128, 512, 2)]),
        (
            BlockKind.CROSS_BOTTLENECK6,
            128,
            (128, 256, 256, 128, 256, 256),
            2,
            [(128, 128, 2), (256, 256, 1), (256, 256, 1)],
        ),
    ],
)
def test_block_layout_slots(kind: BlockKind, in_ch: int, plan, stride: int, expected):
    dut = block_layout(kind, 1, 0, in_ch, plan, stride)
    assert [(s.in_ch, s.out_ch, s.stride) for s in dut.slots] == expected
    assert dut.stride == stride
    assert [g.stride for g in dut.layers].count(stride) >= 1


def test_registry_specs_are_valid():
    for name in ("resnet18_ft", "cresnet18_a", "cresnet27_b2", "cresnet27_c1"):
        assert validate(registry_get(name)) == []


def test_stage_sizes():
    dut = registry_get("resnet18_ft")
    assert dut.stage_sizes() == [(32, 32), (32, 32), (16, 16), (8, 8), (4, 4)]
    assert dut.feature_ch == 512


def test_solid_jumper_with_channel_change_is_rejected():
    spec = registry_get("cresnet18_a")
    mask = list(spec.jumper_mask)
    idx = next(i for i, j in enumerate(mask) if j.is_dashed)
    mask[idx] = replace(mask[idx], kind=JumperKind.SOLID)
    bad = replace(spec, jumper_mask=tuple(mask))
    messages = [v.message for v in validate(bad)]
    assert "solid jumper requires matching channels" in messages
    assert "solid jumper cannot span a stride" in messages
    with pytest.raises(SpecValidationError) as e:
        ensure_valid(bad)
    assert len(e.value.violations) == 2


def test_mask_length_mismatch():
    spec = registry_get("cresnet18_a")
    bad = replace(spec, jumper_mask=spec.jumper_mask[:-1])
    violations = validate(bad)
    assert len(violations) == 1
    assert "expected 10 jumper entries, got 9" in violations[0].message


def test_wrong_stage_count():
    spec = registry_get("resnet18_ft")
    violations = validate(replace(spec, stages=spec.stages[:3]))
    assert any("expected 4 stages" in v.message for v in violations)


def test_channel_plan_length():
    spec = registry_get("resnet18_ft")
    stages = (replace(spec.stages[0], channel_plan=(64, 64, 64)),) + spec.stages[1:]
    assert any("channel plan" in v.message for v in validate(replace(spec, stages=stages)))


def test_small_input_keeps_positive_sizes():
    spec = registry_get("resnet18_ft")
    dut = replace(spec, input_size=(4, 4))
    assert validate(dut) == []
    assert dut.stage_sizes() == [(4, 4), (4, 4), (2, 2), (1, 1), (1, 1)]


def test_with_imagenet_stem():
    dut = with_imagenet_stem(registry_get("resnet18_ft"))
    assert dut.name == "resnet18_ft_imagenet"
    assert dut.input_size == (224, 224)
    assert [s.op for s in dut.stem] == [StemOp.CONV, StemOp.MAXPOOL]
    assert dut.stage_sizes() == [(56, 56), (56, 56), (28, 28), (14, 14), (7, 7)]
    assert validate(dut) == []


def test_narrowed_keeps_kinds():
    spec = registry_get("cresnet27_a2")
    dut = narrowed(spec, 8)
    assert dut.name == "cresnet27_a2_div8"
    assert [j.kind for j in dut.jumper_mask] == [j.kind for j in spec.jumper_mask]
    assert dut.stages[0].channel_plan == (8, 8, 8)
    assert validate(dut) == []
