import logging
from typing import Callable, Dict, List, Optional, Tuple

from cresnet.arch.spec import (
    ArchitectureSpec,
    BlockKind,
    JumperSlot,
    SpecStatus,
    StageSpec,
    StemLayerSpec,
    StemOp,
    auto_mask,
)
from cresnet.errors import UnknownArchError

_REG_ARCHS: Dict[str, Callable[[], ArchitectureSpec]] = {}

# conv2x..conv5x のベース幅とstride
STAGE_WIDTHS = (64, 128, 256, 512)
STAGE_STRIDES = (1, 2, 2, 2)


def register_arch(name: str) -> Callable[[Callable[[], ArchitectureSpec]], Callable[[], ArchitectureSpec]]:
    def deco(fn: Callable[[], ArchitectureSpec]) -> Callable[[], ArchitectureSpec]:
        assert name not in _REG_ARCHS, f"duplicate architecture: {name}"
        _REG_ARCHS[name] = fn
        return fn

    return deco


def available() -> List[str]:
    return list(_REG_ARCHS)


def registry_get(name: str) -> ArchitectureSpec:
    fn = _REG_ARCHS.get(name)
    if fn is None:
        raise UnknownArchError(name, available())
    spec = fn()
    assert spec.name == name, f"factory for {name} produced {spec.name}"
    return spec


def fine_tuned_stem() -> Tuple[StemLayerSpec, ...]:
    """
    Two 3x3/64 convs in place of the 7x7 conv + max pool, for 32x32 inputs
    """
    return (
        StemLayerSpec(op=StemOp.CONV, k=3, stride=1, out_ch=64),
        StemLayerSpec(op=StemOp.CONV, k=3, stride=1, out_ch=64),
    )


def _plan(kind: BlockKind, c: int) -> Tuple[int, ...]:
    if kind == BlockKind.BASIC_BLOCK:
        return (c, c)
    if kind in (BlockKind.BOTTLENECK, BlockKind.CROSS_BOTTLENECK3):
        return (c, c, 4 * c)
    if kind == BlockKind.CROSS_BOTTLENECK6:
        return (c, 2 * c, 2 * c, c, 2 * c, 2 * c)
    return (c, c, c)


def make_spec(
    name: str,
    kind: BlockKind,
    repeats: Tuple[int, ...],
    dashed: Optional[Callable[[JumperSlot], bool]] = None,
    status: SpecStatus = SpecStatus.VERIFIED,
    jumper_bn: bool = True,
    description: str = "",
) -> ArchitectureSpec:
    stem = fine_tuned_stem()
    stages = tuple(
        StageSpec(block_kind=kind, repeats=r, channel_plan=_plan(kind, c), stride=s)
        for r, c, s in zip(repeats, STAGE_WIDTHS, STAGE_STRIDES)
    )
    spec = ArchitectureSpec(
        name=name,
        stem=stem,
        stages=stages,
        jumper_mask=auto_mask(stem, stages, predicate=dashed, bn=jumper_bn),
        status=status,
        jumper_bn=jumper_bn,
        description=description,
    )
    logging.debug(f"registry: {name} {spec.solid_count=} {spec.dashed_count=}")
    return spec


##################################################################################
# fine-tuned ResNet baselines


@register_arch("resnet18_ft")
def resnet18_ft() -> ArchitectureSpec:
    return make_spec("resnet18_ft", BlockKind.BASIC_BLOCK, (2, 2, 2, 2), description="ResNet18 with the 32x32 stem")


@register_arch("resnet34_ft")
def resnet34_ft() -> ArchitectureSpec:
    return make_spec("resnet34_ft", BlockKind.BASIC_BLOCK, (3, 4, 6, 3), description="ResNet34 with the 32x32 stem")


@register_arch("resnet50_ft")
def resnet50_ft() -> ArchitectureSpec:
    return make_spec("resnet50_ft", BlockKind.BOTTLENECK, (3, 4, 6, 3), description="ResNet50 with the 32x32 stem")


##################################################################################
# Cross-Block networks


def _transition(slot: JumperSlot) -> bool:
    return slot.stage > 0 and slot.block == 0


@register_arch("cresnet15_a1")
def cresnet15_a1() -> ArchitectureSpec:
    return make_spec(
        "cresnet15_a1",
        BlockKind.CROSS_BLOCK_A,
        (1, 1, 1, 1),
        dashed=_transition,
        description="both jumpers of every stage-transition block dashed",
    )


@register_arch("cresnet18_a")
def cresnet18_a() -> ArchitectureSpec:
    return make_spec(
        "cresnet18_a", BlockKind.CROSS_BLOCK_A, (1, 2, 1, 1), description="dashed only where shapes force it"
    )


@register_arch("cresnet27_a")
def cresnet27_a() -> ArchitectureSpec:
    return make_spec(
        "cresnet27_a",
        BlockKind.CROSS_BLOCK_A,
        (2, 2, 2, 2),
        status=SpecStatus.RECONSTRUCTED,
        description="dashed only where shapes force it",
    )


@register_arch("cresnet27_a1")
def cresnet27_a1() -> ArchitectureSpec:
    return make_spec(
        "cresnet27_a1",
        BlockKind.CROSS_BLOCK_A,
        (2, 2, 2, 2),
        dashed=_transition,
        status=SpecStatus.RECONSTRUCTED,
        description="both jumpers of every stage-transition block dashed",
    )


@register_arch("cresnet27_a2")
def cresnet27_a2() -> ArchitectureSpec:
    return make_spec(
        "cresnet27_a2",
        BlockKind.CROSS_BLOCK_A,
        (2, 2, 2, 2),
        dashed=lambda s: s.jumper == 1 and (s.stage == 0 or s.block == 1),
        description="second jumper dashed in every conv2x block and in the second block of later stages",
    )


##################################################################################
# Cross-Bottleneck networks (bare 1x1 dashed jumpers)


@register_arch("cresnet27_c1")
def cresnet27_c1() -> ArchitectureSpec:
    return make_spec(
        "cresnet27_c1",
        BlockKind.CROSS_BOTTLENECK3,
        (2, 2, 2, 2),
        dashed=lambda s: True,
        jumper_bn=False,
        description="three-layer cross-bottlenecks, every jumper dashed",
    )


@register_arch("cresnet27_b")
def cresnet27_b() -> ArchitectureSpec:
    return make_spec(
        "cresnet27_b",
        BlockKind.CROSS_BOTTLENECK6,
        (1, 1, 1, 1),
        dashed=lambda s: s.jumper == 0,
        status=SpecStatus.RECONSTRUCTED,
        jumper_bn=False,
        description="first jumper of every block dashed",
    )


@register_arch("cresnet27_b1")
def cresnet27_b1() -> ArchitectureSpec:
    return make_spec(
        "cresnet27_b1",
        BlockKind.CROSS_BOTTLENECK6,
        (1, 1, 1, 1),
        status=SpecStatus.RECONSTRUCTED,
        jumper_bn=False,
        description="dashed only where shapes force it",
    )


@register_arch("cresnet27_b2")
def cresnet27_b2() -> ArchitectureSpec:
    return make_spec(
        "cresnet27_b2",
        BlockKind.CROSS_BOTTLENECK6,
        (1, 1, 1, 1),
        dashed=lambda s: s.jumper in (0, 1),
        jumper_bn=False,
        description="first and second jumpers of every block dashed",
    )


@register_arch("cresnet27_b3")
def cresnet27_b3() -> ArchitectureSpec:
    return make_spec(
        "cresnet27_b3",
        BlockKind.CROSS_BOTTLENECK6,
        (1, 1, 1, 1),
        dashed=lambda s: True,
        status=SpecStatus.RECONSTRUCTED,
        jumper_bn=False,
        description="every jumper dashed",
    )
