import enum
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

from cresnet.errors import SpecValidationError
from cresnet.nn.calc import Calc

STAGE_COUNT = 4


@enum.unique
class BlockKind(enum.Enum):
    """
    ブロックの種類。値はspecファイルにそのまま書かれる
    """

    BASIC_BLOCK = "basic_block"
    BOTTLENECK = "bottleneck"
    CROSS_BLOCK_A = "cross_block_a"
    CROSS_BLOCK_A1 = "cross_block_a1"
    CROSS_BLOCK_A2 = "cross_block_a2"
    CROSS_BOTTLENECK3 = "cross_bottleneck3"
    CROSS_BOTTLENECK6 = "cross_bottleneck6"

    @property
    def kernels(self) -> Tuple[int, ...]:
        return {
            BlockKind.BASIC_BLOCK: (3, 3),
            BlockKind.BOTTLENECK: (1, 3, 1),
            BlockKind.CROSS_BLOCK_A: (3, 3, 3),
            BlockKind.CROSS_BLOCK_A1: (3, 3, 3),
            BlockKind.CROSS_BLOCK_A2: (3, 3, 3),
            BlockKind.CROSS_BOTTLENECK3: (1, 3, 1),
            BlockKind.CROSS_BOTTLENECK6: (1, 3, 1, 1, 3, 1),
        }[self]

    @property
    def taps(self) -> Tuple[Tuple[int, int], ...]:
        """
        (source_tap, dest_tap) per jumper.
        tap 0 is the block input, tap i the output of layer i after its additions.
        """
        if self.is_baseline:
            return ((0, len(self.kernels)),)
        if self == BlockKind.CROSS_BOTTLENECK6:
            return ((0, 4), (2, 5), (3, 6))
        return ((0, 2), (1, 3))

    @property
    def is_baseline(self) -> bool:
        return self in (BlockKind.BASIC_BLOCK, BlockKind.BOTTLENECK)

    @property
    def is_cross(self) -> bool:
        return not self.is_baseline

    @property
    def jumper_count(self) -> int:
        return len(self.taps)

    @property
    def stride_layer(self) -> int:
        """
        0-based index of the layer that carries the block stride: the first 3x3
        """
        return self.kernels.index(3)

    @property
    def required_dashed(self) -> Tuple[int, ...]:
        # A1: 1本目、A2: 2本目を必ずdashedにする
        if self == BlockKind.CROSS_BLOCK_A1:
            return (0,)
        if self == BlockKind.CROSS_BLOCK_A2:
            return (1,)
        return ()


@enum.unique
class JumperKind(enum.Enum):
    SOLID = "solid"
    DASHED = "dashed"


@enum.unique
class SpecStatus(enum.Enum):
    VERIFIED = "verified"
    RECONSTRUCTED = "reconstructed"


@enum.unique
class StemOp(enum.Enum):
    CONV = "conv"
    MAXPOOL = "maxpool"


@dataclass(frozen=True)
class StemLayerSpec:
    op: StemOp
    k: int
    stride: int
    out_ch: int = 0

    @property
    def padding(self) -> int:
        return Calc.same_padding(self.k)


@dataclass(frozen=True)
class StageSpec:
    block_kind: BlockKind
    repeats: int
    channel_plan: Tuple[int, ...]
    stride: int

    @property
    def out_ch(self) -> int:
        return self.channel_plan[-1]


@dataclass(frozen=True)
class JumperEntry:
    """
    One jumper_mask row
    """

    stage: int
    block: int
    jumper: int
    kind: JumperKind
    in_ch: int
    out_ch: int
    stride: int
    bn: bool = True

    @property
    def is_dashed(self) -> bool:
        return self.kind == JumperKind.DASHED

    @property
    def pair(self) -> str:
        return f"{self.in_ch}-{self.out_ch}"


@dataclass(frozen=True)
class LayerGeom:
    in_ch: int
    out_ch: int
    k: int
    stride: int

    @property
    def padding(self) -> int:
        return Calc.same_padding(self.k)


@dataclass(frozen=True)
class JumperSlot:
    """
    Jumper position implied by the stage structure, before the mask picks a kind
    """

    stage: int
    block: int
    jumper: int
    source_tap: int
    dest_tap: int
    in_ch: int
    out_ch: int
    stride: int

    @property
    def forced_dashed(self) -> bool:
        return self.in_ch != self.out_ch or self.stride != 1


@dataclass(frozen=True)
class BlockLayout:
    kind: BlockKind
    stage: int
    block: int
    in_ch: int
    layers: Tuple[LayerGeom, ...]
    slots: Tuple[JumperSlot, ...]

    @property
    def out_ch(self) -> int:
        return self.layers[-1].out_ch

    @property
    def stride(self) -> int:
        return self.layers[self.kind.stride_layer].stride


def block_layout(
    kind: BlockKind, stage: int, block: int, in_ch: int, plan: Tuple[int, ...], stride: int
) -> BlockLayout:
    assert len(plan) == len(kind.kernels), f"{kind.value} needs {len(kind.kernels)} channels: {plan=}"
    layers = []
    prev = in_ch
    for i, (k, out_ch) in enumerate(zip(kind.kernels, plan)):
        layers.append(
            LayerGeom(in_ch=prev, out_ch=out_ch, k=k, stride=stride if i == kind.stride_layer else 1)
        )
        prev = out_ch
    tap_ch = (in_ch,) + tuple(plan)
    slots = []
    for j, (src, dst) in enumerate(kind.taps):
        # stride層の出力(tap stride_layer+1)より前のtapは入力解像度
        crosses = src <= kind.stride_layer < dst
        slots.append(
            JumperSlot(
                stage=stage,
                block=block,
                jumper=j,
                source_tap=src,
                dest_tap=dst,
                in_ch=tap_ch[src],
                out_ch=tap_ch[dst],
                stride=stride if crosses else 1,
            )
        )
    return BlockLayout(
        kind=kind, stage=stage, block=block, in_ch=in_ch, layers=tuple(layers), slots=tuple(slots)
    )


def stage_layouts(stem: Tuple[StemLayerSpec, ...], stages: Tuple[StageSpec, ...]) -> List[BlockLayout]:
    """
    Expand stages into per-block layouts. The first block of a stage carries the stage stride.
    """
    convs = [s for s in stem if s.op == StemOp.CONV]
    in_ch = convs[-1].out_ch if convs else 0
    dst = []
    for si, stage in enumerate(stages):
        for bi in range(stage.repeats):
            layout = block_layout(
                kind=stage.block_kind,
                stage=si,
                block=bi,
                in_ch=in_ch,
                plan=stage.channel_plan,
                stride=stage.stride if bi == 0 else 1,
            )
            dst.append(layout)
            in_ch = layout.out_ch
    return dst


def auto_mask(
    stem: Tuple[StemLayerSpec, ...],
    stages: Tuple[StageSpec, ...],
    predicate: Optional[Callable[[JumperSlot], bool]] = None,
    bn: bool = True,
) -> Tuple[JumperEntry, ...]:
    """
    Build a jumper mask: dashed where `predicate` says so, where the block kind
    requires it, or where shapes force it. Everything else is solid.
    """
    dst = []
    for layout in stage_layouts(stem, stages):
        for slot in layout.slots:
            dashed = (
                slot.forced_dashed
                or slot.jumper in layout.kind.required_dashed
                or (predicate is not None and predicate(slot))
            )
            dst.append(
                JumperEntry(
                    stage=slot.stage,
                    block=slot.block,
                    jumper=slot.jumper,
                    kind=JumperKind.DASHED if dashed else JumperKind.SOLID,
                    in_ch=slot.in_ch,
                    out_ch=slot.out_ch,
                    stride=slot.stride,
                    bn=bn,
                )
            )
    return tuple(dst)


@dataclass(frozen=True)
class Violation:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


@dataclass(frozen=True)
class ArchitectureSpec:
    """
    Declarative description of one network: stem, four stages, jumper mask, head
    """

    name: str
    stem: Tuple[StemLayerSpec, ...]
    stages: Tuple[StageSpec, ...]
    jumper_mask: Tuple[JumperEntry, ...]
    input_size: Tuple[int, int] = (32, 32)
    in_channels: int = 3
    classes: int = 100
    status: SpecStatus = SpecStatus.VERIFIED
    jumper_bn: bool = True
    description: str = ""

    def layouts(self) -> List[BlockLayout]:
        return stage_layouts(self.stem, self.stages)

    def slots(self) -> List[JumperSlot]:
        return [slot for layout in self.layouts() for slot in layout.slots]

    @property
    def feature_ch(self) -> int:
        return self.stages[-1].out_ch

    @property
    def conv_layer_count(self) -> int:
        """
        Conv layers on the main path (stem + blocks), excluding jumper 1x1 convs
        """
        stem = sum(1 for s in self.stem if s.op == StemOp.CONV)
        return stem + sum(len(s.block_kind.kernels) * s.repeats for s in self.stages)

    @property
    def dashed_count(self) -> int:
        return sum(1 for j in self.jumper_mask if j.is_dashed)

    @property
    def solid_count(self) -> int:
        return sum(1 for j in self.jumper_mask if not j.is_dashed)

    def dashed_pairs(self) -> List[str]:
        return [j.pair for j in self.jumper_mask if j.is_dashed]

    def stage_sizes(self, input_size: Optional[Tuple[int, int]] = None) -> List[Tuple[int, int]]:
        """
        Spatial size after the stem and after each stage
        """
        h, w = input_size if input_size is not None else self.input_size
        for s in self.stem:
            h = Calc.conv_out_size(h, s.k, s.stride, s.padding)
            w = Calc.conv_out_size(w, s.k, s.stride, s.padding)
        dst = [(h, w)]
        for stage in self.stages:
            kind = stage.block_kind
            k = kind.kernels[kind.stride_layer]
            h = Calc.conv_out_size(h, k, stage.stride, Calc.same_padding(k))
            w = Calc.conv_out_size(w, k, stage.stride, Calc.same_padding(k))
            dst.append((h, w))
        return dst

    def describe(self) -> str:
        dst = f"# {self.name}\n"
        dst += f" - status: {self.status.value}\n"
        if self.description:
            dst += f" - description: {self.description}\n"
        dst += f" - input: {self.in_channels}x{self.input_size[0]}x{self.input_size[1]}, classes: {self.classes}\n"
        dst += f" - stem: {', '.join(f'{s.op.value} {s.k}x{s.k}/{s.stride}' + (f' {s.out_ch}' if s.out_ch else '') for s in self.stem)}\n"
        for i, stage in enumerate(self.stages):
            dst += f" - conv{i + 2}x: {stage.block_kind.value} x{stage.repeats} plan={list(stage.channel_plan)} stride={stage.stride}\n"
        dst += f" - conv layers: {self.conv_layer_count}\n"
        dst += f" - jumpers: {len(self.jumper_mask)} ({self.solid_count} solid, {self.dashed_count} dashed)\n"
        dst += f" - dashed: {', '.join(self.dashed_pairs())}\n"
        return dst


def validate(spec: ArchitectureSpec) -> List[Violation]:
    """
    Violations are returned as data; an empty list means the spec is buildable
    """
    dst: List[Violation] = []

    if spec.in_channels < 1:
        dst.append(Violation("spec", f"in_channels must be positive, got {spec.in_channels}"))
    if spec.classes < 1:
        dst.append(Violation("head", f"classes must be positive, got {spec.classes}"))
    if not spec.stem or spec.stem[0].op != StemOp.CONV:
        dst.append(Violation("stem", "stem must start with a conv layer"))
    for i, s in enumerate(spec.stem):
        if s.k < 1 or s.k % 2 == 0:
            dst.append(Violation(f"stem[{i}]", f"kernel must be odd and positive, got {s.k}"))
        if s.stride not in (1, 2):
            dst.append(Violation(f"stem[{i}]", f"stride must be 1 or 2, got {s.stride}"))
        if s.op == StemOp.CONV and s.out_ch < 1:
            dst.append(Violation(f"stem[{i}]", f"conv out_ch must be positive, got {s.out_ch}"))

    if len(spec.stages) != STAGE_COUNT:
        dst.append(Violation("stages", f"expected {STAGE_COUNT} stages, got {len(spec.stages)}"))
    for i, stage in enumerate(spec.stages):
        loc = f"stage[{i}]"
        if stage.repeats < 1:
            dst.append(Violation(loc, f"repeats must be >= 1, got {stage.repeats}"))
        if stage.stride not in (1, 2):
            dst.append(Violation(loc, f"stride must be 1 or 2, got {stage.stride}"))
        expected = len(stage.block_kind.kernels)
        if len(stage.channel_plan) != expected:
            dst.append(
                Violation(
                    loc,
                    f"{stage.block_kind.value} needs a channel plan of {expected} entries, got {len(stage.channel_plan)}",
                )
            )
        if any(c < 1 for c in stage.channel_plan):
            dst.append(Violation(loc, f"channels must be positive: {list(stage.channel_plan)}"))
    if dst:
        # 以降は構造が正しい前提
        return dst

    try:
        sizes = spec.stage_sizes()
    except AssertionError as e:
        return dst + [Violation("input_size", f"input {spec.input_size} collapses: {e}")]
    if any(h < 1 or w < 1 for h, w in sizes):
        dst.append(Violation("input_size", f"stage sizes collapse: {sizes}"))

    slots = spec.slots()
    if len(spec.jumper_mask) != len(slots):
        dst.append(
            Violation(
                "jumper_mask",
                f"expected {len(slots)} jumper entries, got {len(spec.jumper_mask)}",
            )
        )
        return dst
    kinds = {i: stage.block_kind for i, stage in enumerate(spec.stages)}
    for idx, (slot, entry) in enumerate(zip(slots, spec.jumper_mask)):
        loc = f"jumper_mask[{idx}] (stage {slot.stage}, block {slot.block}, jumper {slot.jumper})"
        if (entry.stage, entry.block, entry.jumper) != (slot.stage, slot.block, slot.jumper):
            dst.append(
                Violation(
                    loc,
                    f"entry is for stage {entry.stage}, block {entry.block}, jumper {entry.jumper}",
                )
            )
            continue
        if (entry.in_ch, entry.out_ch) != (slot.in_ch, slot.out_ch):
            dst.append(
                Violation(
                    loc,
                    f"channel pair {entry.pair} does not match the graph ({slot.in_ch}-{slot.out_ch})",
                )
            )
        if entry.stride != slot.stride:
            dst.append(Violation(loc, f"stride {entry.stride} does not match the graph ({slot.stride})"))
        if not entry.is_dashed:
            if slot.in_ch != slot.out_ch:
                dst.append(Violation(loc, "solid jumper requires matching channels"))
            if slot.stride != 1:
                dst.append(Violation(loc, "solid jumper cannot span a stride"))
            if slot.jumper in kinds[slot.stage].required_dashed:
                dst.append(
                    Violation(loc, f"{kinds[slot.stage].value} requires jumper {slot.jumper} dashed")
                )
    return dst


def ensure_valid(spec: ArchitectureSpec) -> ArchitectureSpec:
    violations = validate(spec)
    if violations:
        for v in violations:
            logging.debug(f"{spec.name}: {v}")
        raise SpecValidationError(spec.name, violations)
    return spec


def with_imagenet_stem(spec: ArchitectureSpec) -> ArchitectureSpec:
    """
    224x224 variant: 7x7/64 stride-2 conv followed by a 3x3 stride-2 max pool
    """
    stem_ch = [s for s in spec.stem if s.op == StemOp.CONV][-1].out_ch
    stem = (
        StemLayerSpec(op=StemOp.CONV, k=7, stride=2, out_ch=stem_ch),
        StemLayerSpec(op=StemOp.MAXPOOL, k=3, stride=2),
    )
    return replace(
        spec,
        name=f"{spec.name}_imagenet",
        stem=stem,
        input_size=(224, 224),
        jumper_mask=_remask(spec, stem, spec.stages),
    )


def narrowed(spec: ArchitectureSpec, divisor: int) -> ArchitectureSpec:
    """
    Width-reduced copy: every channel count divided by `divisor`, jumper kinds kept
    """
    assert divisor >= 1, f"{divisor=}"

    def div(c: int) -> int:
        assert c % divisor == 0, f"{c} channels not divisible by {divisor}"
        return c // divisor

    stem = tuple(replace(s, out_ch=div(s.out_ch)) if s.op == StemOp.CONV else s for s in spec.stem)
    stages = tuple(replace(s, channel_plan=tuple(div(c) for c in s.channel_plan)) for s in spec.stages)
    return replace(
        spec,
        name=f"{spec.name}_div{divisor}",
        stem=stem,
        stages=stages,
        jumper_mask=_remask(spec, stem, stages),
    )


def _remask(
    spec: ArchitectureSpec, stem: Tuple[StemLayerSpec, ...], stages: Tuple[StageSpec, ...]
) -> Tuple[JumperEntry, ...]:
    # 位置ごとの種類とbnを保ったまま、チャネル対とstrideを新しい構造から取り直す
    by_pos = {(j.stage, j.block, j.jumper): j for j in spec.jumper_mask}
    dst = []
    for layout in stage_layouts(stem, stages):
        for slot in layout.slots:
            old = by_pos.get((slot.stage, slot.block, slot.jumper))
            dashed = slot.forced_dashed or (old is not None and old.is_dashed)
            dst.append(
                JumperEntry(
                    stage=slot.stage,
                    block=slot.block,
                    jumper=slot.jumper,
                    kind=JumperKind.DASHED if dashed else JumperKind.SOLID,
                    in_ch=slot.in_ch,
                    out_ch=slot.out_ch,
                    stride=slot.stride,
                    bn=old.bn if old is not None else spec.jumper_bn,
                )
            )
    return tuple(dst)
