import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cresnet.arch.spec import BlockKind, BlockLayout, JumperEntry, JumperKind, LayerGeom, block_layout
from cresnet.errors import DimensionError, JumperError
from cresnet.nn.calc import Calc
from cresnet.nn.ops import BnState, add, batchnorm2d, conv2d, kaiming_normal, relu
from cresnet.nn.tensor import Parameter, ParamRole, Tensor, get_dtype

Trace = List[Tuple[str, Tensor]]


def _bn_params(channels: int, name: str) -> Tuple[Parameter, Parameter]:
    dtype = get_dtype()
    gamma = Parameter(np.ones(channels, dtype=dtype), ParamRole.BN_GAMMA, name=f"{name}.gamma")
    beta = Parameter(np.zeros(channels, dtype=dtype), ParamRole.BN_BETA, name=f"{name}.beta")
    return gamma, beta


@dataclass
class WbrParams:
    """
    One WBR layer: conv (no bias) -> BN -> ReLU
    """

    conv: Parameter
    gamma: Parameter
    beta: Parameter
    bn_state: BnState
    kernel: int
    stride: int
    in_ch: int
    out_ch: int
    name: str = ""

    def __post_init__(self) -> None:
        assert self.kernel % 2 == 1, f"{self.name}: odd kernel expected, got {self.kernel}"
        assert self.conv.shape == (self.out_ch, self.in_ch, self.kernel, self.kernel), (
            f"{self.name}: {self.conv.shape=}"
        )

    @property
    def padding(self) -> int:
        # 3x3 -> pad 1, 1x1 -> pad 0
        return Calc.same_padding(self.kernel)

    @classmethod
    def create(
        cls, in_ch: int, out_ch: int, kernel: int, stride: int, rng: np.random.Generator, name: str
    ) -> "WbrParams":
        shape = (out_ch, in_ch, kernel, kernel)
        conv = Parameter(kaiming_normal(shape, rng, get_dtype()), ParamRole.CONV_WEIGHT, name=f"{name}.conv.weight")
        gamma, beta = _bn_params(out_ch, f"{name}.bn")
        return cls(
            conv=conv,
            gamma=gamma,
            beta=beta,
            bn_state=BnState(out_ch),
            kernel=kernel,
            stride=stride,
            in_ch=in_ch,
            out_ch=out_ch,
            name=name,
        )

    @classmethod
    def from_geom(cls, geom: LayerGeom, rng: np.random.Generator, name: str) -> "WbrParams":
        return cls.create(geom.in_ch, geom.out_ch, geom.k, geom.stride, rng, name)

    def parameters(self) -> List[Parameter]:
        return [self.conv, self.gamma, self.beta]

    def bn_states(self) -> Dict[str, BnState]:
        return {f"{self.name}.bn": self.bn_state}


@dataclass
class JumperSpec:
    """
    One skip connection between two taps of a block.

    solid: identity, legal only when shapes match.
    dashed: 1x1 conv with the block stride, followed by BN when `bn` is set.
    """

    source_tap: int
    dest_tap: int
    kind: JumperKind
    in_ch: int
    out_ch: int
    stride: int
    bn: bool = True
    conv: Optional[Parameter] = None
    gamma: Optional[Parameter] = None
    beta: Optional[Parameter] = None
    bn_state: Optional[BnState] = None
    name: str = ""

    @property
    def is_dashed(self) -> bool:
        return self.kind == JumperKind.DASHED

    @classmethod
    def create(
        cls,
        source_tap: int,
        dest_tap: int,
        kind: JumperKind,
        in_ch: int,
        out_ch: int,
        stride: int,
        rng: np.random.Generator,
        name: str,
        index: int = 0,
        bn: bool = True,
    ) -> "JumperSpec":
        if kind == JumperKind.SOLID and (in_ch != out_ch or stride != 1):
            raise JumperError(
                index, f"solid jumper cannot map {in_ch}->{out_ch} channels with stride {stride}"
            )
        dst = cls(
            source_tap=source_tap,
            dest_tap=dest_tap,
            kind=kind,
            in_ch=in_ch,
            out_ch=out_ch,
            stride=stride,
            bn=bn,
            name=name,
        )
        if kind == JumperKind.DASHED:
            dst.conv = Parameter(
                kaiming_normal((out_ch, in_ch, 1, 1), rng, get_dtype()),
                ParamRole.CONV_WEIGHT,
                name=f"{name}.conv.weight",
            )
            if bn:
                dst.gamma, dst.beta = _bn_params(out_ch, f"{name}.bn")
                dst.bn_state = BnState(out_ch)
        return dst

    @classmethod
    def from_entry(
        cls, entry: JumperEntry, taps: Tuple[int, int], rng: np.random.Generator, name: str
    ) -> "JumperSpec":
        return cls.create(
            source_tap=taps[0],
            dest_tap=taps[1],
            kind=entry.kind,
            in_ch=entry.in_ch,
            out_ch=entry.out_ch,
            stride=entry.stride,
            rng=rng,
            name=name,
            index=entry.jumper,
            bn=entry.bn,
        )

    def parameters(self) -> List[Parameter]:
        return [p for p in (self.conv, self.gamma, self.beta) if p is not None]

    def bn_states(self) -> Dict[str, BnState]:
        return {f"{self.name}.bn": self.bn_state} if self.bn_state is not None else {}


##################################################################################
# forward fragments


def bn_conv(x: Tensor, p: WbrParams) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.in_ch:
        raise DimensionError(p.name or "wbr", f"expected {p.in_ch} input channels, got shape {x.shape}", ("C",))
    return batchnorm2d(conv2d(x, p.conv, stride=p.stride, padding=p.padding), p.gamma, p.beta, p.bn_state)


def wbr_forward(x: Tensor, p: WbrParams) -> Tensor:
    """
    P(x) = relu(bn(conv(x)))
    """
    return relu(bn_conv(x, p))


def jumper_forward(x: Tensor, j: JumperSpec, index: int) -> Tensor:
    if x.ndim != 4 or x.shape[1] != j.in_ch:
        raise JumperError(index, f"source tap {j.source_tap} has shape {x.shape}, expected {j.in_ch} channels")
    if not j.is_dashed:
        return x
    assert j.conv is not None
    h = conv2d(x, j.conv, stride=j.stride, padding=0)
    if j.bn:
        assert j.gamma is not None and j.beta is not None and j.bn_state is not None
        h = batchnorm2d(h, j.gamma, j.beta, j.bn_state)
    return h


def merge(main: Tensor, skip: Tensor, index: int) -> Tensor:
    if main.shape != skip.shape:
        raise JumperError(index, f"jumper output {skip.shape} does not match destination {main.shape}")
    return add(main, skip)


def _expect(kind: str, layers: Sequence[WbrParams], jumpers: Sequence[JumperSpec], kernels: Tuple[int, ...]) -> None:
    if tuple(p.kernel for p in layers) != kernels:
        raise DimensionError(kind, f"kernel pattern {tuple(p.kernel for p in layers)} != {kernels}", ("k",))
    expected = BlockKind.CROSS_BOTTLENECK6.jumper_count if len(kernels) == 6 else 2
    if len(jumpers) != expected:
        raise DimensionError(kind, f"expected {expected} jumpers, got {len(jumpers)}", ("jumpers",))


def cross_block_forward(x: Tensor, layers: Sequence[WbrParams], jumpers: Sequence[JumperSpec]) -> Tensor:
    """
    out1 = P(x); out2 = P(out1) + J1(x); out3 = P(out2) + J2(out1)
    """
    _expect("cross_block", layers, jumpers, (3, 3, 3))
    j1, j2 = jumpers
    out1 = wbr_forward(x, layers[0])
    out2 = merge(wbr_forward(out1, layers[1]), jumper_forward(x, j1, 0), 0)
    out3 = merge(wbr_forward(out2, layers[2]), jumper_forward(out1, j2, 1), 1)
    return out3


def cross_bottleneck3_forward(x: Tensor, layers: Sequence[WbrParams], jumpers: Sequence[JumperSpec]) -> Tensor:
    _expect("cross_bottleneck3", layers, jumpers, (1, 3, 1))
    j1, j2 = jumpers
    out1 = wbr_forward(x, layers[0])
    out2 = merge(wbr_forward(out1, layers[1]), jumper_forward(x, j1, 0), 0)
    out3 = merge(wbr_forward(out2, layers[2]), jumper_forward(out1, j2, 1), 1)
    return out3


def cross_bottleneck6_forward(x: Tensor, layers: Sequence[WbrParams], jumpers: Sequence[JumperSpec]) -> Tensor:
    """
    out1..out3 = P(...) without additions
    out4 = P(out3) + J1(x); out5 = P(out4) + J2(out2); out6 = P(out5) + J3(out3)
    """
    _expect("cross_bottleneck6", layers, jumpers, (1, 3, 1, 1, 3, 1))
    j1, j2, j3 = jumpers
    out1 = wbr_forward(x, layers[0])
    out2 = wbr_forward(out1, layers[1])
    out3 = wbr_forward(out2, layers[2])
    out4 = merge(wbr_forward(out3, layers[3]), jumper_forward(x, j1, 0), 0)
    out5 = merge(wbr_forward(out4, layers[4]), jumper_forward(out2, j2, 1), 1)
    out6 = merge(wbr_forward(out5, layers[5]), jumper_forward(out3, j3, 2), 2)
    return out6


def baseline_block_forward(
    x: Tensor, kind: BlockKind, layers: Sequence[WbrParams], jumper: JumperSpec
) -> Tensor:
    """
    relu(branch(x) + J(x)); the last layer's ReLU comes after the addition
    """
    if not kind.is_baseline:
        raise DimensionError("baseline_block", f"{kind.value} is not a baseline block")
    if tuple(p.kernel for p in layers) != kind.kernels:
        raise DimensionError("baseline_block", f"{kind.value} expects kernels {kind.kernels}", ("k",))
    h = x
    for p in layers[:-1]:
        h = wbr_forward(h, p)
    h = bn_conv(h, layers[-1])
    return relu(merge(h, jumper_forward(x, jumper, 0), 0))


##################################################################################
# block container


class Block:
    """
    Layers and jumpers of one residual block, evaluated by a generic tap engine
    """

    def __init__(self, kind: BlockKind, layers: List[WbrParams], jumpers: List[JumperSpec], name: str = ""):
        self.kind = kind
        self.layers = layers
        self.jumpers = jumpers
        self.name = name
        self.check_structure()

    @classmethod
    def create(
        cls, layout: BlockLayout, entries: Sequence[JumperEntry], rng: np.random.Generator, name: str
    ) -> "Block":
        assert len(entries) == len(layout.slots), f"{name}: {len(entries)=} {len(layout.slots)=}"
        layers = [WbrParams.from_geom(g, rng, f"{name}.layer{i + 1}") for i, g in enumerate(layout.layers)]
        jumpers = [
            JumperSpec.from_entry(e, (s.source_tap, s.dest_tap), rng, f"{name}.jumper{s.jumper + 1}")
            for s, e in zip(layout.slots, entries)
        ]
        return cls(layout.kind, layers, jumpers, name)

    def check_structure(self) -> None:
        kind = self.kind
        assert tuple(p.kernel for p in self.layers) == kind.kernels, f"{self.name}: kernel pattern"
        assert tuple((j.source_tap, j.dest_tap) for j in self.jumpers) == kind.taps, f"{self.name}: taps"
        for j in self.jumpers:
            assert 0 <= j.source_tap < j.dest_tap <= len(self.layers), f"{self.name}: {j.source_tap=} {j.dest_tap=}"
        if kind.is_cross:
            # 隣り合うjumperは交差する: src_a < src_b < dst_a < dst_b
            for a, b in zip(self.jumpers, self.jumpers[1:]):
                assert a.source_tap < b.source_tap < a.dest_tap < b.dest_tap, f"{self.name}: jumpers do not cross"
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            assert a.out_ch == b.in_ch, f"{self.name}: layer{i + 1} -> layer{i + 2} channels"

    @property
    def in_ch(self) -> int:
        return self.layers[0].in_ch

    @property
    def out_ch(self) -> int:
        return self.layers[-1].out_ch

    def forward(self, x: Tensor, trace: Optional[Trace] = None) -> Tensor:
        taps = [x]
        n = len(self.layers)
        for i, layer in enumerate(self.layers, start=1):
            h = bn_conv(taps[-1], layer)
            incoming = [(ji, j) for ji, j in enumerate(self.jumpers) if j.dest_tap == i]
            pre_add = self.kind.is_baseline and i == n
            if not pre_add:
                h = relu(h)
            for ji, j in incoming:
                skip = jumper_forward(taps[j.source_tap], j, ji)
                if trace is not None:
                    trace.append((j.name, skip))
                h = merge(h, skip, ji)
            if pre_add:
                h = relu(h)
            if trace is not None:
                trace.append((layer.name, h))
            taps.append(h)
        return taps[-1]

    def forward_explicit(self, x: Tensor) -> Tensor:
        """
        Same computation through the per-kind wiring functions
        """
        if self.kind.is_baseline:
            return baseline_block_forward(x, self.kind, self.layers, self.jumpers[0])
        if self.kind == BlockKind.CROSS_BOTTLENECK6:
            return cross_bottleneck6_forward(x, self.layers, self.jumpers)
        if self.kind == BlockKind.CROSS_BOTTLENECK3:
            return cross_bottleneck3_forward(x, self.layers, self.jumpers)
        return cross_block_forward(x, self.layers, self.jumpers)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def parameters(self) -> List[Parameter]:
        dst: List[Parameter] = []
        for p in self.layers:
            dst += p.parameters()
        for j in self.jumpers:
            dst += j.parameters()
        return dst

    def bn_states(self) -> Dict[str, BnState]:
        dst: Dict[str, BnState] = {}
        for part in [*self.layers, *self.jumpers]:
            dst.update(part.bn_states())
        return dst

    def describe(self) -> str:
        dst = f"# Block {self.name} ({self.kind.value})\n"
        for p in self.layers:
            dst += f" - {p.name}: {p.kernel}x{p.kernel} {p.in_ch}->{p.out_ch} stride {p.stride}\n"
        for j in self.jumpers:
            bn = " +bn" if j.is_dashed and j.bn else ""
            dst += f" - {j.name}: tap{j.source_tap}->tap{j.dest_tap} {j.kind.value} {j.in_ch}-{j.out_ch} stride {j.stride}{bn}\n"
        logging.debug(dst)
        return dst


def make_block(
    kind: BlockKind,
    in_ch: int,
    plan: Tuple[int, ...],
    stride: int,
    kinds: Sequence[JumperKind],
    rng: np.random.Generator,
    bn: bool = True,
    name: str = "block",
) -> Block:
    """
    Standalone block for tests and experiments; solid jumpers that shapes forbid raise JumperError
    """
    layout = block_layout(kind, 0, 0, in_ch, plan, stride)
    assert len(kinds) == len(layout.slots), f"{kind.value} needs {len(layout.slots)} jumper kinds"
    entries = [
        JumperEntry(
            stage=0, block=0, jumper=s.jumper, kind=k, in_ch=s.in_ch, out_ch=s.out_ch, stride=s.stride, bn=bn
        )
        for s, k in zip(layout.slots, kinds)
    ]
    return Block.create(layout, entries, rng, name)
