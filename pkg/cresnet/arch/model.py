import logging
from typing import Dict, List, Optional, Union

import numpy as np

from cresnet.arch.blocks import Block, Trace, WbrParams, wbr_forward
from cresnet.arch.spec import ArchitectureSpec, StemLayerSpec, StemOp, ensure_valid
from cresnet.errors import CheckpointError, DimensionError
from cresnet.nn.ops import BnMode, BnState, avgpool_global, kaiming_normal, linear, maxpool2d
from cresnet.nn.tensor import Parameter, ParamRole, Tensor, get_dtype

StemLayer = Union[WbrParams, StemLayerSpec]


class Model:
    """
    Built network: stem, residual blocks, global average pool and fc head
    """

    def __init__(
        self,
        spec: ArchitectureSpec,
        classes: int,
        stem: List[StemLayer],
        blocks: List[Block],
        fc_weight: Parameter,
        fc_bias: Parameter,
    ):
        self.spec = spec
        self.classes = classes
        self.stem = stem
        self.blocks = blocks
        self.fc_weight = fc_weight
        self.fc_bias = fc_bias
        self._mode = BnMode.TRAIN
        names = [p.name for p in self.parameters()]
        assert len(set(names)) == len(names), f"{spec.name}: duplicate parameter names"

    @property
    def name(self) -> str:
        return self.spec.name

    ##############################################################################
    # forward

    def _stem_forward(self, x: Tensor, trace: Optional[Trace] = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(
                "model", f"expected (N, {self.spec.in_channels}, H, W) input, got {x.shape}", ("C",)
            )
        h = x
        for i, layer in enumerate(self.stem):
            if isinstance(layer, WbrParams):
                h = wbr_forward(h, layer)
            else:
                h = maxpool2d(h, k=layer.k, stride=layer.stride, padding=layer.padding)
            if trace is not None:
                trace.append((f"stem.{i}", h))
        return h

    def _head_forward(self, h: Tensor, trace: Optional[Trace] = None) -> Tensor:
        logits = linear(avgpool_global(h), self.fc_weight, self.fc_bias)
        if trace is not None:
            trace.append(("head.fc", logits))
        return logits

    def forward(self, x: Tensor, trace: Optional[Trace] = None) -> Tensor:
        h = self._stem_forward(x, trace)
        for block in self.blocks:
            h = block.forward(h, trace)
            logging.debug(f"{block.name}: {h.shape}")
        return self._head_forward(h, trace)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def stage_outputs(self, x: Tensor) -> List[Tensor]:
        """
        Activations after the stem and after each stage
        """
        h = self._stem_forward(x)
        dst = [h]
        stage_ends = {}
        for i, block in enumerate(self.blocks):
            stage_ends[self._stage_of(block)] = i
        for i, block in enumerate(self.blocks):
            h = block.forward(h)
            if stage_ends[self._stage_of(block)] == i:
                dst.append(h)
        return dst

    def find_first_nonfinite(self, x: Tensor) -> Optional[str]:
        """
        Name of the first layer whose output contains NaN/Inf, or None
        """
        if not np.all(np.isfinite(x.data)):
            return "input"
        trace: Trace = []
        self.forward(x, trace)
        for name, t in trace:
            if not np.all(np.isfinite(t.data)):
                return name
        return None

    @staticmethod
    def _stage_of(block: Block) -> int:
        # "stages.{s}.{b}"
        return int(block.name.split(".")[1])

    ##############################################################################
    # parameters / state

    def parameters(self) -> List[Parameter]:
        dst: List[Parameter] = []
        for layer in self.stem:
            if isinstance(layer, WbrParams):
                dst += layer.parameters()
        for block in self.blocks:
            dst += block.parameters()
        return dst + [self.fc_weight, self.fc_bias]

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def bn_states(self) -> Dict[str, BnState]:
        dst: Dict[str, BnState] = {}
        for layer in self.stem:
            if isinstance(layer, WbrParams):
                dst.update(layer.bn_states())
        for block in self.blocks:
            dst.update(block.bn_states())
        return dst

    @property
    def mode(self) -> BnMode:
        return self._mode

    def train(self) -> "Model":
        return self._set_mode(BnMode.TRAIN)

    def eval(self) -> "Model":
        return self._set_mode(BnMode.EVAL)

    def _set_mode(self, mode: BnMode) -> "Model":
        self._mode = mode
        for state in self.bn_states().values():
            state.mode = mode
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def conv_layer_count(self) -> int:
        stem = sum(1 for layer in self.stem if isinstance(layer, WbrParams))
        return stem + sum(len(b.layers) for b in self.blocks)

    def jumper_count(self) -> Dict[str, int]:
        jumpers = [j for b in self.blocks for j in b.jumpers]
        dashed = sum(1 for j in jumpers if j.is_dashed)
        return {"total": len(jumpers), "solid": len(jumpers) - dashed, "dashed": dashed}

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """
        Parameters and BN running statistics as named arrays (copies)
        """
        dst = {f"param/{name}": p.data.copy() for name, p in self.named_parameters().items()}
        for name, state in self.bn_states().items():
            dst[f"bn/{name}.running_mean"] = state.running_mean.copy()
            dst[f"bn/{name}.running_var"] = state.running_var.copy()
        return dst

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_arrays())
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            unexpected = sorted(set(arrays) - expected)
            raise CheckpointError(f"state names differ: {missing=} {unexpected=}")
        params = self.named_parameters()
        states = self.bn_states()
        for key, value in arrays.items():
            kind, name = key.split("/", 1)
            if kind == "param":
                p = params[name]
                assert value.shape == p.shape, f"{name}: {value.shape} != {p.shape}"
                p.data[...] = value
            else:
                state_name, field = name.rsplit(".", 1)
                state = states[state_name]
                getattr(state, field)[...] = value
                state.initialized = True

    def describe(self) -> str:
        counts = self.jumper_count()
        params = sum(p.size for p in self.parameters())
        dst = f"# Model {self.name}\n"
        dst += f" - classes: {self.classes}\n"
        dst += f" - mode: {self.mode.value}\n"
        dst += f" - conv layers: {self.conv_layer_count()}\n"
        dst += f" - blocks: {len(self.blocks)}\n"
        dst += f" - jumpers: {counts['total']} ({counts['solid']} solid, {counts['dashed']} dashed)\n"
        dst += f" - parameters: {params:,}\n"
        return dst


def build(spec: ArchitectureSpec, classes: Optional[int] = None, seed: int = 0) -> Model:
    """
    Validate `spec` and allocate a model. `classes` overrides the spec's head width.
    """
    ensure_valid(spec)
    classes = classes if classes is not None else spec.classes
    rng = np.random.default_rng(seed)

    stem: List[StemLayer] = []
    in_ch = spec.in_channels
    for i, s in enumerate(spec.stem):
        if s.op == StemOp.CONV:
            stem.append(WbrParams.create(in_ch, s.out_ch, s.k, s.stride, rng, f"stem.{i}"))
            in_ch = s.out_ch
        else:
            stem.append(s)

    blocks = []
    mask = list(spec.jumper_mask)
    for layout in spec.layouts():
        n = len(layout.slots)
        entries, mask = mask[:n], mask[n:]
        blocks.append(Block.create(layout, entries, rng, f"stages.{layout.stage}.{layout.block}"))

    fc_shape = (classes, spec.feature_ch)
    fc_weight = Parameter(kaiming_normal(fc_shape, rng, get_dtype()), ParamRole.FC_WEIGHT, name="head.fc.weight")
    fc_bias = Parameter(np.zeros(classes, dtype=get_dtype()), ParamRole.FC_BIAS, name="head.fc.bias")
    model = Model(spec, classes, stem, blocks, fc_weight, fc_bias)
    logging.debug(model.describe())
    return model
