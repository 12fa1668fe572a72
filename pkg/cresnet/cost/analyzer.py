import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from cresnet.arch.model import Model
from cresnet.arch.registry import registry_get
from cresnet.arch.spec import ArchitectureSpec, StemOp, ensure_valid
from cresnet.nn.calc import Calc

CSV_HEADER = "name,type,in_ch,out_ch,k,stride,out_h,out_w,params,flops"
MEGA = 1e6
GIGA = 1e9


@enum.unique
@enum.unique
class FlopConvention(enum.Enum):
    # conv/fc の積和のみ
    MAC = "mac"
    # BN出力1要素あたり 2 (normalize + affine) を加える
    MAC_BN = "mac+bn"


class LayerType(enum.Enum):
    CONV = "conv"
    BN = "bn"
    MAXPOOL = "maxpool"
    FC = "fc"


@dataclass
class LayerCost:
    name: str
    type: LayerType
    in_ch: int
    out_ch: int
    k: int
    stride: int
    out_h: int
    out_w: int
    params: int
    flops: int

    def to_csv_row(self) -> str:
        return (
            f"{self.name},{self.type.value},{self.in_ch},{self.out_ch},{self.k},{self.stride},"
            f"{self.out_h},{self.out_w},{self.params},{self.flops}"
        )


@dataclass
class JumperStats:
    solid: int
    dashed: int
    # stageごとの {"solid": n, "dashed": m}
    per_stage: List[Dict[str, int]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.solid + self.dashed


def jumper_stats(spec: ArchitectureSpec) -> JumperStats:
    per_stage = [{"solid": 0, "dashed": 0} for _ in spec.stages]
    for j in spec.jumper_mask:
        per_stage[j.stage]["dashed" if j.is_dashed else "solid"] += 1
    return JumperStats(solid=spec.solid_count, dashed=spec.dashed_count, per_stage=per_stage)


@dataclass
class CostReport:
    """
    Parameters and FLOPs (multiply-accumulates) of one network at one input size
    """

    name: str
    input_size: Tuple[int, int]
    classes: int
    layers: List[LayerCost]
    jumpers: JumperStats
    conv_layers: int = 0
    convention: FlopConvention = FlopConvention.MAC

    @property
    def params_total(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def flops_total(self) -> int:
        return sum(layer.flops for layer in self.layers)

    @property
    def params_by_layer(self) -> Dict[str, int]:
        return {layer.name: layer.params for layer in self.layers}

    @property
    def flops_by_layer(self) -> Dict[str, int]:
        return {layer.name: layer.flops for layer in self.layers}

    @property
    def params_m(self) -> float:
        """
        Params in M, rounded to 0.01M
        """
        return Calc.round_to(self.params_total, MEGA)

    @property
    def flops_g(self) -> float:
        """
        FLOPs in G, rounded to 0.01G
        """
        return Calc.round_to(self.flops_total, GIGA)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "input_size": list(self.input_size),
            "classes": self.classes,
            "params_total": self.params_total,
            "flops_total": self.flops_total,
            "params_m": self.params_m,
            "flops_g": self.flops_g,
            "conv_layers": self.conv_layers,
            "flop_convention": self.convention.value,
            "jumpers": {
                "solid": self.jumpers.solid,
                "dashed": self.jumpers.dashed,
                "per_stage": self.jumpers.per_stage,
            },
            "layers": [
                {
                    "name": layer.name,
                    "type": layer.type.value,
                    "in_ch": layer.in_ch,
                    "out_ch": layer.out_ch,
                    "k": layer.k,
                    "stride": layer.stride,
                    "out_h": layer.out_h,
                    "out_w": layer.out_w,
                    "params": layer.params,
                    "flops": layer.flops,
                }
                for layer in self.layers
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [layer.to_csv_row() for layer in self.layers]) + "\n"

    def dump(self, dump_file_path: str, format: Literal["json", "csv"] | None = None) -> None:
        """
        レポートをファイルに出力。formatが無ければ拡張子から判断
        """
        if format is None:
            if dump_file_path.endswith(".json"):
                format = "json"
            elif dump_file_path.endswith(".csv"):
                format = "csv"
            else:
                raise ValueError(f"Unsupported file extension: {dump_file_path}")
        if format == "json":
            text = self.to_json()
        elif format == "csv":
            text = self.to_csv()
        else:
            raise ValueError(f"Unsupported format: {format}")
        Path(dump_file_path).parent.mkdir(parents=True, exist_ok=True)
        with open(dump_file_path, "w", encoding="utf-8") as f:
            f.write(text)

    def describe(self) -> str:
        dst = f"# CostReport {self.name}\n"
        dst += f" - input: {self.input_size[0]}x{self.input_size[1]}, classes: {self.classes}\n"
        dst += f" - params: {self.params_total:,} ({self.params_m:.2f}M)\n"
        dst += f" - flops: {self.flops_total:,} ({self.flops_g:.2f}G), {self.convention.value}\n"
        dst += f" - conv layers: {self.conv_layers}\n"
        dst += f" - jumpers: {self.jumpers.total} ({self.jumpers.solid} solid, {self.jumpers.dashed} dashed)\n"
        return dst


def analyze(
    spec: ArchitectureSpec,
    input_size: Optional[Tuple[int, int]] = None,
    classes: Optional[int] = None,
    convention: FlopConvention = FlopConvention.MAC,
) -> CostReport:
    """
    Static cost traversal of a spec; no tensors are allocated.

    conv: k*k*Cin*Cout params, params*Hout*Wout FLOPs (no bias)
    bn: 2*C params, 0 FLOPs (2*C*Hout*Wout under FlopConvention.MAC_BN)
    fc: Cin*classes + classes params, Cin*classes FLOPs
    dashed jumpers: 1x1 conv (+bn) at the destination resolution
    """
    # 上書き値も spec と同じ検証を通す
    spec = replace(
        spec,
        input_size=input_size if input_size is not None else spec.input_size,
        classes=classes if classes is not None else spec.classes,
    )
    ensure_valid(spec)
    h, w = spec.input_size
    classes = spec.classes
    layers: List[LayerCost] = []

    def conv(name: str, in_ch: int, out_ch: int, k: int, stride: int, out_hw: Tuple[int, int]) -> None:
        params = k * k * in_ch * out_ch
        layers.append(
            LayerCost(name, LayerType.CONV, in_ch, out_ch, k, stride, out_hw[0], out_hw[1], params, params * out_hw[0] * out_hw[1])
        )

    def bn(name: str, ch: int, out_hw: Tuple[int, int]) -> None:
        flops = 2 * ch * out_hw[0] * out_hw[1] if convention == FlopConvention.MAC_BN else 0
        layers.append(LayerCost(name, LayerType.BN, ch, ch, 0, 1, out_hw[0], out_hw[1], 2 * ch, flops))

    in_ch = spec.in_channels
    for i, s in enumerate(spec.stem):
        h = Calc.conv_out_size(h, s.k, s.stride, s.padding)
        w = Calc.conv_out_size(w, s.k, s.stride, s.padding)
        if s.op == StemOp.CONV:
            conv(f"stem.{i}.conv", in_ch, s.out_ch, s.k, s.stride, (h, w))
            bn(f"stem.{i}.bn", s.out_ch, (h, w))
            in_ch = s.out_ch
        else:
            layers.append(LayerCost(f"stem.{i}.maxpool", LayerType.MAXPOOL, in_ch, in_ch, s.k, s.stride, h, w, 0, 0))

    mask = list(spec.jumper_mask)
    for layout in spec.layouts():
        prefix = f"stages.{layout.stage}.{layout.block}"
        taps = [(h, w)]
        for li, g in enumerate(layout.layers, start=1):
            h = Calc.conv_out_size(h, g.k, g.stride, g.padding)
            w = Calc.conv_out_size(w, g.k, g.stride, g.padding)
            conv(f"{prefix}.layer{li}.conv", g.in_ch, g.out_ch, g.k, g.stride, (h, w))
            bn(f"{prefix}.layer{li}.bn", g.out_ch, (h, w))
            taps.append((h, w))
        entries, mask = mask[: len(layout.slots)], mask[len(layout.slots) :]
        for slot, entry in zip(layout.slots, entries):
            if not entry.is_dashed:
                continue
            dest = taps[slot.dest_tap]
            name = f"{prefix}.jumper{slot.jumper + 1}"
            conv(f"{name}.conv", entry.in_ch, entry.out_ch, 1, entry.stride, dest)
            if entry.bn:
                bn(f"{name}.bn", entry.out_ch, dest)

    feature = spec.feature_ch
    layers.append(
        LayerCost("head.fc", LayerType.FC, feature, classes, 0, 1, 1, 1, feature * classes + classes, feature * classes)
    )
    report = CostReport(
        name=spec.name,
        input_size=(input_size if input_size is not None else spec.input_size),
        classes=classes,
        layers=layers,
        jumpers=jumper_stats(spec),
        conv_layers=spec.conv_layer_count,
        convention=convention,
    )
    logging.debug(report.describe())
    return report


def count_params(spec: ArchitectureSpec, classes: Optional[int] = None) -> CostReport:
    return analyze(spec, classes=classes)


def count_flops(
    spec: ArchitectureSpec, input_size: Optional[Tuple[int, int]] = None, classes: Optional[int] = None
) -> CostReport:
    return analyze(spec, input_size=input_size, classes=classes)


def audit_params_by_layer(model: Model) -> Dict[str, int]:
    """
    Parameter counts from the allocated tensors, grouped like the static report rows
    """
    dst: Dict[str, int] = {}
    for p in model.parameters():
        layer = p.name.rsplit(".", 1)[0]
        dst[layer] = dst.get(layer, 0) + p.size
    return dst


def audit_params(model: Model) -> int:
    return sum(p.size for p in model.parameters())


##################################################################################
# comparison


@enum.unique
class ReductionBasis(enum.Enum):
    # 丸める前の合計値
    EXACT = "exact"
    # 0.01M / 0.01G に丸めた表の値から計算
    ROUNDED = "rounded"


def reduction_pct(subject: float, baseline: float) -> float:
    """
    (1 - subject / baseline) * 100; negative when the subject is larger
    """
    assert baseline > 0, f"{baseline=}"
    return (1.0 - subject / baseline) * 100.0


@dataclass
class Comparison:
    subject: CostReport
    baseline: CostReport
    basis: ReductionBasis = ReductionBasis.EXACT

    @property
    def flops_reduction_pct(self) -> float:
        if self.basis == ReductionBasis.ROUNDED:
            return reduction_pct(self.subject.flops_g, self.baseline.flops_g)
        return reduction_pct(self.subject.flops_total, self.baseline.flops_total)

    @property
    def params_reduction_pct(self) -> float:
        if self.basis == ReductionBasis.ROUNDED:
            return reduction_pct(self.subject.params_m, self.baseline.params_m)
        return reduction_pct(self.subject.params_total, self.baseline.params_total)

    def with_basis(self, basis: ReductionBasis) -> "Comparison":
        return Comparison(self.subject, self.baseline, basis)

    def to_dict(self) -> Dict[str, Any]:
        exact = self.with_basis(ReductionBasis.EXACT)
        rounded = self.with_basis(ReductionBasis.ROUNDED)
        return {
            "subject": self.subject.name,
            "baseline": self.baseline.name,
            "input_size": list(self.subject.input_size),
            "classes": self.subject.classes,
            "flop_convention": self.subject.convention.value,
            "subject_params": self.subject.params_total,
            "baseline_params": self.baseline.params_total,
            "subject_flops": self.subject.flops_total,
            "baseline_flops": self.baseline.flops_total,
            "exact": {
                "flops_reduction_pct": exact.flops_reduction_pct,
                "params_reduction_pct": exact.params_reduction_pct,
            },
            "rounded": {
                "flops_reduction_pct": rounded.flops_reduction_pct,
                "params_reduction_pct": rounded.params_reduction_pct,
            },
        }

    def describe(self) -> str:
        dst = f"# Comparison {self.subject.name} vs {self.baseline.name}\n"
        dst += f" - flops: {self.subject.flops_g:.2f}G vs {self.baseline.flops_g:.2f}G\n"
        dst += f" - params: {self.subject.params_m:.2f}M vs {self.baseline.params_m:.2f}M\n"
        for basis in ReductionBasis:
            c = self.with_basis(basis)
            dst += f" - reduction ({basis.value}): flops {c.flops_reduction_pct:.2f}%, params {c.params_reduction_pct:.2f}%\n"
        return dst


def compare(
    subject: ArchitectureSpec,
    baseline: ArchitectureSpec,
    input_size: Optional[Tuple[int, int]] = None,
    classes: Optional[int] = None,
    basis: ReductionBasis = ReductionBasis.EXACT,
    convention: FlopConvention = FlopConvention.MAC,
) -> Comparison:
    return Comparison(
        subject=analyze(subject, input_size, classes, convention),
        baseline=analyze(baseline, input_size, classes, convention),
        basis=basis,
    )


##################################################################################
# census


@dataclass
class CensusRow:
    name: str
    status: str
    conv_layers: int
    jumpers: int
    solid: int
    dashed: int
    params: int
    flops: int


def census(names: Sequence[str], input_size: Optional[Tuple[int, int]] = None, classes: Optional[int] = None) -> List[CensusRow]:
    """
    Layer/jumper census and costs for registry networks
    """
    dst = []
    for name in names:
        spec = registry_get(name)
        report = analyze(spec, input_size, classes)
        dst.append(
            CensusRow(
                name=name,
                status=spec.status.value,
                conv_layers=report.conv_layers,
                jumpers=report.jumpers.total,
                solid=report.jumpers.solid,
                dashed=report.jumpers.dashed,
                params=report.params_total,
                flops=report.flops_total,
            )
        )
    return dst
