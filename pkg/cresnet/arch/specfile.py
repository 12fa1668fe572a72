"""
Architecture spec documents (YAML, one spec per file, UTF-8).

    format_version: 1
    name: cresnet18_a
    status: verified            # verified | reconstructed
    description: ...
    input_size: [32, 32]
    in_channels: 3
    classes: 100
    jumper_bn: true
    stem:
      - {op: conv, k: 3, stride: 1, out_ch: 64}
    stages:
      - {block_kind: cross_block_a, repeats: 1, channel_plan: [64, 64, 64], stride: 1}
    jumper_mask:
      - {stage: 0, block: 0, jumper: 0, kind: solid, in_ch: 64, out_ch: 64, stride: 1, bn: true}
    head: {pool: global_avg, fc: true}
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from cresnet.arch.spec import (
    ArchitectureSpec,
    BlockKind,
    JumperEntry,
    JumperKind,
    SpecStatus,
    StageSpec,
    StemLayerSpec,
    StemOp,
)
from cresnet.errors import SpecParseError

SPEC_FORMAT_VERSION = 1
HEAD = {"pool": "global_avg", "fc": True}


def spec_to_dict(spec: ArchitectureSpec) -> Dict[str, Any]:
    return {
        "format_version": SPEC_FORMAT_VERSION,
        "name": spec.name,
        "status": spec.status.value,
        "description": spec.description,
        "input_size": list(spec.input_size),
        "in_channels": spec.in_channels,
        "classes": spec.classes,
        "jumper_bn": spec.jumper_bn,
        "stem": [
            {"op": s.op.value, "k": s.k, "stride": s.stride, "out_ch": s.out_ch} for s in spec.stem
        ],
        "stages": [
            {
                "block_kind": s.block_kind.value,
                "repeats": s.repeats,
                "channel_plan": list(s.channel_plan),
                "stride": s.stride,
            }
            for s in spec.stages
        ],
        "jumper_mask": [
            {
                "stage": j.stage,
                "block": j.block,
                "jumper": j.jumper,
                "kind": j.kind.value,
                "in_ch": j.in_ch,
                "out_ch": j.out_ch,
                "stride": j.stride,
                "bn": j.bn,
            }
            for j in spec.jumper_mask
        ],
        "head": dict(HEAD),
    }


class _Reader:
    """
    Typed field access over the parsed document, with line numbers from the node tree
    """

    def __init__(self, root: Optional[yaml.Node], path: Optional[str]):
        self.root = root
        self.path = path

    def line_of(self, keys: Sequence[Any]) -> Optional[int]:
        node = self.root
        line = node.start_mark.line + 1 if node is not None else None
        for key in keys:
            if isinstance(node, yaml.MappingNode):
                found = [v for k, v in node.value if k.value == key]
                if not found:
                    break
                node = found[0]
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                node = node.value[key]
            else:
                break
            line = node.start_mark.line + 1
        return line

    def error(self, keys: Sequence[Any], message: str) -> SpecParseError:
        field = ".".join(str(k) for k in keys) if keys else None
        return SpecParseError(message, field=field, line=self.line_of(keys), path=self.path)

    def get(self, doc: Dict[str, Any], keys: List[Any], name: str, typ: type, default: Any = ...) -> Any:
        if not isinstance(doc, dict):
            raise self.error(keys, "expected a mapping")
        if name not in doc:
            if default is not ...:
                return default
            raise self.error(keys + [name], f"missing required field '{name}'")
        value = doc[name]
        # bool は int のサブクラスなので別扱い
        if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise self.error(keys + [name], f"'{name}' must be an integer, got {value!r}")
        if typ is not int and not isinstance(value, typ):
            raise self.error(keys + [name], f"'{name}' must be {typ.__name__}, got {value!r}")
        return value

    def enum(self, doc: Dict[str, Any], keys: List[Any], name: str, cls: Any, default: Any = ...) -> Any:
        raw = self.get(doc, keys, name, str, default)
        if isinstance(raw, cls):
            return raw
        try:
            return cls(raw)
        except ValueError:
            allowed = ", ".join(e.value for e in cls)
            raise self.error(keys + [name], f"'{raw}' is not one of: {allowed}") from None

    def int_list(self, doc: Dict[str, Any], keys: List[Any], name: str) -> List[int]:
        values = self.get(doc, keys, name, list)
        for i, v in enumerate(values):
            if isinstance(v, bool) or not isinstance(v, int):
                raise self.error(keys + [name, i], f"'{name}' entries must be integers, got {v!r}")
        return values


def spec_from_dict(doc: Any, root: Optional[yaml.Node] = None, path: Optional[str] = None) -> ArchitectureSpec:
    r = _Reader(root, path)
    if not isinstance(doc, dict):
        raise r.error([], "spec document must be a mapping")
    version = r.get(doc, [], "format_version", int)
    if version != SPEC_FORMAT_VERSION:
        raise r.error(["format_version"], f"unsupported format_version {version} (expected {SPEC_FORMAT_VERSION})")

    stem = []
    for i, s in enumerate(r.get(doc, [], "stem", list)):
        keys: List[Any] = ["stem", i]
        stem.append(
            StemLayerSpec(
                op=r.enum(s, keys, "op", StemOp),
                k=r.get(s, keys, "k", int),
                stride=r.get(s, keys, "stride", int),
                out_ch=r.get(s, keys, "out_ch", int, 0),
            )
        )
    stages = []
    for i, s in enumerate(r.get(doc, [], "stages", list)):
        keys = ["stages", i]
        stages.append(
            StageSpec(
                block_kind=r.enum(s, keys, "block_kind", BlockKind),
                repeats=r.get(s, keys, "repeats", int),
                channel_plan=tuple(r.int_list(s, keys, "channel_plan")),
                stride=r.get(s, keys, "stride", int),
            )
        )
    jumper_bn = r.get(doc, [], "jumper_bn", bool, True)
    mask = []
    for i, j in enumerate(r.get(doc, [], "jumper_mask", list)):
        keys = ["jumper_mask", i]
        mask.append(
            JumperEntry(
                stage=r.get(j, keys, "stage", int),
                block=r.get(j, keys, "block", int),
                jumper=r.get(j, keys, "jumper", int),
                kind=r.enum(j, keys, "kind", JumperKind),
                in_ch=r.get(j, keys, "in_ch", int),
                out_ch=r.get(j, keys, "out_ch", int),
                stride=r.get(j, keys, "stride", int),
                bn=r.get(j, keys, "bn", bool, jumper_bn),
            )
        )
    input_size = r.int_list(doc, [], "input_size") if "input_size" in doc else [32, 32]
    if len(input_size) != 2:
        raise r.error(["input_size"], f"input_size must be [H, W], got {input_size}")
    head = r.get(doc, [], "head", dict, dict(HEAD))
    if head.get("pool", HEAD["pool"]) != HEAD["pool"] or head.get("fc", True) is not True:
        raise r.error(["head"], f"only a global average pool + fc head is supported, got {head}")

    return ArchitectureSpec(
        name=r.get(doc, [], "name", str),
        stem=tuple(stem),
        stages=tuple(stages),
        jumper_mask=tuple(mask),
        input_size=(input_size[0], input_size[1]),
        in_channels=r.get(doc, [], "in_channels", int, 3),
        classes=r.get(doc, [], "classes", int, 100),
        status=r.enum(doc, [], "status", SpecStatus, SpecStatus.VERIFIED.value),
        jumper_bn=jumper_bn,
        description=r.get(doc, [], "description", str, ""),
    )


def dumps_spec(spec: ArchitectureSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False, allow_unicode=True, default_flow_style=None)


def loads_spec(text: str, path: Optional[str] = None) -> ArchitectureSpec:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise SpecParseError(f"invalid YAML: {getattr(e, 'problem', None) or e}", line=line, path=path) from e
    return spec_from_dict(doc, root=root, path=path)


def spec_to_file(spec: ArchitectureSpec, path: str | Path) -> Path:
    dst = Path(path)
    dst.parent.mkdir(parents=True, exist_ok=True)
    dst.write_text(dumps_spec(spec), encoding="utf-8")
    logging.info(f"spec written: {spec.name} -> {dst}")
    return dst


def spec_from_file(path: str | Path) -> ArchitectureSpec:
    src = Path(path)
    try:
        text = src.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise SpecParseError(f"cannot read spec file: {e}", path=str(src)) from e
    spec = loads_spec(text, path=str(src))
    logging.debug(f"spec loaded: {spec.name} <- {src}")
    return spec
