from typing import Iterable, List, Optional, Sequence


class CresnetError(Exception):
    """
    cresnet全体の例外の基底クラス

    exit_code は CLI が終了コードとして使う
    """

    exit_code: int = 1


class DimensionError(CresnetError, ValueError):
    """
    Shape mismatch inside an op
    """

    def __init__(self, op: str, message: str, axes: Sequence[str] = ()):
        self.op = op
        self.axes = tuple(axes)
        axes_str = f" (axes: {', '.join(self.axes)})" if self.axes else ""
        super().__init__(f"{op}: {message}{axes_str}")


class JumperError(DimensionError):
    def __init__(self, jumper_index: int, message: str):
        self.jumper_index = jumper_index
        super().__init__(op=f"jumper[{jumper_index}]", message=message)


class GraphError(CresnetError, RuntimeError):
    pass


class BnStatsError(CresnetError, RuntimeError):
    pass


class LabelError(CresnetError, IndexError):
    pass


class NonFiniteLossError(CresnetError, FloatingPointError):
    def __init__(self, epoch: int, batch: int, layer: Optional[str]):
        self.epoch = epoch
        self.batch = batch
        self.layer = layer
        where = layer if layer is not None else "loss (all layer outputs finite)"
        super().__init__(
            f"non-finite loss at epoch {epoch} batch {batch}; first non-finite output: {where}"
        )


class SpecValidationError(CresnetError, ValueError):
    exit_code = 2

    def __init__(self, name: str, violations: Iterable[object]):
        self.name = name
        self.violations: List[object] = list(violations)
        first = self.violations[0] if self.violations else "unknown violation"
        super().__init__(
            f"spec '{name}' is invalid ({len(self.violations)} violations): {first}"
        )


class SpecParseError(CresnetError, ValueError):
    exit_code = 2

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        line: Optional[int] = None,
        path: Optional[str] = None,
    ):
        self.field = field
        self.line = line
        self.path = path
        context = []
        if path is not None:
            context.append(str(path))
        if line is not None:
            context.append(f"line {line}")
        if field is not None:
            context.append(f"field '{field}'")
        prefix = f"[{', '.join(context)}] " if context else ""
        super().__init__(f"{prefix}{message}")


class UnknownArchError(CresnetError, KeyError):
    exit_code = 2

    def __init__(self, name: str, available: Sequence[str]):
        self.name = name
        self.available = list(available)
        super().__init__(name)

    def __str__(self) -> str:
        return f"unknown architecture '{self.name}'. available: {', '.join(self.available)}"


class DataFormatError(CresnetError, ValueError):
    exit_code = 3

    def __init__(self, path: str, message: str, offset: Optional[int] = None):
        self.path = path
        self.offset = offset
        at = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{path}: {message}{at}")


class DataMissingError(CresnetError, FileNotFoundError):
    exit_code = 3

    def __init__(self, dataset: str, data_dir: str, expected: Sequence[str]):
        self.dataset = dataset
        self.data_dir = data_dir
        self.expected = list(expected)
        super().__init__(
            f"dataset '{dataset}' not found under {data_dir}; expected files: {', '.join(self.expected)}"
        )

    def __str__(self) -> str:
        return self.args[0]


class CheckpointError(CresnetError, ValueError):
    exit_code = 3


class CheckpointVersionError(CheckpointError):
    def __init__(self, found: object, expected: object):
        self.found = found
        self.expected = expected
        super().__init__(
            f"checkpoint format version {found} is not supported (expected {expected})"
        )


class SummaryError(CresnetError, ValueError):
    exit_code = 2

    def __init__(self, run_index: int, required: int, available: int):
        self.run_index = run_index
        self.required = required
        self.available = available
        super().__init__(
            f"run {run_index} has {available} epochs, {required} required for the summary"
        )


class ConfigError(CresnetError, ValueError):
    exit_code = 2
