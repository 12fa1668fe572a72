import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Sequence, Tuple

from cresnet.errors import SummaryError

CSV_HEADER = "epoch,lr,train_loss,test_error,seconds"


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    test_error: float
    seconds: float


@dataclass
class EvalResult:
    errors: int
    total: int

    @property
    def error_rate(self) -> float:
        return self.errors / self.total if self.total else 0.0

    @property
    def accuracy(self) -> float:
        return (self.total - self.errors) / self.total if self.total else 1.0


@dataclass
class TrainLog:
    """
    Per-epoch series of one run. `seconds` is wall time and is excluded from `series()`.
    """

    arch: str
    run_id: int
    config: Dict[str, Any]
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def epochs_completed(self) -> int:
        return len(self.records)

    @property
    def train_losses(self) -> List[float]:
        return [r.train_loss for r in self.records]

    @property
    def test_errors(self) -> List[float]:
        return [r.test_error for r in self.records]

    @property
    def wall_time(self) -> float:
        return sum(r.seconds for r in self.records)

    def series(self) -> List[Tuple[int, float, float, float]]:
        return [(r.epoch, r.lr, r.train_loss, r.test_error) for r in self.records]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "arch": self.arch,
            "run_id": self.run_id,
            "config": self.config,
            "records": [r.__dict__.copy() for r in self.records],
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "TrainLog":
        return cls(
            arch=doc["arch"],
            run_id=doc["run_id"],
            config=doc["config"],
            records=[EpochRecord(**r) for r in doc["records"]],
        )

    def to_csv(self) -> str:
        # floatはreprで書き、読み戻しで同じ値になるようにする
        rows = [CSV_HEADER] + [
            f"{r.epoch},{r.lr!r},{r.train_loss!r},{r.test_error!r},{r.seconds:.3f}" for r in self.records
        ]
        return "\n".join(rows) + "\n"

    def dump(self, dump_file_path: str, format: Literal["csv", "json"] | None = None) -> None:
        if format is None:
            if dump_file_path.endswith(".csv"):
                format = "csv"
            elif dump_file_path.endswith(".json"):
                format = "json"
            else:
                raise ValueError(f"Unsupported file extension: {dump_file_path}")
        if format == "csv":
            text = self.to_csv()
        elif format == "json":
            text = json.dumps(self.to_dict(), indent=2) + "\n"
        else:
            raise ValueError(f"Unsupported format: {format}")
        Path(dump_file_path).parent.mkdir(parents=True, exist_ok=True)
        with open(dump_file_path, "w", encoding="utf-8") as f:
            f.write(text)

    def describe(self) -> str:
        dst = f"# TrainLog {self.arch} run {self.run_id}\n"
        dst += f" - epochs: {self.epochs_completed}\n"
        if self.records:
            last = self.records[-1]
            dst += f" - last: loss {last.train_loss:.4f}, test error {last.test_error:.4f}\n"
        dst += f" - wall time: {self.wall_time:.1f}s\n"
        return dst


@dataclass
class RunSummary:
    mean: float
    std: float
    n: int
    runs: int
    last_k: int

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean, "std": self.std, "n": self.n, "runs": self.runs, "last_k": self.last_k}

    def __str__(self) -> str:
        return f"{self.mean * 100:.2f} ± {self.std * 100:.2f} % (n={self.n})"


def summarize_runs(logs: Sequence[TrainLog], last_k: int = 20) -> RunSummary:
    """
    Pool the last `last_k` test errors of every run; sample std (n-1)
    """
    assert last_k >= 1, f"{last_k=}"
    pooled: List[float] = []
    for i, log in enumerate(logs):
        if log.epochs_completed < last_k:
            raise SummaryError(i, last_k, log.epochs_completed)
        pooled += log.test_errors[-last_k:]
    if not pooled:
        raise SummaryError(0, last_k, 0)
    std = statistics.stdev(pooled) if len(pooled) > 1 else 0.0
    return RunSummary(mean=statistics.fmean(pooled), std=std, n=len(pooled), runs=len(logs), last_k=last_k)
