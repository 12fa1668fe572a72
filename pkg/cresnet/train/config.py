import enum
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Optional

from cresnet.errors import ConfigError
from cresnet.nn.tensor import Precision


@enum.unique
class TrainPreset(enum.Enum):
    PAPER = "paper"
    DESK = "desk"


@dataclass
class TrainConfig:
    """
    SGD protocol: lr 0.01 divided by 10 every 150 epochs, momentum 0.9, weight decay 0.0005, batch 32
    """

    lr0: float = 0.01
    lr_decay_every: int = 150
    lr_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32
    epochs: int = 5
    runs: int = 1
    seed: int = 0
    precision: Precision = Precision.FLOAT32
    # None なら全件
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None
    # 0 なら学習終了時のみ保存
    checkpoint_every: int = 0
    last_k: int = 20
    preset: str = "custom"

    def validate(self) -> "TrainConfig":
        problems = []
        for name in ("lr0", "lr_factor"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.weight_decay < 0:
            problems.append("weight_decay must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            problems.append("momentum must be in [0, 1)")
        for name in ("lr_decay_every", "batch_size", "epochs", "runs", "last_k"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("train_subset", "test_subset"):
            value = getattr(self, name)
            if value is not None and value < 1:
                problems.append(f"{name} must be >= 1 when set")
        if self.checkpoint_every < 0:
            problems.append("checkpoint_every must be >= 0")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @classmethod
    def preset_paper(cls, **kwargs: Any) -> "TrainConfig":
        """
        500 epochs, batch 32, 3 runs, last 20 epochs pooled
        """
        defaults: Dict[str, Any] = dict(epochs=500, batch_size=32, runs=3, last_k=20, preset=TrainPreset.PAPER.value)
        defaults.update(kwargs)
        return cls(**defaults).validate()

    @classmethod
    def preset_desk(cls, **kwargs: Any) -> "TrainConfig":
        """
        Laptop-scale run on a 5,000 / 1,000 subset
        """
        defaults: Dict[str, Any] = dict(
            epochs=5, batch_size=32, runs=1, last_k=1, train_subset=5000, test_subset=1000, preset=TrainPreset.DESK.value
        )
        defaults.update(kwargs)
        return cls(**defaults).validate()

    @classmethod
    def from_preset(cls, preset: TrainPreset | str, **kwargs: Any) -> "TrainConfig":
        preset = TrainPreset(preset)
        if preset == TrainPreset.PAPER:
            return cls.preset_paper(**kwargs)
        return cls.preset_desk(**kwargs)

    def with_overrides(self, **kwargs: Any) -> "TrainConfig":
        # Noneは「指定なし」
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None}).validate()

    def to_dict(self) -> Dict[str, Any]:
        dst = asdict(self)
        dst["precision"] = self.precision.value
        return dst

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "TrainConfig":
        doc = dict(doc)
        doc["precision"] = Precision(doc.get("precision", Precision.FLOAT32.value))
        try:
            return cls(**doc).validate()
        except TypeError as e:
            raise ConfigError(f"invalid train config: {e}") from e

    def describe(self) -> str:
        dst = f"# TrainConfig ({self.preset})\n"
        dst += f" - lr: {self.lr0} x{self.lr_factor} every {self.lr_decay_every} epochs\n"
        dst += f" - momentum: {self.momentum}, weight_decay: {self.weight_decay}\n"
        dst += f" - batch_size: {self.batch_size}, epochs: {self.epochs}, runs: {self.runs}\n"
        dst += f" - subsets: train={self.train_subset}, test={self.test_subset}\n"
        dst += f" - seed: {self.seed}, precision: {self.precision.value}\n"
        return dst
