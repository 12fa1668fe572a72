"""
Checkpoint container: one NumPy .npz archive holding little-endian arrays

    param/<name>      parameters
    bn/<name>.running_mean, bn/<name>.running_var
    velocity/<name>   SGD velocity buffers
    __manifest__      UTF-8 JSON (format_version, spec, classes, epoch, seed, dtype, entries, config, log)
"""

import json
import logging
import os
import tempfile
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from cresnet.arch.model import Model, build
from cresnet.arch.specfile import spec_from_dict, spec_to_dict
from cresnet.errors import CheckpointError, CheckpointVersionError, CresnetError
from cresnet.nn.optim import Sgd, SgdConfig
from cresnet.nn.tensor import Precision, use_precision
from cresnet.train.config import TrainConfig
from cresnet.train.log import TrainLog

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_KEY = "__manifest__"


@dataclass
class Checkpoint:
    model: Model
    optimizer: Sgd
    epoch: int
    seed: int
    config: Optional[TrainConfig] = None
    log: Optional[TrainLog] = None

    def describe(self) -> str:
        dst = f"# Checkpoint {self.model.name}\n"
        dst += f" - epochs completed: {self.epoch}\n"
        dst += f" - seed: {self.seed}\n"
        dst += f" - classes: {self.model.classes}\n"
        return dst


def _le(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))


def checkpoint_save(
    model: Model,
    optimizer: Sgd,
    path: str | Path,
    epoch: int,
    seed: int = 0,
    config: Optional[TrainConfig] = None,
    log: Optional[TrainLog] = None,
) -> Path:
    """
    Write atomically: a temporary file in the same directory is renamed over `path`
    """
    dst = Path(path)
    dst.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {k: _le(v) for k, v in model.state_arrays().items()}
    for name, v in optimizer.state_dict().items():
        arrays[f"velocity/{name}"] = _le(v)
    dtype = model.fc_weight.data.dtype
    manifest: Dict[str, Any] = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "spec": spec_to_dict(model.spec),
        "classes": model.classes,
        "epoch": epoch,
        "seed": seed,
        "dtype": str(dtype),
        "mode": model.mode.value,
        "optimizer": {
            "lr": optimizer.config.lr,
            "momentum": optimizer.config.momentum,
            "weight_decay": optimizer.config.weight_decay,
        },
        "entries": [{"name": k, "dtype": v.dtype.str, "shape": list(v.shape)} for k, v in arrays.items()],
        "config": config.to_dict() if config is not None else None,
        "log": log.to_dict() if log is not None else None,
    }
    arrays[MANIFEST_KEY] = np.frombuffer(json.dumps(manifest).encode("utf-8"), dtype=np.uint8)

    fd, tmp = tempfile.mkstemp(dir=dst.parent, prefix=f".{dst.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, **arrays)  # type: ignore[arg-type]
        os.replace(tmp, dst)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logging.info(f"checkpoint saved: {dst} (epoch {epoch})")
    return dst


def checkpoint_load(path: str | Path) -> Checkpoint:
    """
    Rebuild the model and optimizer; nothing is returned unless every entry loads
    """
    src = Path(path)
    try:
        with np.load(src, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as e:
        raise CheckpointError(f"{src}: cannot read checkpoint: {e}") from e

    if MANIFEST_KEY not in arrays:
        raise CheckpointError(f"{src}: manifest missing")
    try:
        manifest = json.loads(arrays.pop(MANIFEST_KEY).tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{src}: manifest is not valid JSON: {e}") from e
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(version, CHECKPOINT_FORMAT_VERSION)

    declared = {e["name"]: (e["dtype"], tuple(e["shape"])) for e in manifest["entries"]}
    actual = {k: (v.dtype.str, v.shape) for k, v in arrays.items()}
    if declared != actual:
        raise CheckpointError(f"{src}: entry table does not match the stored arrays")

    try:
        spec = spec_from_dict(manifest["spec"])
        with use_precision(Precision(manifest["dtype"])):
            model = build(spec, classes=manifest["classes"], seed=manifest["seed"])
        model.load_state_arrays({k: v for k, v in arrays.items() if not k.startswith("velocity/")})
        opt_cfg = manifest["optimizer"]
        optimizer = Sgd(
            model.parameters(),
            SgdConfig(lr=opt_cfg["lr"], momentum=opt_cfg["momentum"], weight_decay=opt_cfg["weight_decay"]),
        )
        optimizer.load_state_dict(
            {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("velocity/")}
        )
        config = TrainConfig.from_dict(manifest["config"]) if manifest.get("config") else None
        log = TrainLog.from_dict(manifest["log"]) if manifest.get("log") else None
    except CheckpointError:
        raise
    except (CresnetError, KeyError, ValueError, AssertionError) as e:
        raise CheckpointError(f"{src}: inconsistent checkpoint: {e}") from e

    if manifest.get("mode") == "eval":
        model.eval()
    logging.info(f"checkpoint loaded: {src} (epoch {manifest['epoch']})")
    return Checkpoint(
        model=model,
        optimizer=optimizer,
        epoch=manifest["epoch"],
        seed=manifest["seed"],
        config=config,
        log=log,
    )
