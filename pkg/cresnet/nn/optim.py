import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from cresnet.errors import CheckpointError
from cresnet.nn.tensor import Parameter


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[Optional[np.ndarray]],
    velocities: Sequence[np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """
    In-place SGD with momentum and L2 weight decay:

        v <- momentum * v + (grad + weight_decay * param)
        param <- param - lr * v

    A missing gradient is treated as zero, so weight decay still applies.
    """
    assert len(params) == len(grads) == len(velocities), (
        f"{len(params)=} {len(grads)=} {len(velocities)=}"
    )
    for p, g, v in zip(params, grads, velocities):
        d_p = weight_decay * p if g is None else g + weight_decay * p
        v *= momentum
        v += d_p
        p -= lr * v


@dataclass
class SgdConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def __post_init__(self) -> None:
        assert self.lr > 0, f"{self.lr=}"
        assert 0.0 <= self.momentum < 1.0, f"{self.momentum=}"
        assert self.weight_decay >= 0, f"{self.weight_decay=}"


class Sgd:
    """
    SGD optimizer owning one zero-initialized velocity buffer per parameter
    """

    def __init__(self, params: Sequence[Parameter], config: SgdConfig | None = None):
        self.params: List[Parameter] = list(params)
        names = [p.name for p in self.params]
        assert len(set(names)) == len(names), "parameter names must be unique"
        self.config = config if config is not None else SgdConfig()
        self.velocities: Dict[str, np.ndarray] = {
            p.name: np.zeros_like(p.data) for p in self.params
        }

    @property
    def lr(self) -> float:
        return self.config.lr

    @lr.setter
    def lr(self, value: float) -> None:
        assert value > 0, f"{value=}"
        self.config.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        sgd_step(
            params=[p.data for p in self.params],
            grads=[None if p.grad is None else p.grad.astype(p.data.dtype, copy=False) for p in self.params],
            velocities=[self.velocities[p.name] for p in self.params],
            lr=self.config.lr,
            momentum=self.config.momentum,
            weight_decay=self.config.weight_decay,
        )

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocities.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.velocities) - set(state)
        unexpected = set(state) - set(self.velocities)
        if missing or unexpected:
            raise CheckpointError(
                f"velocity names differ: missing={sorted(missing)} unexpected={sorted(unexpected)}"
            )
        for name, v in state.items():
            assert v.shape == self.velocities[name].shape, f"{name}: {v.shape=}"
            self.velocities[name][...] = v
        logging.debug(f"loaded {len(state)} velocity buffers")
