import logging
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from cresnet.nn.calc import Calc
from cresnet.nn.tensor import Precision, Tensor, engine, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_tensor: str
    worst_index: int
    checked: int

    def describe(self) -> str:
        dst = "# GradCheckResult\n"
        dst += f" - max_rel_error: {self.max_rel_error:.3e}\n"
        dst += f" - worst: {self.worst_tensor}[{self.worst_index}]\n"
        dst += f" - checked elements: {self.checked}\n"
        return dst


def grad_check(
    forward: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    eps: float = 1e-6,
    max_checks: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckResult:
    """
    Compare backward() against central differences of `forward`.

    `forward` must rebuild the graph from the current tensor data and return a
    scalar. `max_checks` samples that many elements per tensor instead of
    sweeping all of them. Gradients smaller than `floor` are compared absolutely.
    """
    if engine().precision != Precision.FLOAT64:
        logging.warning(
            f"grad_check at {engine().precision.value}; finite differences need float64"
        )
    for t in tensors.values():
        t.zero_grad()
    loss = forward()
    loss.backward()
    analytic: Dict[str, np.ndarray] = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
    }

    rng = np.random.default_rng(seed)
    result = GradCheckResult(max_rel_error=0.0, worst_tensor="", worst_index=-1, checked=0)
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        assert np.shares_memory(flat, t.data), f"{name} must be contiguous to perturb in place"
        indices = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            indices = rng.choice(flat.size, size=max_checks, replace=False)
        for i in indices:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                f_plus = forward().item()
                flat[i] = orig - eps
                f_minus = forward().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            err = float(Calc.relative_error(analytic[name].reshape(-1)[i], np.float64(numeric), floor))
            result.checked += 1
            if err > result.max_rel_error or result.worst_index < 0:
                result.max_rel_error = err
                result.worst_tensor = name
                result.worst_index = int(i)
    logging.debug(result.describe())
    return result
