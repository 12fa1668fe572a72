import enum
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from cresnet.errors import GraphError


@enum.unique
class Precision(enum.Enum):
    """
    演算精度。学習は32bit、勾配チェックは64bit
    """

    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)


@dataclass
class EngineConfig:
    """
    Engine-wide settings shared by every op
    """

    precision: Precision = Precision.FLOAT32
    # no_grad() の間は False
    grad_enabled: bool = True


_engine = EngineConfig()


def engine() -> EngineConfig:
    return _engine


def get_dtype() -> np.dtype:
    return _engine.precision.dtype


def set_precision(precision: Precision | str) -> None:
    _engine.precision = Precision(precision)
    logging.debug(f"engine precision set: {_engine.precision=}")


@contextmanager
def use_precision(precision: Precision | str) -> Iterator[None]:
    prev = _engine.precision
    set_precision(precision)
    try:
        yield
    finally:
        _engine.precision = prev


@contextmanager
def no_grad() -> Iterator[None]:
    prev = _engine.grad_enabled
    _engine.grad_enabled = False
    try:
        yield
    finally:
        _engine.grad_enabled = prev


class Function:
    """
    Base class of a recorded op.

    `forward` works on raw arrays, `backward` maps the upstream gradient to one
    gradient per input (None for inputs that need none).
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out_data = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = _engine.grad_enabled and any(t.requires_grad for t in inputs)
        return Tensor(
            out_data,
            requires_grad=requires_grad,
            creator=fn if requires_grad else None,
        )


class Tensor:
    """
    Dense N-dimensional array with a gradient slot.

    Activations are NCHW. Tensors produced by ops are never mutated afterwards;
    only the optimizer writes into parameter data.
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
        name: str = "",
        dtype: Optional[np.dtype] = None,
    ):
        self.data: np.ndarray = np.asarray(
            data, dtype=dtype if dtype is not None else get_dtype()
        )
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.creator = creator
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)

    def __repr__(self) -> str:
        name = f" '{self.name}'" if self.name else ""
        return f"Tensor{name}(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@enum.unique
class ParamRole(enum.Enum):
    CONV_WEIGHT = "conv_weight"
    BN_GAMMA = "bn_gamma"
    BN_BETA = "bn_beta"
    FC_WEIGHT = "fc_weight"
    FC_BIAS = "fc_bias"


class Parameter(Tensor):
    """
    Trainable leaf tensor with a role and a hierarchical name
    """

    def __init__(self, data: Any, role: ParamRole, name: str = ""):
        super().__init__(data, requires_grad=True, name=name)
        self.role = role
        expected_ndim = {
            ParamRole.CONV_WEIGHT: 4,
            ParamRole.BN_GAMMA: 1,
            ParamRole.BN_BETA: 1,
            ParamRole.FC_WEIGHT: 2,
            ParamRole.FC_BIAS: 1,
        }[role]
        assert self.data.ndim == expected_ndim, (
            f"{role.value} must be {expected_ndim}-D, got shape {self.data.shape}"
        )

    def __repr__(self) -> str:
        return f"Parameter('{self.name}', role={self.role.value}, shape={self.shape})"


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    # 深いグラフで再帰上限に当たらないよう明示スタックで辿る
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """
    Reverse-mode sweep from `loss`.

    Leaf tensors with requires_grad accumulate into `.grad`; calling backward
    twice without zeroing therefore sums both passes.
    """
    if not loss.requires_grad:
        raise GraphError(
            f"backward() on a tensor that is not part of a recorded graph: {loss!r}"
        )
    if grad is None:
        if loss.data.size != 1:
            raise GraphError(
                f"backward() without an explicit gradient needs a scalar, got shape {loss.shape}"
            )
        grad = np.ones_like(loss.data)
    grads: Dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.data.dtype)}

    for node in reversed(_topological_order(loss)):
        node_grad = grads.pop(id(node), None)
        if node_grad is None:
            continue
        if node.creator is None:
            node.grad = node_grad.copy() if node.grad is None else node.grad + node_grad
            continue
        input_grads = node.creator.backward(node_grad)
        for parent, parent_grad in zip(node.creator.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            assert parent_grad.shape == parent.shape, (
                f"{type(node.creator).__name__} produced grad {parent_grad.shape} for input {parent.shape}"
            )
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
