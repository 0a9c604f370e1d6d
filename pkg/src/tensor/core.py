import logging
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import GradientLookupError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32
FLOAT_DTYPES = (np.float32, np.float64)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Skip tape recording inside the block (inference, finite differences)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Node:
    """
    Tape entry for one operator application.

    `vjp` closes over whatever the operator saved during forward and maps the
    gradient of the output to one gradient per input (None where the input
    needs none).
    """

    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], vjp: VJP):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, inputs={len(self.inputs)})"


class Tensor:
    """Dense real array plus the autodiff bookkeeping of the tape."""

    __slots__ = ("data", "requires_grad", "node", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
    ):
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        if self.data.ndim != 4:
            raise ShapeError(f"expected an N×C×H×W tensor, got shape {self.shape}")
        n, c, h, w = self.data.shape
        return n, c, h, w

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        op = f" op={self.node.op!r}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}{op})"


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), vjp)
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Gradients:
    """Result of `backward`: gradient arrays keyed by the tensors on the tape."""

    def __init__(self, entries: Dict[int, Tuple[Tensor, np.ndarray]]):
        self._entries = entries

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        entry = self._entries.get(id(tensor))
        if entry is None or entry[0] is not tensor:
            label = tensor.name or repr(tensor)
            raise GradientLookupError(f"{label} is not on the tape")
        return entry[1]

    def __contains__(self, tensor: Tensor) -> bool:
        entry = self._entries.get(id(tensor))
        return entry is not None and entry[0] is tensor

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, tensor: Tensor, default: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        return self[tensor] if tensor in self else default


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(output: Tensor, seed: Optional[Union[Tensor, ArrayLike]] = None) -> Gradients:
    """
    Reverse-mode sweep from `output`.

    Every node reachable through tensors that require gradients is visited
    exactly once, in reverse topological order. The returned mapping holds
    an entry for each of those tensors (parameters, inputs and intermediates).
    """
    if seed is None:
        seed_arr = np.ones_like(output.data)
    else:
        raw = seed.data if isinstance(seed, Tensor) else seed
        seed_arr = np.asarray(raw, dtype=output.dtype)
    if seed_arr.shape != output.shape:
        raise ShapeError(f"seed shape {seed_arr.shape} does not match output shape {output.shape}")

    order = _topological_order(output)
    grads: Dict[int, np.ndarray] = {id(output): seed_arr}
    for tensor in reversed(order):
        node = tensor.node
        grad = grads.get(id(tensor))
        if node is None or grad is None:
            continue
        for parent, parent_grad in zip(node.inputs, node.vjp(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = unbroadcast(parent_grad, parent.shape)
            previous = grads.get(id(parent))
            grads[id(parent)] = parent_grad if previous is None else previous + parent_grad

    entries: Dict[int, Tuple[Tensor, np.ndarray]] = {}
    for tensor in order:
        grad = grads.get(id(tensor))
        if grad is None:
            grad = np.zeros_like(tensor.data)
        entries[id(tensor)] = (tensor, grad)
    return Gradients(entries)
