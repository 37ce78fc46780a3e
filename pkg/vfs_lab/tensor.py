"""
Dense tensors with reverse-mode differentiation.

A Tensor wraps a row-major numpy array. Operations in `vfs_lab.ops` record a
Node on their result whenever any input requires a gradient; `backward()`
walks those nodes in reverse topological order exactly once. A ComputeGraph
is a traced scalar function of declared inputs, used by
`evaluate_with_gradients` and the finite-difference checker `grad_check`.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, NumericError, ParameterError, ShapeError

DTYPES = {"float32": np.float32, "float64": np.float64}

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

_state = threading.local()


def grad_enabled() -> bool:
    """Whether operations currently record nodes for backward."""
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable node recording on the current thread."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Node:
    """Record of one primitive application: inputs plus the backward rule."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...],
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """Dense N-dimensional float array with optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 dtype: Optional[Union[str, type]] = None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float64)
        else:
            arr = np.asarray(data, dtype=DTYPES.get(dtype, dtype))
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
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
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # Operator sugar; the primitives live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a python scalar")
        from . import ops
        return ops.scale(self, 1.0 / float(other))

    def backward(self) -> None:
        """Populate `.grad` on every reachable tensor that requires a gradient.

        Only defined for scalar (single element) tensors and meant to be called
        once per loss; gradients are assigned, not accumulated.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = topological_order(self)
        pending: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for tensor in reversed(order):
            grad = pending.pop(id(tensor), None)
            if grad is None:
                grad = np.zeros_like(tensor.data)
            tensor.grad = grad
            node = tensor._node
            if node is None:
                continue
            for inp, g in zip(node.inputs, node.backward(grad)):
                if g is None or not inp.requires_grad:
                    continue
                if g.shape != inp.shape:
                    raise ShapeError(f"backward of {node.op} produced {g.shape} for input {inp.shape}")
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + g
                else:
                    pending[key] = g


def topological_order(root: Tensor) -> List[Tensor]:
    """Tensors reachable from `root` through gradient-carrying nodes, inputs first."""
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
        if tensor._node is not None:
            for inp in tensor._node.inputs:
                if inp.requires_grad and id(inp) not in visited:
                    stack.append((inp, False))
    return order


def make_result(data: np.ndarray, inputs: Sequence[Tensor], op: str,
                backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap a primitive's forward value, recording a Node when needed."""
    needs_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        out._node = Node(op, tuple(inputs), backward)
    return out


def as_tensor(value: ArrayLike, dtype: Optional[np.dtype] = None) -> Tensor:
    """Return `value` as a Tensor, leaving existing tensors untouched."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float64))


class ComputeGraph:
    """A scalar-valued function of declared inputs, traced on demand.

    Args:
        fn: Callable taking one Tensor per declared input and returning a Tensor
        input_shapes: Optional declared shapes; checked on every evaluation
        name: Label used in error messages
    """

    def __init__(self, fn: Callable[..., Tensor], input_shapes: Optional[Sequence[Tuple[int, ...]]] = None,
                 name: str = "graph"):
        self.fn = fn
        self.input_shapes = [tuple(s) for s in input_shapes] if input_shapes is not None else None
        self.name = name
        self.nodes: List[Tuple[str, Tuple[Tuple[int, ...], ...], Tuple[int, ...]]] = []

    def _check_inputs(self, inputs: Sequence[Tensor]) -> None:
        if self.input_shapes is None:
            return
        if len(inputs) != len(self.input_shapes):
            raise ShapeError(f"{self.name}: expected {len(self.input_shapes)} inputs, got {len(inputs)}")
        for i, (tensor, declared) in enumerate(zip(inputs, self.input_shapes)):
            if tuple(tensor.shape) != declared:
                raise ShapeError(f"{self.name}: input {i} has shape {tensor.shape}, declared {declared}")

    def trace(self, inputs: Sequence[Tensor]) -> Tensor:
        """Run the function and record the node list of the resulting graph."""
        self._check_inputs(inputs)
        out = self.fn(*inputs)
        if not isinstance(out, Tensor):
            out = as_tensor(out)
        if out.data.size != 1:
            raise ContractError(f"{self.name}: output must be scalar, got shape {out.shape}")
        self.nodes = [
            (t._node.op, tuple(i.shape for i in t._node.inputs), t.shape)
            for t in topological_order(out) if t._node is not None
        ]
        return out

    def value(self, inputs: Sequence[Tensor]) -> float:
        """Forward value only, without recording nodes."""
        self._check_inputs(inputs)
        with no_grad():
            out = self.fn(*inputs)
        out = as_tensor(out)
        if out.data.size != 1:
            raise ContractError(f"{self.name}: output must be scalar, got shape {out.shape}")
        return float(out.data.reshape(-1)[0])


def evaluate_with_gradients(graph: ComputeGraph, inputs: Sequence[ArrayLike]) -> Tuple[Tensor, List[Optional[Tensor]]]:
    """Evaluate a scalar graph and differentiate it.

    Args:
        graph: The traced function
        inputs: Tensors (those with requires_grad receive gradients) or raw arrays (constants)

    Returns:
        Tuple of (scalar value, per-input gradient); constants map to None
    """
    tensors = [x if isinstance(x, Tensor) else as_tensor(x) for x in inputs]
    for tensor in tensors:
        tensor.grad = None
    out = graph.trace(tensors)
    out.backward()
    grads: List[Optional[Tensor]] = []
    for tensor in tensors:
        if not tensor.requires_grad:
            grads.append(None)
        elif tensor.grad is None:
            grads.append(Tensor(np.zeros_like(tensor.data)))
        else:
            grads.append(Tensor(tensor.grad))
    return Tensor(out.data.reshape(())), grads


def grad_check(graph: ComputeGraph, inputs: Sequence[Tensor], eps: float = 1e-6,
               rel_floor: float = 1e-3) -> float:
    """Compare analytic gradients with central finite differences.

    Args:
        graph: Scalar graph under test
        inputs: 64-bit tensors; those with requires_grad are perturbed elementwise
        eps: Finite-difference step, within [1e-7, 1e-3]
        rel_floor: Lower bound of the relative-error denominator, so vanishing
            gradients are compared in absolute terms

    Returns:
        Worst relative error over all checked elements
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ParameterError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    tensors = [x if isinstance(x, Tensor) else as_tensor(x) for x in inputs]
    for tensor in tensors:
        if tensor.dtype != np.float64:
            raise ContractError("grad_check requires float64 inputs")
        if not np.all(np.isfinite(tensor.data)):
            raise NumericError("grad_check received non-finite inputs")

    value, analytic = evaluate_with_gradients(graph, tensors)
    if not np.isfinite(value.item()):
        raise NumericError(f"{graph.name}: non-finite value {value.item()}")

    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        if grad is None:
            continue
        if not np.all(np.isfinite(grad.data)):
            raise NumericError(f"{graph.name}: non-finite analytic gradient")
        flat = tensor.data.reshape(-1)
        agrad = grad.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = graph.value(tensors)
            flat[i] = original - eps
            minus = graph.value(tensors)
            flat[i] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError(f"{graph.name}: non-finite value under perturbation")
            numeric = (plus - minus) / (2.0 * eps)
            denom = max(abs(numeric), abs(agrad[i]), rel_floor)
            worst = max(worst, abs(numeric - agrad[i]) / denom)
    return worst
