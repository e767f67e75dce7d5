"""Reverse-mode automatic differentiation on an explicit tape.

Tensors are plain numpy arrays (row-major, float32 by default). A ``Value``
is a tensor recorded on a ``Tape``; operations in :mod:`wavefuse.ops` append
one node per call, so the node list is topologically ordered by construction.
``Tape.backward`` sweeps the list once in reverse, accumulating
vector-Jacobian products.

Gradients are retained for leaves (parameters and inputs) and for values
marked with :meth:`Tape.watch`; everything else is freed as soon as it has
been consumed.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .config import active_dtype, checked_enabled
from .errors import NumericError, ShapeError
from .params import Parameter

VjpFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Value:
    """A tensor recorded on a tape."""

    __slots__ = ("tape", "vid", "data")

    def __init__(self, tape: "Tape", vid: int, data: np.ndarray):
        self.tape = tape
        self.vid = vid
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Value(vid={self.vid}, shape={self.data.shape})"


class _Node:
    __slots__ = ("inputs", "vjp", "param")

    def __init__(self, inputs: tuple[int, ...], vjp: Optional[VjpFn],
                 param: Optional[Parameter]):
        self.inputs = inputs
        self.vjp = vjp
        self.param = param


class Gradients:
    """Gradients retained after a backward sweep, keyed by value."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def of(self, value: Value) -> np.ndarray:
        if value.vid not in self._grads:
            raise KeyError(
                "gradient was not retained for this value; only leaves and "
                "watched values keep their gradients")
        return self._grads[value.vid]

    def has(self, value: Value) -> bool:
        return value.vid in self._grads


class Tape:
    """Append-only record of operations for one forward/backward pass.

    A tape and its values are confined to one thread; build a fresh tape per
    forward pass.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: set[int] = set()
        self._param_leaves: dict[int, Value] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def _append(self, data: np.ndarray, inputs: tuple[int, ...],
                vjp: Optional[VjpFn], param: Optional[Parameter] = None) -> Value:
        if checked_enabled() and not np.all(np.isfinite(data)):
            raise NumericError("non-finite value produced by an operation")
        node = _Node(inputs, vjp, param)
        self._nodes.append(node)
        return Value(self, len(self._nodes) - 1, data)

    def constant(self, data) -> Value:
        """Record an input tensor (a leaf with no parameter attached)."""
        arr = np.asarray(data, dtype=active_dtype())
        return self._append(arr, (), None)

    def leaf(self, param: Parameter) -> Value:
        """Record a parameter as a leaf; cached so each parameter appears once.

        After :meth:`backward`, the gradient of the loss with respect to this
        leaf is accumulated into ``param.grad``.
        """
        key = id(param)
        if key not in self._param_leaves:
            self._param_leaves[key] = self._append(param.value, (), None, param)
        return self._param_leaves[key]

    def record(self, out_data: np.ndarray, inputs: Sequence[Value],
               vjp: VjpFn) -> Value:
        """Record one operation. ``vjp(g)`` must return one gradient (or
        None) per input and must not mutate ``g``."""
        ids = []
        for v in inputs:
            if v.tape is not self:
                raise ShapeError("operand was recorded on a different tape")
            ids.append(v.vid)
        return self._append(out_data, tuple(ids), vjp)

    def watch(self, value: Value) -> None:
        """Retain this value's gradient through the next backward sweep."""
        if value.tape is not self:
            raise ShapeError("cannot watch a value from a different tape")
        self._watched.add(value.vid)

    def backward(self, loss: Value) -> Gradients:
        """Reverse-topological accumulation from a scalar loss.

        Visits each node exactly once. Parameter leaves accumulate into
        ``Parameter.grad``; leaf and watched gradients are returned.
        """
        if loss.tape is not self:
            raise ShapeError("loss value is not on this tape")
        if loss.data.shape != ():
            raise ShapeError(
                f"backward requires a scalar loss, got shape {loss.data.shape}")

        n = len(self._nodes)
        grads: list[Optional[np.ndarray]] = [None] * n
        grads[loss.vid] = np.ones((), dtype=loss.data.dtype)
        retained: dict[int, np.ndarray] = {}

        for vid in range(n - 1, -1, -1):
            g = grads[vid]
            if g is None:
                continue
            node = self._nodes[vid]
            if node.vjp is not None:
                input_grads = node.vjp(g)
                for iid, gi in zip(node.inputs, input_grads):
                    if gi is None:
                        continue
                    # never accumulate in place: vjp outputs may alias g
                    grads[iid] = gi if grads[iid] is None else grads[iid] + gi
            if node.param is not None:
                node.param.grad += g
            if node.vjp is None or vid in self._watched:
                retained[vid] = np.asarray(g)
            grads[vid] = None

        return Gradients(retained)
