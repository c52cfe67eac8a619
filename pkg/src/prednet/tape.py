"""Reverse-mode differentiation over a recording tape.

A :class:`Tape` is a Wengert list: while active (``with Tape() as tape:``),
every kernel application involving a gradient-carrying node appends one
record holding the output node, its input nodes, and a pullback closure over
the saved forward context. ``Tape.backward`` replays the records in exact
reverse order, so gradient accumulation order is deterministic and repeated
runs on identical inputs are bit-identical.

Gradient accumulation is out-of-place (``grad = grad + g``), which lets
pullbacks return views of upstream gradients without aliasing hazards.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


def active_tape() -> "Tape | None":
    """The innermost recording tape, or None when not recording."""
    return _ACTIVE[-1] if _ACTIVE else None


class Value:
    """A node in the computation graph: an ndarray plus its gradient slot.

    ``needs_grad`` marks nodes gradients must flow into: parameters, and any
    node recorded from one. Constants (input frames, fixed weights) keep it
    False and are skipped during accumulation.
    """

    __slots__ = ("data", "grad", "needs_grad", "producer")

    def __init__(self, data, needs_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad
        self.producer: "Tape | None" = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        kind = "param" if isinstance(self, Parameter) else "value"
        return f"<{kind} shape={self.data.shape} dtype={self.data.dtype}>"


class Parameter(Value):
    """A named leaf tensor owned by a model and updated by an optimizer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, needs_grad=True)
        self.name = name

    def __repr__(self):
        return f"<param {self.name} shape={self.data.shape}>"


def as_value(x) -> Value:
    """Wrap raw arrays/scalars as constant nodes; pass Values through."""
    if isinstance(x, Value):
        return x
    return Value(np.asarray(x))


class Tape:
    """Ordered record of kernel applications, replayable in reverse.

    A tape is single-owner: recording and backward must be externally
    serialized. Distinct tapes on distinct threads are independent.
    """

    def __init__(self):
        self._records: list[tuple[Value, tuple[Value, ...], Callable]] = []
        self._touched: set[int] | None = None

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        popped = _ACTIVE.pop()
        assert popped is self, "tape context nesting violated"
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Value, inputs: tuple[Value, ...], pullback: Callable) -> None:
        """Append one application. ``pullback(dy)`` returns one gradient
        array (or None) per input, in input order."""
        out.needs_grad = True
        out.producer = self
        self._records.append((out, inputs, pullback))

    def backward(self, loss: Value) -> dict[Parameter, np.ndarray]:
        """Accumulate d(loss)/d(node) for every recorded node.

        Returns gradients keyed by Parameter for all parameters the loss
        reaches. Gradients are also left on ``node.grad`` for inspection.
        """
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if loss.producer is not self:
            raise ValueError("loss node was not recorded on this tape")

        touched: set[int] = set()
        for out, inputs, _ in self._records:
            out.grad = None
            touched.add(id(out))
            for inp in inputs:
                inp.grad = None
                touched.add(id(inp))
        self._touched = touched

        loss.grad = np.ones_like(loss.data)
        param_grads: dict[Parameter, np.ndarray] = {}
        for out, inputs, pullback in reversed(self._records):
            dy = out.grad
            if dy is None:
                continue  # branch not reached by the loss
            grads = pullback(dy)
            for inp, g in zip(inputs, grads):
                if g is None or not inp.needs_grad:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g
        for out, inputs, _ in self._records:
            for inp in inputs:
                if isinstance(inp, Parameter) and inp not in param_grads:
                    param_grads[inp] = (
                        inp.grad if inp.grad is not None else np.zeros_like(inp.data)
                    )
        return param_grads

    def gradients(self, params: Sequence[Parameter]) -> list[np.ndarray]:
        """Per-parameter gradients after :meth:`backward`.

        Parameters the recorded computation never used get exact zeros.
        """
        if self._touched is None:
            raise RuntimeError("gradients() requires a prior backward()")
        out = []
        for p in params:
            if id(p) in self._touched and p.grad is not None:
                out.append(p.grad)
            else:
                out.append(np.zeros_like(p.data))
        return out
