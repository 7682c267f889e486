# File: substrate/autodiff.py

"""
Operation tape and gradient extraction on top of torch autograd.

Every primitive in ``substrate.ops`` reports itself to the innermost active
:class:`Tape`. The tape keeps the execution order and, when asked, hooks the
recorded outputs so the backward visit order can be inspected.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from errors import NumericError, ShapeError

logger = logging.getLogger(__name__)

__all__ = ["TapeEntry", "Tape", "active_tape", "record", "named_parameters", "backward"]

_local = threading.local()


@dataclass
class TapeEntry:
    index: int
    op: str
    input_shapes: Tuple[Tuple[int, ...], ...]
    output_shape: Tuple[int, ...]


@dataclass
class Tape:
    """Ordered record of the differentiable primitives executed while active."""
    track_backward: bool = False
    entries: List[TapeEntry] = field(default_factory=list)
    visited: List[int] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: Sequence[torch.Tensor], output: torch.Tensor) -> None:
        entry = TapeEntry(
            index=len(self.entries),
            op=op,
            input_shapes=tuple(tuple(t.shape) for t in inputs if isinstance(t, torch.Tensor)),
            output_shape=tuple(output.shape),
        )
        self.entries.append(entry)
        if self.track_backward and output.requires_grad:
            output.register_hook(self._visit_hook(entry.index))

    def _visit_hook(self, index: int):
        def hook(grad: torch.Tensor) -> None:
            self.visited.append(index)
        return hook

    def ops(self) -> List[str]:
        return [e.op for e in self.entries]


def active_tape() -> Optional[Tape]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def record(op: str, inputs: Sequence[torch.Tensor], output: torch.Tensor) -> torch.Tensor:
    tape = active_tape()
    if tape is not None:
        tape.record(op, inputs, output)
    return output


def named_parameters(module: nn.Module) -> Dict[str, nn.Parameter]:
    """Parameter table keyed by unique dotted path."""
    table: Dict[str, nn.Parameter] = {}
    for name, param in module.named_parameters():
        if name in table:
            raise ShapeError(f"Duplicate parameter name {name}")
        table[name] = param
    return table


ParamSource = Union[nn.Module, Mapping[str, torch.Tensor]]


def backward(loss: torch.Tensor, params: ParamSource, tape: Optional[Tape] = None) -> Dict[str, torch.Tensor]:
    """
    Back-propagate a scalar loss and return d(loss)/d(param) by parameter name.

    Gradients accumulate into ``param.grad``; parameters the loss does not
    reach get a zero gradient of matching shape.
    """
    if loss.dim() != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if tape is not None and len(tape) == 0:
        raise ValueError("backward called with an empty tape")
    if loss.grad_fn is None:
        raise ValueError("loss was not produced by differentiable operations")
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {loss.item()}")
    table = named_parameters(params) if isinstance(params, nn.Module) else dict(params)
    loss.backward()
    grads: Dict[str, torch.Tensor] = {}
    for name, param in table.items():
        grad = param.grad if param.grad is not None else torch.zeros_like(param)
        if grad.shape != param.shape:
            raise ShapeError(f"gradient shape {tuple(grad.shape)} != parameter shape {tuple(param.shape)} for {name}")
        grads[name] = grad
    return grads
