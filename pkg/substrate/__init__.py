"""Dense tensor primitives, operation tape, gradient checking and tensor files."""

from substrate.autodiff import Tape, backward, named_parameters
from substrate.checkpoint import Container, load_container, module_tensors, restore_module, save_container
from substrate.fpt import decode_fpt, encode_fpt, load_fpt, save_fpt
from substrate.gradcheck import GradCheckResult, finite_difference_check

__all__ = [
    "Tape",
    "backward",
    "named_parameters",
    "Container",
    "load_container",
    "save_container",
    "module_tensors",
    "restore_module",
    "decode_fpt",
    "encode_fpt",
    "load_fpt",
    "save_fpt",
    "GradCheckResult",
    "finite_difference_check",
]
