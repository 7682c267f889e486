# File: substrate/gradcheck.py

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import torch

logger = logging.getLogger(__name__)

__all__ = ["GradCheckResult", "finite_difference_check"]


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def _relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-8)
    return (analytic - numeric).abs().max().item() / scale


def finite_difference_check(
    fn: Callable[..., torch.Tensor],
    tensors: Mapping[str, torch.Tensor],
    step: float = 1e-3,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare autograd gradients of ``fn`` with central finite differences.

    ``fn`` is called with keyword tensors and may return any shape; it is
    reduced to a scalar through a fixed random projection. Tensors are
    promoted to float64 in place of the caller's copies, so ``fn`` should
    build whatever else it needs in the dtype of its inputs. The error of one
    tensor is max|analytic - numeric| over the larger of the two gradient
    magnitudes. ``max_entries`` caps how many entries per tensor are probed.
    """
    gen = torch.Generator().manual_seed(seed)
    leaves = {k: v.detach().to(torch.float64).clone().requires_grad_(True) for k, v in tensors.items()}

    with torch.no_grad():
        probe = fn(**leaves)
    projection = torch.randn(probe.shape, generator=gen, dtype=torch.float64)

    def objective() -> torch.Tensor:
        return (fn(**leaves) * projection).sum()

    loss = objective()
    grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
    analytic = {k: (g if g is not None else torch.zeros_like(leaves[k])) for k, g in zip(leaves, grads)}

    result = GradCheckResult(max_rel_error=0.0)
    for name, leaf in leaves.items():
        flat = leaf.data.view(-1)
        count = flat.numel()
        if max_entries is not None and count > max_entries:
            indices = torch.randperm(count, generator=gen)[:max_entries].tolist()
        else:
            indices = list(range(count))
        numeric = torch.zeros(len(indices), dtype=torch.float64)
        with torch.no_grad():
            for j, i in enumerate(indices):
                orig = flat[i].item()
                flat[i] = orig + step
                plus = objective().item()
                flat[i] = orig - step
                minus = objective().item()
                flat[i] = orig
                numeric[j] = (plus - minus) / (2 * step)
        err = _relative_error(analytic[name].reshape(-1)[indices], numeric)
        result.per_tensor[name] = err
        result.max_rel_error = max(result.max_rel_error, err)
        result.checked_entries += len(indices)
    logger.debug(f"finite difference check: {result.per_tensor}")
    return result
