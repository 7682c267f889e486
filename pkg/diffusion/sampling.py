# File: diffusion/sampling.py

import logging
from dataclasses import dataclass
from typing import Any, Callable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from diffusion.schedule import NoiseSchedule, TimeLike

logger = logging.getLogger(__name__)

__all__ = [
    "Denoise",
    "q_sample",
    "v_target",
    "predict_z0",
    "predict_eps",
    "ddim_timesteps",
    "DdimState",
    "ddim_init",
    "ddim_loop",
    "ddim_sample",
    "ddpm_sample",
]

# denoiser(z_t, t, self_cond=..., **conditioning) -> v
Denoise = Callable[..., torch.Tensor]


def q_sample(z0: torch.Tensor, t: TimeLike, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    a, b = schedule.coefficients(t, z0)
    return a * z0 + b * eps


def v_target(z0: torch.Tensor, eps: torch.Tensor, t: TimeLike, schedule: NoiseSchedule) -> torch.Tensor:
    a, b = schedule.coefficients(t, z0)
    return a * eps - b * z0


def predict_z0(z_t: torch.Tensor, v: torch.Tensor, t: TimeLike, schedule: NoiseSchedule) -> torch.Tensor:
    a, b = schedule.coefficients(t, z_t)
    return a * z_t - b * v


def predict_eps(z_t: torch.Tensor, v: torch.Tensor, t: TimeLike, schedule: NoiseSchedule) -> torch.Tensor:
    a, b = schedule.coefficients(t, z_t)
    return b * z_t + a * v


def ddim_timesteps(total: int, steps: int) -> List[Tuple[int, int]]:
    """(t, t_prev) pairs: ``steps`` uniform strides from ``total`` down to 0."""
    if not 1 <= steps <= total:
        raise ValueError(f"DDIM steps must lie in [1, {total}], got {steps}")
    grid = np.round(np.linspace(total, 0, steps + 1)).astype(np.int64).tolist()
    return list(zip(grid[:-1], grid[1:]))


@dataclass
class DdimState:
    z: torch.Tensor
    v_prev: torch.Tensor
    index: int = 0


def ddim_init(shape: Sequence[int], generator: torch.Generator) -> DdimState:
    z = torch.randn(tuple(shape), generator=generator)
    return DdimState(z=z, v_prev=torch.zeros_like(z), index=0)


@torch.no_grad()
def ddim_loop(
    denoiser: Denoise,
    state: DdimState,
    schedule: NoiseSchedule,
    steps: int = 50,
    eta: float = 0.0,
    conditioning: Optional[Mapping[str, Any]] = None,
    generator: Optional[torch.Generator] = None,
    stop: Optional[int] = None,
    self_conditioning: bool = True,
) -> DdimState:
    """
    Advance a DDIM trajectory from ``state.index`` to ``stop`` (exclusive).

    Each step predicts v, forms z0_hat = sqrt(ab)*z - sqrt(1-ab)*v and
    eps_hat = sqrt(1-ab)*z + sqrt(ab)*v, then moves to the next timestep.
    The previous v estimate is the self-conditioning input.
    """
    pairs = ddim_timesteps(schedule.steps, steps)
    stop = len(pairs) if stop is None else stop
    if not state.index <= stop <= len(pairs):
        raise ValueError(f"cannot run DDIM from step {state.index} to {stop} of {len(pairs)}")
    conditioning = dict(conditioning or {})
    z, v_prev = state.z, state.v_prev
    batch = z.shape[0]
    for i in range(state.index, stop):
        t, t_prev = pairs[i]
        timesteps = torch.full((batch,), t, dtype=torch.long)
        self_cond = v_prev if self_conditioning else torch.zeros_like(z)
        v = denoiser(z, timesteps, self_cond=self_cond, **conditioning)
        ab = schedule.alpha_bar(t).item()
        ab_prev = schedule.alpha_bar(t_prev).item()
        z0_hat = ab ** 0.5 * z - (1.0 - ab) ** 0.5 * v
        eps_hat = (1.0 - ab) ** 0.5 * z + ab ** 0.5 * v
        sigma = 0.0
        if eta > 0 and t_prev > 0:
            sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)) ** 0.5 * (1.0 - ab / ab_prev) ** 0.5
        z = ab_prev ** 0.5 * z0_hat + max(1.0 - ab_prev - sigma ** 2, 0.0) ** 0.5 * eps_hat
        if sigma > 0:
            z = z + sigma * torch.randn(z.shape, generator=generator, dtype=z.dtype)
        v_prev = v
    return DdimState(z=z, v_prev=v_prev, index=stop)


def ddim_sample(
    denoiser: Denoise,
    shape: Sequence[int],
    schedule: NoiseSchedule,
    steps: int = 50,
    eta: float = 0.0,
    seed: int = 0,
    conditioning: Optional[Mapping[str, Any]] = None,
    self_conditioning: bool = True,
) -> torch.Tensor:
    """Sample tokens of ``shape`` starting from pure noise drawn with ``seed``."""
    if not schedule.zero_terminal:
        raise ValueError("DDIM sampling from pure noise needs a zero-terminal-SNR schedule")
    generator = torch.Generator().manual_seed(seed)
    state = ddim_init(shape, generator)
    state = ddim_loop(denoiser, state, schedule, steps, eta, conditioning, generator, self_conditioning=self_conditioning)
    return state.z


def ddpm_sample(
    denoiser: Denoise,
    shape: Sequence[int],
    schedule: NoiseSchedule,
    seed: int = 0,
    conditioning: Optional[Mapping[str, Any]] = None,
) -> torch.Tensor:
    """Ancestral sampling over every training step (DDIM with eta = 1)."""
    return ddim_sample(denoiser, shape, schedule, steps=schedule.steps, eta=1.0, seed=seed, conditioning=conditioning)
