# File: diffusion/schedule.py

"""
Noise schedules. Tables are kept in float64 and indexed by diffusion step
t in [1, T_d]; t = 0 denotes clean data (alpha_bar = 1).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import pandas as pd
import torch

logger = logging.getLogger(__name__)

__all__ = ["NoiseSchedule", "scaled_linear_schedule", "rescale_zero_terminal_snr", "build_schedule", "schedule_frame", "dump_schedule"]

TimeLike = Union[int, torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: torch.Tensor
    alphas_cumprod: torch.Tensor
    zero_terminal: bool = False

    def __post_init__(self):
        if self.betas.shape != self.alphas_cumprod.shape or self.betas.dim() != 1:
            raise ValueError("betas and alphas_cumprod must be 1D tables of equal length")
        head = self.betas[:-1] if self.zero_terminal else self.betas
        if not bool(((head > 0) & (head < 1)).all()):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if not bool((self.alphas_cumprod[1:] < self.alphas_cumprod[:-1]).all()):
            raise ValueError("alpha_bar must be strictly decreasing")
        if self.zero_terminal and self.alphas_cumprod[-1].item() != 0.0:
            raise ValueError("zero-terminal schedule must end at alpha_bar = 0")

    @property
    def steps(self) -> int:
        return self.betas.shape[0]

    @property
    def sqrt_alpha_bar(self) -> torch.Tensor:
        return self.alphas_cumprod.sqrt()

    @property
    def sqrt_one_minus_alpha_bar(self) -> torch.Tensor:
        return (1.0 - self.alphas_cumprod).sqrt()

    def _check(self, t: TimeLike, allow_zero: bool = False) -> None:
        lo = 0 if allow_zero else 1
        tmin, tmax = (int(t.min()), int(t.max())) if isinstance(t, torch.Tensor) else (int(t), int(t))
        if tmin < lo or tmax > self.steps:
            raise ValueError(f"timestep out of range [{lo}, {self.steps}]: {tmin}..{tmax}")

    def alpha_bar(self, t: TimeLike, allow_zero: bool = True) -> torch.Tensor:
        self._check(t, allow_zero)
        table = torch.cat([torch.ones(1, dtype=self.alphas_cumprod.dtype), self.alphas_cumprod])
        index = t if isinstance(t, torch.Tensor) else torch.tensor(t)
        return table[index.long()]

    def coefficients(self, t: TimeLike, like: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(sqrt(alpha_bar), sqrt(1 - alpha_bar)) at ``t``, broadcastable against ``like`` (..., L, c)."""
        ab = self.alpha_bar(t, allow_zero=False)
        a, b = ab.sqrt(), (1.0 - ab).sqrt()
        if ab.dim() > 0:
            shape = ab.shape + (1,) * (like.dim() - ab.dim())
            a, b = a.reshape(shape), b.reshape(shape)
        return a.to(like.dtype), b.to(like.dtype)


def scaled_linear_schedule(steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.002) -> NoiseSchedule:
    """beta_t = (sqrt(beta_start) + (t-1)/(T_d-1) * (sqrt(beta_end) - sqrt(beta_start)))**2."""
    if steps < 2:
        raise ValueError(f"need at least 2 diffusion steps, got {steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = torch.linspace(beta_start ** 0.5, beta_end ** 0.5, steps, dtype=torch.float64) ** 2
    return NoiseSchedule(betas=betas, alphas_cumprod=torch.cumprod(1.0 - betas, dim=0))


def rescale_zero_terminal_snr(schedule: NoiseSchedule) -> NoiseSchedule:
    """Shift and scale sqrt(alpha_bar) so the last step is pure noise and the first is unchanged."""
    if schedule.zero_terminal:
        raise ValueError("schedule is already rescaled to zero terminal SNR")
    s = schedule.sqrt_alpha_bar
    first, last = s[0].clone(), s[-1].clone()
    if first == last:
        raise ValueError("degenerate schedule: sqrt(alpha_bar) is flat")
    s = (s - last) * first / (first - last)
    alphas_cumprod = s ** 2
    alphas = torch.cat([alphas_cumprod[:1], alphas_cumprod[1:] / alphas_cumprod[:-1]])
    return NoiseSchedule(betas=1.0 - alphas, alphas_cumprod=alphas_cumprod, zero_terminal=True)


def build_schedule(steps: int, beta_start: float, beta_end: float, zero_terminal: bool = True) -> NoiseSchedule:
    schedule = scaled_linear_schedule(steps, beta_start, beta_end)
    return rescale_zero_terminal_snr(schedule) if zero_terminal else schedule


def schedule_frame(schedule: NoiseSchedule) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "t": range(1, schedule.steps + 1),
            "beta": schedule.betas.numpy(),
            "alpha_bar": schedule.alphas_cumprod.numpy(),
        }
    )


def dump_schedule(schedule: NoiseSchedule, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    schedule_frame(schedule).to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote schedule table with {schedule.steps} rows to {path}")
    return path
