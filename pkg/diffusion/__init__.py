"""Noise schedules, v-parameterized training loss and DDIM/DDPM sampling."""

from diffusion.losses import DiffusionBatch, make_batch, training_loss
from diffusion.sampling import (
    DdimState,
    ddim_init,
    ddim_loop,
    ddim_sample,
    ddim_timesteps,
    ddpm_sample,
    predict_eps,
    predict_z0,
    q_sample,
    v_target,
)
from diffusion.schedule import (
    NoiseSchedule,
    build_schedule,
    dump_schedule,
    rescale_zero_terminal_snr,
    scaled_linear_schedule,
    schedule_frame,
)

__all__ = [
    "DiffusionBatch",
    "make_batch",
    "training_loss",
    "DdimState",
    "ddim_init",
    "ddim_loop",
    "ddim_sample",
    "ddim_timesteps",
    "ddpm_sample",
    "predict_eps",
    "predict_z0",
    "q_sample",
    "v_target",
    "NoiseSchedule",
    "build_schedule",
    "dump_schedule",
    "rescale_zero_terminal_snr",
    "scaled_linear_schedule",
    "schedule_frame",
]
