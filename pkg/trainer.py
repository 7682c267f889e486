# File: trainer.py

import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR
from torch.utils.tensorboard import SummaryWriter
from tqdm import tqdm

from codec.autoencoder import VideoAutoencoder, build_codec
from codec.losses import CodecLoss
from config import CodecConfig, DenoiserConfig, DiffusionConfig, RunConfig
from data_provider import ClipDataProvider
from diffusion.losses import make_batch, training_loss
from diffusion.schedule import build_schedule
from errors import ConfigError, NumericError
from evaldata.metrics import psnr, ssim
from factorization.planes import LatentLayout
from factorization.sequence import flatten_planes, split_sequence, task_partition
from networks import build_denoiser
from pipelines.tasks import image_tokens, load_codec, video_tokens
from runtime import make_generator, run_metadata
from substrate.autodiff import backward
from substrate.checkpoint import Container, load_container, module_tensors, restore_module, save_container

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoints"


def cosine_with_warmup(warmup_steps: int, total_steps: int, floor: float = 0.0) -> Callable[[int], float]:
    """
    Creates a learning-rate multiplier schedule.

    Linear warmup to 1 over ``warmup_steps``, then cosine decay reaching
    ``floor`` at ``total_steps`` and staying there.
    """
    def lr_fn(step: int) -> float:
        if warmup_steps > 0 and step < warmup_steps:
            return (step + 1) / warmup_steps
        span = max(1, total_steps - warmup_steps)
        progress = min(1.0, (step - warmup_steps) / span)
        return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
    return lr_fn


def _generator_blob(generator: torch.Generator) -> bytes:
    return generator.get_state().numpy().tobytes()


def _restore_generator(generator: torch.Generator, blob: bytes) -> None:
    generator.set_state(torch.frombuffer(bytearray(blob), dtype=torch.uint8))


class BaseTrainer:
    """
    Shared optimization loop: AdamW with warmup plus cosine decay, gradient
    clipping, loss CSV every ``log_interval`` steps and resumable checkpoints
    every ``checkpoint_interval`` steps.
    """
    kind = "base"

    def __init__(self, model: nn.Module, run: RunConfig, run_dir: Union[str, Path]):
        self.model = model
        self.run = run
        self.optim_config = run.optimizer
        self.run_dir = Path(run_dir)
        self.optimizer = AdamW(model.parameters(), lr=self.optim_config.lr, weight_decay=self.optim_config.weight_decay)
        self.scheduler = LambdaLR(self.optimizer, cosine_with_warmup(self.optim_config.warmup_steps, self.optim_config.total_steps))
        self.generator = make_generator(run.seed)
        self.step = 0
        self.history: List[Dict[str, float]] = []
        self.writer: Optional[SummaryWriter] = None
        if run.tensorboard:
            self.writer = SummaryWriter(log_dir=str(self.run_dir / "tensorboard" / self.kind))

    # -- paths -----------------------------------------------------------

    @property
    def loss_path(self) -> Path:
        return self.run_dir / f"loss_{self.kind}.csv"

    def checkpoint_path(self, step: Optional[int] = None) -> Path:
        name = f"{self.kind}_latest.ckpt" if step is None else f"{self.kind}_step_{step:08d}.ckpt"
        return self.run_dir / CHECKPOINT_DIR / name

    # -- hooks -----------------------------------------------------------

    def compute_loss(self) -> Dict[str, torch.Tensor]:
        raise NotImplementedError

    def checkpoint_header(self) -> Dict[str, Any]:
        return {}

    def checkpoint_blobs(self) -> Dict[str, bytes]:
        return {}

    def restore_extra(self, container: Container) -> None:
        pass

    # -- loop ------------------------------------------------------------

    def train_step(self) -> float:
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        terms = self.compute_loss()
        loss = terms["loss"]
        try:
            backward(loss, self.model)
        except NumericError as e:
            logger.error(f"[{self.kind}] step {self.step + 1}: {e}")
            raise
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.optim_config.max_grad_norm)
        lr = self.optimizer.param_groups[0]["lr"]
        self.optimizer.step()
        self.scheduler.step()
        self.step += 1

        value = loss.item()
        if self.step % self.run.log_interval == 0:
            row = {"step": self.step, "loss": value, "lr": lr}
            row.update({k: v.item() for k, v in terms.items() if k != "loss"})
            self.history.append(row)
            self.write_losses()
            logger.info(f"[{self.kind}] step {self.step}/{self.optim_config.total_steps} loss={value:.6f} lr={lr:.3e}")
            if self.writer is not None:
                for key, val in row.items():
                    if key != "step":
                        self.writer.add_scalar(f"{self.kind}/{key}", val, self.step)
        if self.step % self.run.checkpoint_interval == 0:
            self.save_checkpoint()
        return value

    def train(self, steps: Optional[int] = None) -> pd.DataFrame:
        """Run until ``steps`` optimizer steps have been taken in total."""
        total = self.optim_config.total_steps if steps is None else steps
        if self.step >= total:
            logger.info(f"[{self.kind}] already at step {self.step}, nothing to do")
            return self.loss_frame()
        logger.info(f"[{self.kind}] training from step {self.step} to {total}")
        bar = tqdm(range(self.step, total), desc=self.kind, disable=not sys.stderr.isatty(), leave=False)
        for _ in bar:
            loss = self.train_step()
            bar.set_postfix(loss=f"{loss:.4f}")
        if self.step % self.run.checkpoint_interval:
            self.save_checkpoint()
        if self.writer is not None:
            self.writer.flush()
        return self.loss_frame()

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history)

    def write_losses(self) -> Path:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.loss_frame().to_csv(self.loss_path, index=False)
        return self.loss_path

    # -- checkpoints -----------------------------------------------------

    def _optimizer_tensors(self) -> Dict[str, torch.Tensor]:
        tensors: Dict[str, torch.Tensor] = {}
        for name, param in self.model.named_parameters():
            for slot, value in self.optimizer.state.get(param, {}).items():
                tensors[f"optim/{name}/{slot}"] = value if isinstance(value, torch.Tensor) else torch.tensor(float(value))
        return tensors

    def _restore_optimizer(self, container: Container) -> None:
        slots = container.section("optim")
        state_dict = self.optimizer.state_dict()
        state: Dict[int, Dict[str, torch.Tensor]] = {}
        for index, (name, _) in enumerate(self.model.named_parameters()):
            entry = {key.split("/")[-1]: value for key, value in slots.items() if key.rsplit("/", 1)[0] == name}
            if entry:
                state[index] = entry
        state_dict["state"] = state
        self.optimizer.load_state_dict(state_dict)

    def save_checkpoint(self, path: Optional[Union[str, Path]] = None) -> Path:
        header = {
            "step": self.step,
            "run_config": self.run.to_dict(),
            "metadata": run_metadata(self.run.seed, self.run.threads),
            "scheduler": self.scheduler.state_dict(),
            "lr": [group["lr"] for group in self.optimizer.param_groups],
        }
        header.update(self.checkpoint_header())
        tensors = module_tensors(self.model)
        tensors.update(self._optimizer_tensors())
        blobs = {"state/generator": _generator_blob(self.generator)}
        blobs.update(self.checkpoint_blobs())
        target = Path(path) if path is not None else self.checkpoint_path(self.step)
        try:
            save_container(target, self.kind, header, tensors, blobs)
            if path is None:
                save_container(self.checkpoint_path(), self.kind, header, tensors, blobs)
        except OSError as e:
            logger.error(f"Failed to save {self.kind} checkpoint: {e}")
            raise
        logger.info(f"[{self.kind}] checkpoint saved to {target}")
        return target

    def load_checkpoint(self, path: Union[str, Path]) -> int:
        """Restore weights, optimizer, LR schedule, RNG and data cursors; returns the step."""
        container = load_container(path, expect_kind=self.kind)
        restore_module(self.model, container.section("params"))
        self._restore_optimizer(container)
        self.scheduler.load_state_dict(container.header["scheduler"])
        for group, lr in zip(self.optimizer.param_groups, container.header["lr"]):
            group["lr"] = lr
        _restore_generator(self.generator, container.blobs["state/generator"])
        self.restore_extra(container)
        self.step = int(container.header["step"])
        self.history = []
        if self.loss_path.exists():
            frame = pd.read_csv(self.loss_path, float_precision="round_trip")
            self.history = frame[frame["step"] <= self.step].to_dict("records")
        logger.info(f"[{self.kind}] resumed from {path} at step {self.step}")
        return self.step

    def close(self) -> None:
        if self.writer is not None:
            self.writer.close()


# ============================
# Codec
# ============================

class CodecTrainer(BaseTrainer):
    """Reconstruction (+ optional KL) training of the video autoencoder."""
    kind = "codec"

    def __init__(
        self,
        config: CodecConfig,
        run: RunConfig,
        run_dir: Union[str, Path],
        provider: Optional[ClipDataProvider] = None,
    ):
        self.config = config
        super().__init__(build_codec(config, seed=run.seed), run, run_dir)
        if provider is None:
            if run.manifest is None:
                raise ConfigError("codec training needs a dataset manifest")
            provider = ClipDataProvider(run.manifest, run.optimizer.batch_size, split="train", seed=run.seed)
        expected = [config.clip_frames, config.clip_height, config.clip_width, 3]
        if provider.manifest.dims != expected:
            raise ConfigError(f"dataset clips are {provider.manifest.dims}, codec expects {expected}")
        self.provider = provider
        self.loss_fn = CodecLoss(config.kl_weight)

    def compute_loss(self) -> Dict[str, torch.Tensor]:
        clips, _ = self.provider.get_next_batch()
        recon, latent = self.model(clips, sample=self.config.variational, generator=self.generator)
        return self.loss_fn(clips, recon, latent.mean, latent.logvar)

    def checkpoint_header(self) -> Dict[str, Any]:
        return {"codec_config": self.config.to_dict()}

    def checkpoint_blobs(self) -> Dict[str, bytes]:
        return {"state/provider": json.dumps(self.provider.state_dict(), sort_keys=True).encode("utf-8")}

    def restore_extra(self, container: Container) -> None:
        self.provider.load_state_dict(json.loads(container.blobs["state/provider"].decode("utf-8")))


@torch.no_grad()
def evaluate_reconstruction(
    codec: VideoAutoencoder,
    provider: ClipDataProvider,
    metrics: Tuple[str, ...] = ("psnr", "ssim"),
) -> Dict[str, float]:
    """Mean per-clip PSNR/SSIM of codec reconstructions over a provider's split."""
    codec.eval()
    clips, _ = provider.load_all()
    scores: Dict[str, List[float]] = {m: [] for m in metrics}
    for clip in clips:
        recon = codec.reconstruct(clip)
        if "psnr" in scores:
            scores["psnr"].append(psnr(clip, recon))
        if "ssim" in scores:
            scores["ssim"].append(ssim(clip, recon))
    out = {m: float(np.mean(v)) for m, v in scores.items()}
    out["clips"] = len(clips)
    return out


# ============================
# Diffusion
# ============================

class DiffusionTrainer(BaseTrainer):
    """
    v-prediction training of the plane denoiser on latents of a frozen codec.

    The dataset is encoded once; tokens are divided by their standard
    deviation (``latent_scale``) so diffusion sees unit-variance data.
    """
    kind = "diffusion"

    def __init__(
        self,
        codec_path: Union[str, Path],
        denoiser_config: DenoiserConfig,
        diffusion_config: DiffusionConfig,
        run: RunConfig,
        run_dir: Union[str, Path],
        provider: Optional[ClipDataProvider] = None,
    ):
        codec = load_codec(codec_path)
        for param in codec.parameters():
            param.requires_grad_(False)
        self._check_task(codec.config, denoiser_config, run)
        self.codec = codec
        self.codec_path = str(codec_path)
        self.denoiser_config = denoiser_config
        self.diffusion = diffusion_config
        super().__init__(build_denoiser(denoiser_config, seed=run.seed), run, run_dir)
        self.schedule = build_schedule(
            diffusion_config.steps, diffusion_config.beta_start, diffusion_config.beta_end, diffusion_config.zero_terminal
        )
        if provider is None:
            if run.manifest is None:
                raise ConfigError("diffusion training needs a dataset manifest")
            provider = ClipDataProvider(run.manifest, run.optimizer.batch_size, split="train", seed=run.seed)
        self.layout = codec.layout
        self.image_layout = LatentLayout(1, self.layout.h, self.layout.w, self.layout.c)
        self.tokens, self.images, self.labels = self._encode(provider)
        if int(self.labels.max()) >= denoiser_config.vocab:
            raise ConfigError(f"dataset labels reach {int(self.labels.max())}, denoiser vocab is {denoiser_config.vocab}")
        reference = self.images if run.task == "image" else self.tokens
        std = reference.double().std().item()
        if not math.isfinite(std) or std <= 0:
            raise NumericError(f"latent tokens have degenerate spread (std={std})")
        self.latent_scale = 1.0 / std
        self.tokens = self.tokens * self.latent_scale
        if self.images is not None:
            self.images = self.images * self.latent_scale
        logger.info(f"Encoded {len(self.tokens)} clips, latent_scale={self.latent_scale:.6f}")

    @staticmethod
    def _check_task(codec_config: CodecConfig, denoiser_config: DenoiserConfig, run: RunConfig) -> None:
        kind = codec_config.latent_kind
        if kind == "triplane":
            raise ConfigError("diffusion training supports fourplane and volumetric latents")
        if kind == "volumetric" and (run.task != "class" or run.joint_image_rate > 0):
            raise ConfigError("a volumetric codec only supports class-conditional training")
        if run.task == "predict" and codec_config.spatial_mode != "segment":
            raise ConfigError("frame prediction needs a segment-mode codec")
        if run.task == "interp" and codec_config.spatial_mode != "boundary":
            raise ConfigError("interpolation needs a boundary-mode codec")
        if denoiser_config.token_dim != codec_config.c:
            raise ConfigError(f"denoiser token_dim {denoiser_config.token_dim} != codec latent channels {codec_config.c}")

    def _encode(self, provider: ClipDataProvider) -> Tuple[torch.Tensor, Optional[torch.Tensor], torch.Tensor]:
        clips, labels = provider.load_all()
        want_images = self.run.task == "image" or self.run.joint_image_rate > 0
        chunk = self.optim_config.batch_size
        tokens, images = [], []
        for start in range(0, len(clips), chunk):
            part = clips[start:start + chunk]
            tokens.append(video_tokens(self.codec, part))
            if want_images:
                images.append(image_tokens(self.codec, part[:, 0]))
        return torch.cat(tokens), (torch.cat(images) if want_images else None), labels

    def compute_loss(self) -> Dict[str, torch.Tensor]:
        batch_size = self.optim_config.batch_size
        index = torch.randint(len(self.tokens), (batch_size,), generator=self.generator)
        task = self.run.task
        if task != "image" and self.run.joint_image_rate > 0:
            if bool(torch.rand((), generator=self.generator) < self.run.joint_image_rate):
                task = "image"
        labels = self.labels[index] if task in ("class", "image") else None
        cond, planes, layout = None, None, self.layout
        if task == "image":
            z0, layout = self.images[index], self.image_layout
        elif self.codec.config.latent_kind == "volumetric":
            z0, planes = self.tokens[index], ("volume",)
        else:
            cond_planes, target_planes = task_partition(task)
            parts = split_sequence(self.tokens[index], layout)
            z0 = flatten_planes(parts, target_planes)
            if cond_planes:
                cond = flatten_planes(parts, cond_planes)
        batch = make_batch(z0, self.schedule, self.generator, cond_tokens=cond, labels=labels, task=task, layout=layout, planes=planes)
        loss = training_loss(self.model, batch, self.schedule, self.diffusion.self_cond_rate, self.generator)
        return {"loss": loss}

    def checkpoint_header(self) -> Dict[str, Any]:
        return {
            "codec_checkpoint": self.codec_path,
            "codec_config": self.codec.config.to_dict(),
            "denoiser_config": self.denoiser_config.to_dict(),
            "diffusion_config": self.diffusion.to_dict(),
            "latent_scale": self.latent_scale,
            "task": self.run.task,
        }
