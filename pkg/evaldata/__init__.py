"""Reconstruction metrics and synthetic sprite datasets."""

from evaldata.metrics import PSNR_CAP, gaussian_window, psnr, psnr_from_mse, ssim
from evaldata.synthetic import (
    MANIFEST_NAME,
    ClipEntry,
    DatasetManifest,
    generate_synthetic,
    palette_energy_band,
    render_clip,
    spec_hash,
    verify_manifest,
)

__all__ = [
    "PSNR_CAP",
    "gaussian_window",
    "psnr",
    "psnr_from_mse",
    "ssim",
    "MANIFEST_NAME",
    "ClipEntry",
    "DatasetManifest",
    "generate_synthetic",
    "palette_energy_band",
    "render_clip",
    "spec_hash",
    "verify_manifest",
]
