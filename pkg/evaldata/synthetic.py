# File: evaldata/synthetic.py

"""
Moving-sprite video datasets.

Backgrounds are checkerboards of two palette colors, sprites are hard-edged
squares or discs in a palette color that translate, rotate or pulse in
scale. Every pixel therefore takes a palette value. Clip ``i`` is drawn from
``SeedSequence([seed, i])`` so clips can be generated in any order or in
parallel.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import train_test_split

from config import SyntheticSpec
from errors import DataError
from substrate.fpt import decode_fpt, save_fpt

logger = logging.getLogger(__name__)

__all__ = [
    "MANIFEST_NAME",
    "ClipEntry",
    "DatasetManifest",
    "render_clip",
    "generate_synthetic",
    "palette_energy_band",
    "spec_hash",
    "verify_manifest",
]

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def spec_hash(spec: SyntheticSpec) -> str:
    return hashlib.sha256(spec.to_json().encode("utf-8")).hexdigest()


def palette_energy_band(spec: SyntheticSpec) -> Tuple[float, float]:
    """Bounds on mean squared pixel value implied by the palette."""
    energies = (np.asarray(spec.palette, dtype=np.float64) ** 2).mean(axis=1)
    return float(energies.min()), float(energies.max())


def _toroidal(delta: np.ndarray, period: int) -> np.ndarray:
    return (delta + period / 2.0) % period - period / 2.0


def render_clip(spec: SyntheticSpec, index: int) -> Tuple[np.ndarray, int]:
    """One clip, (T, H, W, 3) float32, and its class label (motion kind of the first sprite)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    palette = np.asarray(spec.palette, dtype=np.float32)
    T, H, W = spec.frames, spec.height, spec.width

    bg = rng.choice(len(palette), size=2, replace=False)
    phase_y, phase_x = rng.integers(0, 2 * spec.checker_size, size=2)
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    checker = (((yy + phase_y) // spec.checker_size + (xx + phase_x) // spec.checker_size) % 2).astype(bool)
    background = np.where(checker[..., None], palette[bg[0]], palette[bg[1]])

    sprites = []
    for _ in range(spec.sprite_count):
        sprites.append(
            {
                "motion": int(rng.integers(len(spec.motion_kinds))),
                "shape": "square" if rng.random() < 0.5 else "disc",
                "color": palette[int(rng.integers(len(palette)))],
                "center": rng.uniform(0, [H, W]),
                "velocity": rng.uniform(-1.5, 1.5, size=2),
                "spin": rng.uniform(0.15, 0.4) * rng.choice([-1.0, 1.0]),
                "pulse": rng.uniform(0.3, 0.8),
                "phase": rng.uniform(0, 2 * np.pi),
            }
        )

    clip = np.empty((T, H, W, 3), dtype=np.float32)
    half = spec.sprite_size / 2.0
    for tau in range(T):
        frame = background.copy()
        for sprite in sprites:
            kind = spec.motion_kinds[sprite["motion"]]
            cy, cx = sprite["center"]
            angle, size = 0.0, half
            if kind == "translate":
                cy, cx = sprite["center"] + sprite["velocity"] * tau
            elif kind == "rotate":
                angle = sprite["phase"] + sprite["spin"] * tau
            else:
                size = half * (1.0 + 0.5 * np.sin(sprite["phase"] + sprite["pulse"] * tau))
            dy, dx = _toroidal(yy - cy, H), _toroidal(xx - cx, W)
            if sprite["shape"] == "disc" and kind != "rotate":
                mask = dy ** 2 + dx ** 2 <= size ** 2
            else:
                u = dx * np.cos(angle) + dy * np.sin(angle)
                v = -dx * np.sin(angle) + dy * np.cos(angle)
                mask = (np.abs(u) <= size) & (np.abs(v) <= size)
            frame[mask] = sprite["color"]
        clip[tau] = frame
    label = sprites[0]["motion"] if sprites else 0
    return clip, label


@dataclass
class ClipEntry:
    path: str
    split: str
    label: int
    sha256: str

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "path": self.path, "sha256": self.sha256, "split": self.split}


@dataclass
class DatasetManifest:
    """Clip list of a dataset directory; paths are relative to the manifest."""
    root: Path
    dims: List[int]
    num_classes: int
    spec: Dict[str, Any]
    spec_hash: str
    clips: List[ClipEntry] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "clips": [c.to_dict() for c in self.clips],
            "dims": list(self.dims),
            "num_classes": self.num_classes,
            "spec": self.spec,
            "spec_hash": self.spec_hash,
            "version": self.version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, path: Optional[Union[str, Path]] = None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            clips = [ClipEntry(path=c["path"], split=c["split"], label=int(c["label"]), sha256=c["sha256"]) for c in data["clips"]]
            manifest = cls(
                root=path.parent,
                dims=[int(d) for d in data["dims"]],
                num_classes=int(data["num_classes"]),
                spec=data["spec"],
                spec_hash=data["spec_hash"],
                clips=clips,
                version=int(data["version"]),
            )
        except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"corrupt manifest {path}: {e}") from e
        if manifest.version != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version {manifest.version}")
        return manifest

    def clips_for(self, split: Optional[str] = None) -> List[ClipEntry]:
        return [c for c in self.clips if split is None or c.split == split]

    def clip_path(self, entry: ClipEntry) -> Path:
        return self.root / entry.path

    def verify(self) -> int:
        """Check every listed clip exists, parses as FPT1 and has the manifest dims."""
        if not self.clips:
            raise DataError("manifest lists no clips")
        for entry in self.clips:
            path = self.clip_path(entry)
            if not path.exists():
                raise DataError(f"missing clip file {path}")
            blob = path.read_bytes()
            if hashlib.sha256(blob).hexdigest() != entry.sha256:
                raise DataError(f"checksum mismatch for {path}")
            array = decode_fpt(blob)
            if list(array.shape) != self.dims:
                raise DataError(f"{path} has shape {list(array.shape)}, manifest says {self.dims}")
        logger.info(f"Verified {len(self.clips)} clips under {self.root}")
        return len(self.clips)


def _write_clip(spec_data: Dict[str, Any], index: int, path: str) -> Tuple[int, str]:
    spec = SyntheticSpec.from_dict(spec_data)
    clip, label = render_clip(spec, index)
    save_fpt(path, clip)
    return label, hashlib.sha256(Path(path).read_bytes()).hexdigest()


def generate_synthetic(spec: SyntheticSpec, out_dir: Union[str, Path], n_jobs: int = 1) -> DatasetManifest:
    """Render every clip to ``out_dir/clips`` and write ``out_dir/manifest.json``."""
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    names = [f"clips/clip_{i:05d}.fpt" for i in range(spec.clip_count)]
    spec_data = spec.to_dict()
    results = Parallel(n_jobs=n_jobs)(
        delayed(_write_clip)(spec_data, i, str(out_dir / name)) for i, name in enumerate(names)
    )

    splits = ["train"] * spec.clip_count
    if spec.val_fraction > 0 and spec.clip_count >= 2:
        _, val_idx = train_test_split(np.arange(spec.clip_count), test_size=spec.val_fraction, random_state=spec.seed)
        for i in val_idx:
            splits[int(i)] = "val"

    manifest = DatasetManifest(
        root=out_dir,
        dims=[spec.frames, spec.height, spec.width, 3],
        num_classes=len(spec.motion_kinds),
        spec=spec_data,
        spec_hash=spec_hash(spec),
        clips=[ClipEntry(path=n, split=s, label=label, sha256=digest) for n, s, (label, digest) in zip(names, splits, results)],
    )
    manifest.write()
    logger.info(f"Generated {spec.clip_count} synthetic clips in {out_dir}")
    return manifest


def verify_manifest(path: Union[str, Path]) -> DatasetManifest:
    manifest = DatasetManifest.read(path)
    manifest.verify()
    return manifest
