# File: substrate/checkpoint.py

"""
Checkpoint container: an uncompressed zip holding ``header.json`` plus one
FPT1 blob per tensor and optional raw byte blobs. Member order and
timestamps are fixed so identical contents give identical files.
"""

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import torch

from errors import DataError
from substrate.fpt import decode_fpt, encode_fpt

logger = logging.getLogger(__name__)

__all__ = [
    "CONTAINER_FORMAT",
    "CONTAINER_VERSION",
    "Container",
    "save_container",
    "load_container",
    "module_tensors",
    "restore_module",
]

CONTAINER_FORMAT = "fourplane-container"
CONTAINER_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)
_TENSOR_SUFFIX = ".fpt"
_BLOB_SUFFIX = ".bin"


@dataclass
class Container:
    header: Dict[str, Any]
    tensors: Dict[str, torch.Tensor] = field(default_factory=dict)
    blobs: Dict[str, bytes] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.header.get("kind", "")

    def section(self, prefix: str) -> Dict[str, torch.Tensor]:
        """Tensors under ``prefix/`` with the prefix stripped."""
        prefix = prefix.rstrip("/") + "/"
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def _write_member(archive: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    archive.writestr(info, data)


def save_container(
    path: Union[str, Path],
    kind: str,
    header: Mapping[str, Any],
    tensors: Mapping[str, torch.Tensor],
    blobs: Optional[Mapping[str, bytes]] = None,
) -> Path:
    path = Path(path)
    full_header = {"format": CONTAINER_FORMAT, "version": CONTAINER_VERSION, "kind": kind}
    full_header.update(header)
    buffer = io.BytesIO()
    try:
        with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_STORED) as archive:
            _write_member(archive, "header.json", (json.dumps(full_header, sort_keys=True, indent=2) + "\n").encode("utf-8"))
            for name in sorted(tensors):
                _write_member(archive, name + _TENSOR_SUFFIX, encode_fpt(tensors[name]))
            for name in sorted(blobs or {}):
                _write_member(archive, name + _BLOB_SUFFIX, blobs[name])
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(buffer.getvalue())
        tmp.replace(path)
    except OSError as e:
        logger.error(f"Failed to save {kind} container {path}: {e}")
        raise
    return path


def load_container(path: Union[str, Path], expect_kind: Optional[str] = None) -> Container:
    path = Path(path)
    if not path.exists():
        raise DataError(f"container not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as archive:
            header = json.loads(archive.read("header.json").decode("utf-8"))
            tensors: Dict[str, torch.Tensor] = {}
            blobs: Dict[str, bytes] = {}
            for name in archive.namelist():
                if name.endswith(_TENSOR_SUFFIX):
                    tensors[name[: -len(_TENSOR_SUFFIX)]] = torch.from_numpy(decode_fpt(archive.read(name)).copy())
                elif name.endswith(_BLOB_SUFFIX):
                    blobs[name[: -len(_BLOB_SUFFIX)]] = archive.read(name)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, UnicodeDecodeError) as e:
        logger.error(f"Failed to load container {path}: {e}")
        raise DataError(f"corrupt container {path}: {e}") from e
    if header.get("format") != CONTAINER_FORMAT:
        raise DataError(f"{path} is not a {CONTAINER_FORMAT} file")
    if header.get("version") != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported container version {header.get('version')}")
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise DataError(f"{path} holds a {header.get('kind')!r} container, expected {expect_kind!r}")
    return Container(header=header, tensors=tensors, blobs=blobs)


def module_tensors(module: torch.nn.Module, prefix: str = "params") -> Dict[str, torch.Tensor]:
    """A module's state dict keyed ``prefix/name``, ready for ``save_container``."""
    return {f"{prefix}/{name}": value.detach() for name, value in module.state_dict().items()}


def restore_module(module: torch.nn.Module, tensors: Mapping[str, torch.Tensor]) -> None:
    """Load a ``Container.section`` into a module; every key must match exactly."""
    state = module.state_dict()
    missing = sorted(set(state) - set(tensors))
    unexpected = sorted(set(tensors) - set(state))
    if missing or unexpected:
        raise DataError(f"checkpoint does not fit {type(module).__name__}: missing {missing[:5]}, unexpected {unexpected[:5]}")
    for name, value in tensors.items():
        if tuple(value.shape) != tuple(state[name].shape):
            raise DataError(f"checkpoint tensor {name} has shape {tuple(value.shape)}, model needs {tuple(state[name].shape)}")
    module.load_state_dict({name: value.to(state[name].dtype) for name, value in tensors.items()})
