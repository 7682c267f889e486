# File: runtime.py

import contextlib
import logging
import os
import platform
import random
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

import numpy as np
import torch

from errors import DataError

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(asctime)s] %(levelname)s:%(message)s"
LOCK_NAME = ".lock"


def configure_logging(level: Union[str, int, None] = None) -> None:
    level = level or os.getenv("FOURPLANE_LOG_LEVEL", "INFO")
    if isinstance(level, str):
        level = level.upper()
    logging.basicConfig(level=level, format=LOG_FORMAT)


def seed_everything(seed: int, threads: int = 1) -> None:
    """Seed every RNG and pin the kernel thread count."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True, warn_only=True)


def make_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def run_metadata(seed: int, threads: int) -> Dict[str, Any]:
    return {
        "seed": seed,
        "threads": threads,
        "torch": torch.__version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


@contextlib.contextmanager
def run_lock(run_dir: Union[str, Path]) -> Iterator[Path]:
    """Hold an exclusive lock file inside a run directory."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock_path = run_dir / LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise DataError(f"Run directory {run_dir} is locked by another process ({lock_path})") from e
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        logger.info(f"Acquired run lock {lock_path}")
        yield lock_path
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock_path.unlink()
        logger.info(f"Released run lock {lock_path}")


def require_dir(path: Optional[Union[str, Path]], what: str = "run directory") -> Path:
    if path is None:
        raise DataError(f"No {what} given")
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{what.capitalize()} not found: {path}")
    return path
