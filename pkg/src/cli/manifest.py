import logging
import os
import platform
import subprocess
from pathlib import Path
from typing import Union

import numpy as np

from src.schemas import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def build_id() -> str:
    """LU2NET_BUILD_ID if set, else the git commit of the working tree, else "unknown"."""
    explicit = os.environ.get("LU2NET_BUILD_ID")
    if explicit:
        return explicit
    try:
        completed = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return completed.stdout.strip() or "unknown"


def hardware_description() -> str:
    processor = platform.processor() or platform.machine() or "unknown-cpu"
    return (
        f"{processor}; {os.cpu_count() or 1} logical cores; {platform.system()} {platform.release()}; "
        f"python {platform.python_version()}; numpy {np.__version__}"
    )


def write_manifest(manifest: RunManifest, out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_NAME
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Manifest written to {path}")
    return path
