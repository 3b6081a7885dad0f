"""Bundled sample dataset: execution models, reports, ground truth and replay fixtures."""
from __future__ import annotations

from importlib import resources
from pathlib import Path


def sample_root() -> Path:
    return Path(str(resources.files("bugscribe").joinpath("data", "sample")))
