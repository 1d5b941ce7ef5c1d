import json
import time
from pathlib import Path

import pytest

from stylesynth import config as cfgmod
from stylesynth import pipeline
from stylesynth.config import RunPaths

CACHE_ROOT = Path(__file__).parent / ".cache"


class ReferenceRun:
    """A fully trained run and its artifacts, built once per config hash."""

    def __init__(self, paths: RunPaths, train_seconds: float):
        self.paths = paths
        self.train_seconds = train_seconds
        self.bundle = pipeline.ensure_corpus(paths)
        self.encoders = pipeline.ensure_encoders(paths, self.bundle)
        self.model, self.checkpoint_hash = pipeline.load_model(paths)


def _build_run(overrides: list[str]) -> ReferenceRun:
    config = cfgmod.load_config(None, overrides + [f"paths.run_root={CACHE_ROOT}"])
    paths = RunPaths(config)
    stamp = paths.root / "train_seconds.json"
    if not (paths.checkpoint_dir / "checkpoint.json").exists():
        started = time.monotonic()
        pipeline.ensure_checkpoint(paths)
        elapsed = time.monotonic() - started
        stamp.write_text(json.dumps({"seconds": elapsed}))
    train_seconds = json.loads(stamp.read_text())["seconds"] if stamp.exists() else 0.0
    return ReferenceRun(paths, train_seconds)


@pytest.fixture(scope="session")
def reference_run() -> ReferenceRun:
    """The reference desk run: defaults straight from the canonical config."""
    return _build_run([])


@pytest.fixture(scope="session")
def ablation_run() -> ReferenceRun:
    """Same run with the modality losses disabled (weights zero)."""
    return _build_run(["train.omega_s=0.0", "train.omega_y=0.0"])


@pytest.fixture(scope="session")
def render_run() -> ReferenceRun:
    """Reference protocol on the raster corpus (color metrics need pixels)."""
    return _build_run(["corpus.mode=render"])
