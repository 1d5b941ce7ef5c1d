"""Build-on-demand orchestration of run-directory artifacts.

Each stage checks for its inputs inside the run directory and builds anything
missing, so ``train`` on a fresh directory generates the corpus, fits the
encoders, and mines triplets first. Every artifact is a pure function of the
configuration, which names the directory by hash.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from . import config as cfgmod
from .config import RunPaths
from .corpus import CorpusBundle, Item, build_corpus
from .diffnet import checkpoint_hash, load_checkpoint
from .diffusion import make_schedule, train
from .embed import EncoderBundle, fit_encoder_bundle
from .finish import evaluate
from .mine import TripletSet, mine_dataset
from .sampler import SamplerModel


class PipelineError(RuntimeError):
    pass


def ensure_corpus(paths: RunPaths) -> CorpusBundle:
    if (paths.corpus_dir / "manifest.json").exists():
        return CorpusBundle.load(paths.corpus_dir)
    paths.write_config_echo()
    bundle = build_corpus(cfgmod.corpus_config(paths.config), paths.config["corpus"]["seed"])
    bundle.save(paths.corpus_dir)
    return bundle


def ensure_encoders(paths: RunPaths, bundle: CorpusBundle | None = None) -> EncoderBundle:
    if (paths.encoders_dir / "encoders.json").exists():
        return EncoderBundle.load(paths.encoders_dir)
    bundle = bundle or ensure_corpus(paths)
    encoders = fit_encoder_bundle(
        bundle, d=cfgmod.latent_dim(paths.config), ridge=paths.config["embed"]["ridge"]
    )
    encoders.save(paths.encoders_dir)
    return encoders


def ensure_triplets(paths: RunPaths) -> TripletSet:
    if paths.triplets_path.exists():
        return TripletSet.load(paths.triplets_path)
    bundle = ensure_corpus(paths)
    encoders = ensure_encoders(paths, bundle)
    triplet_set = mine_dataset(bundle, encoders, cfgmod.mine_params(paths.config))
    triplet_set.save(paths.triplets_path)
    return triplet_set


def ensure_checkpoint(paths: RunPaths, resume: bool = False) -> Path:
    ckpt = paths.checkpoint_dir
    if (ckpt / "checkpoint.json").exists() and not resume:
        return ckpt
    bundle = ensure_corpus(paths)
    encoders = ensure_encoders(paths, bundle)
    triplet_set = ensure_triplets(paths)
    lock = paths.root / "train.lock"
    try:
        lock.touch(exist_ok=False)
    except FileExistsError:
        raise PipelineError(f"another training job holds {lock}; remove it if stale") from None
    try:
        train(
            cfgmod.train_config(paths.config),
            cfgmod.denoiser_config(paths.config),
            bundle,
            encoders,
            triplet_set,
            ckpt,
            resume_from=ckpt if resume and (ckpt / "checkpoint.json").exists() else None,
        )
    finally:
        lock.unlink(missing_ok=True)
    return ckpt


def load_model(paths: RunPaths) -> tuple[SamplerModel, str]:
    """Load the trained model for inference; returns (model, checkpoint hash)."""
    ckpt = paths.checkpoint_dir
    if not (ckpt / "checkpoint.json").exists():
        raise PipelineError(f"no checkpoint under {ckpt}; run train first")
    bundle = ensure_corpus(paths)
    encoders = ensure_encoders(paths, bundle)
    store, echo = load_checkpoint(ckpt)
    if echo["corpus_hash"] != bundle.content_hash():
        raise PipelineError("checkpoint was trained on a different corpus")
    model = SamplerModel(
        store=store,
        denoiser_cfg=cfgmod.denoiser_config(paths.config),
        schedule=make_schedule(
            paths.config["diffusion"]["t_steps"],
            paths.config["diffusion"]["beta_start"],
            paths.config["diffusion"]["beta_end"],
        ),
        encoders=encoders,
        mode=bundle.mode,
        grid=bundle.grid,
    )
    return model, checkpoint_hash(ckpt)


def run_eval(paths: RunPaths):
    model, ckpt_hash = load_model(paths)
    bundle = ensure_corpus(paths)
    report = evaluate(model, bundle, cfgmod.eval_config(paths.config), checkpoint_hash=ckpt_hash)
    report.config["config_hash"] = paths.hash
    report.save(paths.report_dir)
    return report


# ---------------------------------------------------------------------------
# item rendering helpers (shared by CLI artifacts and the HTTP service)
# ---------------------------------------------------------------------------

PNG_SCALE = 16


def item_to_png(item: Item, scale: int = PNG_SCALE) -> bytes:
    """8-bit PNG of an item, nearest-neighbor upscaled for visibility.

    Render-mode values are already in [0, 1]; other modes are min-max
    normalized for display only.
    """
    h, w, c = item.grid
    raster = item.data.reshape(h, w, c)
    if item.mode != "render":
        lo, hi = raster.min(), raster.max()
        raster = (raster - lo) / (hi - lo) if hi > lo else np.zeros_like(raster)
    raster = np.clip(raster, 0.0, 1.0)
    big = np.repeat(np.repeat(raster, scale, axis=0), scale, axis=1)
    arr = (big * 255.0).round().astype(np.uint8)
    image = Image.fromarray(arr[:, :, 0] if c == 1 else arr, mode="L" if c == 1 else "RGB")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def save_item(item: Item, path: Path) -> None:
    """Write an item as corpus-format floats plus a PNG alongside."""
    path.parent.mkdir(parents=True, exist_ok=True)
    # plain string concat: stems may contain dots (e.g. alpha values)
    path.parent.joinpath(path.name + ".f32").write_bytes(item.data.astype("<f4").tobytes())
    path.parent.joinpath(path.name + ".png").write_bytes(item_to_png(item))
