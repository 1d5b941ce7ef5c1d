"""Run configuration: one nested JSON document covering every stage.

The canonical defaults live in ``data/reference_config.json``; user files and
CLI overrides are merged onto them. Unknown keys are rejected so typos fail
loudly. Every artifact a run produces embeds the hash of its canonical
configuration, and downstream stages refuse mismatched inputs.
"""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any

from .corpus import CorpusConfig
from .diffusion import DenoiserConfig, TrainConfig
from .embed import DEFAULT_LATENT_DIM
from .finish import EvalConfig
from .mine import MineParams
from .sampler import GuidanceConfig


class ConfigError(ValueError):
    pass


def reference_defaults() -> dict:
    """The canonical full-defaults document shipped with the package."""
    with resources.files("stylesynth.data").joinpath("reference_config.json").open() as fh:
        return json.load(fh)


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = {}
    for key, default_value in defaults.items():
        if key in override:
            value = override[key]
            if isinstance(default_value, dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {path + key} must be a mapping")
                out[key] = _merge(default_value, value, path + key + ".")
            else:
                out[key] = value
        else:
            out[key] = default_value
    unknown = set(override) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    """Merge defaults <- optional JSON file <- dotted key=value overrides."""
    merged = reference_defaults()
    if path is not None:
        user = json.loads(Path(path).read_text())
        merged = _merge(merged, user)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node: Any = merged
        for key in keys[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[keys[-1]] = value
    return merged


def canonical_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode()


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_bytes(config)).hexdigest()[:12]


# ---------------------------------------------------------------------------
# typed views over the document
# ---------------------------------------------------------------------------


def corpus_config(config: dict) -> CorpusConfig:
    c = config["corpus"]
    return CorpusConfig(
        mode=c["mode"], n_target=c["n_target"], n_style=c["n_style"], n_semantics=c["n_semantics"]
    )


def latent_dim(config: dict) -> int:
    d = config["embed"]["latent_dim"]
    return int(d) if d is not None else DEFAULT_LATENT_DIM[config["corpus"]["mode"]]


def mine_params(config: dict) -> MineParams:
    m = config["mine"]
    return MineParams(
        k=m["k"],
        threshold_mode=m["threshold_mode"],
        quantile=m["quantile"],
        tau_content=m["tau_content"],
        tau_style=m["tau_style"],
    )


def denoiser_config(config: dict) -> DenoiserConfig:
    d = config["diffusion"]
    return DenoiserConfig(
        latent_dim=latent_dim(config),
        hidden=d["hidden"],
        time_dim=d["time_dim"],
        d_k=d["d_k"],
        d_v=d["d_v"],
        blocks=d["blocks"],
        proj_hidden=d["proj_hidden"],
        use_projector=d["use_projector"],
    )


def train_config(config: dict) -> TrainConfig:
    t = config["train"]
    d = config["diffusion"]
    return TrainConfig(
        steps=t["steps"],
        batch=t["batch"],
        lr=t["lr"],
        omega_s=t["omega_s"],
        omega_y=t["omega_y"],
        drop_p=t["drop_p"],
        joint_dropout=t["joint_dropout"],
        seed=t["seed"],
        t_steps=d["t_steps"],
        beta_start=d["beta_start"],
        beta_end=d["beta_end"],
        log_every=t["log_every"],
    )


def guidance_config(config: dict) -> GuidanceConfig:
    s = config["sample"]
    return GuidanceConfig(g_s=s["g_s"], g_y=s["g_y"])


def eval_config(config: dict) -> EvalConfig:
    e = config["eval"]
    s = config["sample"]
    return EvalConfig(
        pair_count=e["pair_count"],
        seed=e["seed"],
        lam=s["lambda"],
        g_s=s["g_s"],
        g_y=s["g_y"],
        postprocess=e["postprocess"],
        no_inversion=e["no_inversion"],
    )


class RunPaths:
    """Artifact layout inside one run directory (named by config hash)."""

    def __init__(self, config: dict):
        self.config = config
        self.hash = config_hash(config)
        self.root = Path(config["paths"]["run_root"]) / self.hash

    @property
    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    @property
    def encoders_dir(self) -> Path:
        return self.root

    @property
    def triplets_path(self) -> Path:
        return self.root / "triplets.json"

    @property
    def checkpoint_dir(self) -> Path:
        return self.root / "checkpoint"

    @property
    def samples_dir(self) -> Path:
        return self.root / "samples"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    def write_config_echo(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "config.json").write_bytes(canonical_bytes(self.config))
