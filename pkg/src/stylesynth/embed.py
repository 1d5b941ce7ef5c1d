"""Frozen modality encoders fitted once on a corpus.

Three affine maps cover the roles a full-scale system delegates to pretrained
networks: a principal-component autoencoder defining the diffusion latent
space, a content encoder recovering content factors, and a style encoder
recovering style factors. All are plain matrices, so they are trivially
differentiable and can sit inside a training graph as constants.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusBundle, Item

DEFAULT_LATENT_DIM = {"linear": 8, "render": 16}


class EmbedError(ValueError):
    pass


def _apply_affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # einsum keeps the contraction order identical for single items and
    # batches, so both paths agree bit for bit.
    if x.shape[-1] != weight.shape[1]:
        raise EmbedError(f"input dim {x.shape[-1]} != weight dim {weight.shape[1]}")
    return np.einsum("...i,ji->...j", x, weight) + bias


@dataclass(frozen=True)
class Autoencoder:
    """PCA autoencoder: encode(x) = basis.T @ (x - mean), decode(z) = basis @ z + mean."""

    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (D, d), orthonormal columns
    achieved_rank: int

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[1]

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.basis.shape[0]:
            raise EmbedError(f"input dim {x.shape[-1]} != data dim {self.basis.shape[0]}")
        return np.einsum("...i,ij->...j", x - self.mean, self.basis)

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.basis.shape[1]:
            raise EmbedError(f"latent dim {z.shape[-1]} != basis dim {self.basis.shape[1]}")
        return np.einsum("...i,ji->...j", z, self.basis) + self.mean


@dataclass(frozen=True)
class ContentEncoder:
    weight: np.ndarray  # (8, D)
    bias: np.ndarray  # (8,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return _apply_affine(np.asarray(x, dtype=float), self.weight, self.bias)


@dataclass(frozen=True)
class StyleEncoder:
    weight: np.ndarray  # (6, D)
    bias: np.ndarray  # (6,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return _apply_affine(np.asarray(x, dtype=float), self.weight, self.bias)


def fit_autoencoder(bundle: CorpusBundle, d: int) -> Autoencoder:
    """Fit the top-``d`` principal directions of the corpus.

    Column signs are fixed so the largest-magnitude entry of each column is
    positive. If the corpus has rank below ``d`` the fit still returns ``d``
    orthonormal columns but warns with the achieved rank.
    """
    x = bundle.data
    n, dim = x.shape
    if d > dim:
        raise EmbedError(f"d={d} exceeds data dimension {dim}")
    if n < d:
        raise EmbedError(f"corpus has {n} items, need at least d={d}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-10)) if s.size else 0
    if rank < d:
        warnings.warn(f"corpus rank {rank} is below requested latent dim {d}", stacklevel=2)
    basis = vt[:d].T.copy()
    for j in range(d):
        col = basis[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            basis[:, j] = -col
    return Autoencoder(mean=mean, basis=basis, achieved_rank=rank)


def _ridge_fit(x: np.ndarray, y: np.ndarray, ridge: float) -> tuple[np.ndarray, np.ndarray]:
    """Ridge regression of y on x with intercept; returns (weight, bias)."""
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc
    rhs = xc.T @ yc
    attempt = ridge
    for _ in range(8):
        try:
            weight = np.linalg.solve(gram + attempt * np.eye(gram.shape[0]), rhs).T
            break
        except np.linalg.LinAlgError:
            attempt *= 10.0
            warnings.warn(f"normal equations singular, raising ridge to {attempt}", stacklevel=3)
    else:
        raise EmbedError("ridge fit failed even with inflated regularization")
    bias = y_mean - weight @ x_mean
    return weight, bias


def fit_encoders(bundle: CorpusBundle, ridge: float = 1e-6) -> tuple[ContentEncoder, StyleEncoder]:
    """Fit the content and style encoders by ridge regression onto the factors."""
    cw, cb = _ridge_fit(bundle.data, bundle.gamma, ridge)
    sw, sb = _ridge_fit(bundle.data, bundle.sigma, ridge)
    return ContentEncoder(weight=cw, bias=cb), StyleEncoder(weight=sw, bias=sb)


def embed_content(encoder: ContentEncoder, item: Item | np.ndarray) -> np.ndarray:
    data = item.data if isinstance(item, Item) else item
    return encoder(data)


def embed_style(encoder: StyleEncoder, item: Item | np.ndarray) -> np.ndarray:
    data = item.data if isinstance(item, Item) else item
    return encoder(data)


def similarity(u: np.ndarray, v: np.ndarray, metric: str = "cosine") -> float:
    """Similarity between two vectors: cosine in [-1, 1] or negative MSE."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise EmbedError(f"shape mismatch {u.shape} vs {v.shape}")
    if metric == "cosine":
        nu = float(np.linalg.norm(u))
        nv = float(np.linalg.norm(v))
        if nu == 0.0 or nv == 0.0:
            raise EmbedError("cosine similarity undefined for zero-norm input")
        return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
    if metric == "neg_mse":
        return float(-np.mean((u - v) ** 2))
    raise EmbedError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class EncoderBundle:
    """Fitted, frozen encoder set plus the hash of the corpus it came from."""

    autoencoder: Autoencoder
    content: ContentEncoder
    style: StyleEncoder
    mode: str
    corpus_hash: str

    @property
    def latent_dim(self) -> int:
        return self.autoencoder.latent_dim

    def _arrays(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("ae_mean", self.autoencoder.mean),
            ("ae_basis", self.autoencoder.basis),
            ("content_weight", self.content.weight),
            ("content_bias", self.content.bias),
            ("style_weight", self.style.weight),
            ("style_bias", self.style.bias),
        ]

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = self._arrays()
        manifest = {
            "mode": self.mode,
            "corpus_hash": self.corpus_hash,
            "achieved_rank": self.autoencoder.achieved_rank,
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        }
        payload = b"".join(a.astype("<f4").tobytes() for _, a in arrays)
        (directory / "encoders.json").write_text(
            json.dumps(manifest, sort_keys=True, separators=(",", ":"))
        )
        (directory / "encoders.f32").write_bytes(payload)
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "EncoderBundle":
        directory = Path(directory)
        manifest = json.loads((directory / "encoders.json").read_text())
        raw = np.frombuffer((directory / "encoders.f32").read_bytes(), dtype="<f4")
        arrays = {}
        offset = 0
        for spec in manifest["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            arrays[spec["name"]] = raw[offset : offset + count].astype(np.float64).reshape(shape)
            offset += count
        return cls(
            autoencoder=Autoencoder(
                mean=arrays["ae_mean"],
                basis=arrays["ae_basis"],
                achieved_rank=int(manifest["achieved_rank"]),
            ),
            content=ContentEncoder(weight=arrays["content_weight"], bias=arrays["content_bias"]),
            style=StyleEncoder(weight=arrays["style_weight"], bias=arrays["style_bias"]),
            mode=manifest["mode"],
            corpus_hash=manifest["corpus_hash"],
        )

    def file_hash(self, directory: str | Path) -> str:
        directory = Path(directory)
        digest = hashlib.sha256()
        digest.update((directory / "encoders.json").read_bytes())
        digest.update((directory / "encoders.f32").read_bytes())
        return digest.hexdigest()


def fit_encoder_bundle(bundle: CorpusBundle, d: int | None = None, ridge: float = 1e-6) -> EncoderBundle:
    """Fit autoencoder plus both factor encoders on one corpus and freeze them."""
    if d is None:
        d = DEFAULT_LATENT_DIM[bundle.mode]
    ae = fit_autoencoder(bundle, d)
    content, style = fit_encoders(bundle, ridge)
    return EncoderBundle(
        autoencoder=ae,
        content=content,
        style=style,
        mode=bundle.mode,
        corpus_hash=bundle.content_hash(),
    )
