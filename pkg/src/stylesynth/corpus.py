"""Synthetic corpus: tiny procedural "images" with known content and style factors.

Every item is generated from an explicit content description (shape class,
position, size) and style description (brightness, contrast, tint, texture
frequency). Two render modes exist:

* ``linear``: item = W_c @ gamma + W_s @ sigma with fixed mutually orthogonal
  mixing matrices. Exactly invertible, used wherever tests need algebraic
  ground truth.
* ``render``: a 12x12 RGB raster of a soft shape mask with texture and
  tinting, values in [0, 1]. Used for visual demos and color metrics.

Items are split into three pools: generation targets, a style exemplar pool,
and a neutral-style semantics pool.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

ROLES = ("target", "style_db", "semantics_db")
SHAPES = ("disk", "square", "triangle", "cross", "ring")

RENDER_GRID = (12, 12, 3)
LINEAR_GRID = (8, 8, 1)

CONTENT_DIM = 8  # one-hot shape (5) + center_x + center_y + size
STYLE_DIM = 6  # brightness, contrast, tint_r, tint_g, tint_b, texture_freq

CENTER_RANGE = (0.2, 0.8)
SIZE_RANGE = (0.15, 0.35)
BRIGHTNESS_RANGE = (0.0, 1.0)
CONTRAST_RANGE = (0.5, 2.0)
TINT_RANGE = (0.25, 1.0)
TEXTURE_FREQ_RANGE = (0.0, 4.0)

#: Neutral style used for every semantics-pool item.
NEUTRAL_STYLE = (0.5, 1.0, 1.0, 1.0, 1.0, 0.0)

_MASK_SHARPNESS = 20.0
_MIX_SEED = 0  # linear-mode mixing matrices are fixed, independent of corpus seed


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class ContentFactors:
    shape_class: int
    center_x: float
    center_y: float
    size: float

    def validate(self) -> None:
        if not 0 <= self.shape_class < len(SHAPES):
            raise CorpusError(f"shape_class {self.shape_class} outside 0..{len(SHAPES) - 1}")
        for name, value, (lo, hi) in (
            ("center_x", self.center_x, CENTER_RANGE),
            ("center_y", self.center_y, CENTER_RANGE),
            ("size", self.size, SIZE_RANGE),
        ):
            if not lo <= value <= hi:
                raise CorpusError(f"{name}={value} outside [{lo}, {hi}]")

    def encode(self) -> np.ndarray:
        """Encode as an 8-vector: one-hot shape block then the continuous fields."""
        vec = np.zeros(CONTENT_DIM)
        vec[self.shape_class] = 1.0
        vec[5:] = (self.center_x, self.center_y, self.size)
        return vec

    @classmethod
    def from_array(cls, gamma: np.ndarray) -> "ContentFactors":
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (CONTENT_DIM,):
            raise CorpusError(f"content encoding must have shape ({CONTENT_DIM},)")
        return cls(
            shape_class=int(np.argmax(gamma[:5])),
            center_x=float(gamma[5]),
            center_y=float(gamma[6]),
            size=float(gamma[7]),
        )


@dataclass(frozen=True)
class StyleFactors:
    brightness: float
    contrast: float
    tint_r: float
    tint_g: float
    tint_b: float
    texture_freq: float

    def validate(self) -> None:
        for name, value, (lo, hi) in (
            ("brightness", self.brightness, BRIGHTNESS_RANGE),
            ("contrast", self.contrast, CONTRAST_RANGE),
            ("tint_r", self.tint_r, TINT_RANGE),
            ("tint_g", self.tint_g, TINT_RANGE),
            ("tint_b", self.tint_b, TINT_RANGE),
            ("texture_freq", self.texture_freq, TEXTURE_FREQ_RANGE),
        ):
            if not lo <= value <= hi:
                raise CorpusError(f"{name}={value} outside [{lo}, {hi}]")

    def encode(self) -> np.ndarray:
        return np.array(
            [self.brightness, self.contrast, self.tint_r, self.tint_g, self.tint_b, self.texture_freq]
        )

    @classmethod
    def from_array(cls, sigma: np.ndarray) -> "StyleFactors":
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (STYLE_DIM,):
            raise CorpusError(f"style encoding must have shape ({STYLE_DIM},)")
        return cls(*(float(v) for v in sigma))

    @classmethod
    def neutral(cls) -> "StyleFactors":
        return cls(*NEUTRAL_STYLE)


@dataclass(frozen=True)
class Item:
    """A flat pixel vector plus its grid shape metadata."""

    data: np.ndarray
    mode: str
    grid: tuple[int, int, int]

    def __post_init__(self):
        h, w, c = self.grid
        if self.data.shape != (h * w * c,):
            raise CorpusError(f"data length {self.data.shape} does not match grid {self.grid}")

    @property
    def pixels(self) -> np.ndarray:
        """Pixel view of shape (H*W, C)."""
        h, w, c = self.grid
        return self.data.reshape(h * w, c)


def grid_for_mode(mode: str) -> tuple[int, int, int]:
    if mode == "linear":
        return LINEAR_GRID
    if mode == "render":
        return RENDER_GRID
    raise CorpusError(f"unknown mode {mode!r}")


@lru_cache(maxsize=1)
def mixing_matrices() -> tuple[np.ndarray, np.ndarray]:
    """Fixed linear-mode mixing matrices (content 64x8, style 64x6).

    Drawn once from a fixed seed and orthonormalized jointly, so the two
    column spaces are orthonormal and mutually orthogonal.
    """
    d = LINEAR_GRID[0] * LINEAR_GRID[1] * LINEAR_GRID[2]
    rng = np.random.default_rng(_MIX_SEED)
    raw = rng.standard_normal((d, CONTENT_DIM + STYLE_DIM))
    q, _ = np.linalg.qr(raw)
    return q[:, :CONTENT_DIM].copy(), q[:, CONTENT_DIM:].copy()


def render_linear(gamma: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Linear-mode pixel vector W_c @ gamma + W_s @ sigma for raw encodings."""
    w_c, w_s = mixing_matrices()
    return w_c @ np.asarray(gamma, dtype=float) + w_s @ np.asarray(sigma, dtype=float)


def _signed_distance(shape_class: int, du: np.ndarray, dv: np.ndarray, size: float) -> np.ndarray:
    """Inside-positive signed distance of the shape boundary, in grid units."""
    name = SHAPES[shape_class]
    if name == "disk":
        return size - np.hypot(du, dv)
    if name == "square":
        return size - np.maximum(np.abs(du), np.abs(dv))
    if name == "triangle":
        # Upright triangle: apex at (0, -size), base corners at (+-0.866*size, +0.5*size).
        f_right = -0.866 * du + 0.5 * (dv + size)
        f_left = 0.866 * du + 0.5 * (dv + size)
        f_base = 0.5 * size - dv
        return np.minimum(np.minimum(f_left, f_right), f_base)
    if name == "cross":
        arm = size / 3.0
        bar_h = np.minimum(size - np.abs(du), arm - np.abs(dv))
        bar_v = np.minimum(arm - np.abs(du), size - np.abs(dv))
        return np.maximum(bar_h, bar_v)
    if name == "ring":
        r = np.hypot(du, dv)
        return np.minimum(size - r, r - 0.6 * size)
    raise CorpusError(f"unknown shape class {shape_class}")


def render_raster(content: ContentFactors, style: StyleFactors) -> np.ndarray:
    """Render-mode raster of shape RENDER_GRID, values in [0, 1].

    Per-channel value is ``clip01(tint_ch * (brightness + contrast * (M*T - 0.5) + 0.5))``
    where M is a logistic soft mask of the shape's signed distance and T a
    diagonal sine texture.
    """
    h, w, _ = RENDER_GRID
    v, u = np.meshgrid(
        (np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij"
    )
    sd = _signed_distance(content.shape_class, u - content.center_x, v - content.center_y, content.size)
    mask = 1.0 / (1.0 + np.exp(-_MASK_SHARPNESS * sd))
    texture = 0.5 + 0.5 * np.sin(2.0 * np.pi * style.texture_freq * (u + v))
    base = style.brightness + style.contrast * (mask * texture - 0.5) + 0.5
    tints = (style.tint_r, style.tint_g, style.tint_b)
    channels = [np.clip(t * base, 0.0, 1.0) for t in tints]
    return np.stack(channels, axis=-1)


def render(content: ContentFactors, style: StyleFactors, mode: str) -> Item:
    """Deterministically render one item from its factors."""
    content.validate()
    style.validate()
    if mode == "linear":
        data = render_linear(content.encode(), style.encode())
        return Item(data=data, mode=mode, grid=LINEAR_GRID)
    if mode == "render":
        return Item(data=render_raster(content, style).ravel(), mode=mode, grid=RENDER_GRID)
    raise CorpusError(f"unknown mode {mode!r}")


_ROLE_CODES = {role: i for i, role in enumerate(ROLES)}


def sample_factors(seed: int, n: int, role: str) -> list[tuple[ContentFactors, StyleFactors]]:
    """Draw ``n`` factor pairs for a pool, uniform over the declared ranges.

    Deterministic given (seed, n, role). Semantics-pool items always carry the
    neutral style.
    """
    if n < 1:
        raise CorpusError("n must be >= 1")
    if role not in _ROLE_CODES:
        raise CorpusError(f"unknown role {role!r}")
    rng = np.random.default_rng([seed, _ROLE_CODES[role]])
    shape = rng.integers(0, len(SHAPES), size=n)
    cx = rng.uniform(*CENTER_RANGE, size=n)
    cy = rng.uniform(*CENTER_RANGE, size=n)
    size = rng.uniform(*SIZE_RANGE, size=n)
    brightness = rng.uniform(*BRIGHTNESS_RANGE, size=n)
    contrast = rng.uniform(*CONTRAST_RANGE, size=n)
    tints = rng.uniform(*TINT_RANGE, size=(n, 3))
    freq = rng.uniform(*TEXTURE_FREQ_RANGE, size=n)
    out = []
    for i in range(n):
        content = ContentFactors(int(shape[i]), float(cx[i]), float(cy[i]), float(size[i]))
        if role == "semantics_db":
            style = StyleFactors.neutral()
        else:
            style = StyleFactors(
                float(brightness[i]),
                float(contrast[i]),
                float(tints[i, 0]),
                float(tints[i, 1]),
                float(tints[i, 2]),
                float(freq[i]),
            )
        out.append((content, style))
    return out


@dataclass(frozen=True)
class CorpusConfig:
    mode: str = "linear"
    n_target: int = 2000
    n_style: int = 2000
    n_semantics: int = 2000

    def counts(self) -> dict[str, int]:
        return {"target": self.n_target, "style_db": self.n_style, "semantics_db": self.n_semantics}


@dataclass
class CorpusBundle:
    """All corpus items with their factors, role tags, and provenance seed."""

    mode: str
    grid: tuple[int, int, int]
    seed: int
    data: np.ndarray  # (N, D) float64
    gamma: np.ndarray  # (N, 8)
    sigma: np.ndarray  # (N, 6)
    roles: np.ndarray  # (N,) int8 index into ROLES

    def __post_init__(self):
        n = self.data.shape[0]
        if not (self.gamma.shape[0] == self.sigma.shape[0] == self.roles.shape[0] == n):
            raise CorpusError("item, factor, and role arrays must have equal length")
        neutral = np.array(NEUTRAL_STYLE)
        sem = self.sigma[self.roles == _ROLE_CODES["semantics_db"]]
        if sem.size and not np.array_equal(sem, np.tile(neutral, (sem.shape[0], 1))):
            raise CorpusError("semantics_db items must use the neutral style")

    def __len__(self) -> int:
        return self.data.shape[0]

    def ids_for_role(self, role: str) -> np.ndarray:
        return np.flatnonzero(self.roles == _ROLE_CODES[role])

    def role_of(self, item_id: int) -> str:
        return ROLES[int(self.roles[item_id])]

    def item(self, item_id: int) -> Item:
        return Item(data=self.data[item_id].copy(), mode=self.mode, grid=self.grid)

    def factors(self, item_id: int) -> tuple[ContentFactors, StyleFactors]:
        return (
            ContentFactors.from_array(self.gamma[item_id]),
            StyleFactors.from_array(self.sigma[item_id]),
        )

    # -- container format: manifest.json + items.f32 -------------------------

    def _manifest(self) -> dict:
        return {
            "mode": self.mode,
            "grid": list(self.grid),
            "seed": int(self.seed),
            "counts": {role: int(np.sum(self.roles == code)) for role, code in _ROLE_CODES.items()},
            "roles": [ROLES[int(r)] for r in self.roles],
            "gamma": [[float(v) for v in row] for row in self.gamma],
            "sigma": [[float(v) for v in row] for row in self.sigma],
        }

    def manifest_bytes(self) -> bytes:
        return json.dumps(self._manifest(), sort_keys=True, separators=(",", ":")).encode()

    def payload_bytes(self) -> bytes:
        return self.data.astype("<f4").tobytes()

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.manifest_bytes())
        digest.update(self.payload_bytes())
        return digest.hexdigest()

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "manifest.json").write_bytes(self.manifest_bytes())
        (directory / "items.f32").write_bytes(self.payload_bytes())
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "CorpusBundle":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        grid = tuple(manifest["grid"])
        d = grid[0] * grid[1] * grid[2]
        raw = np.frombuffer((directory / "items.f32").read_bytes(), dtype="<f4")
        data = raw.astype(np.float64).reshape(-1, d)
        roles = np.array([_ROLE_CODES[r] for r in manifest["roles"]], dtype=np.int8)
        return cls(
            mode=manifest["mode"],
            grid=grid,  # type: ignore[arg-type]
            seed=int(manifest["seed"]),
            data=data,
            gamma=np.array(manifest["gamma"], dtype=np.float64).reshape(len(roles), CONTENT_DIM),
            sigma=np.array(manifest["sigma"], dtype=np.float64).reshape(len(roles), STYLE_DIM),
            roles=roles,
        )


def build_corpus(config: CorpusConfig, seed: int) -> CorpusBundle:
    """Generate the three role pools deterministically from (config, seed)."""
    for name, count in config.counts().items():
        if count <= 0:
            raise CorpusError(f"count for {name} must be positive, got {count}")
    grid = grid_for_mode(config.mode)
    data_rows, gamma_rows, sigma_rows, role_rows = [], [], [], []
    for role in ROLES:
        for content, style in sample_factors(seed, config.counts()[role], role):
            item = render(content, style, config.mode)
            data_rows.append(item.data)
            gamma_rows.append(content.encode())
            sigma_rows.append(style.encode())
            role_rows.append(_ROLE_CODES[role])
    return CorpusBundle(
        mode=config.mode,
        grid=grid,
        seed=seed,
        data=np.array(data_rows),
        gamma=np.array(gamma_rows),
        sigma=np.array(sigma_rows),
        roles=np.array(role_rows, dtype=np.int8),
    )
