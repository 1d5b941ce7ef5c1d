"""Forward process, conditional denoiser, and the training loop.

The denoiser is a residual token-conditioned network over the autoencoder
latent: the noisy latent and a sinusoidal time embedding are projected to a
hidden width, pass through residual blocks that each apply an MLP and
cross-attention over two condition tokens, and map back to a noise estimate.
Token 1 carries the style condition (style embedding pushed through a small
projector into token space, or a learned null token), token 2 the content
condition (content embedding or its null token); each token gets its own
learned modality embedding added.

Training minimizes the noise-prediction loss plus two modality losses that
push the one-step reconstruction's style and content embeddings toward the
mined exemplars' embeddings.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import diffnet
from .corpus import CONTENT_DIM, STYLE_DIM, CorpusBundle
from .diffnet import Node, ParamStore, Tape, adam_step, time_embed
from .embed import EncoderBundle
from .mine import Triplet, TripletSet


class DiffusionError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Diffusion constants, 1-indexed by timestep t in [1, T]."""

    t_steps: int
    beta: np.ndarray  # (T,) beta_t at index t-1
    alpha_bar: np.ndarray  # (T,) cumulative product of (1 - beta)
    sigma: np.ndarray  # (T,) posterior stddev, sigma_1 = 0

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.t_steps:
            raise DiffusionError(f"t={t} outside [1, {self.t_steps}]")

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def sigma_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.sigma[t - 1])


def make_schedule(t_steps: int = 50, beta_start: float = 1e-3, beta_end: float = 0.2) -> Schedule:
    """Linear beta schedule with the usual posterior sigmas (sigma_1 = 0)."""
    if t_steps < 2:
        raise DiffusionError("schedule needs at least 2 steps")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise DiffusionError(f"invalid beta bounds ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, t_steps)
    alpha_bar = np.cumprod(1.0 - beta)
    sigma = np.zeros(t_steps)
    for t in range(2, t_steps + 1):
        sigma[t - 1] = np.sqrt(beta[t - 1] * (1.0 - alpha_bar[t - 2]) / (1.0 - alpha_bar[t - 1]))
    return Schedule(t_steps=t_steps, beta=beta, alpha_bar=alpha_bar, sigma=sigma)


def q_sample(schedule: Schedule, z0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """Noised latent sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.

    ``t`` may be an int (applied to all rows) or a per-row integer array.
    """
    z0 = np.asarray(z0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != z0.shape:
        raise DiffusionError(f"eps shape {eps.shape} != z0 shape {z0.shape}")
    if np.isscalar(t) or isinstance(t, (int, np.integer)):
        abar = schedule.alpha_bar_at(int(t))
        return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.t_steps):
        raise DiffusionError("t outside [1, T]")
    abar = schedule.alpha_bar[t - 1][:, None]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


# ---------------------------------------------------------------------------
# denoiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenoiserConfig:
    latent_dim: int
    hidden: int = 128
    time_dim: int = 32
    token_dim: int = CONTENT_DIM
    d_k: int = 32
    d_v: int = 1
    blocks: int = 2
    proj_hidden: int = 32
    style_dim: int = STYLE_DIM
    use_projector: bool = True

    def as_dict(self) -> dict:
        return asdict(self)


class Denoiser:
    """Parameter layout and forward graph of the conditional noise estimator."""

    def __init__(self, cfg: DenoiserConfig):
        self.cfg = cfg

    def init_params(self, store: ParamStore) -> None:
        c = self.cfg
        store.create("time_proj/w", (c.time_dim, c.time_dim))
        store.create("time_proj/b", (c.time_dim,), init="zeros")
        store.create("in_proj/w", (c.hidden, c.latent_dim + c.time_dim))
        store.create("in_proj/b", (c.hidden,), init="zeros")
        for i in range(c.blocks):
            store.create(f"block{i}/mlp/w", (c.hidden, c.hidden))
            store.create(f"block{i}/mlp/b", (c.hidden,), init="zeros")
            store.create(f"block{i}/ln/gain", (c.hidden,), init="ones")
            store.create(f"block{i}/ln/bias", (c.hidden,), init="zeros")
            store.create(f"block{i}/attn/wq", (c.d_k, c.hidden))
            store.create(f"block{i}/attn/wk", (c.d_k, c.token_dim))
            store.create(f"block{i}/attn/wv", (c.d_v, c.token_dim))
            store.create(f"block{i}/attn/wo", (c.hidden, c.d_v))
        store.create("head/w", (c.latent_dim, c.hidden))
        store.create("head/b", (c.latent_dim,), init="zeros")
        store.create("proj/w1", (c.proj_hidden, c.style_dim))
        store.create("proj/b1", (c.proj_hidden,), init="zeros")
        store.create("proj/w2", (c.token_dim, c.proj_hidden))
        store.create("proj/b2", (c.token_dim,), init="zeros")
        store.create("null_style", (c.token_dim,))
        store.create("null_content", (c.token_dim,))
        store.create("embed_style", (c.token_dim,))
        store.create("embed_content", (c.token_dim,))

    def project_style(self, p: dict[str, Node], a: Node) -> Node:
        """Style embedding -> token space through the two-layer projector."""
        hidden = diffnet.silu(diffnet.affine(p["proj/w1"], p["proj/b1"], a))
        return diffnet.affine(p["proj/w2"], p["proj/b2"], hidden)

    def _style_token(self, tape, p, batch, style_a, style_m, style_mask) -> Node:
        c = self.cfg
        null = p["null_style"]
        if style_a is None and style_m is None:
            cond = None
        elif style_m is not None:
            cond = style_m if isinstance(style_m, Node) else tape.constant(np.atleast_2d(style_m))
        else:
            a = style_a if isinstance(style_a, Node) else tape.constant(np.atleast_2d(style_a))
            if c.use_projector:
                cond = self.project_style(p, a)
            else:
                # Ablation: zero-pad the raw style embedding into token space.
                pad = np.zeros((c.token_dim, c.style_dim))
                pad[: c.style_dim, : c.style_dim] = np.eye(c.style_dim)
                cond = diffnet.affine(tape.constant(pad), None, a)
        if cond is None:
            token = diffnet.tile_rows(null, batch)
        elif style_mask is not None:
            token = diffnet.lerp_rows(style_mask, cond, null)
        else:
            token = cond
        return diffnet.add(token, diffnet.tile_rows(p["embed_style"], batch))

    def _content_token(self, tape, p, batch, content, content_mask) -> Node:
        null = p["null_content"]
        if content is None:
            token = diffnet.tile_rows(null, batch)
        else:
            cond = content if isinstance(content, Node) else tape.constant(np.atleast_2d(content))
            token = diffnet.lerp_rows(content_mask, cond, null) if content_mask is not None else cond
        return diffnet.add(token, diffnet.tile_rows(p["embed_content"], batch))

    def forward(
        self,
        tape: Tape,
        p: dict[str, Node],
        z_t: np.ndarray,
        t,
        style_a=None,
        style_m=None,
        content=None,
        style_mask: np.ndarray | None = None,
        content_mask: np.ndarray | None = None,
    ) -> Node:
        """Noise estimate for a batch.

        ``z_t`` is (B, d). ``t`` is an int or (B,) array. Style conditioning is
        given either as raw style embeddings ``style_a`` (B, style_dim) routed
        through the projector, or as pre-projected tokens ``style_m``
        (B, token_dim); None means the null token. ``content`` is (B, token_dim)
        or None. Masks are (B, 1) arrays of 0/1 selecting condition (1) or
        null (0) per row; they let one batch mix dropped and kept conditions.
        """
        c = self.cfg
        z_t = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
        batch = z_t.shape[0]
        if z_t.shape[1] != c.latent_dim:
            raise DiffusionError(f"z_t dim {z_t.shape[1]} != latent dim {c.latent_dim}")
        t_arr = np.full(batch, t, dtype=float) if np.isscalar(t) else np.asarray(t, dtype=float)
        te = np.stack([time_embed(float(tv), c.time_dim) for tv in t_arr])

        token_style = self._style_token(tape, p, batch, style_a, style_m, style_mask)
        token_content = self._content_token(tape, p, batch, content, content_mask)
        tokens = diffnet.stack_pair(token_style, token_content)

        te_node = diffnet.silu(diffnet.affine(p["time_proj/w"], p["time_proj/b"], tape.constant(te)))
        inp = diffnet.concat_cols(tape.constant(z_t), te_node)
        h = diffnet.affine(p["in_proj/w"], p["in_proj/b"], inp)
        for i in range(c.blocks):
            u = diffnet.silu(diffnet.affine(p[f"block{i}/mlp/w"], p[f"block{i}/mlp/b"], h))
            u = diffnet.layernorm(u, p[f"block{i}/ln/gain"], p[f"block{i}/ln/bias"])
            h = diffnet.add(h, u)
            h = diffnet.cross_attention(
                h,
                tokens,
                p[f"block{i}/attn/wq"],
                p[f"block{i}/attn/wk"],
                p[f"block{i}/attn/wv"],
                p[f"block{i}/attn/wo"],
            )
        return diffnet.affine(p["head/w"], p["head/b"], h)


def denoiser_forward(
    store: ParamStore,
    denoiser: Denoiser,
    z_t: np.ndarray,
    t,
    style=None,
    content=None,
) -> np.ndarray:
    """Inference-only forward pass; returns the noise estimate array.

    ``style`` may be None (null token), a style embedding of length
    ``style_dim`` (projected), or a token-space vector of length
    ``token_dim``. ``content`` may be None or a content embedding.

    Runs a plain numpy transcription of the graph forward (same operations in
    the same order, so results are bit-identical); sampling loops call this
    thousands of times and the tape bookkeeping would dominate.
    """
    c = denoiser.cfg
    v = store.values
    z_t = np.asarray(z_t, dtype=np.float64)
    single = z_t.ndim == 1
    z2 = np.atleast_2d(z_t)
    batch = z2.shape[0]
    if z2.shape[1] != c.latent_dim:
        raise DiffusionError(f"z_t dim {z2.shape[1]} != latent dim {c.latent_dim}")

    if style is None:
        token_style = np.broadcast_to(v["null_style"], (batch, c.token_dim)).copy()
    else:
        vec = np.atleast_2d(np.asarray(style, dtype=np.float64))
        if vec.shape[1] == c.style_dim:
            if c.use_projector:
                hidden = vec @ v["proj/w1"].T + v["proj/b1"]
                hidden = hidden * _np_sigmoid(hidden)
                token_style = hidden @ v["proj/w2"].T + v["proj/b2"]
            else:
                token_style = np.zeros((batch, c.token_dim))
                token_style[:, : c.style_dim] = vec
        elif vec.shape[1] == c.token_dim:
            token_style = vec
        else:
            raise DiffusionError(f"style condition dim {vec.shape[1]} unsupported")
    token_style = token_style + v["embed_style"]

    if content is None:
        token_content = np.broadcast_to(v["null_content"], (batch, c.token_dim)).copy()
    else:
        token_content = np.atleast_2d(np.asarray(content, dtype=np.float64))
    token_content = token_content + v["embed_content"]
    tokens = np.stack([token_style, token_content], axis=1)

    t_arr = np.full(batch, t, dtype=float) if np.isscalar(t) else np.asarray(t, dtype=float)
    te = np.stack([time_embed(float(tv), c.time_dim) for tv in t_arr])
    te = te @ v["time_proj/w"].T + v["time_proj/b"]
    te = te * _np_sigmoid(te)
    inp = np.concatenate([z2, te], axis=-1)
    h = inp @ v["in_proj/w"].T + v["in_proj/b"]
    for i in range(c.blocks):
        u = h @ v[f"block{i}/mlp/w"].T + v[f"block{i}/mlp/b"]
        u = u * _np_sigmoid(u)
        mu = u.mean(axis=-1, keepdims=True)
        uc = u - mu
        inv = 1.0 / np.sqrt((uc * uc).mean(axis=-1, keepdims=True) + 1e-12)
        u = (uc * inv) * v[f"block{i}/ln/gain"] + v[f"block{i}/ln/bias"]
        h = h + u
        q = h @ v[f"block{i}/attn/wq"].T
        k = tokens @ v[f"block{i}/attn/wk"].T
        val = tokens @ v[f"block{i}/attn/wv"].T
        scores = np.einsum("bk,bmk->bm", q, k) * (1.0 / np.sqrt(c.d_k))
        shifted = np.exp(scores - scores.max(axis=-1, keepdims=True))
        att = shifted / shifted.sum(axis=-1, keepdims=True)
        mix = np.einsum("bm,bmv->bv", att, val)
        h = h + mix @ v[f"block{i}/attn/wo"].T
    out = h @ v["head/w"].T + v["head/b"]
    return out[0] if single else out


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def denoiser_forward_graph(
    store: ParamStore,
    denoiser: Denoiser,
    z_t: np.ndarray,
    t,
    style=None,
    content=None,
) -> np.ndarray:
    """Tape-based forward with the same contract as denoiser_forward."""
    tape = Tape()
    p = store.wrap_constants(tape)
    single = np.asarray(z_t).ndim == 1
    style_a = style_m = None
    if style is not None:
        style = np.asarray(style, dtype=np.float64)
        vec = np.atleast_2d(style)
        if vec.shape[1] == denoiser.cfg.style_dim:
            style_a = vec
        elif vec.shape[1] == denoiser.cfg.token_dim:
            style_m = vec
        else:
            raise DiffusionError(f"style condition dim {vec.shape[1]} unsupported")
    if content is not None:
        content = np.atleast_2d(np.asarray(content, dtype=np.float64))
    out = denoiser.forward(tape, p, z_t, t, style_a=style_a, style_m=style_m, content=content)
    return out.value[0] if single else out.value


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch: int = 32
    lr: float = 1e-3
    omega_s: float = 0.02
    omega_y: float = 0.02
    drop_p: float = 0.25
    joint_dropout: bool = False
    seed: int = 7
    t_steps: int = 50
    beta_start: float = 1e-3
    beta_end: float = 0.2
    log_every: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.drop_p <= 1.0:
            raise DiffusionError("drop_p must lie in [0, 1]")
        if self.omega_s < 0 or self.omega_y < 0:
            raise DiffusionError("loss weights must be >= 0")
        if self.batch < 1 or self.steps < 0:
            raise DiffusionError("invalid batch/steps")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    l_dm: float
    l_s: float
    l_y: float
    total: float


class Trainer:
    """Owns one training run: corpus, frozen encoders, triplets, parameters."""

    def __init__(
        self,
        cfg: TrainConfig,
        denoiser_cfg: DenoiserConfig,
        bundle: CorpusBundle,
        encoders: EncoderBundle,
        triplets: list[Triplet],
        store: ParamStore | None = None,
    ):
        cfg.validate()
        if not triplets:
            raise DiffusionError("no triplets to train on")
        self.cfg = cfg
        self.denoiser = Denoiser(denoiser_cfg)
        self.schedule = make_schedule(cfg.t_steps, cfg.beta_start, cfg.beta_end)
        self.encoders = encoders
        self.triplets = triplets
        if store is None:
            store = ParamStore(seed=cfg.seed)
            self.denoiser.init_params(store)
        self.store = store

        ae = encoders.autoencoder
        self.z0_all = ae.encode(bundle.data)  # (N, d)
        self.a_all = encoders.style(bundle.data)  # (N, 6)
        self.c_all = encoders.content(bundle.data)  # (N, 8)
        self.x_ids = np.array([t.x_id for t in triplets])
        self.s_ids = np.array([t.s_id for t in triplets])
        self.y_ids = np.array([t.y_id for t in triplets])

    def _step_rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, 0x5EED, step])

    def training_step(self, step: int) -> LossBreakdown:
        """One optimization step; step indices start at 1."""
        cfg = self.cfg
        d = self.denoiser.cfg.latent_dim
        rng = self._step_rng(step)
        pick = rng.integers(0, len(self.triplets), size=cfg.batch)
        t_arr = rng.integers(1, self.schedule.t_steps + 1, size=cfg.batch)
        eps = rng.standard_normal((cfg.batch, d))
        if cfg.joint_dropout:
            keep = (rng.random(cfg.batch) >= cfg.drop_p).astype(float)[:, None]
            style_mask = content_mask = keep
        else:
            draws = rng.random((cfg.batch, 2))
            style_mask = (draws[:, 0] >= cfg.drop_p).astype(float)[:, None]
            content_mask = (draws[:, 1] >= cfg.drop_p).astype(float)[:, None]

        z0 = self.z0_all[self.x_ids[pick]]
        z_t = q_sample(self.schedule, z0, t_arr, eps)
        a_s = self.a_all[self.s_ids[pick]]
        c_y = self.c_all[self.y_ids[pick]]

        tape = Tape()
        p = self.store.wrap(tape)
        eps_hat = self.denoiser.forward(
            tape, p, z_t, t_arr, style_a=a_s, content=c_y,
            style_mask=style_mask, content_mask=content_mask,
        )
        l_dm = diffnet.mse(eps_hat, tape.constant(eps))

        # One-step reconstruction estimate feeds the modality losses.
        abar = self.schedule.alpha_bar[t_arr - 1][:, None]
        zhat0 = diffnet.mulc(
            diffnet.addc(diffnet.mulc(eps_hat, -np.sqrt(1.0 - abar)), z_t),
            1.0 / np.sqrt(abar),
        )
        ae = self.encoders.autoencoder
        xhat = diffnet.affine(tape.constant(ae.basis), tape.constant(ae.mean), zhat0)
        a_hat = diffnet.affine(
            tape.constant(self.encoders.style.weight), tape.constant(self.encoders.style.bias), xhat
        )
        c_hat = diffnet.affine(
            tape.constant(self.encoders.content.weight), tape.constant(self.encoders.content.bias), xhat
        )
        l_s = diffnet.mse(a_hat, tape.constant(a_s))
        l_y = diffnet.mse(c_hat, tape.constant(c_y))
        total_node = diffnet.add(
            l_dm, diffnet.add(diffnet.scale(l_s, cfg.omega_s), diffnet.scale(l_y, cfg.omega_y))
        )

        l_dm_v = float(l_dm.value)
        l_s_v = float(l_s.value)
        l_y_v = float(l_y.value)
        total_v = l_dm_v + cfg.omega_s * l_s_v + cfg.omega_y * l_y_v
        if not np.isfinite(total_v):
            raise TrainingDiverged(
                f"non-finite loss at step {step}: l_dm={l_dm_v} l_s={l_s_v} l_y={l_y_v}"
            )

        grads = tape.backward(total_node)
        adam_step(self.store, grads, lr=cfg.lr)
        return LossBreakdown(l_dm=l_dm_v, l_s=l_s_v, l_y=l_y_v, total=total_v)


CHECKPOINT_LOG = "train_log.csv"


def train(
    cfg: TrainConfig,
    denoiser_cfg: DenoiserConfig,
    bundle: CorpusBundle,
    encoders: EncoderBundle,
    triplet_set: TripletSet,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> Path:
    """Run (or resume) a training job and write checkpoint plus loss log.

    The per-step random streams are derived from (seed, step), so resuming
    from step k and training straight through produce bit-identical results.
    """
    corpus_hash = bundle.content_hash()
    if triplet_set.corpus_hash != corpus_hash:
        raise DiffusionError(
            f"triplet set was mined on corpus {triplet_set.corpus_hash[:12]}, got {corpus_hash[:12]}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    store = None
    start_step = 0
    if resume_from is not None:
        store, ckpt_cfg = diffnet.load_checkpoint(resume_from)
        # The step budget may grow on resume; everything else must match, since
        # per-step randomness is a pure function of (seed, step index).
        expected = {k: v for k, v in cfg.as_dict().items() if k != "steps"}
        recorded = {k: v for k, v in ckpt_cfg["train"].items() if k != "steps"}
        if recorded != expected or ckpt_cfg["denoiser"] != denoiser_cfg.as_dict():
            raise DiffusionError("resume config does not match checkpoint config")
        start_step = store.step

    trainer = Trainer(cfg, denoiser_cfg, bundle, encoders, triplet_set.triplets, store=store)
    log_path = out_dir / CHECKPOINT_LOG
    log_mode = "a" if resume_from is not None and log_path.exists() else "w"
    with open(log_path, log_mode, newline="") as fh:
        writer = csv.writer(fh)
        if log_mode == "w":
            writer.writerow(["step", "l_dm", "l_s", "l_y", "total"])
        for step in range(start_step + 1, cfg.steps + 1):
            breakdown = trainer.training_step(step)
            if step % cfg.log_every == 0 or step == cfg.steps:
                writer.writerow(
                    [step, repr(breakdown.l_dm), repr(breakdown.l_s), repr(breakdown.l_y), repr(breakdown.total)]
                )

    config_echo = {
        "train": cfg.as_dict(),
        "denoiser": denoiser_cfg.as_dict(),
        "corpus_hash": corpus_hash,
        "encoder_mode": encoders.mode,
    }
    diffnet.save_checkpoint(trainer.store, out_dir, config_echo)
    return out_dir
