"""Inference: guided sampling, noise-recording inversion, and stylization.

Guidance combines three denoiser passes (both-null, style-only, content-only)
with independent scales for each modality. Stylization first runs a recorded
forward diffusion of the content item, saving the per-step noises that make
the reverse recurrence exact, then replays the reverse chain switching the
style condition after a chosen number of steps. With the switch disabled the
replay reproduces the content item's latent to float precision, for any
parameter values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Item
from .diffusion import Denoiser, DenoiserConfig, Schedule, q_sample, denoiser_forward
from .diffnet import ParamStore
from .embed import EncoderBundle


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    g_s: float = 5.0
    g_y: float = 5.0

    def validate(self) -> None:
        if not (np.isfinite(self.g_s) and np.isfinite(self.g_y)):
            raise SamplerError("guidance scales must be finite")


def guided_eps(eval_fn, z_t: np.ndarray, t: int, style, content, guidance: GuidanceConfig) -> np.ndarray:
    """Dual-guidance noise estimate from three single-condition passes.

    eps = eps(0,0) + g_s [eps(s,0) - eps(0,0)] + g_y [eps(0,c) - eps(0,0)].

    ``eval_fn(z_t, t, style, content)`` runs one denoiser pass. A missing
    condition drops its term. Reductions are exact: g_s = g_y = 0 returns the
    unconditional pass bit-for-bit and a single unit scale returns that
    conditional pass bit-for-bit.
    """
    guidance.validate()
    g_s = guidance.g_s if style is not None else 0.0
    g_y = guidance.g_y if content is not None else 0.0
    if g_s == 0.0 and g_y == 0.0:
        return eval_fn(z_t, t, None, None)
    if g_s == 1.0 and g_y == 0.0:
        return eval_fn(z_t, t, style, None)
    if g_s == 0.0 and g_y == 1.0:
        return eval_fn(z_t, t, None, content)
    base = eval_fn(z_t, t, None, None)
    out = base.copy()
    if g_s != 0.0:
        out += g_s * (eval_fn(z_t, t, style, None) - base)
    if g_y != 0.0:
        out += g_y * (eval_fn(z_t, t, None, content) - base)
    return out


def reverse_mean(schedule: Schedule, z_t: np.ndarray, t: int, eps_hat: np.ndarray) -> np.ndarray:
    """Posterior mean mu_t = (z_t - beta_t/sqrt(1-abar_t) * eps_hat) / sqrt(1-beta_t)."""
    beta = schedule.beta_at(t)
    abar = schedule.alpha_bar_at(t)
    return (z_t - (beta / np.sqrt(1.0 - abar)) * eps_hat) / np.sqrt(1.0 - beta)


@dataclass
class NoiseTrack:
    """Recorded reverse-chain noises enabling exact replay.

    ``w[t]`` for t in [2, T] reproduces z_{t-1} = mu_t + sigma_t w[t]; the
    final move to z_0 inverts the recorded first-step forward noise directly
    (sigma_1 = 0 leaves no stochastic slot for it).

    ``residual[t]`` is sigma_t * w[t] before the normalization and
    ``correction[t]`` the floating-point error of mu_t + residual[t] against
    the recorded latent. Adding both back makes the unswitched replay
    bit-exact: without the correction, step roundoff is amplified by the
    denoiser's Jacobian (huge under strong guidance at random init) and can
    compound past any fixed tolerance.
    """

    z_terminal: np.ndarray
    w: dict[int, np.ndarray]
    residual: dict[int, np.ndarray]
    correction: dict[int, np.ndarray]
    eps_first: np.ndarray
    style_cond: np.ndarray
    content_cond: np.ndarray
    guidance: GuidanceConfig


class SamplerModel:
    """A frozen parameter snapshot plus everything needed to run inference."""

    def __init__(
        self,
        store: ParamStore,
        denoiser_cfg: DenoiserConfig,
        schedule: Schedule,
        encoders: EncoderBundle,
        mode: str,
        grid: tuple[int, int, int],
    ):
        self.store = store
        self.denoiser = Denoiser(denoiser_cfg)
        self.schedule = schedule
        self.encoders = encoders
        self.mode = mode
        self.grid = grid

    # -- basic pieces --------------------------------------------------------

    @property
    def latent_dim(self) -> int:
        return self.denoiser.cfg.latent_dim

    def eval_eps(self, z_t: np.ndarray, t: int, style, content) -> np.ndarray:
        return denoiser_forward(self.store, self.denoiser, z_t, t, style=style, content=content)

    def guided_eps(self, z_t: np.ndarray, t: int, style, content, guidance: GuidanceConfig) -> np.ndarray:
        return guided_eps(self.eval_eps, z_t, t, style, content, guidance)

    def reverse_step(
        self, z_t: np.ndarray, t: int, style, content, guidance: GuidanceConfig, w: np.ndarray | float
    ) -> np.ndarray:
        """One ancestral step z_t -> z_{t-1}; deterministic at t = 1."""
        eps_hat = self.guided_eps(z_t, t, style, content, guidance)
        mu = reverse_mean(self.schedule, z_t, t, eps_hat)
        sigma = self.schedule.sigma_at(t)
        return mu + sigma * np.asarray(w)

    def finalize(self, z0: np.ndarray) -> Item:
        data = self.encoders.autoencoder.decode(z0)
        if self.mode == "render":
            data = np.clip(data, 0.0, 1.0)
        return Item(data=data, mode=self.mode, grid=self.grid)

    # -- generation ----------------------------------------------------------

    def sample(self, style, content, guidance: GuidanceConfig, seed: int) -> Item:
        """Ancestral sampling from seeded Gaussian noise."""
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(self.latent_dim)
        for t in range(self.schedule.t_steps, 0, -1):
            w = rng.standard_normal(self.latent_dim) if t > 1 else 0.0
            z = self.reverse_step(z, t, style, content, guidance, w)
        return self.finalize(z)

    # -- inversion and stylization --------------------------------------------

    def invert_record(
        self,
        y: Item,
        guidance: GuidanceConfig,
        seed: int,
        style_cond: np.ndarray | None = None,
        content_cond: np.ndarray | None = None,
    ) -> NoiseTrack:
        """Record a forward diffusion of ``y`` so the reverse chain replays exactly.

        Forward latents use independent per-step marginal draws. Conditions
        default to the item's own embeddings; guidance matches the replay so
        the pre-switch segment is bit-identical.
        """
        sched = self.schedule
        t_steps = sched.t_steps
        z0 = self.encoders.autoencoder.encode(y.data)
        if style_cond is None:
            style_cond = self.encoders.style(y.data)
        if content_cond is None:
            content_cond = self.encoders.content(y.data)
        rng = np.random.default_rng(seed)
        eps = {t: rng.standard_normal(self.latent_dim) for t in range(1, t_steps + 1)}
        z = {0: z0}
        for t in range(1, t_steps + 1):
            z[t] = q_sample(sched, z0, t, eps[t])
        w: dict[int, np.ndarray] = {}
        residual: dict[int, np.ndarray] = {}
        correction: dict[int, np.ndarray] = {}
        for t in range(t_steps, 1, -1):
            eps_hat = self.guided_eps(z[t], t, style_cond, content_cond, guidance)
            mu = reverse_mean(sched, z[t], t, eps_hat)
            residual[t] = z[t - 1] - mu
            correction[t] = z[t - 1] - (mu + residual[t])
            w[t] = residual[t] / sched.sigma_at(t)
        w[1] = np.zeros(self.latent_dim)
        residual[1] = np.zeros(self.latent_dim)
        correction[1] = np.zeros(self.latent_dim)
        return NoiseTrack(
            z_terminal=z[t_steps],
            w=w,
            residual=residual,
            correction=correction,
            eps_first=eps[1],
            style_cond=np.asarray(style_cond, dtype=float),
            content_cond=np.asarray(content_cond, dtype=float),
            guidance=guidance,
        )

    def replay_track(self, track: NoiseTrack, lam: int, switch_style=None) -> np.ndarray:
        """Replay a recorded chain, switching the style condition after ``lam`` steps.

        The first ``lam`` reverse steps (from t = T downward) keep the
        recorded style condition; the remaining steps use ``switch_style``.
        The t = 1 move inverts the recorded first-step noise exactly, so
        ``lam = T`` reproduces the recorded z_0 to float precision.
        """
        sched = self.schedule
        t_steps = sched.t_steps
        if not 0 <= lam <= t_steps:
            raise SamplerError(f"lambda={lam} outside [0, {t_steps}]")
        if switch_style is None:
            switch_style = track.style_cond
        z = track.z_terminal
        for t in range(t_steps, 1, -1):
            style = track.style_cond if t >= t_steps - lam + 1 else switch_style
            eps_hat = self.guided_eps(z, t, style, track.content_cond, track.guidance)
            mu = reverse_mean(sched, z, t, eps_hat)
            z = (mu + track.residual[t]) + track.correction[t]
        abar1 = sched.alpha_bar_at(1)
        return (z - np.sqrt(1.0 - abar1) * track.eps_first) / np.sqrt(abar1)


@dataclass(frozen=True)
class StylizeRequest:
    y: Item
    style: np.ndarray  # style embedding (style_dim) or token-space vector (token_dim)
    lam: int = 20
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    seed: int = 0


def stylize(model: SamplerModel, request: StylizeRequest) -> Item:
    """Invert the content item, then replay with the style switched after lam steps."""
    track = model.invert_record(request.y, request.guidance, request.seed)
    z0 = model.replay_track(track, request.lam, switch_style=np.asarray(request.style, dtype=float))
    return model.finalize(z0)


def slerp(u: np.ndarray, v: np.ndarray, alpha: float) -> np.ndarray:
    """Great-circle interpolation of directions with linear magnitude blending.

    Endpoints are exact; nearly parallel inputs fall back to linear
    interpolation.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise SamplerError(f"shape mismatch {u.shape} vs {v.shape}")
    if alpha == 0.0:
        return u.copy()
    if alpha == 1.0:
        return v.copy()
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise SamplerError("slerp undefined for zero vectors")
    uu = u / nu
    vv = v / nv
    cos = float(np.clip(np.dot(uu, vv), -1.0, 1.0))
    omega = float(np.arccos(cos))
    if omega < 1e-6:
        return (1.0 - alpha) * u + alpha * v
    if np.sin(omega) < 1e-9:
        raise SamplerError("slerp undefined for antipodal directions")
    direction = (np.sin((1.0 - alpha) * omega) * uu + np.sin(alpha * omega) * vv) / np.sin(omega)
    return ((1.0 - alpha) * nu + alpha * nv) * direction


def fold_refs(refs: list[tuple[object, np.ndarray, float]]) -> np.ndarray:
    """Reduce weighted reference embeddings to one vector.

    References are sorted by id, then folded pairwise with slerp at the
    cumulative-weight ratio. One reference returns its embedding unchanged;
    two references reduce to slerp(e1, e2, w2 / (w1 + w2)).
    """
    if not refs:
        raise SamplerError("no references given")
    for _, _, weight in refs:
        if weight < 0:
            raise SamplerError("reference weights must be >= 0")
    total = sum(w for _, _, w in refs)
    if total <= 0:
        raise SamplerError("reference weights must sum to > 0")
    ordered = sorted(refs, key=lambda r: str(r[0]))
    acc = np.asarray(ordered[0][1], dtype=float)
    acc_weight = ordered[0][2]
    for _, emb, weight in ordered[1:]:
        denom = acc_weight + weight
        if denom > 0:
            acc = slerp(acc, np.asarray(emb, dtype=float), weight / denom)
        acc_weight = denom
    return acc


def interpolate_generate(
    model: SamplerModel,
    content_refs: list[tuple[object, np.ndarray, float]],
    style_refs: list[tuple[object, np.ndarray, float]],
    guidance: GuidanceConfig,
    seed: int,
    lam: int | None = None,
    invert_item: Item | None = None,
) -> Item:
    """Generate from weighted, interpolated references.

    Without ``lam`` this is plain conditional sampling on the folded
    embeddings (single references reduce to un-interpolated conditioning).
    With ``lam`` and an ``invert_item`` the folded conditions drive the
    inversion pipeline instead, switching style after ``lam`` steps.
    """
    if not content_refs and not style_refs:
        raise SamplerError("at least one content or style reference is required")
    style = fold_refs(style_refs) if style_refs else None
    content = fold_refs(content_refs) if content_refs else None
    if lam is None or invert_item is None:
        return model.sample(style, content, guidance, seed)
    track = model.invert_record(invert_item, guidance, seed, content_cond=content)
    switch = style if style is not None else track.style_cond
    return model.finalize(model.replay_track(track, lam, switch_style=switch))


def diversify(
    model: SamplerModel,
    content: np.ndarray,
    style: np.ndarray,
    n: int,
    seeds: list[int],
    guidance: GuidanceConfig | None = None,
    lam: int = 20,
) -> list[Item]:
    """Same semantics and style, fresh fine detail per seed.

    Stage 1 samples a scaffold item from the content embedding alone (seeded
    by ``seeds[0]``); stage 2 stylizes that scaffold once per output with its
    own seed, so equal seeds give equal outputs.
    """
    if n < 1:
        raise SamplerError("n must be >= 1")
    if len(seeds) < n:
        raise SamplerError(f"need {n} seeds, got {len(seeds)}")
    guidance = guidance or GuidanceConfig()
    scaffold = model.sample(None, content, guidance, seeds[0])
    return [
        stylize(model, StylizeRequest(y=scaffold, style=style, lam=lam, guidance=guidance, seed=seeds[i]))
        for i in range(n)
    ]
