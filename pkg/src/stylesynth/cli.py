"""Command-line interface.

Every subcommand reads one JSON configuration (defaults merged with an
optional ``--config`` file and repeated ``--set key=value`` overrides) and
works inside a run directory named by the configuration hash. Stages build
their missing prerequisites, so ``train`` on a fresh tree does everything up
to and including training.

Exit codes: 0 success, 1 user error (bad flags, failed checks, missing
artifacts), 2 internal error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import pipeline
from .config import ConfigError, RunPaths
from .corpus import CorpusError
from .diffnet import fd_check
from .diffusion import DiffusionError, q_sample
from .embed import EmbedError
from .finish import FinishError
from .mine import MineError
from .sampler import SamplerError, StylizeRequest, interpolate_generate, stylize

USER_ERRORS = (
    ConfigError,
    CorpusError,
    EmbedError,
    MineError,
    DiffusionError,
    SamplerError,
    FinishError,
    pipeline.PipelineError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; keep user errors at 1
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="stylesynth", description=__doc__)
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. --set corpus.seed=9",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", help="generate and persist the corpus container")
    sub.add_parser("fit-encoders", help="fit and freeze the encoder bundle")
    sub.add_parser("mine", help="mine the triplet supervision dataset")
    train = sub.add_parser("train", help="train the denoiser (builds prerequisites)")
    train.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")

    sample = sub.add_parser("sample", help="generate one item from embeddings")
    sample.add_argument("--content-id", type=int, default=None)
    sample.add_argument("--style-id", type=int, default=None)
    sample.add_argument("--seed", type=int, default=None)
    sample.add_argument("--out", type=str, default="sample")

    sty = sub.add_parser("stylize", help="invert a content item and switch its style")
    sty.add_argument("--y", type=int, required=True, help="content item id")
    sty.add_argument("--s", type=int, required=True, help="style item id")
    sty.add_argument("--lambda", dest="lam", type=int, default=None)
    sty.add_argument("--seed", type=int, default=None)
    sty.add_argument("--postprocess", action="store_true")
    sty.add_argument("--out", type=str, default="stylize")

    interp = sub.add_parser("interpolate", help="emit a 5-point interpolation grid")
    interp.add_argument("--modality", choices=["style", "content"], required=True)
    interp.add_argument("--ref-a", type=int, required=True)
    interp.add_argument("--ref-b", type=int, required=True)
    interp.add_argument("--content-id", type=int, default=None, help="fixed content (style sweeps)")
    interp.add_argument("--style-id", type=int, default=None, help="fixed style (content sweeps)")
    interp.add_argument("--seed", type=int, default=None)
    interp.add_argument("--out", type=str, default="interp")

    div = sub.add_parser("diversify", help="same semantics and style, varied detail")
    div.add_argument("--content-id", type=int, required=True)
    div.add_argument("--style-id", type=int, required=True)
    div.add_argument("--n", type=int, default=4)
    div.add_argument("--seed", type=int, default=None)
    div.add_argument("--out", type=str, default="diverse")

    sub.add_parser("eval", help="run the evaluation harness and write reports")

    fd = sub.add_parser("fd-check", help="finite-difference check of model gradients")
    fd.add_argument("--coords", type=int, default=220)
    fd.add_argument("--tolerance", type=float, default=1e-5)

    sub.add_parser("serve", help="start the generative-search HTTP service")
    return parser


def _sample_seed(paths: RunPaths, override: int | None) -> int:
    return override if override is not None else paths.config["sample"]["seed"]


def _cmd_sample(paths: RunPaths, args) -> int:
    model, _ = pipeline.load_model(paths)
    bundle = pipeline.ensure_corpus(paths)
    style = model.encoders.style(bundle.data[args.style_id]) if args.style_id is not None else None
    content = model.encoders.content(bundle.data[args.content_id]) if args.content_id is not None else None
    item = model.sample(style, content, cfgmod.guidance_config(paths.config), _sample_seed(paths, args.seed))
    pipeline.save_item(item, paths.samples_dir / args.out)
    print(f"wrote {paths.samples_dir / args.out}.f32/.png")
    return 0


def _cmd_stylize(paths: RunPaths, args) -> int:
    from .finish import color_match

    model, _ = pipeline.load_model(paths)
    bundle = pipeline.ensure_corpus(paths)
    lam = args.lam if args.lam is not None else paths.config["sample"]["lambda"]
    s_item = bundle.item(args.s)
    request = StylizeRequest(
        y=bundle.item(args.y),
        style=model.encoders.style(s_item.data),
        lam=lam,
        guidance=cfgmod.guidance_config(paths.config),
        seed=_sample_seed(paths, args.seed),
    )
    item = stylize(model, request)
    if args.postprocess or paths.config["sample"]["postprocess"]:
        result = color_match(item, s_item)
        if result.matched:
            item = result.item
        else:
            print(f"postprocess skipped: {result.reason}", file=sys.stderr)
    pipeline.save_item(item, paths.samples_dir / args.out)
    print(f"wrote {paths.samples_dir / args.out}.f32/.png")
    return 0


ALPHA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def _cmd_interpolate(paths: RunPaths, args) -> int:
    model, _ = pipeline.load_model(paths)
    bundle = pipeline.ensure_corpus(paths)
    guidance = cfgmod.guidance_config(paths.config)
    seed = _sample_seed(paths, args.seed)
    emb = model.encoders.style if args.modality == "style" else model.encoders.content
    ref_a = (args.ref_a, emb(bundle.data[args.ref_a]), 1.0)
    ref_b = (args.ref_b, emb(bundle.data[args.ref_b]), 1.0)
    for alpha in ALPHA_GRID:
        pair = [(ref_a[0], ref_a[1], 1.0 - alpha), (ref_b[0], ref_b[1], alpha)]
        if args.modality == "style":
            content_refs = (
                [(args.content_id, model.encoders.content(bundle.data[args.content_id]), 1.0)]
                if args.content_id is not None
                else []
            )
            item = interpolate_generate(model, content_refs, pair, guidance, seed)
        else:
            style_refs = (
                [(args.style_id, model.encoders.style(bundle.data[args.style_id]), 1.0)]
                if args.style_id is not None
                else []
            )
            item = interpolate_generate(model, pair, style_refs, guidance, seed)
        pipeline.save_item(item, paths.samples_dir / f"{args.out}_a{alpha:.2f}")
    print(f"wrote 5 items under {paths.samples_dir}")
    return 0


def _cmd_diversify(paths: RunPaths, args) -> int:
    from .sampler import diversify

    model, _ = pipeline.load_model(paths)
    bundle = pipeline.ensure_corpus(paths)
    base = _sample_seed(paths, args.seed)
    items = diversify(
        model,
        model.encoders.content(bundle.data[args.content_id]),
        model.encoders.style(bundle.data[args.style_id]),
        args.n,
        seeds=[base + i for i in range(args.n)],
        guidance=cfgmod.guidance_config(paths.config),
        lam=paths.config["sample"]["lambda"],
    )
    for i, item in enumerate(items):
        pipeline.save_item(item, paths.samples_dir / f"{args.out}_{i}")
    print(f"wrote {args.n} items under {paths.samples_dir}")
    return 0


def _cmd_fd_check(paths: RunPaths, args) -> int:
    from .diffusion import Trainer

    bundle = pipeline.ensure_corpus(paths)
    encoders = pipeline.ensure_encoders(paths, bundle)
    triplets = pipeline.ensure_triplets(paths)
    trainer = Trainer(
        cfgmod.train_config(paths.config),
        cfgmod.denoiser_config(paths.config),
        bundle,
        encoders,
        triplets.triplets,
    )

    rng = np.random.default_rng(paths.config["train"]["seed"])
    pick = rng.integers(0, len(triplets.triplets), size=4)
    t_arr = rng.integers(1, trainer.schedule.t_steps + 1, size=4)
    eps = rng.standard_normal((4, trainer.denoiser.cfg.latent_dim))
    masks = (rng.random((4, 2)) > 0.5).astype(float)

    def loss_fn():
        from . import diffnet as dn

        z0 = trainer.z0_all[trainer.x_ids[pick]]
        z_t = q_sample(trainer.schedule, z0, t_arr, eps)
        tape = dn.Tape()
        p = trainer.store.wrap(tape)
        eps_hat = trainer.denoiser.forward(
            tape,
            p,
            z_t,
            t_arr,
            style_a=trainer.a_all[trainer.s_ids[pick]],
            content=trainer.c_all[trainer.y_ids[pick]],
            style_mask=masks[:, 0:1],
            content_mask=masks[:, 1:2],
        )
        l_dm = dn.mse(eps_hat, tape.constant(eps))
        abar = trainer.schedule.alpha_bar[t_arr - 1][:, None]
        zhat0 = dn.mulc(dn.addc(dn.mulc(eps_hat, -np.sqrt(1.0 - abar)), z_t), 1.0 / np.sqrt(abar))
        ae = encoders.autoencoder
        xhat = dn.affine(tape.constant(ae.basis), tape.constant(ae.mean), zhat0)
        a_hat = dn.affine(tape.constant(encoders.style.weight), tape.constant(encoders.style.bias), xhat)
        c_hat = dn.affine(tape.constant(encoders.content.weight), tape.constant(encoders.content.bias), xhat)
        total = dn.add(
            l_dm,
            dn.add(
                dn.scale(dn.mse(a_hat, tape.constant(trainer.a_all[trainer.s_ids[pick]])), trainer.cfg.omega_s),
                dn.scale(dn.mse(c_hat, tape.constant(trainer.c_all[trainer.y_ids[pick]])), trainer.cfg.omega_y),
            ),
        )
        grads = tape.backward(total)
        return float(total.value), grads

    err = fd_check(loss_fn, trainer.store, num_coords=args.coords)
    print(f"max relative gradient error: {err:.3e}")
    return 0 if err <= args.tolerance else 1


def cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = cfgmod.load_config(args.config, args.overrides)
        paths = RunPaths(config)
        paths.write_config_echo()
        if args.command == "gen-corpus":
            bundle = pipeline.ensure_corpus(paths)
            print(f"corpus at {paths.corpus_dir} ({len(bundle)} items, hash {bundle.content_hash()[:12]})")
            return 0
        if args.command == "fit-encoders":
            encoders = pipeline.ensure_encoders(paths)
            print(f"encoders at {paths.encoders_dir} (latent dim {encoders.latent_dim})")
            return 0
        if args.command == "mine":
            triplets = pipeline.ensure_triplets(paths)
            print(
                f"{len(triplets.triplets)} triplets at {paths.triplets_path} "
                f"(success rate {triplets.stats.success_rate:.3f})"
            )
            return 0
        if args.command == "train":
            pipeline.ensure_checkpoint(paths, resume=args.resume)
            print(f"checkpoint at {paths.checkpoint_dir}")
            return 0
        if args.command == "sample":
            return _cmd_sample(paths, args)
        if args.command == "stylize":
            return _cmd_stylize(paths, args)
        if args.command == "interpolate":
            return _cmd_interpolate(paths, args)
        if args.command == "diversify":
            return _cmd_diversify(paths, args)
        if args.command == "eval":
            report = pipeline.run_eval(paths)
            print(f"report at {paths.report_dir} ({len(report.rows)} rows)")
            return 0
        if args.command == "fd-check":
            return _cmd_fd_check(paths, args)
        if args.command == "serve":
            from .service import serve

            serve(paths)
            return 0
        parser.print_usage(sys.stderr)
        return 1
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as internal error exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli(sys.argv[1:]))
