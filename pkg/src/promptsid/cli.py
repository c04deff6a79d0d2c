"""Command-line entry point: ``promptsid <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``--seed`` overrides ``train.seed`` from the config file, which overrides 0.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig
from .diffusion import make_schedule
from .metrics import IMAGE_SUFFIXES, evaluate_dir
from .sampling import srd_sample
from .tensor_io import ImageFormatError, Rng, load_image, save_image
from .training import CheckpointError, ModelState, load_checkpoint, train
from .noise import apply_noise

log = logging.getLogger("promptsid")

DENOISE_STREAM = 3
NOISE_STREAM = 4
SAMPLE_STREAM = 5

# provenance colours for p1 / p2 / p3 / unused
ROLE_COLOURS = np.array([[255, 0, 0], [0, 255, 0], [0, 0, 255], [0, 0, 0]], dtype=np.float64) / 255.0


class UsageError(Exception):
    pass


def _image_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise UsageError(f"no .png/.psid images in {d}")
    return files


def _seed(args, cfg: RunConfig | None = None) -> int:
    if args.seed is not None:
        return args.seed
    if cfg is not None:
        return cfg.get("train.seed", 0)
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    cfg.require("paths.train_dir", "paths.checkpoint")
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config(seed=_seed(args, cfg))
    files = _image_files(cfg.get("paths.train_dir"))
    images = [load_image(p) for p in files]
    small = [p.name for p, im in zip(files, images) if min(im.shape[:2]) < train_cfg.patch_size]
    if small:
        raise UsageError(f"images smaller than patch size {train_cfg.patch_size}: {', '.join(small)}")
    if any(im.shape[2] != model_cfg.channels for im in images):
        raise UsageError(f"training images must have {model_cfg.channels} channels")
    ckpt = Path(cfg.get("paths.checkpoint"))
    log_path = cfg.get("paths.log")
    if log_path:
        Path(log_path).unlink(missing_ok=True)
    state = ModelState.create(model_cfg, train_cfg)
    train(state, images, log_path=log_path, checkpoint_path=ckpt,
          checkpoint_every=cfg.get("train.checkpoint_every", 0))
    print(f"trained {state.step} steps -> {ckpt}")
    return 0


def cmd_denoise(args) -> int:
    cfg = RunConfig.load(args.config)
    model_cfg = cfg.model_config()
    files = _image_files(args.input_dir)
    try:
        state = load_checkpoint(args.checkpoint, model_cfg)
    except CheckpointError as exc:
        raise UsageError(f"checkpoint does not fit config: {exc}") from exc
    model = state.ema_model()
    seed = _seed(args, cfg)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(files):
        img = load_image(path)
        if img.shape[2] != model_cfg.channels:
            raise UsageError(f"{path.name}: expected {model_cfg.channels} channels")
        den = model.denoise(img, Rng((seed, DENOISE_STREAM, i)))
        save_image(den, out / f"{path.stem}.png")
        save_image(den, out / f"{path.stem}.psid")
    print(f"denoised {len(files)} images -> {out}")
    return 0


def cmd_eval(args) -> int:
    report = evaluate_dir(args.denoised_dir, args.reference_dir)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    print(report.summary())
    return 0


def cmd_make_noisy(args) -> int:
    cfg = RunConfig.load(args.config)
    spec = cfg.noise_spec()
    files = _image_files(args.input_dir)
    seed = _seed(args, cfg)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(files):
        noisy = apply_noise(load_image(path), spec, Rng((seed, NOISE_STREAM, i)))
        save_image(noisy, out / f"{path.stem}.psid")
        save_image(noisy, out / f"{path.stem}.png")
    print(f"wrote {len(files)} noisy images -> {out}")
    return 0


def schedule_csv(steps: int, beta_start: float, beta_end: float) -> str:
    s = make_schedule(steps, beta_start, beta_end)
    rows = ["t,beta,alpha,alpha_bar"]
    for t, (b, a, ab) in enumerate(zip(s.betas, s.alphas, s.alpha_bars), 1):
        rows.append(f"{t},{float(b)!r},{float(a)!r},{float(ab)!r}")
    return "\n".join(rows) + "\n"


def cmd_dump_schedule(args) -> int:
    steps, b0, b1 = 100, 1e-4, 0.02
    if args.config:
        cfg = RunConfig.load(args.config)
        mc = cfg.model_config()
        steps, b0, b1 = mc.steps, mc.beta_start, mc.beta_end
    steps = args.steps if args.steps is not None else steps
    b0 = args.beta_start if args.beta_start is not None else b0
    b1 = args.beta_end if args.beta_end is not None else b1
    try:
        text = schedule_csv(steps, b0, b1)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def provenance_map(pattern) -> np.ndarray:
    """Colour every pixel by its role: p1 red, p2 green, p3 blue, unused black."""
    h, w = 2 * pattern.bh, 2 * pattern.bw
    roles = np.full((h, w), 3, dtype=np.int64)
    rows, cols = pattern.pixel_coords()
    for n in range(3):
        roles[rows[n], cols[n]] = n
    return ROLE_COLOURS[roles]


def cmd_sample_check(args) -> int:
    img = load_image(args.image)
    if img.shape[0] % 2 or img.shape[1] % 2:
        raise UsageError(f"image dimensions must be even, got {img.shape[0]}x{img.shape[1]}")
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    m1, m2, m3, pattern = srd_sample(img, Rng((_seed(args), SAMPLE_STREAM)))
    for name, sub in (("m1", m1), ("m2", m2), ("m3", m3)):
        save_image(sub, out / f"{name}.png")
    save_image(provenance_map(pattern), out / "provenance.png")
    print(f"sub-images {m1.shape[0]}x{m1.shape[1]} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="promptsid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help="overrides train.seed")
        return sp

    sp = seeded(sub.add_parser("train", help="train a model from a config file"))
    sp.add_argument("config")
    sp.set_defaults(func=cmd_train)

    sp = seeded(sub.add_parser("denoise", help="denoise a directory with EMA weights"))
    sp.add_argument("config")
    sp.add_argument("checkpoint")
    sp.add_argument("input_dir")
    sp.add_argument("output_dir")
    sp.set_defaults(func=cmd_denoise)

    sp = sub.add_parser("eval", help="PSNR/SSIM of denoised vs reference images")
    sp.add_argument("denoised_dir")
    sp.add_argument("reference_dir")
    sp.add_argument("--csv", help="write the per-image report here")
    sp.set_defaults(func=cmd_eval)

    sp = seeded(sub.add_parser("make-noisy", help="corrupt clean images per the config's noise.* keys"))
    sp.add_argument("config")
    sp.add_argument("input_dir")
    sp.add_argument("output_dir")
    sp.set_defaults(func=cmd_make_noisy)

    sp = sub.add_parser("dump-schedule", help="CSV of t, beta, alpha, alpha_bar")
    sp.add_argument("--config")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--beta-start", type=float)
    sp.add_argument("--beta-end", type=float)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_dump_schedule)

    sp = seeded(sub.add_parser("sample-check", help="dump sub-images and a provenance map"))
    sp.add_argument("image")
    sp.add_argument("output_dir")
    sp.set_defaults(func=cmd_sample_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ImageFormatError, FileNotFoundError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
