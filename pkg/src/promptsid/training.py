"""Optimisation loop, EMA weights and checkpoints.

Randomness for step ``k`` comes from ``Rng((seed, STEP_STREAM, k))``, so a run
resumed from a checkpoint replays exactly the draws an uninterrupted run
would have made.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import DiffusionSchedule, diff_loss, forward_diffuse, reverse_chain
from .losses import LossWeights, ReplayTerms, rec_loss, sc_loss, scale_replay, total_loss
from .model import ModelConfig, PromptSID, build_model
from .sampling import draw_pattern, gather_subimages
from .tensor_io import Rng, as_image, crop_patch

log = logging.getLogger(__name__)

INIT_STREAM = 1
STEP_STREAM = 2

CKPT_MAGIC = b"PSIDCKPT"
CKPT_VERSION = 1
_DTYPES = {0: ("<f4", torch.float32), 1: ("<f8", torch.float64)}
LOG_FIELDS = ("step", "L_rec", "L_sc", "L_diff", "total", "lr")


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    ema_decay: float = 0.999
    total_steps: int = 1000
    batch_size: int = 4
    patch_size: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    lr_halve_every: int = 0      # 0 -> total_steps // 5
    seed: int = 0
    float64: bool = False

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be positive")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ValueError(f"patch_size must be even, got {self.patch_size}")

    @property
    def halve_every(self) -> int:
        return self.lr_halve_every or max(self.total_steps // 5, 1)

    def lr_at(self, step: int) -> float:
        return self.lr * 0.5 ** (step // self.halve_every)

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.float64 else torch.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


@dataclass
class ModelState:
    model: PromptSID
    train: TrainConfig
    ema: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def create(cls, model_cfg: ModelConfig, train_cfg: TrainConfig) -> "ModelState":
        model = build_model(model_cfg, Rng((train_cfg.seed, INIT_STREAM)), train_cfg.dtype)
        state = cls(model, train_cfg)
        for name, p in model.named_parameters():
            state.ema[name] = p.detach().clone()
            state.adam_m[name] = torch.zeros_like(p)
            state.adam_v[name] = torch.zeros_like(p)
        return state

    def params(self) -> dict:
        return dict(self.model.named_parameters())

    def ema_model(self) -> PromptSID:
        """A detached copy of the model carrying the EMA weights."""
        shadow = copy.deepcopy(self.model)
        with torch.no_grad():
            for name, p in shadow.named_parameters():
                p.copy_(self.ema[name])
                p.requires_grad_(False)
        return shadow


def adam_step(state: ModelState, grads: dict, lr: float) -> ModelState:
    """Bias-corrected Adam; increments ``state.step``.

    Gradients are checked before anything is touched, so a non-finite gradient
    leaves the state unchanged.
    """
    params = state.params()
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter {name} {tuple(params[name].shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in {name} at step {state.step}")
    cfg = state.train
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            m, v = state.adam_m[name], state.adam_v[name]
            m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
            p.sub_(lr * (m / bc1) / (torch.sqrt(v / bc2) + cfg.eps))
    state.step = t
    return state


def ema_update(state: ModelState) -> ModelState:
    d = state.train.ema_decay
    with torch.no_grad():
        for name, p in state.model.named_parameters():
            state.ema[name].mul_(d).add_(p.detach(), alpha=1.0 - d)
    return state


@dataclass
class StepDraws:
    """Everything random in one iteration except the replay start noise."""

    patterns: list
    t: np.ndarray
    eps: np.ndarray


def draw_step(rng: Rng, batch: int, h: int, w: int, sched: DiffusionSchedule, latent: int) -> StepDraws:
    patterns = [draw_pattern(h, w, rng) for _ in range(batch)]
    t = rng.integers(1, sched.T + 1, size=batch).astype(np.int64)
    eps = rng.normal(size=(batch, latent))
    return StepDraws(patterns, t, eps)


def compute_losses(model: PromptSID, x: torch.Tensor, draws: StepDraws,
                   replay: ReplayTerms, weights: LossWeights) -> dict:
    """Differentiable losses for one batch ``x`` of shape (B, C, H, W)."""
    m1, m2, m3 = gather_subimages(x, draws.patterns)
    c_sub = model.pse(m1)
    c0 = model.pse(x)
    eps = torch.as_tensor(draws.eps, dtype=x.dtype)
    c_t = forward_diffuse(model.schedule, c0, draws.t, eps)
    c_hat = reverse_chain(model.denoiser, model.schedule, c_t, draws.t, c_sub)
    l_diff = diff_loss(c_hat, c0)
    pred = model.spiformer(m1, c_hat)
    l_rec = rec_loss(pred, m2, m3)
    l_sc = sc_loss(pred, m2, m3, replay)
    return {"L_rec": l_rec, "L_sc": l_sc, "L_diff": l_diff,
            "total": total_loss(l_rec, l_sc, l_diff, weights)}


def to_batch(patches, dtype) -> torch.Tensor:
    arr = np.stack([as_image(p).transpose(2, 0, 1) for p in patches])
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)


def train_step(state: ModelState, patches, rng: Rng) -> dict:
    """One iteration: sample, forward, replay, loss, backward, Adam, EMA."""
    model, cfg = state.model, state.train
    x = patches if isinstance(patches, torch.Tensor) else to_batch(patches, cfg.dtype)
    b, _, h, w = x.shape
    draws = draw_step(rng, b, h, w, model.schedule, model.cfg.latent_dim)
    replay = scale_replay(model, x, draws.patterns, rng)
    losses = compute_losses(model, x, draws, replay, cfg.weights)
    total = losses["total"]
    if not torch.isfinite(total):
        raise NonFiniteError(
            f"non-finite loss at step {state.step}: "
            + ", ".join(f"{k}={float(v.detach())}" for k, v in losses.items()))
    params = state.params()
    grads = torch.autograd.grad(total, list(params.values()), allow_unused=True)
    grads = {n: (g if g is not None else torch.zeros_like(p))
             for (n, p), g in zip(params.items(), grads)}
    lr = cfg.lr_at(state.step)
    adam_step(state, grads, lr)
    ema_update(state)
    record = {k: float(v.detach()) for k, v in losses.items()}
    record["step"] = state.step
    record["lr"] = lr
    return record


def sample_batch(images, cfg: TrainConfig, rng: Rng) -> list:
    idx = rng.integers(0, len(images), size=cfg.batch_size)
    return [crop_patch(images[i], cfg.patch_size, rng) for i in idx]


def train(state: ModelState, images, log_path=None, checkpoint_path=None,
          checkpoint_every: int = 0, until: int | None = None) -> list:
    """Run from ``state.step`` up to ``until`` (default ``total_steps``).

    ``images`` are the noisy training images.  Log rows are appended to
    ``log_path`` when given; checkpoints are written every ``checkpoint_every``
    steps as ``<checkpoint_path stem>_<step>.ckpt`` and at the end to
    ``checkpoint_path`` itself.
    """
    cfg = state.train
    until = cfg.total_steps if until is None else until
    records = []
    writer = fh = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = not log_path.exists() or log_path.stat().st_size == 0
        fh = open(log_path, "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_FIELDS)
    try:
        while state.step < until:
            rng = Rng((cfg.seed, STEP_STREAM, state.step))
            rec = train_step(state, sample_batch(images, cfg, rng), rng)
            records.append(rec)
            if writer is not None:
                writer.writerow([rec["step"]] + [repr(rec[k]) for k in LOG_FIELDS[1:]])
            if state.step % 500 == 0:
                log.info("step %d total %.5f", state.step, rec["total"])
            if checkpoint_path and checkpoint_every and state.step % checkpoint_every == 0:
                p = Path(checkpoint_path)
                save_checkpoint(state, p.with_name(f"{p.stem}_{state.step}{p.suffix or '.ckpt'}"))
    finally:
        if fh is not None:
            fh.close()
    if checkpoint_path:
        save_checkpoint(state, checkpoint_path)
    return records


# --- checkpoint container -------------------------------------------------

def _blobs(state: ModelState):
    yield "schedule/betas", torch.from_numpy(state.model.schedule.betas)
    for name, p in state.model.named_parameters():
        yield f"live/{name}", p.detach()
    for prefix, table in (("ema", state.ema), ("adam_m", state.adam_m), ("adam_v", state.adam_v)):
        for name, t in table.items():
            yield f"{prefix}/{name}", t


def encode_checkpoint(state: ModelState) -> bytes:
    meta = {"model": state.model.cfg.to_dict(), "train": state.train.to_dict(), "step": state.step}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta_bytes)), meta_bytes]
    blobs = list(_blobs(state))
    out.append(struct.pack("<I", len(blobs)))
    for name, t in blobs:
        code = 1 if t.dtype == torch.float64 else 0
        np_dtype = _DTYPES[code][0]
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, t.dim()))
        out.append(struct.pack(f"<{t.dim()}I", *t.shape))
        out.append(np.ascontiguousarray(t.detach().cpu().numpy(), dtype=np_dtype).tobytes())
    return b"".join(out)


def save_checkpoint(state: ModelState, path) -> None:
    Path(path).write_bytes(encode_checkpoint(state))


def _read_blobs(blob: bytes):
    if blob[:8] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, mlen = struct.unpack_from("<II", blob, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {CKPT_VERSION})")
    pos = 16
    meta = json.loads(blob[pos:pos + mlen].decode("utf-8"))
    pos += mlen
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        np_dtype, _ = _DTYPES[code]
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype=np_dtype, count=n, offset=pos).reshape(shape)
        pos += arr.nbytes
        tensors[name] = torch.from_numpy(arr.astype(np_dtype[1:], copy=True))
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes in checkpoint")
    return meta, tensors


def load_checkpoint(path, model_cfg: ModelConfig | None = None) -> ModelState:
    """Restore a :class:`ModelState`.

    When ``model_cfg`` is given the stored tensors must fit a model built from
    it; any shape difference is refused with the offending names.
    """
    meta, tensors = _read_blobs(Path(path).read_bytes())
    cfg = model_cfg or ModelConfig(**meta["model"])
    train_cfg = TrainConfig.from_dict(meta["train"])
    model = PromptSID(cfg).to(train_cfg.dtype)
    problems = []
    expected = {f"{pre}/{n}": tuple(p.shape) for n, p in model.named_parameters()
                for pre in ("live", "ema", "adam_m", "adam_v")}
    for key, shape in expected.items():
        if key not in tensors:
            problems.append(f"{key}: missing")
        elif tuple(tensors[key].shape) != shape:
            problems.append(f"{key}: checkpoint {tuple(tensors[key].shape)} vs model {shape}")
    extra = set(tensors) - set(expected) - {"schedule/betas"}
    problems += [f"{k}: unexpected" for k in sorted(extra)]
    if problems:
        raise CheckpointError("checkpoint does not match model shape:\n  " + "\n  ".join(problems[:20]))
    model.schedule = DiffusionSchedule(tensors["schedule/betas"].numpy())
    if model.schedule.T != cfg.steps:
        raise CheckpointError(f"schedule has {model.schedule.T} steps, model config says {cfg.steps}")
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(tensors[f"live/{name}"])
    state = ModelState(model, train_cfg, step=int(meta["step"]))
    for name, p in model.named_parameters():
        state.ema[name] = tensors[f"ema/{name}"].to(p.dtype).clone()
        state.adam_m[name] = tensors[f"adam_m/{name}"].to(p.dtype).clone()
        state.adam_v[name] = tensors[f"adam_v/{name}"].to(p.dtype).clone()
    return state
