import math

import numpy as np
import pytest
import torch

from promptsid.losses import LossWeights, scale_replay
from promptsid.model import ModelConfig
from promptsid.noise import NoiseSpec, apply_noise, synthetic_clean
from promptsid.tensor_io import Rng
from promptsid.training import (CheckpointError, ModelState, NonFiniteError, TrainConfig, adam_step,
                                compute_losses, draw_step, ema_update, encode_checkpoint,
                                load_checkpoint, save_checkpoint, train)
from tests.helpers import TINY, jitter, tiny_state
from tests.oracles import fd_check


def scalar_state(**kw):
    """A state whose model is swapped for one scalar parameter."""
    state = tiny_state(0, **kw)
    p = torch.nn.Parameter(torch.zeros((), dtype=torch.float64))
    state.model = torch.nn.Module()
    state.model.w = p
    state.ema = {"w": p.detach().clone()}
    state.adam_m = {"w": torch.zeros_like(p)}
    state.adam_v = {"w": torch.zeros_like(p)}
    return state


def test_adam_zero_grad():
    state = scalar_state()
    state.adam_m["w"].fill_(0.5)
    state.adam_v["w"].fill_(0.25)
    adam_step(state, {"w": torch.zeros((), dtype=torch.float64)}, 0.1)
    assert state.model.w.item() != 0  # leftover momentum still moves it
    state = scalar_state()
    adam_step(state, {"w": torch.zeros((), dtype=torch.float64)}, 0.1)
    assert state.model.w.item() == 0
    assert state.adam_m["w"].item() == 0 and state.adam_v["w"].item() == 0


def test_adam_moments_decay():
    state = scalar_state()
    state.adam_m["w"].fill_(1.0)
    state.adam_v["w"].fill_(1.0)
    adam_step(state, {"w": torch.zeros((), dtype=torch.float64)}, 0.0)
    assert state.adam_m["w"].item() == pytest.approx(0.9)
    assert state.adam_v["w"].item() == pytest.approx(0.99)


def test_adam_one_step():
    state = scalar_state()
    lr = 2e-4
    adam_step(state, {"w": torch.ones((), dtype=torch.float64)}, lr)
    g, b1, b2, eps = 1.0, 0.9, 0.99, 1e-8
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    expect = -lr * m_hat / (math.sqrt(v_hat) + eps)
    assert state.model.w.item() == pytest.approx(expect, rel=1e-12)
    assert state.model.w.item() == pytest.approx(-lr, rel=1e-7)
    assert state.step == 1


def test_adam_deterministic():
    a, b = scalar_state(), scalar_state()
    for s in (a, b):
        adam_step(s, {"w": torch.tensor(0.3, dtype=torch.float64)}, 1e-3)
    assert torch.equal(a.model.w, b.model.w)


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_adam_rejects_non_finite(bad):
    state = scalar_state()
    with pytest.raises(NonFiniteError, match="w"):
        adam_step(state, {"w": torch.tensor(bad, dtype=torch.float64)}, 1e-3)
    assert state.model.w.item() == 0 and state.step == 0


def test_ema():
    state = scalar_state()
    ema_update(state)
    assert state.ema["w"].item() == 0
    with torch.no_grad():
        state.model.w.fill_(1.0)
    ema_update(state)
    assert state.ema["w"].item() == pytest.approx(0.001, abs=1e-15)
    state.ema["w"].zero_()
    for _ in range(100):
        ema_update(state)
    assert state.ema["w"].item() == pytest.approx(1 - 0.999 ** 100, rel=1e-12)


def test_shadow_mirrors_live():
    state = tiny_state(0)
    for name, p in state.model.named_parameters():
        assert state.ema[name].shape == p.shape
        assert not state.ema[name].requires_grad


def test_lr_halving():
    cfg = TrainConfig(lr=1.0, total_steps=100)
    assert [cfg.lr_at(s) for s in (0, 19, 20, 40, 99)] == [1.0, 1.0, 0.5, 0.25, 0.0625]


def batch_and_draws(state, seed=0):
    g = np.random.default_rng(seed)
    x = torch.from_numpy(g.uniform(size=(1, 1, 8, 8)))
    rng = Rng((seed, 11))
    draws = draw_step(rng, 1, 8, 8, state.model.schedule, TINY.latent_dim)
    replay = scale_replay(state.model, x, draws.patterns, rng)
    return x, draws, replay


def test_end_to_end_fd():
    state = tiny_state(0)
    jitter(state.model, 0.2)
    x, draws, replay = batch_and_draws(state)
    params = list(state.model.parameters())
    err, n = fd_check(lambda: compute_losses(state.model, x, draws, replay, LossWeights())["total"],
                      params, n_samples=200, seed=3)
    assert n == 200 and err < 1e-3


def test_gradient_decomposition():
    state = tiny_state(0)
    jitter(state.model, 0.2)
    x, draws, replay = batch_and_draws(state, 1)
    params = list(state.model.parameters())

    def grads(key, w):
        loss = compute_losses(state.model, x, draws, replay, w)[key]
        g = torch.autograd.grad(loss, params, allow_unused=True)
        return [torch.zeros_like(p) if v is None else v for p, v in zip(params, g)]

    only_rec = grads("total", LossWeights(1.0, 0.0, 0.0))
    rec = grads("L_rec", LossWeights())
    for a, b in zip(only_rec, rec):
        assert torch.equal(a, b)
    err, _ = fd_check(lambda: compute_losses(state.model, x, draws, replay, LossWeights(1, 0, 0))["total"],
                      params, n_samples=50, seed=4)
    assert err < 1e-3


def noisy_set(n=4, size=16, seed=0):
    clean = synthetic_clean(n, size, 1, Rng(seed))
    return [apply_noise(c, NoiseSpec.gaussian(25), Rng((seed, i))) for i, c in enumerate(clean)]


def test_checkpoint_round_trip(tmp_path):
    state = tiny_state(0, float64=False, total_steps=3)
    train(state, noisy_set())
    a = tmp_path / "a.ckpt"
    save_checkpoint(state, a)
    loaded = load_checkpoint(a)
    b = tmp_path / "b.ckpt"
    save_checkpoint(loaded, b)
    assert a.read_bytes() == b.read_bytes()
    assert loaded.step == 3
    for name, p in state.model.named_parameters():
        assert torch.equal(p, dict(loaded.model.named_parameters())[name])
        assert torch.equal(state.adam_v[name], loaded.adam_v[name])
    assert np.array_equal(loaded.model.schedule.betas, state.model.schedule.betas)


def test_checkpoint_float64(tmp_path):
    state = tiny_state(0)
    save_checkpoint(state, tmp_path / "a.ckpt")
    assert load_checkpoint(tmp_path / "a.ckpt").model.pse.stem.weight.dtype == torch.float64


def test_checkpoint_shape_diagnostic(tmp_path):
    state = tiny_state(0)
    save_checkpoint(state, tmp_path / "a.ckpt")
    other = ModelConfig(**{**TINY.to_dict(), "latent_dim": 12})
    with pytest.raises(CheckpointError, match="denoiser"):
        load_checkpoint(tmp_path / "a.ckpt", other)


def test_checkpoint_bad_version(tmp_path):
    blob = bytearray(encode_checkpoint(tiny_state(0)))
    blob[8] = 9
    (tmp_path / "a.ckpt").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "a.ckpt")
    (tmp_path / "b.ckpt").write_bytes(b"nope")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "b.ckpt")


def test_seed_determinism(tmp_path):
    images = noisy_set()
    for tag in ("a", "b"):
        state = tiny_state(5, float64=False, total_steps=6)
        train(state, images, log_path=tmp_path / f"{tag}.csv", checkpoint_path=tmp_path / f"{tag}.ckpt")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_resume_equivalence(tmp_path):
    images = noisy_set()
    full = tiny_state(2, float64=False, total_steps=8)
    train(full, images, log_path=tmp_path / "full.csv", checkpoint_path=tmp_path / "full.ckpt",
          checkpoint_every=4)
    resumed = load_checkpoint(tmp_path / "full_4.ckpt")
    assert resumed.step == 4
    train(resumed, images, log_path=tmp_path / "res.csv", checkpoint_path=tmp_path / "res.ckpt")
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "res.ckpt").read_bytes()
    tail = (tmp_path / "full.csv").read_text().splitlines()[5:]
    assert tail == (tmp_path / "res.csv").read_text().splitlines()[1:]


def test_non_finite_loss_aborts():
    state = tiny_state(0, float64=False, total_steps=2)
    with torch.no_grad():
        state.model.pse.stem.weight.fill_(float("nan"))
    with pytest.raises(NonFiniteError, match="step 0"):
        train(state, noisy_set())


def test_loss_decreases_on_toy_set():
    cfg = ModelConfig(channels=1, latent_dim=16, pse_width=8, pse_blocks=1, pse_hidden=32, width=8,
                      blocks=1, heads=2, steps=50, mlp_hidden=64, time_dim=16)
    state = ModelState.create(cfg, TrainConfig(lr=3e-3, total_steps=200, batch_size=2, patch_size=16,
                                               lr_halve_every=1000, seed=0))
    records = train(state, noisy_set(4, 32))
    windows = np.array([r["total"] for r in records]).reshape(4, 50).mean(axis=1)
    assert np.all(np.diff(windows) < 0)
    assert windows[-1] < 0.7 * windows[0]
