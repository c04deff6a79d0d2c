"""
End-to-end command line workflow
================================

make-noisy -> train -> denoise -> eval, all from one config file, in a
temporary directory.  Equivalent shell commands are printed as they run.
"""

# %%
import tempfile
from pathlib import Path

from promptsid.cli import main
from promptsid.noise import synthetic_clean
from promptsid.tensor_io import Rng, save_image

work = Path(tempfile.mkdtemp(prefix="promptsid-"))
(work / "clean").mkdir()
for i, img in enumerate(synthetic_clean(4, 32, 1, Rng(0))):
    save_image(img, work / "clean" / f"img{i}.png")

(work / "run.cfg").write_text(f"""\
# tiny grayscale model
model.channels = 1
model.latent_dim = 16
model.width = 8
model.blocks = 1
model.steps = 10
model.pse_width = 8
model.pse_blocks = 1
model.pse_hidden = 16
model.mlp_hidden = 32
model.time_dim = 8
train.total_steps = 100
train.batch_size = 2
train.patch_size = 16
train.lr = 0.001
train.checkpoint_every = 50
noise.kind = gaussian_fixed
noise.sigma = 25
paths.train_dir = {work / 'noisy'}
paths.checkpoint = {work / 'model.ckpt'}
paths.log = {work / 'train.csv'}
""")


def run(*args):
    print("$ promptsid", " ".join(map(str, args)))
    assert main([str(a) for a in args]) == 0


# %%
run("make-noisy", work / "run.cfg", work / "clean", work / "noisy", "--seed", "1")
run("train", work / "run.cfg")
run("denoise", work / "run.cfg", work / "model.ckpt", work / "noisy", work / "denoised")

# %%
# Compare against the clean originals (PNG names line up across directories).
(work / "den_png").mkdir()
for p in (work / "denoised").glob("*.png"):
    (work / "den_png" / p.name).write_bytes(p.read_bytes())
run("eval", work / "den_png", work / "clean")
run("dump-schedule", "--config", work / "run.cfg")
print("outputs in", work)
