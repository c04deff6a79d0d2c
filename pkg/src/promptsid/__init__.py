"""Self-supervised single-image denoising guided by diffusion-generated structural prompts."""
from .diffusion import DiffusionSchedule, diff_loss, forward_diffuse, make_schedule, reverse_chain, reverse_step
from .losses import LossWeights, ReplayTerms, rec_loss, sc_loss, scale_replay, total_loss
from .metrics import MetricReport, evaluate_dir, psnr, ssim
from .model import ModelConfig, PromptSID, build_model
from .noise import NoiseSpec, apply_noise, synthetic_clean
from .sampling import SamplePattern, apply_pattern, draw_pattern, srd_sample
from .tensor_io import Rng, crop_patch, load_image, save_image
from .training import ModelState, TrainConfig, load_checkpoint, save_checkpoint, train, train_step

__version__ = "0.1.0"
