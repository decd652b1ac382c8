"""Noise transformation for denoising non-Gaussian noise with Gaussian denoisers."""

from .denoise import DctDenoiser, ExternalDenoiser, RefineConfig, register_external_denoiser
from .histmatch import MatchConfig
from .image import RngState, load_bundled, load_image, save_image
from .noise import NoiseSpec, apply_noise
from .pipeline import PipelineConfig, StrategyFlags, run_pipeline, select_strategy
from .smoothing import RtvConfig

__version__ = "0.1.0"
