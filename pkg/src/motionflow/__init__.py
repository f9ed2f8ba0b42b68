"""Heterogeneous motion blur: simulation, per-pixel motion estimation and removal."""
from .blur import BlurOperator, LinearKernel, NoiseSpec, add_noise, apply_adjoint, apply_blur, rasterize_kernel
from .config import ConfigError, PipelineConfig
from .dataset import DatasetError, DatasetManifest, build_dataset, generate_pair
from .deconv import DeconvConfig, deblur, hqs_deblur
from .evalkit import colorize_flow, evaluate, flow_mse, psnr, ssim
from .flowsim import SimConfig, fold, simulate_flow
from .imgcore import (
    DomainError,
    FlowDomain,
    FlowFormatError,
    ImageDecodeError,
    MotionFlow,
    load_image,
    read_flow,
    save_image,
    write_flow,
)

__version__ = "0.1.0"

__all__ = [
    "BlurOperator", "LinearKernel", "NoiseSpec", "add_noise", "apply_adjoint", "apply_blur", "rasterize_kernel",
    "ConfigError", "PipelineConfig",
    "DatasetError", "DatasetManifest", "build_dataset", "generate_pair",
    "DeconvConfig", "deblur", "hqs_deblur",
    "colorize_flow", "evaluate", "flow_mse", "psnr", "ssim",
    "SimConfig", "fold", "simulate_flow",
    "DomainError", "FlowDomain", "FlowFormatError", "ImageDecodeError", "MotionFlow",
    "load_image", "read_flow", "save_image", "write_flow",
]
