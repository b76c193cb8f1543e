"""
WavRes - low-dose CT denoising in the contourlet domain
"""

from .errors import (
    WavResError,
    UsageError,
    ConfigError,
    ParameterError,
    DimensionError,
    DomainError,
    StatisticsError,
    StateError,
    ReconstructionError,
    FormatError,
    DivergenceError,
)
from .core_image import (
    PatchSet,
    extract_patches,
    reassemble_patches,
    window_hu,
    write_pgm,
    encode_wimg,
    decode_wimg,
    save_image,
    load_image,
)
from .ct_sim import (
    SimConfig,
    GeometryConfig,
    Sinogram,
    Projector,
    shepp_logan,
    random_phantom,
    rasterize_phantom,
    forward_project,
    inject_low_dose_noise,
    fbp_reconstruct,
    to_hu,
    from_hu,
    save_sinogram,
    load_sinogram,
)
from .filters import FilterBank, default_filter_bank
from .nsct import DecompositionSpec, CoeffStack, nsct_forward, nsct_inverse, residual_label, roundtrip_error
from .wavresnet import TopologyConfig, WavResNet, wavresnet_forward, wavresnet_backward
from .optim import TrainState, ConvergenceRecord, mse_loss, clip_gradients, lr_schedule, sgd_step
from .checkpoint import encode_checkpoint, decode_checkpoint, save_checkpoint, load_checkpoint
from .mbir import TVParams, tv_prox_chambolle, backproject, admm_tv_reconstruct, tune_lambda
from .metrics import MetricReport, psnr, nrmse, ssim, evaluate_dataset
from .config import WavResConfig, TrainingConfig, EvalConfig, load_config
from .dataset import DatasetManifest, ManifestEntry, TrainingSet, synth_dataset, build_training_set, load_manifest
from .training import InferenceSettings, Trainer, train, denoise, load_denoiser, compare_convergence
from .evaluation import compare_methods
from .reports import ComparisonReport, ReportGenerator

__all__ = [
    'WavResError', 'UsageError', 'ConfigError', 'ParameterError', 'DimensionError', 'DomainError',
    'StatisticsError', 'StateError', 'ReconstructionError', 'FormatError', 'DivergenceError',
    'PatchSet', 'extract_patches', 'reassemble_patches', 'window_hu', 'write_pgm',
    'encode_wimg', 'decode_wimg', 'save_image', 'load_image',
    'SimConfig', 'GeometryConfig', 'Sinogram', 'Projector', 'shepp_logan', 'random_phantom',
    'rasterize_phantom', 'forward_project', 'inject_low_dose_noise', 'fbp_reconstruct',
    'to_hu', 'from_hu', 'save_sinogram', 'load_sinogram',
    'FilterBank', 'default_filter_bank',
    'DecompositionSpec', 'CoeffStack', 'nsct_forward', 'nsct_inverse', 'residual_label', 'roundtrip_error',
    'TopologyConfig', 'WavResNet', 'wavresnet_forward', 'wavresnet_backward',
    'TrainState', 'ConvergenceRecord', 'mse_loss', 'clip_gradients', 'lr_schedule', 'sgd_step',
    'encode_checkpoint', 'decode_checkpoint', 'save_checkpoint', 'load_checkpoint',
    'TVParams', 'tv_prox_chambolle', 'backproject', 'admm_tv_reconstruct', 'tune_lambda',
    'MetricReport', 'psnr', 'nrmse', 'ssim', 'evaluate_dataset',
    'WavResConfig', 'TrainingConfig', 'EvalConfig', 'load_config',
    'DatasetManifest', 'ManifestEntry', 'TrainingSet', 'synth_dataset', 'build_training_set', 'load_manifest',
    'InferenceSettings', 'Trainer', 'train', 'denoise', 'load_denoiser', 'compare_convergence',
    'compare_methods',
    'ComparisonReport', 'ReportGenerator',
]
