"""
Training and inference in coefficient space

train:   mini-batch SGD on (T(quarter), label) patches with clipping and a
         geometric learning-rate decay; periodic whole-image validation.
denoise: x -> T-dagger(T(x) + f(T(x))) in residual mode, T-dagger(f(T(x)))
         in direct mode; the lowpass band is copied from the input when it
         is bypassed.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .checkpoint import load_checkpoint, save_checkpoint
from .config import LOWBAND_MODES, TARGET_MODES, TrainingConfig
from .core_image import as_image
from .dataset import DatasetManifest, build_training_set, progress_enabled
from .errors import ConfigError, DivergenceError
from .filters import FilterBank, default_filter_bank
from .metrics import nrmse, psnr
from .nsct import CoeffStack, DecompositionSpec, nsct_forward, nsct_inverse
from .optim import ConvergenceRecord, TrainState, lr_schedule, mse_loss, sgd_step
from .wavresnet import TopologyConfig, WavResNet

logger = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ["iteration", "lr", "train_loss", "val_psnr_db", "val_nrmse"]


@dataclass(frozen=True)
class InferenceSettings:
    """How network outputs map back to an image"""
    decomposition: DecompositionSpec = field(default_factory=DecompositionSpec)
    target_mode: str = "residual"
    lowband_mode: str = "learned"
    intensity_scale: float = 100.0

    @classmethod
    def from_training(cls, config: TrainingConfig) -> "InferenceSettings":
        return cls(config.decomposition, config.target_mode, config.lowband_mode, config.intensity_scale)

    @classmethod
    def from_metadata(cls, metadata: Mapping[str, str]) -> "InferenceSettings":
        try:
            settings = cls(
                decomposition=DecompositionSpec.from_mapping(metadata),
                target_mode=metadata.get("train.target_mode", "residual"),
                lowband_mode=metadata.get("train.lowband_mode", "learned"),
                intensity_scale=float(metadata.get("train.intensity_scale", 100.0)),
            )
        except ValueError as e:
            raise ConfigError(f"bad checkpoint metadata: {e}") from e
        if settings.target_mode not in TARGET_MODES or settings.lowband_mode not in LOWBAND_MODES:
            raise ConfigError(f"checkpoint declares unknown modes {settings.target_mode}/{settings.lowband_mode}")
        return settings


def _same_architecture(a: TopologyConfig, b: TopologyConfig) -> bool:
    # init-only fields do not change the parameter layout
    return replace(a, init_seed=0, final_init="he") == replace(b, init_seed=0, final_init="he")


def load_denoiser(path, config: Optional[TrainingConfig] = None) -> Tuple[WavResNet, InferenceSettings]:
    """Checkpoint plus the settings stored with it; a given config must agree with both"""
    network, metadata = load_checkpoint(path)
    settings = InferenceSettings.from_metadata(metadata)
    if config is not None:
        if not _same_architecture(network.topology, config.topology):
            raise ConfigError(f"checkpoint {path} topology does not match the configured network")
        if settings.decomposition != config.decomposition:
            raise ConfigError(f"checkpoint {path} was trained on a different decomposition")
    return network, settings


def denoise(image, network: WavResNet, settings: Union[InferenceSettings, TrainingConfig, None] = None,
            bank: Optional[FilterBank] = None) -> np.ndarray:
    """Whole-image inference; output has the input's shape"""
    if isinstance(settings, TrainingConfig):
        if not _same_architecture(network.topology, settings.topology):
            raise ConfigError("network topology does not match the training config")
        settings = InferenceSettings.from_training(settings)
    settings = settings or InferenceSettings()
    bank = bank or default_filter_bank()
    image = as_image(image)
    spec = settings.decomposition
    if network.topology.in_channels != spec.n_bands or network.topology.out_channels != spec.n_bands:
        raise ConfigError(f"network channels do not match the {spec.n_bands}-band decomposition")

    x = nsct_forward(image, spec, bank).bands / settings.intensity_scale
    f = network.forward(x[np.newaxis], mode="infer")[0]
    out = x + f if settings.target_mode == "residual" else f
    if settings.lowband_mode == "bypass":
        out[0] = x[0]
    return nsct_inverse(CoeffStack(out * settings.intensity_scale, spec), bank)


def validation_metrics(pairs: Sequence[Tuple[np.ndarray, np.ndarray]], peak: float,
                       restore=None) -> Tuple[float, float]:
    """Average PSNR/NRMSE of restore(quarter) against routine; identity when restore is None"""
    psnrs, errors = [], []
    for routine, quarter in pairs:
        output = quarter if restore is None else restore(quarter)
        psnrs.append(psnr(output, routine, peak))
        errors.append(nrmse(output, routine))
    return float(np.mean(psnrs)), float(np.mean(errors))


@dataclass
class TrainResult:
    network: WavResNet
    convergence: List[ConvergenceRecord]
    final_checkpoint: Path
    best_checkpoint: Path
    convergence_csv: Path
    baseline: Dict[str, float]


class Trainer:
    """Runs one training job and writes its artifacts into out_dir"""

    def __init__(self, config: TrainingConfig, manifest: DatasetManifest, out_dir,
                 network: Optional[WavResNet] = None, bank: Optional[FilterBank] = None,
                 logger: Optional[logging.Logger] = None):
        self.config = config.validate()
        self.manifest = manifest
        self.out_dir = Path(out_dir)
        self.bank = bank or default_filter_bank()
        self.network = network or WavResNet(config.topology)
        self.settings = InferenceSettings.from_training(config)
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def _validation_pairs(self, indices: Sequence[int]) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [self.manifest[i].load_pair() for i in indices]

    def _write_convergence(self, records: List[ConvergenceRecord], path: Path) -> None:
        pd.DataFrame([asdict(r) for r in records], columns=CONVERGENCE_COLUMNS).to_csv(path, index=False)

    def run(self) -> TrainResult:
        config = self.config
        if len(self.manifest) == 0:
            raise ConfigError("empty dataset")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        train_idx, val_idx = config.split(len(self.manifest))
        training_set = build_training_set(self.manifest.subset(train_idx), config, self.bank)
        validation = self._validation_pairs(val_idx)

        peak = 0.0
        baseline = {"val_psnr_db": math.nan, "val_nrmse": math.nan}
        if validation:
            references = [routine for routine, _ in validation]
            peak = float(max(r.max() for r in references) - min(r.min() for r in references))
            baseline_psnr, baseline_nrmse = validation_metrics(validation, peak)
            baseline = {"val_psnr_db": baseline_psnr, "val_nrmse": baseline_nrmse}
            self.logger.info(f"Noisy-input baseline: PSNR {baseline_psnr:.3f} dB, NRMSE {baseline_nrmse:.5f}")
        with open(self.out_dir / "baseline.json", "w", encoding="utf-8") as f:
            json.dump({**baseline, "peak": peak, "validation_slices": [self.manifest[i].name for i in val_idx]},
                      f, indent=2)

        state = TrainState(total_iterations=config.total_iterations, lr=config.lr_start,
                           clip_threshold=config.clip_threshold, rng_seed=config.seed).validate()
        params = self.network.learnable_parameters()
        metadata = config.to_metadata()
        csv_path = self.out_dir / "convergence.csv"
        best_path = self.out_dir / "best.wrn"
        best_score = -math.inf
        window_loss = []

        iterations = tqdm(range(1, config.total_iterations + 1), desc="Training",
                          disable=not progress_enabled())
        for iteration in iterations:
            # first step at lr_start, last one at lr_end
            state.lr = lr_schedule(iteration - 1, config.total_iterations - 1, config.lr_start, config.lr_end)
            inputs, labels = training_set.next_batch(config.mini_batch)
            prediction = self.network.forward(inputs, mode="train")
            if config.lowband_mode == "bypass":
                prediction = prediction.copy()
                prediction[:, 0] = 0.0
            loss, grad = mse_loss(prediction, labels)
            if not math.isfinite(loss):
                raise DivergenceError("non-finite training loss", iteration=iteration)
            if config.lowband_mode == "bypass":
                grad[:, 0] = 0.0
            grads = self.network.backward(grad)
            sgd_step(params, grads, state.lr, state.clip_threshold, config.momentum, state.velocity)
            state.iteration = iteration
            window_loss.append(loss)
            self.logger.debug(f"iteration {iteration}: loss {loss:.6g}, lr {state.lr:.3g}")

            if iteration % config.log_every == 0 or iteration == config.total_iterations:
                if not all(np.all(np.isfinite(p)) for p in params.values()):
                    raise DivergenceError("non-finite network parameters", iteration=iteration)
                record = self._log_row(iteration, state.lr, float(np.mean(window_loss)), validation, peak)
                window_loss = []
                state.convergence_log.append(record)
                self._write_convergence(state.convergence_log, csv_path)
                score = record.val_psnr_db if validation else -record.train_loss
                if score > best_score:
                    best_score = score
                    save_checkpoint(best_path, self.network, {**metadata, "train.iteration": iteration})

        final_path = save_checkpoint(self.out_dir / "final.wrn", self.network,
                                     {**metadata, "train.iteration": config.total_iterations})
        return TrainResult(self.network, state.convergence_log, final_path, best_path, csv_path, baseline)

    def _log_row(self, iteration: int, lr: float, train_loss: float,
                 validation: List[Tuple[np.ndarray, np.ndarray]], peak: float) -> ConvergenceRecord:
        val_psnr, val_nrmse = math.nan, math.nan
        if validation:
            val_psnr, val_nrmse = validation_metrics(
                validation, peak, lambda image: denoise(image, self.network, self.settings, self.bank))
        self.logger.info(f"[{iteration}/{self.config.total_iterations}] loss {train_loss:.6g}, "
                         f"val PSNR {val_psnr:.3f} dB, val NRMSE {val_nrmse:.5f}")
        return ConvergenceRecord(iteration, lr, train_loss, val_psnr, val_nrmse)


def train(config: TrainingConfig, manifest: DatasetManifest, out_dir="run",
          network: Optional[WavResNet] = None) -> TrainResult:
    return Trainer(config, manifest, out_dir, network=network).run()


def compare_convergence(csv_paths: Sequence, labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Per-run summary of convergence CSVs (residual vs direct and the like).

    A baseline.json next to a CSV adds the first logged iteration whose
    validation PSNR beats the noisy input.
    """
    rows = []
    for index, csv_path in enumerate(csv_paths):
        csv_path = Path(csv_path)
        if not csv_path.exists():
            raise ConfigError(f"convergence log {csv_path} not found")
        frame = pd.read_csv(csv_path)
        missing = set(CONVERGENCE_COLUMNS) - set(frame.columns)
        if missing or frame.empty:
            raise ConfigError(f"{csv_path} is not a convergence log")
        last = frame.iloc[-1]
        row = {
            "run": labels[index] if labels else csv_path.parent.name or csv_path.stem,
            "iterations": int(last["iteration"]),
            "final_psnr_db": float(last["val_psnr_db"]),
            "final_nrmse": float(last["val_nrmse"]),
            "best_psnr_db": float(frame["val_psnr_db"].max()),
            "best_nrmse": float(frame["val_nrmse"].min()),
            "beats_baseline_at": math.nan,
        }
        baseline_path = csv_path.parent / "baseline.json"
        if baseline_path.exists():
            with open(baseline_path, "r", encoding="utf-8") as f:
                baseline = json.load(f)
            row["baseline_psnr_db"] = baseline.get("val_psnr_db", math.nan)
            better = frame[frame["val_psnr_db"] > row["baseline_psnr_db"]]
            if not better.empty:
                row["beats_baseline_at"] = int(better["iteration"].iloc[0])
        rows.append(row)
    return pd.DataFrame(rows)
