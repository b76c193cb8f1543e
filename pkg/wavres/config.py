"""
Configuration - built-in defaults, key=value files and --set overrides

Every key is namespaced (sim.*, nsct.*, net.*, train.*, mbir.*, eval.*).
Values stay strings in the raw mapping; the typed views parse them and
report the offending key on failure.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .core_image import read_key_values
from .ct_sim import GeometryConfig, SimConfig
from .errors import ConfigError, FormatError, ParameterError, WavResError
from .mbir import TVParams
from .nsct import DecompositionSpec
from .optim import LR_MAX, LR_MIN
from .wavresnet import TopologyConfig

logger = logging.getLogger(__name__)

NAMESPACES = ("sim", "nsct", "net", "train", "mbir", "eval")
TARGET_MODES = ("residual", "direct")
LOWBAND_MODES = ("learned", "bypass")

DEFAULTS: Dict[str, str] = {
    # acquisition and dose
    "sim.beam": "parallel",
    "sim.n_views": "360",
    "sim.n_detectors": "0",
    "sim.view_range": "0",
    "sim.detector_spacing": "0",
    "sim.source_iso": "4.0",
    "sim.source_det": "8.0",
    "sim.image_size": "128",
    "sim.mu_water": "0.2",
    "sim.fov_cm": "25.0",
    "sim.i0_routine": "1e5",
    "sim.dose_fraction": "0.25",
    "sim.filter": "hann",
    "sim.phantom": "random",
    "sim.n_phantoms": "10",
    "sim.seed": "2017",
    # transform
    "nsct.levels": "4",
    "nsct.directions": "4,4,4,2",
    # network
    "net.in_channels": "15",
    "net.channels": "128",
    "net.modules": "6",
    "net.convs_per_module": "3",
    "net.post_convs": "4",
    "net.out_channels": "15",
    "net.bypass": "add_relu",
    "net.bn_eps": "1e-5",
    "net.bn_momentum": "0.9",
    "net.final_init": "he",
    "net.init_seed": "0",
    # training
    "train.total_iterations": "500",
    "train.mini_batch": "10",
    "train.patch_size": "55",
    "train.patch_stride": "5",
    "train.lr_start": "0.01",
    "train.lr_end": "1e-5",
    "train.clip_threshold": "1e-3",
    "train.momentum": "0",
    "train.seed": "0",
    "train.target_mode": "residual",
    "train.lowband_mode": "learned",
    "train.validation_slices": "last",
    "train.log_every": "50",
    "train.intensity_scale": "100",
    # MBIR-TV
    "mbir.lambda": "0.05",
    "mbir.rho": "1.0",
    "mbir.outer_iters": "30",
    "mbir.cg_iters": "10",
    "mbir.chambolle_iters": "50",
    "mbir.chambolle_step": "0.125",
    "mbir.tolerance": "1e-6",
    "mbir.lambda_grid": "0.001,0.003,0.01,0.03,0.1,0.3",
    # evaluation
    "eval.peak": "0",
    "eval.dynamic_range": "0",
    "eval.window_lo": "-160",
    "eval.window_hi": "240",
    "eval.diff_window": "70",
    "eval.roi": "",
    "eval.roi_zoom": "3",
}


@dataclass
class TrainingConfig:
    decomposition: DecompositionSpec = field(default_factory=DecompositionSpec)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    total_iterations: int = 500
    mini_batch: int = 10
    patch_size: int = 55
    patch_stride: int = 5
    lr_start: float = 0.01
    lr_end: float = 1e-5
    clip_threshold: float = 1e-3
    momentum: float = 0.0
    seed: int = 0
    target_mode: str = "residual"
    lowband_mode: str = "learned"
    validation_slices: str = "last"
    log_every: int = 50
    intensity_scale: float = 100.0

    def validate(self) -> "TrainingConfig":
        self.decomposition.validate()
        self.topology.validate()
        if self.mini_batch < 1:
            raise ParameterError(f"train.mini_batch must be >= 1, got {self.mini_batch}")
        if self.patch_size < 8:
            raise ParameterError(f"train.patch_size must be >= 8, got {self.patch_size}")
        if self.patch_stride < 1:
            raise ParameterError(f"train.patch_stride must be >= 1, got {self.patch_stride}")
        if self.total_iterations < 1:
            raise ParameterError(f"train.total_iterations must be >= 1, got {self.total_iterations}")
        if self.log_every < 1:
            raise ParameterError(f"train.log_every must be >= 1, got {self.log_every}")
        for key, rate in (("train.lr_start", self.lr_start), ("train.lr_end", self.lr_end)):
            if not LR_MIN <= rate <= LR_MAX:
                raise ParameterError(f"{key} must be in [{LR_MIN}, {LR_MAX}], got {rate}")
        if self.clip_threshold <= 0:
            raise ParameterError(f"train.clip_threshold must be positive, got {self.clip_threshold}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"train.momentum must be in [0, 1), got {self.momentum}")
        if self.intensity_scale <= 0:
            raise ParameterError(f"train.intensity_scale must be positive, got {self.intensity_scale}")
        if self.target_mode not in TARGET_MODES:
            raise ParameterError(f"train.target_mode must be one of {TARGET_MODES}, got '{self.target_mode}'")
        if self.lowband_mode not in LOWBAND_MODES:
            raise ParameterError(f"train.lowband_mode must be one of {LOWBAND_MODES}, got '{self.lowband_mode}'")
        if self.target_mode == "direct" and self.lowband_mode != "bypass":
            # direct mode copies the lowpass band from the input
            raise ConfigError("train.target_mode=direct needs train.lowband_mode=bypass")
        bands = self.decomposition.n_bands
        if self.topology.in_channels != bands or self.topology.out_channels != bands:
            raise ConfigError(
                f"network maps {self.topology.in_channels}->{self.topology.out_channels} channels, "
                f"the decomposition has {bands} bands"
            )
        return self

    def split(self, n_pairs: int) -> Tuple[List[int], List[int]]:
        """(training indices, validation indices) over the manifest pairs"""
        if n_pairs < 1:
            raise ConfigError("dataset has no pairs")
        spec = self.validation_slices.strip()
        if spec == "last":
            validation = [n_pairs - 1] if n_pairs > 1 else []
        elif spec in ("", "none"):
            validation = []
        else:
            try:
                validation = sorted({int(token) for token in spec.split(",")})
            except ValueError as e:
                raise ConfigError(f"bad train.validation_slices '{spec}'") from e
            if any(not 0 <= i < n_pairs for i in validation):
                raise ConfigError(f"validation slice outside 0..{n_pairs - 1}: {spec}")
        training = [i for i in range(n_pairs) if i not in validation]
        if not training:
            raise ConfigError("no training pairs left after the validation split")
        return training, validation

    def to_metadata(self) -> Dict[str, object]:
        """Run settings a checkpoint needs for inference"""
        metadata = dict(self.decomposition.to_mapping())
        metadata.update({
            "train.target_mode": self.target_mode,
            "train.lowband_mode": self.lowband_mode,
            "train.intensity_scale": repr(float(self.intensity_scale)),
        })
        return metadata


@dataclass(frozen=True)
class EvalConfig:
    peak: float = 0.0
    dynamic_range: float = 0.0
    window_lo: float = -160.0
    window_hi: float = 240.0
    diff_window: float = 70.0
    roi: Optional[Tuple[int, int, int]] = None
    roi_zoom: int = 3

    def validate(self) -> "EvalConfig":
        if self.peak < 0 or self.dynamic_range < 0:
            raise ParameterError("eval.peak and eval.dynamic_range must be >= 0")
        if not self.window_lo < self.window_hi:
            raise ParameterError("eval.window_lo must be below eval.window_hi")
        if self.diff_window <= 0:
            raise ParameterError("eval.diff_window must be positive")
        if self.roi_zoom < 1:
            raise ParameterError("eval.roi_zoom must be >= 1")
        if self.roi is not None and (self.roi[2] < 1 or min(self.roi[:2]) < 0):
            raise ParameterError(f"bad eval.roi {self.roi}")
        return self


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """['key=value', ...] from repeated --set flags"""
    overrides = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override '{item}' is not key=value")
        overrides[key.strip()] = value.strip()
    return overrides


class WavResConfig:
    """Raw key=value mapping with typed section views"""

    def __init__(self, values: Optional[Mapping[str, str]] = None, source: Optional[Path] = None):
        self.values: Dict[str, str] = dict(DEFAULTS)
        self.source = source
        if values:
            self.update(values)

    def update(self, values: Mapping[str, str]) -> None:
        for key, value in values.items():
            namespace = key.split(".", 1)[0]
            if namespace not in NAMESPACES:
                raise ConfigError(f"unknown config namespace in key '{key}'")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key '{key}'")
            self.values[key] = "" if value is None else str(value).strip()

    def __getitem__(self, key: str) -> str:
        return self.values[key]

    def section(self, namespace: str) -> Dict[str, str]:
        prefix = f"{namespace}."
        return {k: v for k, v in self.values.items() if k.startswith(prefix)}

    def get_int(self, key: str) -> int:
        return self._parse(key, int)

    def get_float(self, key: str) -> float:
        return self._parse(key, float)

    def get_floats(self, key: str) -> List[float]:
        raw = self.values[key]
        return [self._convert(key, float, token) for token in raw.split(",") if token.strip()]

    def _parse(self, key: str, kind):
        return self._convert(key, kind, self.values[key])

    @staticmethod
    def _convert(key: str, kind, raw: str):
        try:
            if kind is int:
                # accepts 1e5 style integers
                value = float(raw)
                if not value.is_integer():
                    raise ValueError(raw)
                return int(value)
            return kind(raw)
        except ValueError as e:
            raise ConfigError(f"cannot parse {key}={raw!r} as {kind.__name__}") from e

    def _typed(self, build):
        try:
            return build()
        except ConfigError:
            raise
        except (ParameterError, FormatError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def sim_config(self) -> SimConfig:
        return self._typed(lambda: SimConfig(
            mu_water=self.get_float("sim.mu_water"),
            fov_cm=self.get_float("sim.fov_cm"),
            i0_routine=self.get_float("sim.i0_routine"),
            dose_fraction=self.get_float("sim.dose_fraction"),
            filter=self["sim.filter"],
            phantom=self["sim.phantom"],
            n_phantoms=self.get_int("sim.n_phantoms"),
            seed=self.get_int("sim.seed"),
        ).validate())

    def geometry(self) -> GeometryConfig:
        """Acquisition geometry; zero detector count, spacing or view range are derived"""
        def build():
            beam = self["sim.beam"]
            view_range = self.get_float("sim.view_range")
            derived = GeometryConfig.for_image(
                self.get_int("sim.image_size"),
                n_views=self.get_int("sim.n_views"),
                beam=beam,
                source_iso=self.get_float("sim.source_iso"),
                source_det=self.get_float("sim.source_det"),
                view_range=view_range if view_range > 0 else None,
            )
            n_detectors = self.get_int("sim.n_detectors") or derived.n_detectors
            spacing = self.get_float("sim.detector_spacing") or derived.detector_spacing
            return GeometryConfig(
                beam=beam,
                n_views=derived.n_views,
                n_detectors=n_detectors,
                view_range=derived.view_range,
                detector_spacing=spacing,
                image_size=derived.image_size,
                source_iso=derived.source_iso,
                source_det=derived.source_det,
            ).validate()
        return self._typed(build)

    def decomposition(self) -> DecompositionSpec:
        return self._typed(lambda: DecompositionSpec.from_mapping(self.section("nsct")))

    def topology(self) -> TopologyConfig:
        return self._typed(lambda: TopologyConfig.from_mapping(self.section("net")))

    def training(self) -> TrainingConfig:
        return self._typed(lambda: TrainingConfig(
            decomposition=self.decomposition(),
            topology=self.topology(),
            total_iterations=self.get_int("train.total_iterations"),
            mini_batch=self.get_int("train.mini_batch"),
            patch_size=self.get_int("train.patch_size"),
            patch_stride=self.get_int("train.patch_stride"),
            lr_start=self.get_float("train.lr_start"),
            lr_end=self.get_float("train.lr_end"),
            clip_threshold=self.get_float("train.clip_threshold"),
            momentum=self.get_float("train.momentum"),
            seed=self.get_int("train.seed"),
            target_mode=self["train.target_mode"],
            lowband_mode=self["train.lowband_mode"],
            validation_slices=self["train.validation_slices"],
            log_every=self.get_int("train.log_every"),
            intensity_scale=self.get_float("train.intensity_scale"),
        ).validate())

    def tv_params(self) -> TVParams:
        return self._typed(lambda: TVParams(
            lam=self.get_float("mbir.lambda"),
            rho=self.get_float("mbir.rho"),
            outer_iters=self.get_int("mbir.outer_iters"),
            cg_iters=self.get_int("mbir.cg_iters"),
            chambolle_iters=self.get_int("mbir.chambolle_iters"),
            chambolle_step=self.get_float("mbir.chambolle_step"),
            tolerance=self.get_float("mbir.tolerance"),
        ).validate())

    def lambda_grid(self) -> List[float]:
        grid = self.get_floats("mbir.lambda_grid")
        if not grid:
            raise ConfigError("mbir.lambda_grid is empty")
        return grid

    def eval_config(self) -> EvalConfig:
        def build():
            roi = None
            raw = self["eval.roi"]
            if raw:
                parts = [self._convert("eval.roi", int, token) for token in raw.split(",")]
                if len(parts) != 3:
                    raise ConfigError(f"eval.roi needs row,col,size, got '{raw}'")
                roi = tuple(parts)
            return EvalConfig(
                peak=self.get_float("eval.peak"),
                dynamic_range=self.get_float("eval.dynamic_range"),
                window_lo=self.get_float("eval.window_lo"),
                window_hi=self.get_float("eval.window_hi"),
                diff_window=self.get_float("eval.diff_window"),
                roi=roi,
                roi_zoom=self.get_int("eval.roi_zoom"),
            ).validate()
        return self._typed(build)


def load_config(path=None, overrides: Iterable[str] = ()) -> WavResConfig:
    """Defaults, then the file (argument or WAVRES_CONFIG), then overrides"""
    path = path or os.getenv("WAVRES_CONFIG") or None
    config = WavResConfig()
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            config.update(read_key_values(path))
        except WavResError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{path}: {e}") from e
        config.source = path
        logger.debug(f"Loaded config from {path}")
    config.update(parse_overrides(overrides))
    return config
