"""
Evaluation - side-by-side comparison of the noisy input, MBIR-TV and the
trained networks on held-out slices, with windowed image exports
"""

import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np
from tqdm import tqdm

from .config import EvalConfig, TrainingConfig
from .core_image import window_hu, write_pgm
from .ct_sim import SimConfig, load_sinogram, to_hu
from .dataset import DatasetManifest, progress_enabled
from .errors import ConfigError, ParameterError
from .filters import default_filter_bank
from .mbir import TVParams, admm_tv_reconstruct
from .metrics import evaluate_dataset
from .reports import BASELINE_METHOD, ComparisonReport, ReportGenerator
from .training import denoise, load_denoiser

logger = logging.getLogger(__name__)

MBIR_METHOD = "mbir_tv"
# display order; networks follow MBIR
NETWORK_ORDER = ("direct", "residual")


def roi_crop(image: np.ndarray, roi, zoom: int) -> np.ndarray:
    """Square region (row, col, size) magnified by pixel replication"""
    row, col, size = roi
    if row + size > image.shape[0] or col + size > image.shape[1]:
        raise ParameterError(f"ROI {roi} exceeds the {image.shape[0]}x{image.shape[1]} image")
    crop = image[row:row + size, col:col + size]
    return np.repeat(np.repeat(crop, zoom, axis=0), zoom, axis=1)


def export_images(out_dir: Path, name: str, image: np.ndarray, reference: Optional[np.ndarray],
                  settings: EvalConfig) -> List[str]:
    """Windowed image, difference to the reference and ROI crops as PGM"""
    written = []

    def save(suffix, values, lo, hi):
        path = out_dir / f"{name}{suffix}.pgm"
        write_pgm(path, window_hu(values, lo, hi))
        written.append(path.name)

    save("", image, settings.window_lo, settings.window_hi)
    if reference is not None:
        save("_diff", image - reference, -settings.diff_window, settings.diff_window)
    if settings.roi is not None:
        save("_roi", roi_crop(image, settings.roi, settings.roi_zoom), settings.window_lo, settings.window_hi)
    return written


def compare_methods(validation: DatasetManifest, checkpoints: Mapping[str, object],
                    tv_params: Optional[TVParams] = None, sim: Optional[SimConfig] = None,
                    settings: Optional[EvalConfig] = None, out_dir="compare",
                    training: Optional[TrainingConfig] = None, include_mbir: bool = True,
                    write_reports: bool = True) -> ComparisonReport:
    """Metric table of every method against the routine-dose image of each slice.

    `checkpoints` maps a method name (direct, residual, ...) to a WRN1 path.
    """
    if len(validation) == 0:
        raise ConfigError("no validation slices to compare on")
    settings = (settings or EvalConfig()).validate()
    sim = (sim or SimConfig()).validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bank = default_filter_bank()

    denoisers = {}
    ordered = sorted(checkpoints, key=lambda m: (NETWORK_ORDER.index(m) if m in NETWORK_ORDER else len(NETWORK_ORDER), m))
    for method in ordered:
        path = Path(checkpoints[method])
        if not path.exists():
            raise ConfigError(f"checkpoint for '{method}' not found: {path}")
        denoisers[method] = load_denoiser(path, training)

    methods = [BASELINE_METHOD] + ([MBIR_METHOD] if include_mbir else []) + ordered
    outputs: Dict[str, List] = {method: [] for method in methods}
    references, slice_ids, artifacts = [], [], []

    for entry in tqdm(validation.entries, desc="Evaluating slices", disable=not progress_enabled()):
        routine, quarter = entry.load_pair()
        references.append(routine)
        slice_ids.append(entry.name)
        outputs[BASELINE_METHOD].append(quarter)
        if include_mbir:
            sino = load_sinogram(entry.artifact("quarter_sino"))
            image, log = admm_tv_reconstruct(sino, params=tv_params)
            logger.debug(f"{entry.name}: MBIR-TV stopped after {len(log)} iterations")
            outputs[MBIR_METHOD].append(to_hu(image, sim))
        for method, (network, inference) in denoisers.items():
            outputs[method].append(denoise(quarter, network, inference, bank))

        artifacts.extend(export_images(out_dir, f"{entry.name}_routine", routine, None, settings))
        for method in methods:
            artifacts.extend(export_images(out_dir, f"{entry.name}_{method}", outputs[method][-1], routine, settings))

    reports = [
        evaluate_dataset(list(zip(outputs[method], references)),
                         peak=settings.peak or None, dynamic_range=settings.dynamic_range or None,
                         method=method, slice_ids=slice_ids)
        for method in methods
    ]
    report = ComparisonReport.from_metric_reports(
        reports,
        artifacts=artifacts,
        settings={
            "checkpoints": {m: str(p) for m, p in checkpoints.items()},
            "mbir": asdict(tv_params) if tv_params else "defaults",
            "window": [settings.window_lo, settings.window_hi],
            "diff_window": settings.diff_window,
        },
    )
    if write_reports:
        generator = ReportGenerator(out_dir)
        generator.save_metric_csv(report)
        generator.save_json_report(report)
        generator.save_markdown_report(report)
    return report
