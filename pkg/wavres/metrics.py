"""
Metrics - PSNR, NRMSE, SSIM and dataset-level reports
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from skimage.metrics import normalized_root_mse, peak_signal_noise_ratio, structural_similarity

from .core_image import as_image
from .errors import DimensionError, ParameterError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["slice", "method", "psnr_db", "nrmse", "ssim"]

# Gaussian-weighted SSIM: sigma 1.5 gives an 11x11 window
SSIM_SIGMA = 1.5


def _pair(test, reference) -> Tuple[np.ndarray, np.ndarray]:
    test = as_image(test, "test image")
    reference = as_image(reference, "reference image")
    if test.shape != reference.shape:
        raise DimensionError(f"test {test.shape} and reference {reference.shape} differ in size")
    return test, reference


def psnr(test, reference, peak: float) -> float:
    """10 log10(peak^2 / MSE) in dB; identical images give +inf"""
    if peak <= 0:
        raise ParameterError(f"PSNR peak must be positive, got {peak}")
    test, reference = _pair(test, reference)
    if np.array_equal(test, reference):
        return math.inf
    return float(peak_signal_noise_ratio(reference, test, data_range=peak))


def nrmse(test, reference) -> float:
    """||test - reference||_2 / ||reference||_2"""
    test, reference = _pair(test, reference)
    if np.array_equal(test, reference):
        return 0.0
    return float(normalized_root_mse(reference, test, normalization="euclidean"))


def ssim(test, reference, dynamic_range: float) -> float:
    """Mean local SSIM, Gaussian window sigma 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2"""
    if dynamic_range <= 0:
        raise ParameterError(f"SSIM dynamic range must be positive, got {dynamic_range}")
    test, reference = _pair(test, reference)
    if np.array_equal(test, reference):
        return 1.0
    return float(structural_similarity(
        reference, test,
        data_range=dynamic_range,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
    ))


@dataclass
class MetricReport:
    method: str
    psnr_db: List[float] = field(default_factory=list)
    nrmse: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)
    slice_ids: List[str] = field(default_factory=list)

    @property
    def slice_count(self) -> int:
        return len(self.psnr_db)

    @property
    def average_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else math.nan

    @property
    def average_nrmse(self) -> float:
        return float(np.mean(self.nrmse)) if self.nrmse else math.nan

    @property
    def average_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def averages(self) -> dict:
        return {"psnr_db": self.average_psnr, "nrmse": self.average_nrmse, "ssim": self.average_ssim}

    def to_frame(self, include_average: bool = True) -> pd.DataFrame:
        rows = [
            {"slice": sid, "method": self.method, "psnr_db": p, "nrmse": n, "ssim": s}
            for sid, p, n, s in zip(self.slice_ids, self.psnr_db, self.nrmse, self.ssim)
        ]
        if include_average:
            rows.append({"slice": "average", "method": self.method, **self.averages()})
        return pd.DataFrame(rows, columns=CSV_COLUMNS)

    def to_csv(self, path) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        return path

    def to_table(self) -> str:
        return self.to_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}")


def evaluate_dataset(pairs: Sequence[Tuple[np.ndarray, np.ndarray]], peak: Optional[float] = None,
                     dynamic_range: Optional[float] = None, method: str = "test",
                     slice_ids: Optional[Sequence[str]] = None) -> MetricReport:
    """Per-slice metrics; peak and range default to max - min over all references"""
    if not pairs:
        raise ParameterError("no image pairs to evaluate")
    references = [np.asarray(ref) for _, ref in pairs]
    spread = float(max(r.max() for r in references) - min(r.min() for r in references))
    peak = peak or spread
    dynamic_range = dynamic_range or spread
    if peak <= 0 or dynamic_range <= 0:
        raise ParameterError("reference images are constant; give peak and range explicitly")

    report = MetricReport(method=method)
    ids = list(slice_ids) if slice_ids is not None else [str(i) for i in range(len(pairs))]
    for sid, (test, reference) in zip(ids, pairs):
        report.slice_ids.append(sid)
        report.psnr_db.append(psnr(test, reference, peak))
        report.nrmse.append(nrmse(test, reference))
        report.ssim.append(ssim(test, reference, dynamic_range))
    logger.debug(f"{method}: PSNR {report.average_psnr:.2f} dB, NRMSE {report.average_nrmse:.4f}, "
                 f"SSIM {report.average_ssim:.4f} over {report.slice_count} slices")
    return report


def combine_reports(reports: Sequence[MetricReport]) -> pd.DataFrame:
    """Per-slice rows of every report followed by one average row per method"""
    frames = [r.to_frame(include_average=False) for r in reports]
    averages = pd.DataFrame(
        [{"slice": "average", "method": r.method, **r.averages()} for r in reports],
        columns=CSV_COLUMNS,
    )
    return pd.concat(frames + [averages], ignore_index=True)
