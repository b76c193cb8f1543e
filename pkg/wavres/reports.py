"""
Report Generator - JSON, Markdown, CSV and console summaries of method comparisons
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from colorama import Fore, Style

from .metrics import CSV_COLUMNS, MetricReport, combine_reports

logger = logging.getLogger(__name__)

BASELINE_METHOD = "quarter_dose"


@dataclass
class ComparisonReport:
    """Everything compare_methods produced for one validation set"""
    methods: List[str]
    slices: List[str]
    rows: List[Dict] = field(default_factory=list)
    averages: Dict[str, Dict[str, float]] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    settings: Dict[str, object] = field(default_factory=dict)
    generated_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))

    @classmethod
    def from_metric_reports(cls, reports: List[MetricReport], **kwargs) -> "ComparisonReport":
        table = combine_reports(reports)
        return cls(
            methods=[r.method for r in reports],
            slices=list(reports[0].slice_ids) if reports else [],
            rows=table.to_dict(orient="records"),
            averages={r.method: r.averages() for r in reports},
            **kwargs,
        )

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=CSV_COLUMNS)

    def gain_over_baseline(self, method: str) -> float:
        """Average PSNR gain in dB over the noisy input; NaN when there is no baseline row"""
        if BASELINE_METHOD not in self.averages or method not in self.averages:
            return math.nan
        return self.averages[method]["psnr_db"] - self.averages[BASELINE_METHOD]["psnr_db"]


class ReportGenerator:
    """Generate various report formats"""

    def __init__(self, out_dir=".", logger: Optional[logging.Logger] = None):
        self.out_dir = Path(out_dir)
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def save_json_report(self, report: ComparisonReport, filename: str = "comparison.json") -> Path:
        """Save report as JSON"""
        path = self.out_dir / filename
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(report), f, ensure_ascii=False, indent=2, default=str)
        self.logger.info(f"JSON report saved to {path}")
        return path

    def save_metric_csv(self, report: ComparisonReport, filename: str = "metrics.csv") -> Path:
        path = self.out_dir / filename
        report.table().to_csv(path, index=False)
        self.logger.info(f"Metric table saved to {path}")
        return path

    def save_markdown_report(self, report: ComparisonReport, filename: str = "comparison.md") -> Path:
        """Save report as Markdown"""
        lines = [
            "# Low-dose CT denoising - method comparison",
            "",
            f"**Generated**: {report.generated_at}",
            f"**Validation slices**: {', '.join(report.slices)}",
            f"**Methods**: {', '.join(report.methods)}",
            "",
            "## Averages",
            "",
            "| method | PSNR [dB] | NRMSE | SSIM | gain [dB] |",
            "|---|---|---|---|---|",
        ]
        for method in report.methods:
            avg = report.averages[method]
            gain = report.gain_over_baseline(method)
            gain_text = "-" if math.isnan(gain) or method == BASELINE_METHOD else f"{self._get_gain_emoji(gain)} {gain:+.2f}"
            lines.append(f"| {method} | {avg['psnr_db']:.2f} | {avg['nrmse']:.4f} | {avg['ssim']:.4f} | {gain_text} |")

        lines.extend(["", "## Per slice", "", "```", report.table().to_string(index=False), "```", ""])

        if report.settings:
            lines.extend(["## Settings", ""])
            lines.extend(f"- `{key}` = {value}" for key, value in report.settings.items())
            lines.append("")

        if report.artifacts:
            lines.extend(["## Images", ""])
            lines.extend(f"- `{name}`" for name in report.artifacts)
            lines.append("")

        path = self.out_dir / filename
        with open(path, 'w', encoding='utf-8') as f:
            f.write('\n'.join(lines))
        self.logger.info(f"Markdown report saved to {path}")
        return path

    def print_summary(self, report: ComparisonReport):
        """Print colored summary to console"""
        print(f"\n{Fore.CYAN}{'='*60}{Style.RESET_ALL}")
        print(f"{Fore.CYAN}Method comparison over {len(report.slices)} slice(s){Style.RESET_ALL}")
        print(f"{Fore.CYAN}{'='*60}{Style.RESET_ALL}\n")

        print(f"{Fore.YELLOW}{'method':<16}{'PSNR [dB]':>11}{'NRMSE':>10}{'SSIM':>9}{'gain':>9}{Style.RESET_ALL}")
        for method in report.methods:
            avg = report.averages[method]
            gain = report.gain_over_baseline(method)
            color = Fore.WHITE if method == BASELINE_METHOD or math.isnan(gain) else self._get_gain_color(gain)
            gain_text = "" if method == BASELINE_METHOD or math.isnan(gain) else f"{gain:+.2f}"
            print(f"{color}{method:<16}{avg['psnr_db']:>11.2f}{avg['nrmse']:>10.4f}"
                  f"{avg['ssim']:>9.4f}{gain_text:>9}{Style.RESET_ALL}")

        if report.artifacts:
            print(f"\n{Fore.GREEN}✓ {len(report.artifacts)} image(s) written{Style.RESET_ALL}")
        print()

    def print_convergence(self, summary: pd.DataFrame):
        """Console view of compare_convergence output"""
        print(f"\n{Fore.CYAN}{'='*60}{Style.RESET_ALL}")
        print(f"{Fore.CYAN}Convergence comparison{Style.RESET_ALL}")
        print(f"{Fore.CYAN}{'='*60}{Style.RESET_ALL}\n")
        best = summary["final_nrmse"].min() if not summary.empty else math.nan
        for _, row in summary.iterrows():
            color = Fore.GREEN if row["final_nrmse"] == best else Fore.WHITE
            print(f"{color}{row['run']:<20} PSNR {row['final_psnr_db']:.2f} dB (best {row['best_psnr_db']:.2f}), "
                  f"NRMSE {row['final_nrmse']:.5f} after {row['iterations']} iterations{Style.RESET_ALL}")
        print()

    def _get_gain_color(self, gain: float):
        """Get color based on PSNR gain"""
        if gain >= 1.0:
            return Fore.GREEN
        elif gain >= 0.0:
            return Fore.YELLOW
        else:
            return Fore.RED

    def _get_gain_emoji(self, gain: float) -> str:
        if gain >= 1.0:
            return "✅"
        elif gain >= 0.0:
            return "⚠️"
        else:
            return "❌"
