#!/usr/bin/env python3
"""
Display comparison and training results in a readable format and regenerate the markdown report
"""

import argparse
import json
import sys
from pathlib import Path

from colorama import init, Fore, Style

from wavres.errors import WavResError
from wavres.reports import ComparisonReport, ReportGenerator
from wavres.training import compare_convergence

init()


def load_comparison(path: Path) -> ComparisonReport:
    """Rebuild a ComparisonReport from comparison.json"""
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    return ComparisonReport(**data)


def show_comparison(out_dir: Path, markdown: bool) -> bool:
    result_file = out_dir / "comparison.json"
    if not result_file.exists():
        return False
    print(f"{Fore.GREEN}Showing comparison from {result_file}...{Style.RESET_ALL}")
    report = load_comparison(result_file)
    generator = ReportGenerator(out_dir)
    generator.print_summary(report)
    if markdown:
        path = generator.save_markdown_report(report)
        print(f"{Fore.GREEN}✅ Markdown report regenerated: {path}{Style.RESET_ALL}")
    return True


def show_runs(run_dirs, summary_path: Path) -> bool:
    logs = [Path(d) / "convergence.csv" for d in run_dirs if (Path(d) / "convergence.csv").exists()]
    if not logs:
        return False
    summary = compare_convergence(logs)
    ReportGenerator().print_convergence(summary)
    summary.to_csv(summary_path, index=False)
    print(f"{Fore.GREEN}✅ Convergence summary saved: {summary_path}{Style.RESET_ALL}")
    return True


def show_results():
    """Display whatever result files the given directories hold"""
    parser = argparse.ArgumentParser(description="Show WavRes comparison and training results")
    parser.add_argument('dirs', nargs='*', default=['compare'],
                        help='compare output directory and/or training run directories')
    parser.add_argument('--markdown', action='store_true', help='rewrite comparison.md from comparison.json')
    parser.add_argument('--summary', default='convergence_summary.csv', help='where to save the convergence summary')
    args = parser.parse_args()

    found = False
    try:
        for directory in args.dirs:
            found |= show_comparison(Path(directory), args.markdown)
        found |= show_runs(args.dirs, Path(args.summary))
    except json.JSONDecodeError:
        print(f"{Fore.RED}Error reading JSON file. It may be corrupted or being written.{Style.RESET_ALL}")
        sys.exit(2)
    except WavResError as e:
        print(f"{Fore.RED}Error: {e}{Style.RESET_ALL}")
        sys.exit(e.exit_code)

    if not found:
        print(f"{Fore.RED}No results found. Run 'wavres_cli.py train' or 'wavres_cli.py compare' first.{Style.RESET_ALL}")
        sys.exit(1)


if __name__ == "__main__":
    show_results()
