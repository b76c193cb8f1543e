#!/usr/bin/env python3
"""
Real-time monitoring of a training run's convergence log
"""

import argparse
import time
from datetime import datetime
from pathlib import Path

import pandas as pd
from colorama import init, Fore, Style

init()


def monitor_training(run_dir: Path, interval: float = 2.0):
    """Print new convergence rows as the trainer appends them"""
    log_file = run_dir / "convergence.csv"
    print(f"{Fore.CYAN}{'='*60}{Style.RESET_ALL}")
    print(f"{Fore.CYAN}WavRes - Training Monitor ({run_dir}){Style.RESET_ALL}")
    print(f"{Fore.CYAN}{'='*60}{Style.RESET_ALL}\n")
    print("Press Ctrl+C to stop monitoring\n")

    seen = 0
    best_psnr = float("-inf")

    try:
        while True:
            if log_file.exists():
                try:
                    frame = pd.read_csv(log_file)
                except (pd.errors.EmptyDataError, pd.errors.ParserError):
                    # file is being written, try again
                    frame = None

                if frame is not None and len(frame) > seen:
                    for _, row in frame.iloc[seen:].iterrows():
                        improved = row["val_psnr_db"] > best_psnr
                        best_psnr = max(best_psnr, row["val_psnr_db"])
                        color = Fore.GREEN if improved else Fore.WHITE
                        print(f"{color}[{datetime.now().strftime('%H:%M:%S')}] iteration {int(row['iteration'])}: "
                              f"loss {row['train_loss']:.4e}, PSNR {row['val_psnr_db']:.2f} dB, "
                              f"NRMSE {row['val_nrmse']:.5f}, lr {row['lr']:.2e}{Style.RESET_ALL}")
                    seen = len(frame)

            time.sleep(interval)

    except KeyboardInterrupt:
        print(f"\n\n{Fore.YELLOW}Monitoring stopped.{Style.RESET_ALL}")
        if seen:
            print(f"\n{Fore.GREEN}Logged rows: {seen}, best validation PSNR {best_psnr:.2f} dB{Style.RESET_ALL}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Follow convergence.csv of a running training job")
    parser.add_argument('run_dir', nargs='?', default='run')
    parser.add_argument('--interval', type=float, default=2.0, help='seconds between polls')
    args = parser.parse_args()
    monitor_training(Path(args.run_dir), args.interval)
