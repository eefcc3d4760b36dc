#!/usr/bin/env python3
"""Tabulate saved Monte Carlo summaries and compare methods across studies."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.config import settings  # noqa: E402
from src.services.summary_history import load_summaries, summarize_summaries  # noqa: E402


def _fmt(value, width: int = 9) -> str:
    if isinstance(value, (int, float)):
        return f"{value:<{width}.4f}"
    return f"{'-':<{width}}"


def analyze_montecarlo(directory: str) -> None:
    summaries = load_summaries(directory)
    if not summaries:
        print(f"No Monte Carlo summaries found in {directory}. Run `python -m src.main montecarlo` first.")
        return

    summary = summarize_summaries(summaries)
    print(f"\n{'=' * 78}")
    print(f"MONTE CARLO SUMMARIES ({len(summaries)} files)")
    print(f"{'=' * 78}\n")

    print(f"{'#':<4} {'File':<22} {'Case':<6} {'Method':<11} {'Runs':<5} {'Fail':<5} {'Fit IR':<9} {'Fit th':<9} {'sigma2':<9}")
    print("-" * 78)
    for row in summary["rows"]:
        fit = row["Fit IR"]
        fit_str = _fmt(fit)
        if isinstance(fit, (int, float)):
            colour = "92" if fit >= 0.8 else "93" if fit >= 0.6 else "91"
            fit_str = f"\033[{colour}m{fit_str}\033[0m"
        print(
            f"{row['#']:<4} {row['File'][:21]:<22} {str(row['Case']):<6} {row['Method']:<11} "
            f"{row['Runs']!s:<5} {row['Failures']!s:<5} {fit_str} {_fmt(row['Fit theta'])} {_fmt(row['sigma2'])}"
        )
    print("-" * 78)

    if summary["stats"]:
        print("\nMedian impulse-response fit per method:")
        for method, stats in summary["stats"].items():
            trend = stats["trend"]
            print(
                f"  {method:<11} best {stats['best']:.4f}  worst {stats['worst']:.4f}  "
                f"avg {stats['avg']:.4f}  trend {'↑' if trend > 0 else '↓'} {abs(trend):.4f}"
            )

    best = summary["best"]
    if best:
        print(f"\n🏆 Best study: {Path(best['path']).name}")
        print(f"   Options: case={best['options'].get('case')} runs={best['options'].get('runs')} "
              f"N={best['options'].get('samples')} l={best['options'].get('kernel_length')}")
    print(f"\n{'=' * 78}\n")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("directory", nargs="?", default=settings.DATA_DIR)
    analyze_montecarlo(parser.parse_args().directory)
