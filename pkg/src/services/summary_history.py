"""Loading and summarization of saved Monte Carlo summaries."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any


def load_summaries(directory: str | Path, pattern: str = "*.json") -> list[dict[str, Any]]:
    """Load every Monte Carlo summary under `directory`, skipping unreadable files."""
    root = Path(directory)
    if not root.exists():
        return []
    summaries: list[dict[str, Any]] = []
    for path in sorted(root.glob(pattern)):
        try:
            data = json.loads(path.read_text())
        except (json.JSONDecodeError, OSError):
            continue
        if isinstance(data, dict) and isinstance(data.get("methods"), dict):
            data["path"] = str(path)
            summaries.append(data)
    return summaries


def summarize_summaries(summaries: list[dict[str, Any]]) -> dict[str, Any]:
    """One row per (summary, method), plus per-method stats of the median fits."""
    rows: list[dict[str, Any]] = []
    fits: dict[str, list[float]] = {}
    best = None
    best_fit = None
    for idx, summary in enumerate(summaries, 1):
        options = summary.get("options", {}) if isinstance(summary.get("options"), dict) else {}
        for method, stats in summary["methods"].items():
            fit = stats.get("median_fit_impulse")
            rows.append(
                {
                    "#": idx,
                    "File": Path(summary.get("path", "")).name,
                    "Case": options.get("case"),
                    "Runs": stats.get("runs"),
                    "Method": method,
                    "Failures": stats.get("failures"),
                    "Fit IR": fit,
                    "Fit theta": stats.get("median_fit_params"),
                    "sigma2": stats.get("sigma2_mean"),
                }
            )
            if isinstance(fit, (int, float)):
                fits.setdefault(method, []).append(float(fit))
                if best_fit is None or fit > best_fit:
                    best, best_fit = summary, fit

    stats = {
        method: {
            "best": max(values),
            "worst": min(values),
            "avg": sum(values) / len(values),
            "trend": values[-1] - values[0],
        }
        for method, values in fits.items()
    }
    return {"rows": rows, "stats": stats or None, "best": best}
