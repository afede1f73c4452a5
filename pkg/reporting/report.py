"""
Metrics reports: a fixed-width text table plus a JSON document.
"""

import json
import os
from typing import Dict, List, Optional

import pandas as pd

from config.state import save_state
from core.errors import InvalidRaster, IoFailure
from core.scene_io import atomic_path

METRIC_COLUMNS = ["view", "psnr", "ssim", "coverage", "w_image", "weighted_loss"]


def report_frame(rows: List[Dict]) -> pd.DataFrame:
    """One row per evaluated view; missing metrics become NaN."""
    frame = pd.DataFrame(rows)
    columns = [c for c in METRIC_COLUMNS if c in frame.columns]
    return frame[columns] if len(frame) else pd.DataFrame(columns=METRIC_COLUMNS[:4])


def format_table(frame: pd.DataFrame, baseline: Optional[float] = None, difficulty: Optional[str] = None) -> str:
    lines = []
    if baseline is not None:
        tag = f" ({difficulty})" if difficulty else ""
        lines.append(f"reference baseline: {baseline:.6f}{tag}")
    if frame.empty:
        lines.append("no views evaluated")
        return "\n".join(lines) + "\n"

    lines.append(frame.to_string(index=False, float_format=lambda x: f"{x:.4f}"))
    means = frame.drop(columns=["view"]).mean(numeric_only=True)
    lines.append("mean  " + "  ".join(f"{name}={value:.4f}" for name, value in means.items()))
    return "\n".join(lines) + "\n"


def summary_line(frame: pd.DataFrame, out_dir: str) -> str:
    if frame.empty:
        return f"metrics: 0 views -> {out_dir}"
    return (f"metrics: {len(frame)} views, mean PSNR {frame['psnr'].mean():.2f} dB, "
            f"mean SSIM {frame['ssim'].mean():.4f} -> {out_dir}")


def write_report(out_dir, rows: List[Dict], baseline: Optional[float] = None,
                 difficulty: Optional[str] = None) -> pd.DataFrame:
    """Write report.txt and report.json under ``out_dir``; returns the table."""
    frame = report_frame(rows)
    text = format_table(frame, baseline, difficulty)
    with atomic_path(os.path.join(out_dir, "report.txt")) as tmp_path:
        with open(tmp_path, "w", encoding="utf-8") as f:
            f.write(text)

    document = {
        "baseline": baseline,
        "difficulty": difficulty,
        "views": frame.to_dict(orient="records"),
        "mean": {k: float(v) for k, v in frame.drop(columns=["view"]).mean(numeric_only=True).items()},
    }
    save_state(os.path.join(out_dir, "report.json"), document)
    return frame


def load_report(path) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidRaster(path, f"not a metrics report: {e}")
    except OSError as e:
        raise IoFailure(path, e)
