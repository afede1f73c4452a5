"""
Report Analyzer

Collects the report.json files written by ``main.py metrics`` for several
runs into pandas DataFrames for side-by-side comparison.

Usage:
    python tools/report_analyzer.py summary RUN_DIR [RUN_DIR ...]
    python tools/report_analyzer.py export OUT_DIR RUN_DIR [RUN_DIR ...]
"""

import glob
import os
import sys
from typing import Dict, List

import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import ConditioningError  # noqa: E402
from reporting.report import load_report  # noqa: E402


class ReportAnalyzer:
    """Loads metrics reports from run directories (searched recursively)."""

    def __init__(self, run_directories: List[str]):
        self.run_directories = list(run_directories)

    def find_reports(self) -> List[str]:
        paths = []
        for directory in self.run_directories:
            if os.path.isfile(directory):
                paths.append(directory)
                continue
            paths.extend(sorted(glob.glob(os.path.join(directory, "**", "report.json"), recursive=True)))
        return paths

    def load_reports(self) -> List[Dict]:
        reports = []
        for path in self.find_reports():
            try:
                data = load_report(path)
            except ConditioningError as e:
                print(f"Warning: could not load {path}: {e}")
                continue
            data["source_file"] = path
            reports.append(data)
        return reports

    def to_views_dataframe(self) -> pd.DataFrame:
        """One row per (run, view) with the run's baseline and difficulty tag."""
        rows = []
        for report in self.load_reports():
            for view in report.get("views", []):
                rows.append({
                    "run": os.path.dirname(report["source_file"]),
                    "baseline": report.get("baseline"),
                    "difficulty": report.get("difficulty"),
                    **view,
                })
        return pd.DataFrame(rows)

    def to_runs_dataframe(self) -> pd.DataFrame:
        """Per-run means of every numeric metric."""
        views = self.to_views_dataframe()
        if views.empty:
            return views
        numeric = [c for c in views.columns if c not in ("run", "view", "difficulty")
                   and pd.api.types.is_numeric_dtype(views[c])]
        runs = views.groupby("run", sort=True)[numeric].mean()
        runs["views"] = views.groupby("run", sort=True).size()
        runs["difficulty"] = views.groupby("run", sort=True)["difficulty"].first()
        return runs.reset_index()

    def print_summary(self):
        runs = self.to_runs_dataframe()
        if runs.empty:
            print("No metrics reports found")
            return

        print("METRICS REPORT SUMMARY")
        print("=" * 60)
        print(f"Runs: {len(runs)}")
        print(f"Views evaluated: {int(runs['views'].sum())}")
        print(runs.to_string(index=False, float_format=lambda x: f"{x:.4f}"))

        tagged = runs.dropna(subset=["difficulty"])
        if not tagged.empty:
            print("\nBy difficulty:")
            means = tagged.groupby("difficulty")[["psnr", "ssim"]].mean()
            for difficulty, row in means.iterrows():
                print(f"  {difficulty}: PSNR {row['psnr']:.2f} dB, SSIM {row['ssim']:.4f}")

    def export_to_csv(self, output_dir: str = "report_exports"):
        os.makedirs(output_dir, exist_ok=True)
        views = self.to_views_dataframe()
        if views.empty:
            print("No metrics reports found")
            return
        views.to_csv(os.path.join(output_dir, "views.csv"), index=False)
        self.to_runs_dataframe().to_csv(os.path.join(output_dir, "runs.csv"), index=False)
        print(f"Exported {len(views)} view rows to {output_dir}/")


def main(argv: List[str] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        print("Available commands: summary, export")
        return 2

    command, rest = argv[0], argv[1:]
    if command == "summary" and rest:
        ReportAnalyzer(rest).print_summary()
    elif command == "export" and len(rest) >= 2:
        ReportAnalyzer(rest[1:]).export_to_csv(rest[0])
    else:
        print("Available commands: summary RUN_DIR..., export OUT_DIR RUN_DIR...")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
