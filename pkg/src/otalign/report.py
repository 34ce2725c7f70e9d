"""Render training-run figures from the delimited metrics files.

Reads metrics.csv / eval.csv out of a run directory and writes PNG
figures next to them: loss curves, the realized learning-rate schedule,
and held-out accuracy over epochs.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import FormatError

__all__ = ["render_run_figures"]


def _read_csv(path: Path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path} is empty")
        columns: dict[str, list[float]] = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                columns[name].append(float(value))
    return columns


def render_run_figures(run_dir, out_dir=None) -> list[Path]:
    """Write figures for one run; returns the paths created."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    metrics_path = run_dir / "metrics.csv"
    if metrics_path.exists():
        cols = _read_csv(metrics_path)
        if cols["step"]:
            fig, ax = plt.subplots(figsize=(7, 4.5))
            ax.plot(cols["step"], cols["total"], label="total", lw=1.5)
            ax.plot(cols["step"], cols["ce"], label="ce", lw=1.0, alpha=0.8)
            ax.plot(cols["step"], cols["ot"], label="ot", lw=1.0, alpha=0.8)
            ax.set_xlabel("optimizer step")
            ax.set_ylabel("loss")
            ax.legend()
            ax.grid(alpha=0.3)
            fig.tight_layout()
            path = out_dir / "loss_curves.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)

            fig, ax = plt.subplots(figsize=(7, 3.5))
            ax.plot(cols["step"], cols["lr"], color="tab:purple", lw=1.5)
            ax.set_xlabel("optimizer step")
            ax.set_ylabel("learning rate")
            ax.grid(alpha=0.3)
            fig.tight_layout()
            path = out_dir / "lr_schedule.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)

    eval_path = run_dir / "eval.csv"
    if eval_path.exists():
        cols = _read_csv(eval_path)
        if cols["epoch"]:
            fig, ax = plt.subplots(figsize=(7, 4.5))
            ax.plot(cols["epoch"], cols["alignment_accuracy"], marker="o", label="alignment")
            ax.plot(cols["epoch"], cols["token_accuracy"], marker="s", label="token")
            ax.set_xlabel("epoch")
            ax.set_ylabel("held-out accuracy")
            ax.set_ylim(-0.02, 1.02)
            ax.legend()
            ax.grid(alpha=0.3)
            fig.tight_layout()
            path = out_dir / "accuracy_curves.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)

    return written
