"""Training-curve and population-scatter figures for a run directory."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trainer import read_curves  # noqa: E402


def plot_run(run_dir) -> list[Path]:
    run = Path(run_dir)
    curves_path = run / "curves.csv"
    if not curves_path.exists():
        raise FileNotFoundError(f"{curves_path} not found; is {run} a training run directory?")
    written = []
    curves = read_curves(curves_path)

    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [r.epoch for r in curves]
    ax.plot(epochs, [r.f_u for r in curves], label="utility")
    ax.plot(epochs, [r.f_r for r in curves], label="risk (normalized TCAP)")
    ax.set_xlabel("epoch")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(run / "curves.png", dpi=120)
    plt.close(fig)
    written.append(run / "curves.png")

    pop_path = run / "population.json"
    if pop_path.exists():
        pop = json.loads(pop_path.read_text())
        with open(run / "population.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "f_u", "f_r", "rank", "improvement_score"])
            for p in pop:
                w.writerow([p["index"], repr(p["f_u"]), repr(p["f_r"]), p["rank"], repr(p["improvement_score"])])
        written.append(run / "population.csv")

        fig, ax = plt.subplots(figsize=(5, 5))
        ranks = sorted({p["rank"] for p in pop})
        for r in ranks:
            pts = [p for p in pop if p["rank"] == r]
            ax.scatter([p["f_r"] for p in pts], [p["f_u"] for p in pts], label=f"front {r}")
        ax.set_xlabel("risk (normalized TCAP)")
        ax.set_ylabel("utility")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(run / "population.png", dpi=120)
        plt.close(fig)
        written.append(run / "population.png")
    return written
