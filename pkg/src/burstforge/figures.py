"""Figure rendering for training and evaluation reports.

matplotlib is imported lazily with the Agg backend forced, so figures
render to files on headless machines and importing this module stays
cheap for code paths that never plot.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def render_loss_curve(history, path: str) -> None:
    """Loss and annealing weight against iteration, written to an image file.

    history rows are (iteration, loss, anneal_weight, learning_rate).
    """
    if not history:
        raise ValueError("empty training history")
    plt = _plt()
    its = [row[0] for row in history]
    losses = [row[1] for row in history]
    anneals = [row[2] for row in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(its, losses, color="tab:blue", label="loss")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if min(losses) > 0:
        ax.set_yscale("log")
    twin = ax.twinx()
    twin.plot(its, anneals, color="tab:orange", alpha=0.6, label="anneal weight")
    twin.set_ylabel("anneal weight")
    if min(anneals) > 0:
        twin.set_yscale("log")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_report_chart(report, path: str) -> None:
    """Grouped PSNR bars (and an SSIM panel) per row and gain of a report."""
    plt = _plt()
    rows = report.rows
    gains = report.gain_labels
    x = np.arange(len(gains), dtype=np.float64)
    width = 0.8 / max(len(rows), 1)
    fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=(10, 4))
    for i, row in enumerate(rows):
        offset = (i - (len(rows) - 1) / 2.0) * width
        psnrs = [min(cell.psnr, 99.0) for cell in row.cells]
        ssims = [cell.ssim for cell in row.cells]
        ax_p.bar(x + offset, psnrs, width=width, label=row.name)
        ax_s.bar(x + offset, ssims, width=width, label=row.name)
    for ax, title in ((ax_p, "PSNR (dB)"), (ax_s, "SSIM")):
        ax.set_xticks(x)
        ax.set_xticklabels(gains)
        ax.set_title(f"{title}, {report.domain} domain")
    ax_p.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
