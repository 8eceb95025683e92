"""Run report: CSV tables with matching PNG figures."""

from __future__ import annotations

import csv
import os

import numpy as np


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def loss_trace_rows(trace) -> list:
    return [(t.cycle, t.sweep, t.evaluations, f"{t.loss.normal_l1:.10g}", f"{t.loss.silhouette_l1:.10g}",
             f"{t.loss.scale_penalty:.10g}", f"{t.loss.total:.10g}") for t in trace]


LOSS_HEADER = ("cycle", "sweep", "evaluations", "normal_l1", "silhouette_l1", "scale_penalty", "total")


def write_loss_trace(path, trace) -> None:
    _write_csv(path, LOSS_HEADER, loss_trace_rows(trace))


def _figure(path, draw) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5), dpi=100)
    draw(ax)
    fig.tight_layout()
    # no software/version stamp so reruns are byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def write_report(out_dir, trace, guidance_sil, masks, gt_iou=None) -> dict:
    """Write loss-trace and per-frame CSVs plus their figures under ``out_dir/report``."""
    d = os.path.join(out_dir, "report")
    os.makedirs(d, exist_ok=True)
    write_loss_trace(os.path.join(d, "loss_trace.csv"), trace)
    F = len(guidance_sil)
    area = np.asarray(guidance_sil).reshape(F, -1).sum(axis=1)
    mask_area = np.asarray(masks).reshape(F, -1).sum(axis=1)
    rows = []
    for i in range(F):
        iou = "" if gt_iou is None else f"{gt_iou[i]:.10g}"
        rows.append((i, int(area[i]), int(mask_area[i]), iou))
    _write_csv(os.path.join(d, "frames.csv"), ("frame", "guidance_pixels", "mask_pixels", "gt_silhouette_iou"), rows)

    if trace:
        ev = [t.evaluations for t in trace]

        def draw_loss(ax):
            ax.plot(ev, [t.loss.total for t in trace], label="total")
            ax.plot(ev, [t.loss.normal_l1 for t in trace], label="normal L1")
            ax.plot(ev, [t.loss.silhouette_l1 for t in trace], label="silhouette L1")
            ax.set_yscale("log")
            ax.set_xlabel("loss evaluations")
            ax.set_ylabel("loss")
            ax.legend(loc="upper right")

        _figure(os.path.join(d, "loss_trace.png"), draw_loss)

    def draw_frames(ax):
        x = np.arange(F)
        if gt_iou is not None:
            ax.plot(x, gt_iou, marker="o")
            ax.set_ylabel("silhouette IoU vs ground truth")
            ax.set_ylim(min(0.8, float(np.min(gt_iou)) - 0.02), 1.0)
        else:
            ax.plot(x, area, marker="o")
            ax.set_ylabel("guidance pixels")
        ax.set_xlabel("frame")

    _figure(os.path.join(d, "frames.png"), draw_frames)
    return {"dir": d}
