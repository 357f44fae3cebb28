"""Result rendering: aligned text tables, delimited output, and figures.

Per optimization stage this emits an HTER statistics table
(Method / Median / Mean +- StdDev / Min / Max), the Dunn p-value matrix
when the omnibus test fired, and, for stages that improved the pipeline,
the DET curve data of one run chosen deterministically among those at
the median HTER. Figures are rendered with matplotlib next to the CSVs.
"""

import csv
import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from scipy.special import ndtri

from .dataset import derive_seed
from .evalstats import PairScoreSet, det_points
from .orchestrator import RunError, median_run_record

_DET_TICKS = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4]


def format_stage_table(rows):
    """rows: (tag, summary dict). Returns the aligned text table."""
    out = [f"{'Method':<12} {'Median':>9} {'Mean':>9} {'StdDev':>9} {'Min':>9} {'Max':>9}"]
    for tag, s in rows:
        out.append(f"{tag:<12} {s['median']:>9.5f} {s['mean']:>9.5f} "
                   f"{s['stddev']:>9.5f} {s['min']:>9.5f} {s['max']:>9.5f}")
    return "\n".join(out)


def format_dunn_table(tags, matrix):
    """Lower-triangular matrix with a header row, p-values to 5 decimals."""
    out = [" ".join([f"{'Method':<12}"] + [f"{t:>10}" for t in tags[:-1]])]
    for i in range(1, len(tags)):
        cells = [f"{tags[i]:<12}"]
        for j in range(len(tags) - 1):
            cells.append(f"{matrix[i][j]:>10.5f}" if j < i else f"{'---':>10}")
        out.append(" ".join(cells))
    return "\n".join(out)


def write_summary_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "median", "mean", "stddev", "min", "max", "n"])
        for tag, s in rows:
            w.writerow([tag, f"{s['median']:.5f}", f"{s['mean']:.5f}",
                        f"{s['stddev']:.5f}", f"{s['min']:.5f}", f"{s['max']:.5f}",
                        s["n"]])


def write_dunn_csv(path, tags, matrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method"] + tags)
        for i, tag in enumerate(tags):
            row = [tag]
            for j in range(len(tags)):
                row.append("" if matrix[i][j] is None or i == j
                           else f"{matrix[i][j]:.5f}")
            w.writerow(row)


def write_det_csv(path, points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "far", "frr", "probit_far", "probit_frr"])
        for tau, far, frr, pfar, pfrr in points:
            w.writerow([repr(tau), repr(far), repr(frr), repr(pfar), repr(pfrr)])


def _record_det_points(record):
    pairs = record.get("scores", {}).get("eval")
    if not pairs:
        return None
    scores = np.array([p[0] for p in pairs])
    genuine = np.array([p[1] for p in pairs], dtype=bool)
    return det_points(PairScoreSet(scores, genuine))


def render_det_figure(path, curves):
    """curves: list of (label, det point list); probit axes."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for label, pts in curves:
        pfar = [p[3] for p in pts]
        pfrr = [p[4] for p in pts]
        ax.plot(pfar, pfrr, drawstyle="steps-post", label=label)
    ticks = [ndtri(t) for t in _DET_TICKS]
    labels = [f"{t * 100:g}" for t in _DET_TICKS]
    ax.set_xticks(ticks, labels)
    ax.set_yticks(ticks, labels)
    ax.set_xlabel("False Acceptance Rate (%)")
    ax.set_ylabel("False Rejection Rate (%)")
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_hter_histogram(path, hters, label):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(hters, bins=20, density=True, alpha=0.75, edgecolor="black")
    ax.set_xlabel("HTER")
    ax.set_ylabel("Density")
    ax.set_title(label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def report(store, greedy_report, out_dir, master_seed):
    """Render tables, CSVs, DET data and figures for a finished experiment."""
    if not store.records:
        raise RunError("report", f"empty result store {store.path}")
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    det_curves = []

    baseline_fp = None
    for stage_idx, stage in enumerate(greedy_report["stages"]):
        name = stage["stage"]
        rows = [(c["tag"], c["summary"]) for c in stage["candidates"]]
        table = format_stage_table(rows)
        lines.append(f"== Stage: {name} (chosen: {stage['chosen']}) ==")
        lines.append(table)
        if stage["kruskal_wallis"] is not None:
            kw = stage["kruskal_wallis"]
            lines.append(f"Kruskal-Wallis: H = {kw['h']:.5f}, p = {kw['p']:.5f}")
        write_summary_csv(os.path.join(out_dir, f"summary_{name}.csv"), rows)
        if stage["dunn"] is not None:
            tags = [c["tag"] for c in stage["candidates"]]
            write_dunn_csv(os.path.join(out_dir, f"dunn_{name}.csv"),
                           tags, stage["dunn"])
            lines.append(format_dunn_table(tags, stage["dunn"]))
        lines.append("")

        if stage_idx == 0:
            incumbent = next((c for c in stage["candidates"]
                              if c["tag"] == stage["incumbent"]), None)
            if incumbent is not None:
                baseline_fp = incumbent["config_fp"]
        chosen = next(c for c in stage["candidates"] if c["tag"] == stage["chosen"])
        if stage["improved"] or (stage_idx == 0 and chosen["config_fp"] == baseline_fp):
            rec = median_run_record(store.records_for(chosen["config_fp"]),
                                    derive_seed(master_seed, 0xDE7, stage_idx))
            pts = _record_det_points(rec)
            if pts is not None:
                write_det_csv(os.path.join(out_dir, f"det_{name}.csv"), pts)
                det_curves.append((f"{name}: {stage['chosen']}", pts))

    # baseline DET curve for reference
    if baseline_fp is not None:
        rec = median_run_record(store.records_for(baseline_fp),
                                derive_seed(master_seed, 0xDE7, 999))
        pts = _record_det_points(rec)
        if pts is not None:
            write_det_csv(os.path.join(out_dir, "det_baseline.csv"), pts)
            det_curves.insert(0, ("baseline", pts))

    if det_curves:
        render_det_figure(os.path.join(out_dir, "det_curves.png"), det_curves)

    final_fp = greedy_report["final_fp"]
    final_recs = [r for r in store.records_for(final_fp) if r["status"] == "ok"]
    if final_recs:
        hters = [r["eval"]["hter"] for r in final_recs]
        render_hter_histogram(os.path.join(out_dir, "hter_hist.png"), hters,
                              "Eval HTER distribution, chosen pipeline")
        lines.append(f"Chosen pipeline: {json.dumps(greedy_report['final'])}")
        lines.append(f"Median eval HTER: {float(np.median(hters)):.5f} "
                     f"over {len(hters)} splits")
    text = "\n".join(lines)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(text + "\n")
    return text
