"""Run artefacts: delimited metrics, summary JSON, and rendered figures.

All delimited output is written atomically (temp file + rename) with floats
serialised via repr, so reruns of a deterministic experiment are
byte-identical.  Figures are rendered with the Agg backend next to the
tables they illustrate.
"""

from __future__ import annotations

import json
import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .pipeline import BLOCKS, RunReport  # noqa: E402

METRICS_SCHEMA_VERSION = 1

METRICS_HEADER = "episode,mode,seed,redraw,block,min_rate,mean_rate,R_c,power_slack"
ASSOC_HEADER = "k,n,g_kn"
SWEEP_HEADER = ("param,value,mode,seed,status,pretrain_final_min_rate,"
                "finetune_final_min_rate")


def fmt(x: float) -> str:
    """Shortest round-trip decimal form; deterministic across runs."""
    return repr(float(x))


def write_text_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)  # mkstemp defaults to 0600
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def metrics_csv_text(report: RunReport) -> str:
    cfg = report.config
    lines = [METRICS_HEADER]
    for r in report.rows:
        lines.append(",".join([
            str(r.episode), cfg.mode, str(cfg.seed), str(r.redraw), r.block,
            fmt(r.min_rate), fmt(r.mean_rate), fmt(r.common_rate),
            fmt(r.power_slack)]))
    return "\n".join(lines) + "\n"


def write_metrics_csv(path: str, report: RunReport) -> None:
    write_text_atomic(path, metrics_csv_text(report))


def assoc_csv_text(report: RunReport) -> str:
    lines = [ASSOC_HEADER]
    K, N = report.association.shape
    for k in range(K):
        for n in range(N):
            lines.append(f"{k},{n},{int(report.association[k, n])}")
    return "\n".join(lines) + "\n"


def write_assoc_csv(path: str, report: RunReport) -> None:
    write_text_atomic(path, assoc_csv_text(report))


def summary_dict(report: RunReport) -> dict:
    cfg = report.config
    final = {}
    for block in BLOCKS:
        vals = [r.min_rate for r in report.rows if r.block == block and
                r.episode == cfg.training.episodes]
        final[block] = float(np.mean(vals)) if vals else None
    return {
        "metrics_schema_version": METRICS_SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "rows": len(report.rows),
        "final_min_rate": final,
        "association": report.association.tolist(),
        "wall_clock_s": report.wall_clock_s,
    }


def summary_json_text(report: RunReport) -> str:
    return json.dumps(summary_dict(report), indent=2, sort_keys=True) + "\n"


def write_summary_json(path: str, report: RunReport) -> None:
    write_text_atomic(path, summary_json_text(report))


def write_learning_curve_png(path: str, report: RunReport) -> None:
    """Worst-UE rate per episode; fine-tune episodes follow pre-training."""
    cfg = report.config
    E = cfg.training.episodes
    fig, ax = plt.subplots(figsize=(7, 4))
    for redraw in range(1, cfg.training.redraws + 1):
        series = np.concatenate([report.block_series(b, "min_rate", redraw)
                                 for b in BLOCKS])
        label = f"redraw {redraw}" if cfg.training.redraws > 1 else cfg.mode
        ax.plot(np.arange(1, len(series) + 1), series, lw=1.0, label=label)
    ax.axvline(E + 0.5, color="gray", ls="--", lw=0.8)
    ax.text(E + 0.5, ax.get_ylim()[1], " selection", va="top", fontsize=8,
            color="gray")
    ax.set_xlabel("episode")
    ax.set_ylabel("worst-UE rate (bit/s/Hz)")
    ax.set_title(f"{cfg.mode}, seed {cfg.seed}")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_run_outputs(out_dir: str, report: RunReport) -> dict:
    """Write the full artefact set for one run; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "metrics": os.path.join(out_dir, "metrics.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
        "assoc": os.path.join(out_dir, "assoc.csv"),
        "figure": os.path.join(out_dir, "learning_curve.png"),
    }
    write_metrics_csv(paths["metrics"], report)
    write_summary_json(paths["summary"], report)
    write_assoc_csv(paths["assoc"], report)
    write_learning_curve_png(paths["figure"], report)
    return paths


# ------------------------------------------------------------------ sweeps ----

def final_min_rate(report: RunReport, block: str, window: int = 10) -> float:
    """Mean worst-UE rate over the last `window` episodes, over all redraws."""
    vals = []
    for redraw in range(1, report.config.training.redraws + 1):
        series = report.block_series(block, "min_rate", redraw)
        vals.append(series[-window:].mean())
    return float(np.mean(vals))


def sweep_row(param: str, value, mode: str, seed: int, status: str,
              pre: float | None, fin: float | None) -> str:
    return ",".join([param, fmt(value) if isinstance(value, float) else str(value),
                     mode, str(seed), status,
                     fmt(pre) if pre is not None else "",
                     fmt(fin) if fin is not None else ""])


def sweep_csv_text(rows: list[str]) -> str:
    return "\n".join([SWEEP_HEADER] + sorted(rows)) + "\n"


def write_sweep_csv(path: str, rows: list[str]) -> None:
    write_text_atomic(path, sweep_csv_text(rows))


def write_sweep_png(path: str, param: str, results: list[dict]) -> None:
    """Final fine-tuned worst-UE rate against the swept parameter, per mode."""
    fig, ax = plt.subplots(figsize=(6, 4))
    modes = sorted({r["mode"] for r in results if r["status"] == "ok"})
    for mode in modes:
        pts = {}
        for r in results:
            if r["mode"] != mode or r["status"] != "ok":
                continue
            pts.setdefault(r["value"], []).append(r["finetune"])
        xs = sorted(pts)
        ys = [float(np.mean(pts[x])) for x in xs]
        ax.plot(xs, ys, marker="o", label=mode)
    ax.set_xlabel(param)
    ax.set_ylabel("final worst-UE rate (bit/s/Hz)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
