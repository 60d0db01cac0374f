"""Results CSV and accuracy-versus-power chart."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .harness import SweepResult

COLUMNS = ("run_id", "mode", "task", "k", "gamma_over_2pi_hz", "power_watt", "trial",
           "accuracy", "mean", "std")


class ReportError(RuntimeError):
    pass


def _num(x):
    # repr gives the shortest string that parses back to the same double
    return repr(float(x))


def csv_text(results) -> str:
    results = list(results)
    if not results:
        raise ReportError("nothing to report")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in results:
        if not r.powers:
            raise ReportError(f"{r.mode}: empty power grid")
        head = (r.run_id, r.mode, r.task, r.k, _num(r.gamma_over_2pi_hz))
        mean, std = r.mean, r.std
        for pi, p in enumerate(r.powers):
            for t in range(r.trials):
                w.writerow(head + (_num(p), t, _num(r.accuracy[pi, t]), "", ""))
            w.writerow(head + (_num(p), -1, "", _num(mean[pi]), _num(std[pi])))
    return buf.getvalue()


def write_csv(path, results):
    text = csv_text(results)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)
    return Path(path)


def read_csv(path) -> list[SweepResult]:
    """Rebuild sweep results from per-trial rows (aggregate rows are checked
    against them)."""
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
    if rows and tuple(rows[0].keys()) != COLUMNS:
        raise ReportError(f"unexpected columns {list(rows[0].keys())}")
    groups: dict = {}
    for row in rows:
        key = (row["run_id"], row["mode"], row["task"], int(row["k"]), float(row["gamma_over_2pi_hz"]))
        g = groups.setdefault(key, {"trials": {}, "agg": {}})
        p, t = float(row["power_watt"]), int(row["trial"])
        if t < 0:
            g["agg"][p] = (float(row["mean"]), float(row["std"]))
        else:
            g["trials"].setdefault(p, {})[t] = float(row["accuracy"])
    out = []
    for (rid, mode, task, k, gamma), g in groups.items():
        powers = sorted(g["trials"])
        n = len(g["trials"][powers[0]])
        acc = np.array([[g["trials"][p][t] for t in range(n)] for p in powers])
        res = SweepResult(mode, task, k, gamma, powers, acc, rid)
        for pi, p in enumerate(powers):
            if p in g["agg"] and g["agg"][p] != (float(res.mean[pi]), float(res.std[pi])):
                raise ReportError(f"aggregate row for {mode} at {p} W disagrees with its trials")
        out.append(res)
    return out


def plot_svg(path, results, title="", fmt="svg"):
    """Mean accuracy with a one-std band per mode against log power."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    results = list(results)
    if not results:
        raise ReportError("nothing to plot")
    matplotlib.rcParams["svg.hashsalt"] = "mirp"
    fig, ax = plt.subplots(figsize=(6, 4))
    for r in results:
        p = np.asarray(r.powers)
        keep = p > 0
        ax.plot(p[keep], r.mean[keep], marker="o", label=f"{r.mode} ({r.task}, k={r.k})")
        ax.fill_between(p[keep], (r.mean - r.std)[keep], (r.mean + r.std)[keep], alpha=0.2)
    ax.set_xscale("log")
    ax.set_xlabel("RF power (W)")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format=fmt, metadata={"Date": None} if fmt == "svg" else {"Software": None})
    plt.close(fig)
    return Path(path)


def summary_table(results) -> str:
    lines = ["mode          task   k    power_W     mean     std"]
    for r in results:
        for pi, p in enumerate(r.powers):
            lines.append(f"{r.mode:<13} {r.task:<6} {r.k:<4} {p:<10.3g} {r.mean[pi]:.4f}  {r.std[pi]:.4f}")
    return "\n".join(lines)

