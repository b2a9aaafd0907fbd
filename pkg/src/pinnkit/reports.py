"""Artifact emission: CSV tables, surfaces, curves and experiment documents.

Every writer is bit-stable: floats are serialized with ``repr`` (shortest
round-trip form), rows follow a deterministic order, and documents embed
the toolkit version plus full plan provenance so any aggregate can be
recomputed from the retained per-run reports.
"""

import csv
import math
import os

import numpy as np
import yaml

from . import __version__
from .experiments import CellResult, ExperimentReport
from .fdm import FdmSolution
from .training import save_report


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def emit_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def emit_surface(path, solution: FdmSolution):
    """Long-format surface CSV `t,x,u` (row count = nt * nx)."""
    xs = solution.grid.x_lattice()
    ts = solution.grid.t_lattice()
    rows = []
    for j, t in enumerate(ts):
        for i, x in enumerate(xs):
            rows.append((t, x, solution.surface[j, i]))
    return emit_rows(path, ["t", "x", "u"], rows)


def emit_network_surface(path, bind, values):
    rows = [(t, x, u) for (x, t), u in zip(bind, values)]
    return emit_rows(path, ["t", "x", "u"], rows)


def emit_arch_table(path, cells):
    """`layers,neurons,...` aggregate table (architecture-search style)."""
    rows = [(c.key["layers"], c.key["neurons"], c.mean_gt_mse, c.std_gt_mse,
             c.mean_total_loss, c.std_total_loss, c.mean_time_s)
            for c in cells]
    return emit_rows(path, ["layers", "neurons", "mean_gt_mse", "std_gt_mse",
                            "mean_total_loss", "std_total_loss",
                            "mean_time_s"], rows)


def emit_keyed_table(path, cells, key_fields):
    header = list(key_fields) + ["mean_gt_mse", "std_gt_mse",
                                 "mean_total_loss", "std_total_loss",
                                 "mean_time_s"]
    rows = [tuple(c.key[f] for f in key_fields)
            + (c.mean_gt_mse, c.std_gt_mse, c.mean_total_loss,
               c.std_total_loss, c.mean_time_s)
            for c in cells]
    return emit_rows(path, header, rows)


def emit_interval_table(path, cells):
    """Per-cell ground-truth MSE split by evaluation interval."""
    names = sorted({n for c in cells for n in c.gt_mse_by_interval})
    header = sorted(cells[0].key) + [f"gt_mse[{n}]" for n in names]
    rows = []
    for c in cells:
        rows.append(tuple(c.key[k] for k in sorted(c.key))
                    + tuple(c.gt_mse_by_interval.get(n, math.nan)
                            for n in names))
    return emit_rows(path, header, rows)


def emit_comparison_table(path, comparisons):
    """`dx,dt,T,D,cfl_margin,fdm_mse,fdm_diverged,pinn_mse` rows."""
    rows = [(c["dx"], c["dt"], c["T"], c["D"], c["cfl_margin"], c["fdm_mse"],
             c["fdm_diverged"], c["pinn_mse"]) for c in comparisons]
    return emit_rows(path, ["dx", "dt", "T", "D", "cfl_margin", "fdm_mse",
                            "fdm_diverged", "pinn_mse"], rows)


def emit_derivative_curve(path, curve):
    return emit_rows(path, ["x", "du/dx", "d2u/dx2"], curve)


def emit_metrics_table(path, metrics: dict):
    return emit_rows(path, ["metric", "average"],
                     sorted(metrics.items()))


def _cell_slug(key: dict) -> str:
    return "_".join(f"{k}-{key[k]}" for k in sorted(key))


def _cell_doc(cell: CellResult) -> dict:
    return {
        "key": dict(cell.key),
        "mean_gt_mse": cell.mean_gt_mse,
        "std_gt_mse": cell.std_gt_mse,
        "mean_total_loss": cell.mean_total_loss,
        "std_total_loss": cell.std_total_loss,
        "mean_time_s": cell.mean_time_s,
        "n_failed": cell.n_failed,
        "n_runs": len(cell.reports),
        "gt_mse_by_interval": dict(cell.gt_mse_by_interval),
    }


def save_experiment(report: ExperimentReport, out_dir) -> str:
    """Experiment document plus per-run artifacts under runs/."""
    os.makedirs(out_dir, exist_ok=True)
    runs_dir = os.path.join(out_dir, "runs")
    run_files = []
    for cell in report.cells:
        for it, run in enumerate(cell.reports):
            name = f"{_cell_slug(cell.key)}__it{it}"
            save_report(run, runs_dir, name)
            run_files.append(f"runs/{name}.yaml")
    doc = {
        "experiment_version": 1,
        "toolkit_version": __version__,
        "kind": report.kind,
        "provenance": report.provenance,
        "winner": report.winner,
        "cells": [_cell_doc(c) for c in report.cells],
        "run_files": run_files,
    }
    path = os.path.join(out_dir, "experiment.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)
    return path


def load_experiment(out_dir) -> dict:
    with open(os.path.join(out_dir, "experiment.yaml")) as fh:
        return yaml.safe_load(fh)


def recompute_aggregates(out_dir) -> list[dict]:
    """Re-derive every cell aggregate from the retained per-run files."""
    doc = load_experiment(out_dir)
    by_cell: dict[str, list[dict]] = {}
    order: list[str] = []
    for rel in doc["run_files"]:
        slug = os.path.basename(rel).rsplit("__it", 1)[0]
        if slug not in by_cell:
            by_cell[slug] = []
            order.append(slug)
        with open(os.path.join(out_dir, rel)) as fh:
            by_cell[slug].append(yaml.safe_load(fh))
    out = []
    for slug, cell_doc in zip(order, doc["cells"]):
        runs = by_cell[slug]
        ok = [r for r in runs if not r["failed"]]
        agg = {"key": cell_doc["key"], "n_failed": len(runs) - len(ok)}
        if ok:
            sel = ("domain" if "domain" in ok[0]["gt_mse"] else "overall")
            mses = np.array([r["gt_mse"][sel] for r in ok])
            losses = np.array([r["final_total_loss"] for r in ok])
            times = np.array([r["wall_time_s"] for r in ok])
            agg.update(
                mean_gt_mse=float(mses.mean()),
                std_gt_mse=float(mses.std(ddof=1)) if len(ok) > 1 else 0.0,
                mean_total_loss=float(losses.mean()),
                std_total_loss=float(losses.std(ddof=1)) if len(ok) > 1 else 0.0,
                mean_time_s=float(times.mean()),
            )
        out.append(agg)
    return out


def verify_experiment(out_dir, tol: float = 1e-12) -> list[str]:
    """Compare stored aggregates against recomputation; returns problems."""
    doc = load_experiment(out_dir)
    problems = []
    for stored, fresh in zip(doc["cells"], recompute_aggregates(out_dir)):
        if stored["key"] != fresh["key"]:
            problems.append(f"cell order mismatch: {stored['key']} vs {fresh['key']}")
            continue
        for field in ("mean_gt_mse", "std_gt_mse", "mean_total_loss",
                      "std_total_loss", "mean_time_s"):
            a, b = stored.get(field), fresh.get(field)
            if a is None and b is None:
                continue
            if a is None or b is None or (
                    math.isfinite(a) != math.isfinite(b)) or (
                    math.isfinite(a)
                    and abs(a - b) > tol * max(1.0, abs(a), abs(b))):
                problems.append(
                    f"{stored['key']}: {field} stored={a} recomputed={b}")
    return problems
