"""Run orchestration, persistence and plot-data export.

A run writes into ``<out_dir>/<name>/`` (``name`` defaults to the experiment):

``paths.csv``
    one row per simulated path (per ``n``), provenance columns first;
``report.json``
    array of test reports;
``manifest.json``
    config snapshot, code version, timing and the output file names.

Everything except the timing fields of the manifest is a pure function of
the config, so reruns reproduce the CSV and report files byte for byte.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__
from ..stats import write_reports
from .config import ExperimentConfig
from .experiments import RUNNERS, Context

log = logging.getLogger(__name__)

PLOT_FILES = {
    "ks_vs_n.csv": ["experiment", "test_name", "n", "h", "method", "seed", "t", "component",
                    "statistic", "p_value"],
    "exceedance_vs_n.csv": ["experiment", "test_name", "n", "h", "method", "seed", "statistic",
                            "threshold"],
    "bias_vs_h.csv": ["experiment", "n", "h", "method", "seed", "naive_bias", "naive_stderr",
                      "corrected_bias", "corrected_stderr"],
}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path, columns):
    """Write a dict of equal-length columns as CSV (floats in shortest round-trip form)."""
    header = list(columns)
    cols = [columns[h] for h in header]
    nrows = len(cols[0]) if cols else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        text = [[_fmt(v) for v in (c.tolist() if c.dtype != object else c)] for c in cols]
        for i in range(nrows):
            w.writerow([t[i] for t in text])


def read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def run(cfg: ExperimentConfig, workers=1, backend=None):
    """Execute one experiment; returns the manifest dict (also written to disk)."""
    cfg.validate()
    out_dir = Path(cfg.out_dir) / cfg.run_name
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    outcome = RUNNERS[cfg.experiment](cfg, Context(out_dir, workers, backend))
    files = {}
    for name, table in sorted(outcome.tables.items()):
        write_table(out_dir / name, table.finish())
        files[name[:-4]] = name
    write_reports(outcome.reports, out_dir / "report.json")
    files["report"] = "report.json"
    declared = [r for r in outcome.reports if r.declared]
    manifest = {
        "experiment": cfg.experiment,
        "name": cfg.run_name,
        "config": cfg.snapshot(),
        "code_version": __version__,
        "master_seed": cfg.master_seed,
        "started_utc": started,
        "wall_clock_seconds": round(time.perf_counter() - t0, 3),
        "outputs": files,
        "all_passed": all(r.passed for r in declared),
        "failed": sorted({r.test_name for r in declared if not r.passed}),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    manifest["path"] = str(path)
    return manifest


def _load_manifest(manifest):
    if isinstance(manifest, (str, Path)):
        path = Path(manifest)
        with open(path) as fh:
            data = json.load(fh)
        data["path"] = str(path)
        return data
    return manifest


def emit_plot_data(manifest, out_dir=None):
    """Write tidy long-format CSVs next to the manifest; returns their paths.

    Accepts a manifest dict, a manifest path, or a list of either.  Missing
    output files raise ``FileNotFoundError``.
    """
    items = manifest if isinstance(manifest, list) else [manifest]
    items = [_load_manifest(m) for m in items]
    if out_dir is None:
        out_dir = Path(items[0]["path"]).parent if items else Path(".")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = {name: [] for name in PLOT_FILES}
    for m in items:
        base = Path(m["path"]).parent
        exp = m.get("name", m["experiment"])
        with open(base / m["outputs"]["report"]) as fh:
            reports = json.load(fh)
        for r in reports:
            md = r["metadata"]
            name = r["test_name"]
            if name.startswith("ks_"):
                rows["ks_vs_n.csv"].append([exp, name, md["n"], md["h"], md["method"], md["seed"],
                                            md.get("t", ""), md.get("component", ""),
                                            r["statistic"], r["p_value"]])
            elif "exceedance" in name and not name.endswith("monotone"):
                rows["exceedance_vs_n.csv"].append([exp, name, md["n"], md["h"], md["method"],
                                                    md["seed"], r["statistic"], r["threshold"]])
        if "bias" in m["outputs"]:
            header, body = read_table(base / m["outputs"]["bias"])
            idx = {h: i for i, h in enumerate(header)}
            for b in body:
                rows["bias_vs_h.csv"].append(
                    [exp] + [b[idx[k]] for k in PLOT_FILES["bias_vs_h.csv"][1:]])
    written = []
    for name, header in PLOT_FILES.items():
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows[name]:
                w.writerow(["" if v is None else _fmt(v) for v in row])
        written.append(path)
    return written
