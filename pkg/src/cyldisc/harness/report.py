"""CSV, JSON and SVG output for run records.

CSV columns (one row per replica):

    kind       experiment kind ("tdisc" or "excursion")
    N          torus side
    replica    replica index within N
    seed       "<seed>:<N>:<replica>", the key of the replica's random stream
    value      disconnection time, or 0/1 event indicator
    censored   1 when the step budget ran out before the outcome was known
    steps      steps simulated
    aux        tdisc: connectivity checks made; excursion: returns to the small box

The JSON summary carries ``schema`` = REPORT_SCHEMA.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict

import numpy as np

from .experiments import (CSV_HEADER, ExperimentConfig, RunRecord, summarize_excursion,
                          summarize_tdisc)

REPORT_SCHEMA = "cyldisc.report/1"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        for row in rec.rows:
            w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path) -> list:
    """Rows of a run CSV with the numeric columns converted back."""
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        for row in r:
            kind, N, rep, seed, value, cen, steps, aux = row
            val = float(value) if any(c in value for c in ".eE") else int(value)
            out.append((kind, int(N), int(rep), seed, val, int(cen), int(steps), int(aux)))
    return out


def summary_from_rows(config: ExperimentConfig, rows) -> dict:
    if config.kind == "tdisc":
        return summarize_tdisc(config, rows)
    if config.kind == "excursion":
        return summarize_excursion(config, rows)
    raise ValueError(f"no row summary for kind {config.kind!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def summary_json(records, extra=None) -> str:
    body = {"schema": REPORT_SCHEMA,
            "records": [{"fingerprint": r.fingerprint, "config": asdict(r.config),
                         "summary": r.summary} for r in records],
            "extra": extra or {}}
    return json.dumps(_jsonable(body), sort_keys=True, indent=1)


def _svg_setup():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "cyldisc"
    return plt


def plot_tdisc(record: RunRecord, path):
    plt = _svg_setup()
    per = record.summary.get("per_N", {})
    pts = [(int(N), s["median"]) for N, s in per.items() if s.get("median")]
    fig, ax = plt.subplots(figsize=(5, 4))
    if pts:
        x = np.log([p[0] for p in pts])
        y = np.log([p[1] for p in pts])
        ax.plot(x, y, "o", label="log median T")
        ref = 2 * record.config.d
        ax.plot(x, y[0] + ref * (x - x[0]), "--", label=f"slope {ref}")
    ax.set_xlabel("log N")
    ax.set_ylabel("log median T")
    ax.set_title(f"d={record.config.d}, alpha={record.config.alpha}")
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_band(table, path):
    """The region between 1 - alpha - phi(alpha) and 1 - alpha."""
    plt = _svg_setup()
    lo, hi = table.band()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.fill_between(table.alphas, lo, hi, alpha=0.3)
    ax.plot(table.alphas, lo, label="1 - alpha - phi(alpha)")
    ax.plot(table.alphas, hi, label="1 - alpha")
    ax.set_xlabel("alpha")
    ax.set_title(f"d={table.d}")
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(records, out_dir, fmt: str = "csv", svg: bool = False, extra=None,
                band_table=None) -> dict:
    """Write runs.csv (or runs.json rows), summary.json and optional SVG plots under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"cannot write to {out_dir}")
    written = {}
    if fmt == "csv":
        p = os.path.join(out_dir, "runs.csv")
        with open(p, "w", newline="") as fh:
            fh.write(records_csv(records))
        written["csv"] = p
    elif fmt == "json":
        p = os.path.join(out_dir, "runs.json")
        rows = [dict(zip(CSV_HEADER, row)) for rec in records for row in rec.rows]
        with open(p, "w") as fh:
            fh.write(json.dumps(_jsonable(rows), sort_keys=True))
        written["rows_json"] = p
    else:
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    p = os.path.join(out_dir, "summary.json")
    with open(p, "w") as fh:
        fh.write(summary_json(records, extra))
    written["summary"] = p
    if svg:
        for k, rec in enumerate(records):
            if rec.config.kind == "tdisc":
                p = os.path.join(out_dir, f"tdisc_{k}.svg")
                plot_tdisc(rec, p)
                written[f"svg_{k}"] = p
        if band_table is not None:
            p = os.path.join(out_dir, "band.svg")
            plot_band(band_table, p)
            written["band"] = p
    return written
