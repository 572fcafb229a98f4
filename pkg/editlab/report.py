"""CSV and Markdown renderings of experiment reports

Every CSV starts with one ``# provenance: {...}`` comment line carrying the hashes of
the inputs it was computed from.
"""
import json
from pathlib import Path

import pandas as pd

from editlab.harness import DIMENSIONS
from editlab.metrics import METRIC_NAMES

METRIC_HEADERS = {"aem": "AEM", "em": "EM", "bleu": "BU", "rouge_l": "RL"}
# column order of the rendered tables
TABLE_METRICS = ("aem", "em", "bleu", "rouge_l")


def write_csv(df, path, provenance=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fout:
        fout.write("# provenance: " + json.dumps(provenance or {}, sort_keys=True) + "\n")
        df.to_csv(fout, index=False)


def read_csv(path):
    """read a CSV written here, skipping the provenance line"""
    return pd.read_csv(path, comment="#")


def report_frame(reports):
    """one row per editor x dimension x metric"""
    rows = []
    for r in reports:
        for dim in DIMENSIONS:
            for metric in METRIC_NAMES:
                rows.append({"editor": r.editor, "dimension": dim, "metric": metric,
                             "value": r.value(dim, metric), "count": r.counts.get(dim, 0),
                             "n_runs": r.n_runs})
    return pd.DataFrame(rows, columns=["editor", "dimension", "metric", "value", "count", "n_runs"])


def write_report_csv(reports, path, provenance=None):
    write_csv(report_frame(reports), path, provenance)


def cost_frame(reports):
    rows = [{"editor": r.editor, "wall_ms": r.wall_ms, "peak_bytes": r.peak_bytes, "touched": r.touched}
            for r in reports]
    return pd.DataFrame(rows, columns=["editor", "wall_ms", "peak_bytes", "touched"])


def write_costs_csv(reports, path, provenance=None):
    """per-edit time and memory, these numbers vary between executions"""
    write_csv(cost_frame(reports), path, provenance)


def _pct(v):
    return "-" if v is None else f"{100.0 * v:.1f}"


def _markdown(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def markdown_table(reports):
    """editors as rows, dimension x metric as columns, values x100 with one decimal"""
    header = ["Editor"] + [f"{dim.capitalize()} {METRIC_HEADERS[m]}" for dim in DIMENSIONS for m in TABLE_METRICS]
    rows = [[r.editor] + [_pct(r.value(dim, m)) for dim in DIMENSIONS for m in TABLE_METRICS] for r in reports]
    return _markdown(header, rows)


def relative_gains(base, new):
    """relative change ``(new - base) / base * 100`` per (dimension, metric)

    A zero base gives ``"inf"`` if new is positive, 0.0 otherwise; None if either is missing.
    """
    gains = {}
    for dim in DIMENSIONS:
        for m in METRIC_NAMES:
            b, n = base.value(dim, m), new.value(dim, m)
            if b is None or n is None:
                gains[(dim, m)] = None
            elif b == 0:
                gains[(dim, m)] = "inf" if n > 0 else 0.0
            else:
                gains[(dim, m)] = (n - b) / b * 100.0
    return gains


def gains_markdown(base, new):
    gains = relative_gains(base, new)

    def _fmt(g):
        if g is None:
            return "-"
        if isinstance(g, str):
            return g
        return f"{g:+.1f}%"

    header = ["Comparison"] + [f"{dim.capitalize()} {METRIC_HEADERS[m]}" for dim in DIMENSIONS for m in TABLE_METRICS]
    row = [f"{new.editor} vs {base.editor}"] + [_fmt(gains[(dim, m)]) for dim in DIMENSIONS for m in TABLE_METRICS]
    return _markdown(header, [row])


def sweep_frame(points):
    """one row per sweep point, columns ``<dimension>_<metric>``"""
    rows = []
    for n_common, n_specific, report in points:
        row = {"n_common": n_common, "n_specific": n_specific}
        for dim in DIMENSIONS:
            for m in METRIC_NAMES:
                row[f"{dim}_{m}"] = report.value(dim, m)
        rows.append(row)
    columns = ["n_common", "n_specific"] + [f"{dim}_{m}" for dim in DIMENSIONS for m in METRIC_NAMES]
    return pd.DataFrame(rows, columns=columns)


def write_sweep_csv(points, path, provenance=None):
    write_csv(sweep_frame(points), path, provenance)


def write_markdown(text, path, provenance=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fout:
        fout.write(f"<!-- provenance: {json.dumps(provenance or {}, sort_keys=True)} -->\n\n")
        fout.write(text)
