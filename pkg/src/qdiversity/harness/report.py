"""CSV, JSON and markdown reports for experiment rows."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .runner import MetricsRow, SummaryLine, summarize

FORMATS = ("csv", "json", "markdown")
BASE_COLUMNS = ("method", "seed", "tag", "avg", "robust")


class ReportError(OSError):
    pass


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def _group_count(rows) -> int:
    return max((len(r.groups) for r in rows), default=0)


def columns(rows, timing: bool = True) -> list[str]:
    cols = list(BASE_COLUMNS) + [f"group_{k}" for k in range(_group_count(rows))]
    return cols + (["secs"] if timing else []) + ["error"]


def rows_to_csv(rows: list[MetricsRow], timing: bool = True) -> str:
    """Fixed column order: method, seed, tag, avg, robust, groups..., secs, error.

    ``timing=False`` drops the wall-clock column so identical runs give
    identical bytes.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    m = _group_count(rows)
    w.writerow(columns(rows, timing))
    for r in rows:
        groups = [_num(g) for g in r.groups] + [""] * (m - len(r.groups))
        w.writerow([r.method, r.seed, r.tag, _num(r.avg), _num(r.robust), *groups,
                    *([_num(r.secs)] if timing else []), r.error])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[MetricsRow]:
    reader = csv.DictReader(io.StringIO(text))
    gcols = [c for c in reader.fieldnames or [] if c.startswith("group_")]
    out = []
    for rec in reader:
        groups = tuple(float(rec[c]) for c in gcols if rec[c] != "")
        out.append(MetricsRow(rec["method"], int(rec["seed"]), rec["tag"], float(rec["avg"]),
                              float(rec["robust"]), groups, float(rec.get("secs") or 0.0),
                              rec.get("error", "")))
    return out


def _json_num(v: float):
    return None if math.isnan(v) else v


def rows_to_json(rows: list[MetricsRow]) -> str:
    recs = [{"method": r.method, "seed": r.seed, "tag": r.tag, "avg": _json_num(r.avg),
             "robust": _json_num(r.robust), "groups": [_json_num(g) for g in r.groups],
             "secs": r.secs, "error": r.error} for r in rows]
    return json.dumps({"rows": recs, "summary": [s.__dict__ for s in summarize(rows)]},
                      indent=2, allow_nan=True) + "\n"


def rows_from_json(text: str) -> list[MetricsRow]:
    def f(v):
        return math.nan if v is None else float(v)

    return [MetricsRow(d["method"], int(d["seed"]), d["tag"], f(d["avg"]), f(d["robust"]),
                       tuple(f(g) for g in d["groups"]), float(d["secs"]), d["error"])
            for d in json.loads(text)["rows"]]


def _cell(med, lo, hi) -> str:
    if math.isnan(med):
        return "n/a"
    return f"{100 * med:.1f} ({100 * lo:.1f}-{100 * hi:.1f})"


def summary_markdown(summary: list[SummaryLine]) -> str:
    lines = ["| method | tag | average | robust | ok |", "|---|---|---|---|---|"]
    for s in summary:
        lines.append(f"| {s.method} | {s.tag} | {_cell(s.avg_median, s.avg_min, s.avg_max)} | "
                     f"{_cell(s.robust_median, s.robust_min, s.robust_max)} | {s.n_ok}/{s.n_total} |")
    return "\n".join(lines) + "\n"


def rows_to_markdown(rows: list[MetricsRow]) -> str:
    cols = columns(rows)
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    m = _group_count(rows)
    for r in rows:
        vals = [r.method, str(r.seed), r.tag, f"{r.avg:.4f}", f"{r.robust:.4f}"]
        vals += [f"{g:.4f}" for g in r.groups] + [""] * (m - len(r.groups))
        vals += [f"{r.secs:.2f}", r.error.replace("|", "/")]
        lines.append("| " + " | ".join(vals) + " |")
    return ("## Summary (median, min-max, in percent)\n\n" + summary_markdown(summarize(rows))
            + "\n## Runs\n\n" + "\n".join(lines) + "\n")


def emit_report(rows: list[MetricsRow], fmt: str, path) -> Path:
    if not rows:
        raise ValueError("a report needs at least one row")
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    text = {"csv": rows_to_csv, "json": rows_to_json, "markdown": rows_to_markdown}[fmt](rows)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"cannot write report to {path}: {exc}") from None
    return path


def write_experiment(result, out_dir) -> dict[str, Path]:
    """Deterministic ``rows.csv`` plus timings, JSON and markdown reports."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "rows.csv").write_text(rows_to_csv(result.rows, timing=False), encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"cannot write results to {out}: {exc}") from None
    paths = {"rows": out / "rows.csv"}
    paths["timed"] = emit_report(result.rows, "csv", out / "rows_timed.csv")
    paths["json"] = emit_report(result.rows, "json", out / "report.json")
    paths["markdown"] = emit_report(result.rows, "markdown", out / "report.md")
    return paths
