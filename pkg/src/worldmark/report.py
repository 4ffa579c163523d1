"""Leaderboard emitters and the human-ranking correlation analysis."""
from __future__ import annotations

import csv
import io
import json
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import (
    LOWER_IS_BETTER,
    METRIC_LABELS,
    METRIC_NAMES,
    LeaderboardRow,
    MetricError,
    MetricReport,
    aggregate,
    spearman_rho,
)

SPLITS = ("First-Person Real", "First-Person Stylized", "Third-Person Real", "Third-Person Stylized")
HUMAN_STUDY_CONTEXT = "reference point: rho above 0.9 against human rankings (context only, not asserted)"


class ReportError(ValueError):
    pass


# -- leaderboards ----------------------------------------------------------------------

def build_leaderboard(reports: Sequence[dict]) -> dict[str, list[LeaderboardRow]]:
    """Group case report dicts (with ``model_id`` and ``split``) into rows per split."""
    if not reports:
        raise ReportError("no evaluated cases to report")
    groups: dict = defaultdict(lambda: defaultdict(list))
    for doc in reports:
        groups[doc["split"]][doc["model_id"]].append(MetricReport.from_dict(doc))
    out = {}
    for split in SPLITS:
        if split not in groups:
            continue
        rows = []
        for model in sorted(groups[split]):
            try:
                rows.append(aggregate(groups[split][model], split, model))
            except MetricError:
                rows.append(LeaderboardRow(model, split, {m: None for m in METRIC_NAMES},
                                           {m: 0 for m in METRIC_NAMES},
                                           {m: len(groups[split][model]) for m in METRIC_NAMES},
                                           len(groups[split][model])))
        out[split] = rows
    return out


def best_models(rows: Sequence[LeaderboardRow]) -> dict[str, set]:
    """Models holding the best mean per metric (ties all marked)."""
    best = {}
    for m in METRIC_NAMES:
        vals = [(r.means[m], r.model_id) for r in rows if r.means[m] is not None]
        if not vals:
            best[m] = set()
            continue
        target = min(v for v, _ in vals) if m in LOWER_IS_BETTER else max(v for v, _ in vals)
        best[m] = {name for v, name in vals if v == target}
    return best


def _cell(value: float | None, is_best: bool) -> str:
    if value is None:
        return "n/a"
    return f"{value:.2f}" + ("*" if is_best else "")


def format_table(board: dict[str, list[LeaderboardRow]]) -> str:
    """Aligned text, one table per split; '*' marks the best value per column."""
    headers = ["Model"] + [METRIC_LABELS[m] for m in METRIC_NAMES]
    blocks = []
    for split, rows in board.items():
        best = best_models(rows)
        body = [[r.model_id] + [_cell(r.means[m], r.model_id in best[m]) for m in METRIC_NAMES] for r in rows]
        widths = [max(len(str(x)) for x in col) for col in zip(headers, *body)]
        lines = [f"== {split} ({sum(r.cases for r in rows)} cases) =="]
        fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        lines.append(fmt(headers).rstrip())
        lines.append("  ".join("-" * w for w in widths))
        lines.extend(fmt(row).rstrip() for row in body)
        notes = []
        for r in rows:
            missing = {METRIC_LABELS[m]: n for m, n in r.incomplete.items() if n}
            if missing:
                detail = ", ".join(f"{k} {v}" for k, v in missing.items())
                notes.append(f"  note: {r.model_id}: incomplete cases of {r.cases}: {detail}")
        lines.extend(notes)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def _rows_flat(board: dict[str, list[LeaderboardRow]]) -> list[dict]:
    out = []
    for split, rows in board.items():
        best = best_models(rows)
        for r in rows:
            out.append({"split": split, "model_id": r.model_id, "cases": r.cases,
                        "means": {m: r.means[m] for m in METRIC_NAMES},
                        "counts": {m: r.counts[m] for m in METRIC_NAMES},
                        "incomplete": {m: r.incomplete[m] for m in METRIC_NAMES},
                        "best": [m for m in METRIC_NAMES if r.model_id in best[m]]})
    return out


def format_json(board: dict[str, list[LeaderboardRow]]) -> str:
    return json.dumps({"columns": list(METRIC_NAMES), "rows": _rows_flat(board)}, indent=2, sort_keys=True) + "\n"


def format_csv(board: dict[str, list[LeaderboardRow]]) -> str:
    """Means written with ``repr`` so values parse back to the exact floats of the JSON."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "model_id", "cases", *METRIC_NAMES, *(f"incomplete_{m}" for m in METRIC_NAMES)])
    for row in _rows_flat(board):
        w.writerow([row["split"], row["model_id"], row["cases"],
                    *("" if row["means"][m] is None else repr(row["means"][m]) for m in METRIC_NAMES),
                    *(row["incomplete"][m] for m in METRIC_NAMES)])
    return buf.getvalue()


FORMATTERS = {"table": (format_table, "leaderboard.txt"), "csv": (format_csv, "leaderboard.csv"),
              "json": (format_json, "leaderboard.json")}


def write_reports(reports: Sequence[dict], out_dir: str | os.PathLike,
                  formats: Sequence[str] = ("table", "csv", "json")) -> dict[str, Path]:
    board = build_leaderboard(reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for f in formats:
        fn, name = FORMATTERS[f]
        path = out / name
        path.write_text(fn(board), encoding="utf-8", newline="\n")
        written[f] = path
    return written


# -- human correlation -----------------------------------------------------------------------

@dataclass
class CorrelationResult:
    dimension: str
    rho: float
    per_set: dict  # set_id -> rho

    @property
    def n_sets(self) -> int:
        return len(self.per_set)


def load_rankings(path: str | os.PathLike) -> dict[str, list[str]]:
    """CSV with header ``set_id,rank_1,...,rank_k``; each row lists model ids best first."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "set_id" or len(header) < 3:
            raise ReportError("rankings CSV needs a header 'set_id,rank_1,...,rank_k' with k >= 2")
        out = {}
        for n, row in enumerate(reader, start=2):
            if not row or not any(cell.strip() for cell in row):
                continue
            models = [c.strip() for c in row[1:] if c.strip()]
            if len(set(models)) != len(models):
                raise ReportError(f"line {n}: duplicate model in ranking for set {row[0]!r}")
            out[row[0].strip()] = models
    if not out:
        raise ReportError("rankings file has no rows")
    return out


def set_id_of(case_id: str, model_id: str) -> str:
    suffix = "__" + model_id
    return case_id[: -len(suffix)] if case_id.endswith(suffix) else case_id


def metric_ranks(scores: dict[str, float], metric: str) -> dict[str, float]:
    """Rank models (1 = best) by one metric; errors ascend, scores descend; ties share the mean rank."""
    from scipy.stats import rankdata

    models = sorted(scores)
    vals = np.array([scores[m] for m in models], dtype=float)
    ranks = rankdata(vals if metric in LOWER_IS_BETTER else -vals, method="average")
    return dict(zip(models, ranks.tolist()))


def correlate_human(reports: Sequence[dict], rankings: dict[str, list[str]],
                    dimensions: Sequence[str] = METRIC_NAMES) -> list[CorrelationResult]:
    """Per-set Spearman rho between human and metric-induced model rankings, averaged over sets."""
    by_set: dict = defaultdict(dict)
    for doc in reports:
        by_set[set_id_of(doc["case_id"], doc["model_id"])][doc["model_id"]] = doc
    results = []
    for dim in dimensions:
        if dim not in METRIC_NAMES:
            raise ReportError(f"unknown dimension {dim!r}; expected one of {', '.join(METRIC_NAMES)} or 'all'")
        per_set = {}
        for set_id, human in rankings.items():
            if set_id not in by_set:
                raise ReportError(f"ranking set {set_id!r} has no evaluated cases")
            evaluated = by_set[set_id]
            if set(human) != set(evaluated):
                raise ReportError(f"set {set_id!r}: ranked models {sorted(human)} differ from evaluated "
                                  f"models {sorted(evaluated)}")
            scores = {m: evaluated[m].get(dim) for m in human}
            if any(v is None for v in scores.values()):
                continue
            auto = metric_ranks(scores, dim)
            human_rank = [float(human.index(m) + 1) for m in human]
            try:
                per_set[set_id] = spearman_rho(human_rank, [auto[m] for m in human])
            except ValueError:
                continue  # all models tied on this metric: rank correlation undefined
        if not per_set:
            raise ReportError(f"no set has a defined correlation for {dim}")
        results.append(CorrelationResult(dim, float(np.mean(list(per_set.values()))), per_set))
    return results


def format_correlation(results: Sequence[CorrelationResult]) -> str:
    lines = [f"{r.dimension:<20} rho = {r.rho:+.6f}  ({r.n_sets} sets)" for r in results]
    lines.append(HUMAN_STUDY_CONTEXT)
    return "\n".join(lines) + "\n"
