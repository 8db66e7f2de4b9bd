"""Metrics, fold aggregation, relative-improvement scores and comparison tables."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from statistics import mean, stdev
from typing import Iterable, Mapping, Sequence

import numpy as np

FAMILY_TITLES = {
    "suicide": "Suicide Ideation Task",
    "stress": "Stress Detection Task",
    "health_mention": "Health Mention Task",
    "depression": "Depression Detection Task",
    "vaccine_sentiment": "Vaccine Sentiment Task",
    "covid": "COVID Related Task",
    "other_health": "Other Health Related Task",
}


def confusion(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    """Counts matrix, rows = gold, columns = predicted."""
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted labels")
    g = np.asarray(gold, dtype=np.int64).reshape(-1)
    p = np.asarray(pred, dtype=np.int64).reshape(-1)
    for name, arr in (("gold", g), ("pred", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} label out of range [0, {num_classes})")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (g, p), 1)
    return m


def f1_scores(m: np.ndarray) -> tuple[np.ndarray, float, float]:
    """``(per_class_f1, macro_f1, micro_f1)``; 0/0 counts as 0."""
    m = np.asarray(m)
    total = m.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(m).astype(float)
    pred_pos = m.sum(axis=0)
    gold_pos = m.sum(axis=1)
    denom = pred_pos + gold_pos
    # 2PR/(P+R) == 2tp/(pred_pos+gold_pos)
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    micro = float(tp.sum() / total)
    return per_class, float(per_class.mean()), micro


@dataclass(frozen=True)
class FoldResult:
    dataset_id: str
    model_id: str
    fold_index: int
    per_class_f1: tuple
    macro_f1: float
    micro_f1: float

    def __post_init__(self):
        for v in (*self.per_class_f1, self.macro_f1, self.micro_f1):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"score {v} outside [0, 1]")

    @classmethod
    def from_predictions(cls, dataset_id, model_id, fold_index, gold, pred, num_classes) -> "FoldResult":
        per, macro, micro = f1_scores(confusion(gold, pred, num_classes))
        return cls(dataset_id, model_id, fold_index, tuple(float(x) for x in per), macro, micro)


@dataclass
class EvalReport:
    dataset_id: str
    model_id: str
    mean_f1: float
    std_f1: float
    fold_count: int
    delta_mp: dict = field(default_factory=dict)
    folds: list = field(default_factory=list)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["folds"] = [asdict(f) if isinstance(f, FoldResult) else f for f in self.folds]
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "EvalReport":
        folds = [FoldResult(**{**f, "per_class_f1": tuple(f["per_class_f1"])}) for f in rec.get("folds", [])]
        return cls(rec["dataset_id"], rec["model_id"], rec["mean_f1"], rec["std_f1"],
                   rec["fold_count"], dict(rec.get("delta_mp", {})), folds)


def aggregate(folds: Sequence[FoldResult]) -> EvalReport:
    """Mean and sample std of fold macro-F1, as percentages."""
    if not folds:
        raise ValueError("no folds to aggregate")
    keys = {(f.dataset_id, f.model_id) for f in folds}
    if len(keys) > 1:
        raise ValueError(f"folds mix dataset/model ids: {sorted(keys)}")
    scores = [f.macro_f1 * 100 for f in folds]
    sd = stdev(scores) if len(scores) > 1 else 0.0
    (dataset_id, model_id), = keys
    return EvalReport(dataset_id, model_id, mean(scores), sd, len(folds), {}, list(folds))


def delta_mp(new_f1: float, ref_f1: float, ndigits: int | None = 2) -> float:
    """Relative improvement of ``new_f1`` over ``ref_f1`` in percent."""
    if not ref_f1 > 0:
        raise ValueError(f"reference F1 must be positive, got {ref_f1}")
    value = 100.0 * (new_f1 - ref_f1) / ref_f1
    return value if ndigits is None else round(value, ndigits)


# --- comparison tables ----------------------------------------------------

@dataclass
class TableRow:
    label: str
    family: str | None
    scores: dict  # model_id -> percentage
    best: str | None = None
    second: str | None = None
    tie: bool = False
    dmp_baseline: float | None = None
    dmp_second: float | None = None
    is_average: bool = False


@dataclass
class ComparisonTable:
    models: list
    baseline_id: str
    rows: list
    warnings: list = field(default_factory=list)

    def render(self, output_format: str = "md") -> str:
        if output_format in ("md", "markdown"):
            return render_markdown(self)
        if output_format == "csv":
            return render_csv(self)
        raise ValueError(f"unknown output format {output_format!r}")


def rank_row(scores: Mapping[str, float]) -> tuple[str | None, str | None, bool]:
    """Best and second-best model ids; ties go to the lexicographically lower id."""
    if not scores:
        return None, None, False
    ordered = sorted(scores, key=lambda m: (-scores[m], m))
    best = ordered[0]
    tie = len(ordered) > 1 and scores[ordered[1]] == scores[best]
    second = ordered[1] if len(ordered) > 1 else None
    return best, second, tie


def _fill_row(row: TableRow, baseline_id: str) -> TableRow:
    row.best, row.second, row.tie = rank_row(row.scores)
    if row.second is not None and row.best is not None:
        top = row.scores[row.best]
        if baseline_id in row.scores and row.scores[baseline_id] > 0:
            row.dmp_baseline = delta_mp(top, row.scores[baseline_id])
        if row.scores[row.second] > 0:
            row.dmp_second = delta_mp(top, row.scores[row.second])
    return row


def build_comparison_table(
    reports: Sequence[EvalReport],
    baseline_id: str,
    families: Mapping[str, str] | None = None,
    model_order: Sequence[str] | None = None,
    dataset_order: Sequence[str] | None = None,
) -> ComparisonTable:
    """Per-dataset rows plus one unweighted average row per task family.

    ``families`` maps dataset id -> task family; without it every dataset
    lands in one unnamed group. Each row marks the best and second-best
    model and carries the top model's ΔMP against the baseline and against
    the runner-up.
    """
    if not reports:
        raise ValueError("no reports")
    grid: dict[str, dict[str, float]] = {}
    for r in reports:
        grid.setdefault(r.dataset_id, {})[r.model_id] = r.mean_f1
    models = list(model_order) if model_order else list(dict.fromkeys(r.model_id for r in reports))
    warns = []
    if len(models) < 2:
        warns.append("fewer than two models; no ΔMP columns")
    for ds, scores in grid.items():
        if baseline_id not in scores:
            raise ValueError(f"no report for baseline {baseline_id!r} on dataset {ds!r}")
    datasets = list(dataset_order) if dataset_order else list(grid)
    families = families or {}
    groups: dict[str | None, list[str]] = {}
    for ds in datasets:
        groups.setdefault(families.get(ds), []).append(ds)

    rows: list[TableRow] = []
    for fam, members in groups.items():
        fam_rows = [_fill_row(TableRow(ds, fam, dict(grid[ds])), baseline_id) for ds in members]
        rows.extend(fam_rows)
        if len(members) > 1:
            avg = {m: mean(grid[ds][m] for ds in members) for m in models if all(m in grid[ds] for ds in members)}
            rows.append(_fill_row(TableRow("Average", fam, avg, is_average=True), baseline_id))
    return ComparisonTable(models, baseline_id, rows, warns)


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.2f}"


def render_markdown(table: ComparisonTable) -> str:
    show_dmp = len(table.models) > 1
    head = ["Dataset", *table.models]
    if show_dmp:
        head += [f"ΔMP_{table.baseline_id}", "ΔMP_SB"]
    lines = []
    current = object()
    for row in table.rows:
        if row.family != current:
            current = row.family
            if lines:
                lines.append("")
            if row.family is not None:
                lines.append(f"**{FAMILY_TITLES.get(row.family, row.family)}**")
                lines.append("")
            lines.append("| " + " | ".join(head) + " |")
            lines.append("|" + "---|" * len(head))
        cells = [f"**{row.label}**" if row.is_average else row.label]
        for m in table.models:
            v = row.scores.get(m)
            s = _fmt(v)
            if v is not None and m == row.best:
                s = f"**{s}**" + (" (tie)" if row.tie else "")
            elif v is not None and m == row.second and not row.is_average:
                s = f"<u>{s}</u>"
            cells.append(s)
        if show_dmp:
            cells += [_fmt(row.dmp_baseline), _fmt(row.dmp_second)]
        lines.append("| " + " | ".join(cells) + " |")
    for w in table.warnings:
        lines.append("")
        lines.append(f"> warning: {w}")
    return "\n".join(lines) + "\n"


def render_csv(table: ComparisonTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "dataset", *table.models, "best", "second_best", "tie", "dmp_baseline", "dmp_sb"])
    for row in table.rows:
        w.writerow([
            row.family or "",
            row.label,
            *[_fmt(row.scores.get(m)) for m in table.models],
            row.best or "",
            "" if row.is_average else (row.second or ""),
            int(row.tie),
            _fmt(row.dmp_baseline),
            _fmt(row.dmp_second),
        ])
    return buf.getvalue()


# --- published grid fixture ----------------------------------------------

PUBLISHED_MODELS = ("BERT", "ALBERT", "distilBERT", "CT-BERT", "BioBERT", "BERTweet", "MentalBERT", "Ours")


@dataclass(frozen=True)
class PublishedRow:
    family: str
    dataset: str
    scores: dict
    bold: str | None
    underline: str | None
    dmp_bert: float
    dmp_sb: float

    @property
    def is_average(self) -> bool:
        return self.dataset == "Average"


def load_published_grid(path: str | Path | None = None) -> list[PublishedRow]:
    """Published F1 grid with its bold/underline markers and ΔMP columns."""
    if path is None:
        text = resources.files("phsbench.data").joinpath("published_grid.csv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    rows = []
    for rec in csv.DictReader(text.splitlines()):
        scores, bold, under = {}, None, None
        for m in PUBLISHED_MODELS:
            cell = rec[m]
            if cell.startswith("**"):
                bold = m
            elif cell.startswith("__"):
                under = m
            scores[m] = float(cell.strip("*_"))
        rows.append(PublishedRow(rec["family"], rec["dataset"], scores, bold, under,
                                 float(rec["dmp_bert"]), float(rec["dmp_sb"])))
    return rows


def published_reports(rows: Iterable[PublishedRow] | None = None) -> list[EvalReport]:
    """EvalReports for every published dataset row (average rows excluded)."""
    rows = load_published_grid() if rows is None else rows
    out = []
    for r in rows:
        if r.is_average:
            continue
        for m, v in r.scores.items():
            out.append(EvalReport(r.dataset, m, v, 0.0, 1))
    return out


def published_families(rows: Iterable[PublishedRow] | None = None) -> dict[str, str]:
    rows = load_published_grid() if rows is None else rows
    return {r.dataset: r.family for r in rows if not r.is_average}


@dataclass
class DeltaResidual:
    dataset: str
    computed_bert: float
    published_bert: float
    computed_sb: float
    published_sb: float

    @property
    def worst(self) -> float:
        return max(abs(self.computed_bert - self.published_bert), abs(self.computed_sb - self.published_sb))


def published_delta_residuals(rows: Iterable[PublishedRow] | None = None,
                           include_average: bool = False) -> list[DeltaResidual]:
    """Recompute the two ΔMP columns from the published scores, row by row."""
    rows = load_published_grid() if rows is None else rows
    out = []
    for r in rows:
        if r.is_average and not include_average:
            continue
        best, second, _ = rank_row(r.scores)
        top = r.scores[best]
        out.append(DeltaResidual(
            r.dataset,
            delta_mp(top, r.scores["BERT"]),
            r.dmp_bert,
            delta_mp(top, r.scores[second]),
            r.dmp_sb,
        ))
    return out


def write_reports(reports: Iterable[EvalReport], path: str | Path) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_record(), sort_keys=True) + "\n")


def read_reports(path: str | Path) -> list[EvalReport]:
    path = Path(path)
    if not path.exists():
        return []
    return [EvalReport.from_record(json.loads(line)) for line in path.read_text("utf-8").splitlines() if line.strip()]


def isclose_pct(a: float, b: float, tol: float) -> bool:
    return math.isclose(a, b, abs_tol=tol)
