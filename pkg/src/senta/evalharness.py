"""Accuracy/drop reporting over original and perturbed test splits.

Accuracies are carried internally as exact (correct, total) integer pairs.
Rounding (half-up, two decimals) happens only at rendering, and a displayed
drop is the difference of the two displayed accuracies, so every table is
self-consistent to the reader.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import POLARITIES, Instance, select_revnon
from .errors import (
    DuplicatePredictionError,
    EmptySubsetError,
    MissingPredictionError,
)

CHECK_MARK = "✓"
CROSS_MARK = "✗"
DOWN_ARROW = "↓"


@dataclass(frozen=True)
class PredictionRecord:
    instance_id: str
    gold: str
    predicted: str
    model_name: str

    def __post_init__(self) -> None:
        for label in (self.gold, self.predicted):
            if label not in POLARITIES:
                raise ValueError(f"unknown polarity {label!r}")


@dataclass(frozen=True)
class SplitResult:
    """Exact counts for one (model, split) cell."""

    correct: int
    total: int
    per_class: tuple[tuple[str, int, int], ...] = ()  # (class, correct, total)

    def accuracy_fraction(self) -> Fraction:
        return Fraction(self.correct, self.total)

    def accuracy_display(self) -> Decimal:
        return display_accuracy(self.correct, self.total)


@dataclass(frozen=True)
class CaseTable:
    models: tuple[str, ...]
    case_ids: tuple[str, ...]
    marks: tuple[tuple[bool, ...], ...]  # one row per model


@dataclass(frozen=True)
class EvalReport:
    models: tuple[str, ...]
    splits: tuple[str, ...]
    results: tuple[tuple[str, str, SplitResult], ...]  # (model, split, result)
    drop_pairs: tuple[tuple[str, str], ...] = ()
    case_table: CaseTable | None = None

    def result(self, model: str, split: str) -> SplitResult:
        for m, s, r in self.results:
            if m == model and s == split:
                return r
        raise KeyError((model, split))

    def drop_display(self, model: str, ori: str, change: str) -> Decimal:
        return self.result(model, ori).accuracy_display() - self.result(
            model, change
        ).accuracy_display()


def display_accuracy(correct: int, total: int) -> Decimal:
    """100*correct/total rounded half-up to two decimals."""
    if total <= 0:
        raise ZeroDivisionError("total must be positive")
    with localcontext() as ctx:
        ctx.prec = 50
        value = (Decimal(correct) * 100) / Decimal(total)
    return value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def _index_predictions(
    predictions: Iterable[PredictionRecord],
) -> dict[str, dict[str, PredictionRecord]]:
    by_model: dict[str, dict[str, PredictionRecord]] = {}
    for rec in predictions:
        slot = by_model.setdefault(rec.model_name, {})
        if rec.instance_id in slot:
            raise DuplicatePredictionError(
                f"model {rec.model_name!r} predicted {rec.instance_id!r} twice"
            )
        slot[rec.instance_id] = rec
    return by_model


def _score(
    model: str,
    ids: Sequence[str],
    lookup: dict[str, PredictionRecord],
    gold_by_id: Mapping[str, str],
) -> SplitResult:
    missing = [i for i in ids if i not in lookup]
    if missing:
        raise MissingPredictionError(
            f"model {model!r} lacks predictions for: {', '.join(missing[:10])}"
            + ("…" if len(missing) > 10 else "")
        )
    correct = 0
    per_class = {p: [0, 0] for p in POLARITIES}
    for iid in ids:
        rec = lookup[iid]
        gold = gold_by_id[iid]
        if rec.gold != gold:
            raise ValueError(
                f"prediction record for {iid!r} carries gold {rec.gold!r} "
                f"but the instance is {gold!r}"
            )
        per_class[gold][1] += 1
        if rec.predicted == gold:
            correct += 1
            per_class[gold][0] += 1
    return SplitResult(
        correct=correct,
        total=len(ids),
        per_class=tuple((p, c, t) for p, (c, t) in per_class.items()),
    )


def evaluate(
    predictions: Sequence[PredictionRecord],
    instances: Sequence[Instance],
    splits: Mapping[str, Sequence[str]],
    drop_pairs: Sequence[tuple[str, str]] = (),
    models: Sequence[str] | None = None,
) -> EvalReport:
    """Score every model on every configured split.

    ``splits`` maps a split name to the instance ids it contains; every id
    must resolve to an instance and carry exactly one prediction per model.
    """
    gold_by_id = {i.id: i.polarity for i in instances}
    for name, ids in splits.items():
        unknown = [i for i in ids if i not in gold_by_id]
        if unknown:
            raise MissingPredictionError(
                f"split {name!r} references unknown instance ids: {unknown[:10]}"
            )
    for ori, change in drop_pairs:
        if ori not in splits or change not in splits:
            raise KeyError(f"drop pair ({ori}, {change}) names an unknown split")

    by_model = _index_predictions(predictions)
    model_order = tuple(models) if models is not None else tuple(sorted(by_model))
    results = tuple(
        (model, split_name, _score(model, list(ids), by_model.get(model, {}), gold_by_id))
        for model in model_order
        for split_name, ids in splits.items()
    )
    return EvalReport(
        models=model_order,
        splits=tuple(splits),
        results=results,
        drop_pairs=tuple((o, c) for o, c in drop_pairs),
    )


def evaluate_revnon(
    predictions: Sequence[PredictionRecord],
    instances: Sequence[Instance],
    models: Sequence[str] | None = None,
) -> EvalReport:
    """Accuracy over only the instances whose non-target sentiment was flipped."""
    subset = select_revnon(instances)
    if not subset:
        raise EmptySubsetError("no revnon-tagged instances to evaluate")
    return evaluate(
        predictions,
        subset,
        splits={"revnon": [i.id for i in subset]},
        models=models,
    )


def case_table(
    predictions: Sequence[PredictionRecord],
    case_ids: Sequence[str],
    instances: Sequence[Instance] | None = None,
    models: Sequence[str] | None = None,
) -> CaseTable:
    """Correct/incorrect marks per (model, case id)."""
    by_model = _index_predictions(predictions)
    model_order = tuple(models) if models is not None else tuple(sorted(by_model))
    gold_by_id = {i.id: i.polarity for i in instances} if instances else None
    marks = []
    for model in model_order:
        lookup = by_model.get(model, {})
        row = []
        for cid in case_ids:
            if cid not in lookup:
                raise MissingPredictionError(f"model {model!r} did not predict case {cid!r}")
            rec = lookup[cid]
            gold = gold_by_id[cid] if gold_by_id is not None else rec.gold
            row.append(rec.predicted == gold)
        marks.append(tuple(row))
    return CaseTable(models=model_order, case_ids=tuple(case_ids), marks=tuple(marks))


def with_case_table(report: EvalReport, table: CaseTable) -> EvalReport:
    return EvalReport(
        models=report.models,
        splits=report.splits,
        results=report.results,
        drop_pairs=report.drop_pairs,
        case_table=table,
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_report(report: EvalReport, format: str = "text") -> bytes:
    if format == "text":
        return _render_text(report).encode("utf-8")
    if format == "structured":
        return _render_structured(report).encode("utf-8")
    raise ValueError(f"unknown report format {format!r}")


def _render_text(report: EvalReport) -> str:
    change_of = {change: ori for ori, change in report.drop_pairs}
    headers = ["model"] + list(report.splits)
    rows = []
    for model in report.models:
        row = [model]
        for split in report.splits:
            cell = f"{report.result(model, split).accuracy_display()}"
            if split in change_of:
                drop = report.drop_display(model, change_of[split], split)
                cell += f" ({DOWN_ARROW}{drop})"
            row.append(cell)
        rows.append(row)

    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())

    lines.append("")
    lines.append("per-class accuracy (correct/total)")
    for model in report.models:
        for split in report.splits:
            res = report.result(model, split)
            parts = [f"{p}: {c}/{t}" for p, c, t in res.per_class]
            lines.append(f"  {model} / {split}: " + ", ".join(parts))

    if report.case_table is not None and report.case_table.case_ids:
        lines.append("")
        lines.append("case comparison")
        header = ["method"] + list(report.case_table.case_ids)
        cw = [max(len(h), 1) for h in header]
        cw[0] = max(cw[0], *(len(m) for m in report.case_table.models))
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, cw)).rstrip())
        for model, row in zip(report.case_table.models, report.case_table.marks):
            marks = [CHECK_MARK if ok else CROSS_MARK for ok in row]
            lines.append(
                "  ".join(c.ljust(w) for c, w in zip([model] + marks, cw)).rstrip()
            )
    return "\n".join(lines) + "\n"


def _render_structured(report: EvalReport) -> str:
    records: list[dict] = [
        {
            "type": "report",
            "models": list(report.models),
            "splits": list(report.splits),
            "dropPairs": [list(p) for p in report.drop_pairs],
        }
    ]
    for model, split, res in report.results:
        records.append(
            {
                "type": "result",
                "model": model,
                "split": split,
                "correct": res.correct,
                "total": res.total,
                "accuracyPercent": str(res.accuracy_display()),
                "perClass": {p: [c, t] for p, c, t in res.per_class},
            }
        )
    for ori, change in report.drop_pairs:
        for model in report.models:
            records.append(
                {
                    "type": "drop",
                    "model": model,
                    "ori": ori,
                    "change": change,
                    "dropPercent": str(report.drop_display(model, ori, change)),
                }
            )
    if report.case_table is not None:
        records.append(
            {
                "type": "case_table",
                "models": list(report.case_table.models),
                "caseIds": list(report.case_table.case_ids),
                "marks": [list(row) for row in report.case_table.marks],
            }
        )
    return "\n".join(json.dumps(r, ensure_ascii=False) for r in records) + "\n"


def parse_report(data: bytes) -> EvalReport:
    """Inverse of the structured rendering."""
    header = None
    cells: dict[tuple[str, str], SplitResult] = {}
    table = None
    for line in data.decode("utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["type"] == "report":
            header = rec
        elif rec["type"] == "result":
            cells[(rec["model"], rec["split"])] = SplitResult(
                correct=rec["correct"],
                total=rec["total"],
                per_class=tuple(
                    (p, c, t) for p, (c, t) in rec["perClass"].items()
                ),
            )
        elif rec["type"] == "case_table":
            table = CaseTable(
                models=tuple(rec["models"]),
                case_ids=tuple(rec["caseIds"]),
                marks=tuple(tuple(bool(x) for x in row) for row in rec["marks"]),
            )
    if header is None:
        raise ValueError("structured report lacks its header record")
    models = tuple(header["models"])
    splits = tuple(header["splits"])
    results = tuple(
        (m, s, cells[(m, s)]) for m in models for s in splits if (m, s) in cells
    )
    return EvalReport(
        models=models,
        splits=splits,
        results=results,
        drop_pairs=tuple((o, c) for o, c in header["dropPairs"]),
        case_table=table,
    )


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------

def write_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "instanceId": rec.instance_id,
                        "gold": rec.gold,
                        "predicted": rec.predicted,
                        "modelName": rec.model_name,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            records.append(
                PredictionRecord(
                    instance_id=rec["instanceId"],
                    gold=rec["gold"],
                    predicted=rec["predicted"],
                    model_name=rec["modelName"],
                )
            )
    return records
