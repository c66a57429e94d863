"""Evaluation metrics: accuracy, response/reasoning lengths, efficiency.

SE = Acc/SL x 100 and RE = Acc/RL x 100, with Acc in percent. Overall
efficiency columns are unweighted means of the per-dataset values, never
Acc_overall/SL_overall; overall Acc/RL/SL are likewise reported as
unweighted dataset means (the reference grid's own overall Acc/SL come
example-weighted from their source and are carried verbatim).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from typing import Dict, Iterable, List, Sequence, Tuple


class ZeroLength(Exception):
    pass


class DatasetMismatch(Exception):
    pass


@dataclass(frozen=True)
class EvalRecord:
    dataset: str
    correct: bool
    reasoning_len: int
    response_len: int

    def __post_init__(self):
        if self.reasoning_len < 0 or self.response_len < 0:
            raise ValueError("lengths must be >= 0")
        if self.reasoning_len > self.response_len:
            raise ValueError("reasoning length cannot exceed response length")


@dataclass(frozen=True)
class DatasetSummary:
    dataset: str
    acc: float
    mean_rl: float
    mean_sl: float
    re_val: float
    se_val: float
    n: int = 0


def round2(x: float) -> float:
    """Half-up rounding to two decimals for display."""
    return float(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def se(acc: float, sl: float) -> float:
    """Response efficiency: accuracy (percent) per token, x100."""
    if sl <= 0:
        raise ZeroLength("mean response length must be positive")
    return acc / sl * 100.0


def re(acc: float, rl: float) -> float:
    """Reasoning efficiency: accuracy (percent) per reasoning token, x100."""
    if rl <= 0:
        raise ZeroLength("mean reasoning length must be positive")
    return acc / rl * 100.0


def summarize(dataset: str, records: Sequence[EvalRecord]) -> DatasetSummary:
    if not records:
        raise ZeroLength(f"no records for dataset {dataset}")
    acc = 100.0 * sum(r.correct for r in records) / len(records)
    mean_rl = sum(r.reasoning_len for r in records) / len(records)
    mean_sl = sum(r.response_len for r in records) / len(records)
    return DatasetSummary(
        dataset=dataset,
        acc=acc,
        mean_rl=mean_rl,
        mean_sl=mean_sl,
        re_val=re(acc, mean_rl) if mean_rl > 0 else 0.0,
        se_val=se(acc, mean_sl) if mean_sl > 0 else 0.0,
        n=len(records),
    )


def aggregate_overall(summaries: Sequence[DatasetSummary]) -> DatasetSummary:
    """Unweighted dataset means; overall SE/RE average the per-dataset values."""
    if not summaries:
        raise ZeroLength("nothing to aggregate")
    k = len(summaries)
    return DatasetSummary(
        dataset="Overall",
        acc=sum(s.acc for s in summaries) / k,
        mean_rl=sum(s.mean_rl for s in summaries) / k,
        mean_sl=sum(s.mean_sl for s in summaries) / k,
        re_val=sum(s.re_val for s in summaries) / k,
        se_val=sum(s.se_val for s in summaries) / k,
        n=sum(s.n for s in summaries),
    )


def _group(records: Iterable[EvalRecord]) -> Dict[str, List[EvalRecord]]:
    groups: Dict[str, List[EvalRecord]] = {}
    for rec in records:
        groups.setdefault(rec.dataset, []).append(rec)
    return groups


def compare_table(runs: Sequence[Tuple[str, Sequence[EvalRecord]]]) -> dict:
    """Per-dataset and overall Acc/RL/SL/RE/SE for each named run.

    All runs must cover the same dataset set. The result is JSON-ready;
    render_table turns it into aligned text.
    """
    if not runs:
        raise DatasetMismatch("no runs given")
    grouped = [(name, _group(records)) for name, records in runs]
    datasets = sorted(grouped[0][1])
    for name, groups in grouped[1:]:
        if sorted(groups) != datasets:
            raise DatasetMismatch(
                f"run {name!r} covers {sorted(groups)}, expected {datasets}"
            )
    table = {"datasets": datasets, "methods": []}
    for name, groups in grouped:
        summaries = [summarize(ds, groups[ds]) for ds in datasets]
        overall = aggregate_overall(summaries)
        table["methods"].append(
            {
                "name": name,
                "cells": {
                    s.dataset: {
                        "acc": s.acc,
                        "rl": s.mean_rl,
                        "sl": s.mean_sl,
                        "re": s.re_val,
                        "se": s.se_val,
                        "n": s.n,
                    }
                    for s in summaries
                },
                "overall": {
                    "acc": overall.acc,
                    "rl": overall.mean_rl,
                    "sl": overall.mean_sl,
                    "re": overall.re_val,
                    "se": overall.se_val,
                },
            }
        )
    return table


def render_table(table: dict) -> str:
    """Aligned text rendering of a compare_table result, 2-dp half-up."""
    datasets = table["datasets"] + ["Overall"]
    header = ["method"] + [f"{ds}:{col}" for ds in datasets for col in ("acc", "sl", "se")]
    rows = [header]
    for method in table["methods"]:
        row = [method["name"]]
        for ds in datasets:
            cell = method["overall"] if ds == "Overall" else method["cells"][ds]
            row += [f"{round2(cell['acc']):.2f}", f"{round2(cell['sl']):.2f}", f"{round2(cell['se']):.2f}"]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(lines)


def thinking_token_count(token_texts: Sequence[str]) -> int:
    """Tokens strictly inside the <think>...</think> delimiters."""
    text = "".join(token_texts)
    open_tag, close_tag = "<think>", "</think>"
    lo = text.find(open_tag)
    hi = text.find(close_tag, lo + len(open_tag)) if lo >= 0 else -1
    if lo < 0 or hi < 0:
        return 0
    inner_start = lo + len(open_tag)
    count = 0
    offset = 0
    for piece in token_texts:
        begin, end = offset, offset + len(piece)
        offset = end
        if begin >= inner_start and end <= hi and len(piece) > 0:
            count += 1
    return count


def load_reference_grid() -> dict:
    """The shipped reference results grid (fixtures/table1.json)."""
    with resources.files("rom.fixtures").joinpath("table1.json").open("r") as fh:
        return json.load(fh)
