"""Overlap statistics and retrieval-outcome classification.

These read completed runs; nothing here touches model state. Cosine
similarity appears only in this module: retrieval itself gates on raw
dot products, while the overlap diagnostic follows the normalized
definition so differently-scaled key sets stay comparable.

Outcome ratios divide each query's winning similarity by its prototype
similarity, the quantity the gate actually compares. Two ratios are
emitted per query: one for the selected top key and one for the
record's own key, so either rendering of the retrieval scatter can be
reproduced downstream. The ratios assume the prototype similarity is
positive, which holds for trained systems; degenerate zero values
follow IEEE division instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .evaluation import MetricReport, RetrievalInfo

OUTCOME_CSV_COLUMNS = ("metric", "kind", "ratio_top", "ratio_gt", "record_index")


@dataclass
class OverlapReport:
    batch_size: int
    threshold: float
    high_sim_percent: float
    pair_count: int


def high_sim_stats(vectors, threshold: float = 0.6) -> OverlapReport:
    """Share of vectors in at least one strictly-above-threshold pair."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValidationError("high_sim_stats: need a (n >= 2, d) vector array")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0.0):
        raise ValidationError("high_sim_stats: zero-norm vector")
    unit = arr / norms[:, None]
    cos = unit @ unit.T
    n = arr.shape[0]
    hot = (cos > threshold) & ~np.eye(n, dtype=bool)
    involved = int(np.count_nonzero(hot.any(axis=1)))
    pair_count = int(np.count_nonzero(np.triu(hot, k=1)))
    return OverlapReport(
        batch_size=n,
        threshold=threshold,
        high_sim_percent=100.0 * involved / n,
        pair_count=pair_count,
    )


@dataclass
class RetrievalOutcome:
    metric: str  # eff | gen | loc
    kind: str  # correct | wrong | none | false_positive
    ratio_top: float
    ratio_gt: float
    record_index: int


def _ratio(num: float, den: float) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.float64(num) / np.float64(den))


def _classify_edit(metric: str, info: RetrievalInfo, record_index: int) -> RetrievalOutcome:
    if info.selected is None:
        kind = "none"
    elif info.selected == info.own:
        kind = "correct"
    else:
        kind = "wrong"
    return RetrievalOutcome(
        metric=metric,
        kind=kind,
        ratio_top=_ratio(info.top_sim, info.proto_sim),
        ratio_gt=_ratio(info.own_sim, info.proto_sim),
        record_index=record_index,
    )


def _classify_loc(info: RetrievalInfo, record_index: int) -> RetrievalOutcome:
    # An abstaining gate means the prototype was the top candidate
    # including itself, so the ratio is one by definition, computed
    # as such to keep the abstain cluster exactly on the gate line.
    if info.selected is None:
        kind, ratio_top = "none", 1.0
    else:
        kind, ratio_top = "false_positive", _ratio(info.top_sim, info.proto_sim)
    return RetrievalOutcome(
        metric="loc",
        kind=kind,
        ratio_top=ratio_top,
        ratio_gt=_ratio(info.own_sim, info.proto_sim),
        record_index=record_index,
    )


def classify_retrievals(report: MetricReport) -> list[RetrievalOutcome]:
    rows: list[RetrievalOutcome] = []
    for o in report.outcomes:
        rows.append(_classify_edit("eff", o.eff, o.record_index))
        rows.append(_classify_edit("gen", o.gen, o.record_index))
        rows.append(_classify_loc(o.loc, o.record_index))
    return rows


def outcome_counts(rows: list[RetrievalOutcome]) -> dict[str, dict[str, int]]:
    counts: dict[str, dict[str, int]] = {"eff": {}, "gen": {}, "loc": {}}
    for r in rows:
        counts[r.metric][r.kind] = counts[r.metric].get(r.kind, 0) + 1
    return counts


def loc_false_positive_rate(rows: list[RetrievalOutcome]) -> float:
    loc_rows = [r for r in rows if r.metric == "loc"]
    if not loc_rows:
        raise ValidationError("loc_false_positive_rate: no locality rows")
    return 100.0 * sum(r.kind == "false_positive" for r in loc_rows) / len(loc_rows)


def outcome_csv(rows: list[RetrievalOutcome]) -> str:
    lines = [",".join(OUTCOME_CSV_COLUMNS)]
    for r in rows:
        lines.append(f"{r.metric},{r.kind},{r.ratio_top:.10g},{r.ratio_gt:.10g},{r.record_index}")
    return "\n".join(lines) + "\n"
