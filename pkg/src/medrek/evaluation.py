"""Editing protocols and metrics.

A protocol run partitions the records into groups, loads each group's
edits into the knowledge base, and only then asks the questions: every
query in a group competes against all of the group's keys, which is
what makes larger batch sizes harder. Efficacy and generality count
teacher-forced argmax matches of the edit target; locality counts
queries whose forced answer is unchanged from the plain model's, so an
abstaining retriever scores a perfect locality by construction.

Fluency is the weighted bigram/trigram entropy of greedy continuations.
The entropy is the standard negative-sum form; a sign knob recovers the
positive-sum variant some reports print, and a scale knob absorbs any
magnitude convention. Both default to the mathematical definition.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

from .dataset import EditRecord
from .errors import ValidationError
from .system import MedrekSystem

CSV_COLUMNS = ("method", "split", "batch_size", "n_records", "eff", "gen", "loc", "flu", "avg")


def ngram_entropy(tokens: list, n: int) -> float:
    """Shannon entropy (bits) of the n-gram distribution of one sequence."""
    if len(tokens) < n + 1:
        raise ValidationError(f"fluency: sequence of {len(tokens)} tokens is too short for {n}-grams")
    grams = Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    total = sum(grams.values())
    return -sum((c / total) * math.log2(c / total) for c in grams.values())


@dataclass
class FluencyConfig:
    weight_bigram: float = 1.0
    weight_trigram: float = 1.0
    scale: float = 1.0
    sign: float = 1.0
    tokens: int = 20

    def validate(self) -> "FluencyConfig":
        if self.tokens < 3:
            raise ValidationError("fluency: need at least 3 generated tokens for trigrams")
        if self.sign not in (1.0, -1.0):
            raise ValidationError("fluency: sign must be +1 or -1")
        return self


def fluency_score(sequences: list[list], config: FluencyConfig | None = None) -> float:
    """Mean weighted n-gram entropy over generated sequences."""
    config = (config or FluencyConfig()).validate()
    if not sequences:
        raise ValidationError("fluency: no sequences")
    scores = []
    for seq in sequences:
        h2 = ngram_entropy(seq, 2)
        h3 = ngram_entropy(seq, 3)
        scores.append(config.weight_bigram * h2 + config.weight_trigram * h3)
    return config.sign * config.scale * (sum(scores) / len(scores))


def average_score(eff: float, gen: float, loc_submetrics: list[float]) -> float:
    """((eff + gen) / 2 + mean of locality submetrics) / 2."""
    if not loc_submetrics:
        raise ValidationError("average_score: empty locality submetric list")
    for v in (eff, gen, *loc_submetrics):
        if not 0.0 <= v <= 100.0:
            raise ValidationError(f"average_score: metric {v} outside [0, 100]")
    loc_mean = sum(loc_submetrics) / len(loc_submetrics)
    return ((eff + gen) / 2.0 + loc_mean) / 2.0


@dataclass
class RetrievalInfo:
    selected: int | None  # entry id chosen by the gate, None on abstain
    own: int  # the record's own entry id within its group
    top_sim: float
    proto_sim: float
    own_sim: float


@dataclass
class SampleOutcome:
    record_index: int
    group_index: int
    eff: RetrievalInfo
    gen: RetrievalInfo
    loc: RetrievalInfo
    eff_hit: bool
    gen_hit: bool
    loc_preserved: bool
    fluency: float


@dataclass
class MetricReport:
    method: str
    split: str
    batch_size: int
    n_records: int
    eff: float
    gen: float
    loc: float
    flu: float
    avg: float
    outcomes: list[SampleOutcome] = field(repr=False, default_factory=list)


def _query_info(system: MedrekSystem, query: str, own_id: int):
    result = system.retrieve(query)
    info = RetrievalInfo(
        selected=None if result.entry is None else result.entry.entry_id,
        own=own_id,
        top_sim=float(result.sims.max()),
        proto_sim=float(result.proto_sim),
        own_sim=float(result.sims[own_id]),
    )
    return info, system.prompt_for(result)


def run_protocol(
    system: MedrekSystem,
    records: list[EditRecord],
    batch_size: int,
    fluency: FluencyConfig | None = None,
    method: str = "medrek",
    split: str = "test",
) -> MetricReport:
    """Group-wise batch editing followed by the full metric sweep."""
    fluency = (fluency or FluencyConfig()).validate()
    if batch_size < 1:
        raise ValidationError("run_protocol: batch_size must be positive")
    if not records:
        raise ValidationError("run_protocol: empty record list")
    if batch_size > len(records):
        raise ValidationError(f"run_protocol: batch_size {batch_size} exceeds the {len(records)}-record split")
    vocab, lm = system.vocab, system.lm
    outcomes: list[SampleOutcome] = []
    continuations: list[list[int]] = []
    for group_index, start in enumerate(range(0, len(records), batch_size)):
        group = records[start : start + batch_size]
        system.kb.clear()
        for record in group:
            system.insert_record(record)
        for offset, record in enumerate(group):
            target = vocab.encode(record.edit_target)
            qe = vocab.encode(record.efficacy_q)
            qg = vocab.encode(record.generality_q)
            ql = vocab.encode(record.locality_q)
            loc_gt = vocab.encode(record.locality_gt)

            eff_info, eff_prompt = _query_info(system, record.efficacy_q, offset)
            gen_info, gen_prompt = _query_info(system, record.generality_q, offset)
            loc_info, loc_prompt = _query_info(system, record.locality_q, offset)

            eff_hit = lm.answer_match(qe, target, eff_prompt)
            gen_hit = lm.answer_match(qg, target, gen_prompt)
            loc_preserved = lm.forced_answer(ql, loc_gt, loc_prompt) == lm.forced_answer(ql, loc_gt, None)
            continuation = lm.greedy_answer(qe, fluency.tokens, eff_prompt)
            continuations.append(continuation)
            outcomes.append(
                SampleOutcome(
                    record_index=start + offset,
                    group_index=group_index,
                    eff=eff_info,
                    gen=gen_info,
                    loc=loc_info,
                    eff_hit=eff_hit,
                    gen_hit=gen_hit,
                    loc_preserved=loc_preserved,
                    fluency=fluency.sign * fluency.scale * (ngram_entropy(continuation, 2) * fluency.weight_bigram + ngram_entropy(continuation, 3) * fluency.weight_trigram),
                )
            )
    system.kb.clear()
    n = len(records)
    eff = 100.0 * sum(o.eff_hit for o in outcomes) / n
    gen = 100.0 * sum(o.gen_hit for o in outcomes) / n
    loc = 100.0 * sum(o.loc_preserved for o in outcomes) / n
    flu = fluency_score(continuations, fluency)
    return MetricReport(
        method=method,
        split=split,
        batch_size=batch_size,
        n_records=n,
        eff=eff,
        gen=gen,
        loc=loc,
        flu=flu,
        avg=average_score(eff, gen, [loc]),
        outcomes=outcomes,
    )


def loc_abstention_rate(report: MetricReport) -> float:
    """Percentage of locality queries where the gate kept the prototype."""
    if not report.outcomes:
        raise ValidationError("loc_abstention_rate: report has no outcomes")
    return 100.0 * sum(o.loc.selected is None for o in report.outcomes) / len(report.outcomes)


def report_json(report: MetricReport) -> str:
    payload = {k: v for k, v in asdict(report).items() if k != "outcomes"}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def outcome_lines(report: MetricReport) -> str:
    return "".join(json.dumps(asdict(o), sort_keys=True) + "\n" for o in report.outcomes)


def metrics_csv(reports: list[MetricReport]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in reports:
        lines.append(
            f"{r.method},{r.split},{r.batch_size},{r.n_records},"
            f"{r.eff:.10g},{r.gen:.10g},{r.loc:.10g},{r.flu:.10g},{r.avg:.10g}"
        )
    return "\n".join(lines) + "\n"
