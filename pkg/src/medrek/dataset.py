"""Edit-record schema, JSONL IO, cleaning, stats, and the synthetic world.

A record bundles one counterfactual edit with its three probe
questions: the efficacy question the edit must change, a generality
paraphrase that must change with it, and a locality question about a
different fact of the same subject area that must not move. The
subject and relation ride along explicitly because the knowledge base
keys are built from them, not from the question text.

The synthetic generator builds a tiny closed world of (subject,
relation, object) facts, renders questions from fixed template pools
(generality templates never share a surface form with efficacy
templates), and emits the pretraining corpus that teaches a language
model the original facts. Locality facts draw their subjects and
relations from reserved pools the edit facts never touch, so an
unrelated question shares only template words with stored keys, and
each record's locality question stays within its subject area.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import IoError, ValidationError
from .vocab import Vocab

SPLITS = ("train", "valid", "test")

TEXT_FIELDS = ("efficacy_q", "generality_q", "locality_q", "ground_truth", "edit_target", "locality_gt")

RECORD_FIELDS = ("subject", "relation", *TEXT_FIELDS, "subject_tag", "split")


@dataclass
class EditRecord:
    subject: str
    relation: str
    efficacy_q: str
    generality_q: str
    locality_q: str
    ground_truth: str
    edit_target: str
    locality_gt: str
    subject_tag: str
    split: str

    def validate(self, where: str = "record") -> "EditRecord":
        for name in TEXT_FIELDS + ("subject", "relation", "subject_tag"):
            if not getattr(self, name).strip():
                raise ValidationError(f"{where}: field {name!r} is empty")
        if self.edit_target == self.ground_truth:
            raise ValidationError(f"{where}: edit_target equals ground_truth ({self.edit_target!r})")
        if self.split not in SPLITS:
            raise ValidationError(f"{where}: split must be one of {SPLITS}, got {self.split!r}")
        return self


def record_from_dict(d: dict, where: str = "record") -> EditRecord:
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = sorted(set(d) - set(RECORD_FIELDS))
    if unknown:
        raise ValidationError(f"{where}: unknown fields {unknown}")
    missing = [f for f in RECORD_FIELDS if f not in d]
    if missing:
        raise ValidationError(f"{where}: missing fields {missing}")
    bad_type = [f for f in RECORD_FIELDS if not isinstance(d[f], str)]
    if bad_type:
        raise ValidationError(f"{where}: non-string fields {bad_type}")
    return EditRecord(**{f: d[f] for f in RECORD_FIELDS}).validate(where)


def load_records(path: str | Path) -> list[EditRecord]:
    p = Path(path)
    if not p.is_file():
        raise IoError(f"records file not found: {p}")
    records = []
    for line_no, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{p}:{line_no}: invalid JSON: {e}") from None
        records.append(record_from_dict(d, where=f"{p}:{line_no}"))
    return records


def save_records(records: list[EditRecord], path: str | Path) -> None:
    lines = [json.dumps(asdict(r), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# Cleaning and stats


def _norm(text: str) -> str:
    return text.strip().casefold()


@dataclass
class Removal:
    index: int
    reason: str  # "own_locality" or "cross_locality"
    matched_index: int


def clean_overlaps(records: list[EditRecord]) -> tuple[list[EditRecord], list[Removal]]:
    """Drop records whose efficacy question doubles as a locality question.

    Matching is exact after trim and case-fold. A record goes when its
    efficacy question equals its own locality question or any other
    record's, across splits; the efficacy-side record is always the one
    removed. Cleaning an already-clean set removes nothing.
    """
    locality_index: dict[str, int] = {}
    for i, r in enumerate(records):
        locality_index.setdefault(_norm(r.locality_q), i)
    kept, removals = [], []
    for i, r in enumerate(records):
        eff = _norm(r.efficacy_q)
        if eff == _norm(r.locality_q):
            removals.append(Removal(index=i, reason="own_locality", matched_index=i))
            continue
        j = locality_index.get(eff)
        if j is not None:
            removals.append(Removal(index=i, reason="cross_locality", matched_index=j))
            continue
        kept.append(r)
    return kept, removals


def subject_stats(records: list[EditRecord]) -> dict[str, float]:
    """Percentage of records per subject tag, rounded to 2 decimals."""
    if not records:
        raise ValidationError("subject_stats: empty record list")
    counts: dict[str, int] = {}
    for r in records:
        counts[r.subject_tag] = counts.get(r.subject_tag, 0) + 1
    total = len(records)
    return {tag: round(100.0 * n / total, 2) for tag, n in sorted(counts.items())}


# ---------------------------------------------------------------------------
# Synthetic world

# Questions lead with the subject. The retrieval encoder pools the
# first-token embedding as its cls feature, so a subject-first question
# shares that feature with the stored key for the same fact.
EFFICACY_TEMPLATES = (
    "{s} {r} is what ?",
    "{s} has what {r} ?",
    "{s} {r} should be ?",
)

GENERALITY_TEMPLATES = (
    "{s} {r} tell me",
    "{s} {r} answer now",
    "{s} state the {r}",
)


@dataclass
class SynthConfig:
    seed: int = 0
    n_records: int = 50
    n_subject_areas: int = 5
    n_subjects: int = 24
    n_relations: int = 6
    n_objects: int = 16
    n_locality_facts: int = 20
    valid_fraction: float = 0.16
    test_fraction: float = 0.0

    def validate(self) -> "SynthConfig":
        if self.n_records < 1:
            raise ValidationError("synthetic: n_records must be positive")
        if (self.n_subjects - self.n_subject_areas) * self.n_relations < self.n_records:
            raise ValidationError(
                "synthetic: not enough (subject, relation) pairs for "
                f"{self.n_records} records after reserving one locality subject per area"
            )
        if self.n_objects < 2:
            raise ValidationError("synthetic: need at least 2 objects for counterfactual targets")
        if self.n_locality_facts < self.n_subject_areas:
            raise ValidationError("synthetic: each subject area needs at least one locality fact")
        if self.n_subjects < self.n_subject_areas:
            raise ValidationError("synthetic: fewer subjects than subject areas")
        if not 0.0 <= self.valid_fraction + self.test_fraction < 1.0:
            raise ValidationError("synthetic: split fractions must leave room for a train split")
        return self

    def loc_relations(self) -> int:
        """Relations minted for locality facts, beyond the edit range."""
        return -(-self.n_locality_facts // self.n_subject_areas)


@dataclass
class Fact:
    subject: str
    relation: str
    object: str
    area: str


@dataclass
class SyntheticSet:
    records: list[EditRecord]
    corpus_lines: list[str]
    vocab: Vocab


def generate_synthetic(cfg: SynthConfig) -> SyntheticSet:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    subjects = [f"s{i:02d}" for i in range(cfg.n_subjects)]
    areas = {s: f"area{i % cfg.n_subject_areas}" for i, s in enumerate(subjects)}
    relations = [f"rel{i}" for i in range(cfg.n_relations)]
    objects = [f"obj{i:02d}" for i in range(cfg.n_objects)]

    # Fact objects cycle a shuffled object list instead of being drawn
    # independently, so every object is the answer of some corpus line.
    object_cycle = [objects[int(i)] for i in rng.permutation(cfg.n_objects)]
    cycle_pos = 0

    def next_object() -> str:
        nonlocal cycle_pos
        obj = object_cycle[cycle_pos % cfg.n_objects]
        cycle_pos += 1
        return obj

    # Locality facts live on reserved subjects (the first of each area)
    # and on relations past the edit range. Locality questions probe
    # facts the knowledge base never stores; keeping both coordinates
    # out of the edit pool means an unrelated query shares only template
    # words with stored keys, which is exactly what the prototype gate
    # has to reject.
    loc_rels = [f"rel{cfg.n_relations + i}" for i in range(cfg.loc_relations())]
    loc_facts: list[Fact] = []
    for i in range(cfg.n_locality_facts):
        s = subjects[i % cfg.n_subject_areas]
        r = loc_rels[i // cfg.n_subject_areas]
        loc_facts.append(Fact(s, r, next_object(), areas[s]))

    pairs = [(s, r) for s in subjects[cfg.n_subject_areas :] for r in relations]
    order = [int(i) for i in rng.permutation(len(pairs))]
    eff_facts: list[Fact] = []
    for idx in order[: cfg.n_records]:
        s, r = pairs[idx]
        eff_facts.append(Fact(s, r, next_object(), areas[s]))

    # Counterfactual targets cycle through the object pool so every
    # object shows up as an edit target somewhere.
    records: list[EditRecord] = []
    loc_by_area: dict[str, list[Fact]] = {}
    for f in loc_facts:
        loc_by_area.setdefault(f.area, []).append(f)
    area_cursor: dict[str, int] = {a: 0 for a in loc_by_area}

    n_test = int(round(cfg.test_fraction * cfg.n_records))
    n_valid = int(round(cfg.valid_fraction * cfg.n_records))
    perm = rng.permutation(cfg.n_records)
    split_of = {}
    for rank, idx in enumerate(perm):
        split_of[int(idx)] = "test" if rank < n_test else ("valid" if rank < n_test + n_valid else "train")

    for i, fact in enumerate(eff_facts):
        target = objects[i % cfg.n_objects]
        if target == fact.object:
            target = objects[(i + 1) % cfg.n_objects]
        loc_pool = loc_by_area[fact.area]
        loc = loc_pool[area_cursor[fact.area] % len(loc_pool)]
        area_cursor[fact.area] += 1
        records.append(
            EditRecord(
                subject=fact.subject,
                relation=fact.relation,
                efficacy_q=EFFICACY_TEMPLATES[i % len(EFFICACY_TEMPLATES)].format(r=fact.relation, s=fact.subject),
                generality_q=GENERALITY_TEMPLATES[i % len(GENERALITY_TEMPLATES)].format(
                    r=fact.relation, s=fact.subject
                ),
                locality_q=EFFICACY_TEMPLATES[(i + 1) % len(EFFICACY_TEMPLATES)].format(r=loc.relation, s=loc.subject),
                ground_truth=fact.object,
                edit_target=target,
                locality_gt=loc.object,
                subject_tag=fact.area,
                split=split_of[i],
            ).validate(f"synthetic record {i}")
        )

    corpus_lines = []
    for fact in eff_facts + loc_facts:
        for tpl in EFFICACY_TEMPLATES + GENERALITY_TEMPLATES:
            corpus_lines.append(f"{tpl.format(r=fact.relation, s=fact.subject)} {fact.object}")

    return SyntheticSet(records=records, corpus_lines=corpus_lines, vocab=build_vocab(corpus_lines, records))


def build_vocab(corpus_lines: list[str], records: list[EditRecord]) -> Vocab:
    """Vocabulary over corpus then record texts, in first appearance order.

    Rebuilding from the saved corpus and records files reproduces the
    generator's vocabulary exactly, so a language model pretrained later
    agrees token-for-token with the data it was generated from.
    """
    tokens: list[str] = ["."]
    for line in corpus_lines:
        tokens.extend(line.split())
    for rec in records:
        for fieldname in TEXT_FIELDS:
            tokens.extend(getattr(rec, fieldname).split())
        tokens.extend([rec.subject, rec.relation])
    return Vocab.from_tokens(tokens)
