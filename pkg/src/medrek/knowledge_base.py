"""Editable knowledge store: (key, prompt, triple) entries plus the
prototype-gated retrieval rule.

A key encodes only the subject and relation, so every rephrasing of a
question about that pair lands near the same key, and triples that
share (s, r) but disagree on the object produce identical keys. The
gate compares the best key dot product against the prototype dot
product; retrieval happens only on a strict win, ties abstain, and
equal-scoring entries resolve to the lowest id. Lookup is a linear
scan, which at this scale is both exact and fast enough.

Similarity here is the raw dot product; cosine appears only in the
diagnostics module.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import Reader, Writer
from .encoder import RepEncoder
from .errors import ValidationError
from .prompt_encoder import PromptEncoder
from .vocab import Vocab

KB_MAGIC = "MRKB"
KB_VERSION = 1


@dataclass(frozen=True)
class EditTriple:
    subject: str
    relation: str
    object: str

    def key_text(self) -> str:
        return f"{self.subject} {self.relation}"

    def value_text(self) -> str:
        return f"{self.subject} {self.relation} {self.object}"


@dataclass
class KbEntry:
    entry_id: int
    key: np.ndarray  # (d_rep,)
    prompt: np.ndarray  # (T, d_lm)
    triple: EditTriple


@dataclass
class RetrievalResult:
    entry: KbEntry | None
    sims: np.ndarray  # dot product per entry, in id order
    proto_sim: float

    @property
    def retrieved(self) -> bool:
        return self.entry is not None

    def top_sim(self) -> float:
        """Best similarity including the prototype as the abstain option."""
        best = float(self.sims.max()) if self.sims.size else float("-inf")
        return max(best, self.proto_sim)


class KnowledgeBase:
    def __init__(self, d_rep: int, prompt_tokens: int, d_lm: int):
        self.d_rep = d_rep
        self.prompt_tokens = prompt_tokens
        self.d_lm = d_lm
        self.entries: list[KbEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries = []

    def insert_edit(
        self,
        triple: EditTriple,
        encoder: RepEncoder,
        prompt_encoder: PromptEncoder,
        vocab: Vocab,
    ) -> KbEntry:
        """Encode key from (s, r), prompt from the full triple, and store."""
        key = encoder.rep_from_ids(vocab.encode(triple.key_text()), "key")
        z_v = encoder.rep_from_ids(vocab.encode(triple.value_text()), "value")
        prompt = prompt_encoder.generate_prompt(z_v)
        if key.z.shape != (self.d_rep, 1):
            raise ValidationError(f"kb: key shape {key.z.shape} does not match d_rep {self.d_rep}")
        if prompt.shape != (self.prompt_tokens, self.d_lm):
            raise ValidationError(
                f"kb: prompt shape {prompt.shape} does not match ({self.prompt_tokens}, {self.d_lm})"
            )
        entry = KbEntry(
            entry_id=len(self.entries),
            key=key.vector().copy(),
            prompt=prompt.data.copy(),
            triple=triple,
        )
        self.entries.append(entry)
        return entry

    def select(self, z_q: np.ndarray, proto_sim: float) -> RetrievalResult:
        """Gate a raw query vector against stored keys.

        Returns the argmax entry only when its dot product strictly
        beats the prototype similarity; numpy argmax takes the first
        (lowest-id) maximizer on ties.
        """
        if not self.entries:
            return RetrievalResult(entry=None, sims=np.zeros(0), proto_sim=proto_sim)
        keys = np.stack([e.key for e in self.entries])
        if z_q.shape != (self.d_rep,):
            raise ValidationError(f"kb: query vector shape {z_q.shape}, expected ({self.d_rep},)")
        sims = keys @ z_q
        top = int(np.argmax(sims))
        entry = self.entries[top] if sims[top] > proto_sim else None
        return RetrievalResult(entry=entry, sims=sims, proto_sim=proto_sim)

    def retrieve(self, query_text: str, encoder: RepEncoder, vocab: Vocab) -> RetrievalResult:
        z_q = encoder.rep_from_ids(vocab.encode(query_text), "query").vector()
        z_pt = encoder.prototype_rep().vector()
        return self.select(z_q, float(z_q @ z_pt))

    # -- snapshot -------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        w = Writer(KB_MAGIC, KB_VERSION)
        w.u32(self.d_rep).u32(self.prompt_tokens).u32(self.d_lm).u32(len(self.entries))
        for e in self.entries:
            w.u32(e.entry_id)
            w.f32s(e.key)
            w.f32s(e.prompt)
            w.string(e.triple.subject)
            w.string(e.triple.relation)
            w.string(e.triple.object)
        w.save(path)

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        r = Reader.from_file(path, KB_MAGIC, KB_VERSION)
        kb = cls(d_rep=r.u32(), prompt_tokens=r.u32(), d_lm=r.u32())
        count = r.u32()
        for _ in range(count):
            entry_id = r.u32()
            key = r.f32s(kb.d_rep)
            prompt = r.f32s(kb.prompt_tokens * kb.d_lm).reshape(kb.prompt_tokens, kb.d_lm)
            triple = EditTriple(subject=r.string(), relation=r.string(), object=r.string())
            kb.entries.append(KbEntry(entry_id=entry_id, key=key, prompt=prompt, triple=triple))
        r.expect_eof()
        return kb

    def header_summary(self) -> dict:
        return {
            "d_rep": self.d_rep,
            "prompt_tokens": self.prompt_tokens,
            "d_lm": self.d_lm,
            "count": len(self.entries),
        }
