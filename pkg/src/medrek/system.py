"""The editor bundle: encoder, prompt generator, frozen LM, knowledge base.

The language model is deliberately not part of the editor checkpoint.
Editing never touches its weights, so the checkpoint stores the LM's
checksum instead and refuses to load against a different model. The
knowledge base snapshots separately too: it is derived state, rebuilt
from records whenever the encoder changes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .container import Reader, Writer
from .dataset import EditRecord
from .encoder import RepEncoder
from .errors import ValidationError
from .knowledge_base import EditTriple, KnowledgeBase, RetrievalResult
from .lm import CausalLM
from .prompt_encoder import ATTENTION_MODES, PromptEncoder
from .vocab import Vocab

CHECKPOINT_MAGIC = "MREC"
CHECKPOINT_VERSION = 1


@dataclass
class SystemConfig:
    seed: int = 0
    d_enc: int = 32
    d_rep: int = 64
    prompt_tokens: int = 3
    prompt_heads: int = 4
    prototype_tokens: int = 10
    shared_qk: bool = True
    attention_mode: str = "multihead"
    max_text_len: int = 64

    def validate(self) -> "SystemConfig":
        if self.seed < 0:
            raise ValidationError("system: seed must be nonnegative")
        for name in ("d_enc", "d_rep", "prompt_tokens", "prompt_heads", "prototype_tokens", "max_text_len"):
            if getattr(self, name) < 1:
                raise ValidationError(f"system: {name} must be positive")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValidationError(f"system: unknown attention mode {self.attention_mode!r}")
        return self


class MedrekSystem:
    def __init__(self, vocab: Vocab, lm: CausalLM, config: SystemConfig):
        config.validate()
        self.vocab = vocab
        self.lm = lm
        self.config = config
        self.encoder = RepEncoder(
            vocab_size=len(vocab),
            d_enc=config.d_enc,
            d_rep=config.d_rep,
            prototype_count=config.prototype_tokens,
            shared_qk=config.shared_qk,
            seed=config.seed,
            max_text_len=config.max_text_len,
        )
        self.prompt_encoder = PromptEncoder(
            d_rep=config.d_rep,
            d_lm=lm.config.d_lm,
            prompt_tokens=config.prompt_tokens,
            heads=config.prompt_heads,
            mode=config.attention_mode,
            seed=config.seed + 1,
        )
        self.kb = KnowledgeBase(config.d_rep, config.prompt_tokens, lm.config.d_lm)

    def trainable(self) -> list[Tensor]:
        return self.encoder.trainable() + self.prompt_encoder.trainable()

    def decayable(self) -> list[Tensor]:
        return self.encoder.decayable()

    # -- editing ---------------------------------------------------------------

    def insert_record(self, record: EditRecord):
        triple = EditTriple(record.subject, record.relation, record.edit_target)
        return self.kb.insert_edit(triple, self.encoder, self.prompt_encoder, self.vocab)

    def retrieve(self, query_text: str) -> RetrievalResult:
        return self.kb.retrieve(query_text, self.encoder, self.vocab)

    def prompt_for(self, result: RetrievalResult) -> Tensor | None:
        if result.entry is None:
            return None
        return Tensor(result.entry.prompt)

    def answer_tokens(self, query_text: str, n_tokens: int) -> list[str]:
        """Greedy continuation through the retrieval gate."""
        prompt = self.prompt_for(self.retrieve(query_text))
        ids = self.lm.greedy_answer(self.vocab.encode(query_text), n_tokens, prompt)
        return self.vocab.decode(ids)

    # -- checkpoint state ------------------------------------------------------

    def state_tensors(self) -> list[tuple[str, Tensor]]:
        """All persisted parameters in fixed order.

        Includes the ablation key pair when present: it is inference
        state even though it never receives gradient.
        """
        enc = self.encoder
        named = [
            ("embedding", enc.embedding.table),
            ("qk_w1", enc.qk_w1),
            ("qk_w2", enc.qk_w2),
            ("value_w1", enc.value_w1),
            ("value_w2", enc.value_w2),
            ("prototype_tokens", enc.prototype_tokens),
        ]
        if not self.config.shared_qk:
            named += [("key_w1", enc.key_w1), ("key_w2", enc.key_w2)]
        pe = self.prompt_encoder
        named += [
            ("prompt_query_proj", pe.query_proj),
            ("prompt_key_proj", pe.key_proj),
            ("prompt_value_proj", pe.value_proj),
        ]
        return named

    def state_arrays(self) -> list[np.ndarray]:
        return [t.data.copy() for _, t in self.state_tensors()]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        named = self.state_tensors()
        if len(arrays) != len(named):
            raise ValidationError(f"system: expected {len(named)} parameter arrays, got {len(arrays)}")
        for (name, tensor), arr in zip(named, arrays):
            if tensor.data.shape != arr.shape:
                raise ValidationError(f"system: shape mismatch for {name}: {tensor.data.shape} vs {arr.shape}")
            tensor.data = np.asarray(arr, dtype=tensor.data.dtype)

    def save(self, path: str | Path) -> None:
        w = Writer(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        cfg = self.config
        w.u32(cfg.seed)
        w.u32(cfg.d_enc).u32(cfg.d_rep).u32(cfg.prompt_tokens).u32(cfg.prompt_heads)
        w.u32(cfg.prototype_tokens).u32(1 if cfg.shared_qk else 0)
        w.string(cfg.attention_mode)
        w.u32(cfg.max_text_len)
        w.string(self.lm.checksum())
        w.u32(len(self.vocab))
        for tok in self.vocab.tokens:
            w.string(tok)
        named = self.state_tensors()
        w.u32(len(named))
        for name, t in named:
            w.string(name)
            w.u32(t.data.shape[0]).u32(t.data.shape[1])
            w.f32s(t.data)
        w.save(path)

    @classmethod
    def load(cls, path: str | Path, lm: CausalLM) -> "MedrekSystem":
        r = Reader.from_file(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        cfg = SystemConfig(
            seed=r.u32(),
            d_enc=r.u32(),
            d_rep=r.u32(),
            prompt_tokens=r.u32(),
            prompt_heads=r.u32(),
            prototype_tokens=r.u32(),
            shared_qk=bool(r.u32()),
            attention_mode=r.string(),
            max_text_len=r.u32(),
        )
        lm_checksum = r.string()
        if lm_checksum != lm.checksum():
            raise ValidationError(
                "checkpoint was trained against a different language model "
                f"(stored {lm_checksum[:12]}…, live {lm.checksum()[:12]}…)"
            )
        vocab = Vocab([r.string() for _ in range(r.u32())])
        system = cls(vocab, lm, cfg)
        named = system.state_tensors()
        count = r.u32()
        if count != len(named):
            raise ValidationError(f"checkpoint holds {count} parameter arrays, expected {len(named)}")
        arrays = []
        for name, t in named:
            stored = r.string()
            if stored != name:
                raise ValidationError(f"checkpoint parameter order mismatch: {stored!r} where {name!r} expected")
            rows, cols = r.u32(), r.u32()
            arrays.append(r.f32s(rows * cols).reshape(rows, cols))
        r.expect_eof()
        system.load_state(arrays)
        return system

    def config_dict(self) -> dict:
        return asdict(self.config)


def checkpoint_summary(path: str | Path) -> dict:
    """Header-level view of a saved editor, no language model needed."""
    r = Reader.from_file(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    cfg = SystemConfig(
        seed=r.u32(),
        d_enc=r.u32(),
        d_rep=r.u32(),
        prompt_tokens=r.u32(),
        prompt_heads=r.u32(),
        prototype_tokens=r.u32(),
        shared_qk=bool(r.u32()),
        attention_mode=r.string(),
        max_text_len=r.u32(),
    )
    lm_checksum = r.string()
    vocab_size = r.u32()
    for _ in range(vocab_size):
        r.string()
    parameters = []
    total = 0
    for _ in range(r.u32()):
        name = r.string()
        rows, cols = r.u32(), r.u32()
        r.f32s(rows * cols)
        parameters.append({"name": name, "shape": [rows, cols]})
        total += rows * cols
    r.expect_eof()
    return {
        "config": asdict(cfg),
        "lm_checksum": lm_checksum,
        "vocab_size": vocab_size,
        "parameters": parameters,
        "parameter_count": total,
    }
