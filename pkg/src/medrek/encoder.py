"""Representation encoder: pooled token features -> retrieval space.

One embedding table feeds three projection paths built from the same
two-layer residual form z = relu(W2 @ (W1 @ x)) + W1 @ x, all biasless:

* a shared query/key path, so questions and stored keys land in one
  space (the property the retrieval gate relies on);
* a value path with its own weights, producing the representation the
  prompt generator consumes;
* the shared path applied to a block of trainable pseudo-token
  embeddings, giving the retrieval prototype that calibrates "no edit
  applies".

An ablation switch (shared_qk=False) gives keys an independently
initialized weight pair while queries keep the original one. The
separate pair appears in no loss term, so it stays at its seeded init;
it is deliberately excluded from ``trainable()``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, uniform_fan_in
from .errors import ValidationError

ROLES = ("query", "key", "value", "prototype")

# Sinusoidal position offsets are fixed; this factor keeps them at the
# same magnitude as the uniform-init embedding entries.
POS_SCALE = 0.1

# The separate key pair must not consume draws from the main init
# stream, otherwise flipping the ablation would perturb every other
# parameter. It gets its own derived seed instead.
KEY_SEED_OFFSET = 7919


@dataclass
class RepVector:
    """A point in retrieval space, tagged with how it was produced."""

    z: Tensor
    role: str

    def vector(self) -> np.ndarray:
        return self.z.data[:, 0]


class TokenEmbeddings(NamedTuple):
    H: Tensor  # (L, d_enc) one row per text token
    cls: Tensor  # (d_enc, 1) sequence-start embedding


class EmbeddingProvider(Protocol):
    d_enc: int

    def __call__(self, token_ids: list[int]) -> TokenEmbeddings: ...


def sinusoid_table(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class TokenTableEmbedding:
    """Trainable token table plus fixed sinusoidal position offsets.

    Row 0 of the table is the sequence-start embedding and takes
    position 0; text tokens occupy positions 1..L.
    """

    def __init__(self, vocab_size: int, d_enc: int, rng: np.random.Generator, max_len: int = 64):
        self.d_enc = d_enc
        self.max_len = max_len
        self.table = Tensor(uniform_fan_in(rng, (vocab_size, d_enc), d_enc), requires_grad=True, name="enc_table")
        self._pos = POS_SCALE * sinusoid_table(max_len + 1, d_enc)

    def __call__(self, token_ids: list[int]) -> TokenEmbeddings:
        if not token_ids:
            raise ValidationError("embed: empty token sequence")
        if len(token_ids) > self.max_len:
            raise ValidationError(f"embed: sequence of {len(token_ids)} exceeds max_len {self.max_len}")
        rows = ad.gather(self.table, token_ids)
        h = ad.add(rows, Tensor(self._pos[1 : len(token_ids) + 1]))
        cls_row = ad.add(ad.gather(self.table, [0]), Tensor(self._pos[:1]))
        return TokenEmbeddings(H=h, cls=ad.transpose(cls_row))


def pool_features(emb: TokenEmbeddings) -> Tensor:
    """x = [cls; mean(H); max(H); min(H)] as a (4*d_enc, 1) column."""
    parts = [
        emb.cls,
        ad.transpose(ad.reduce_mean(emb.H, axis=0)),
        ad.transpose(ad.reduce_max(emb.H, axis=0)),
        ad.transpose(ad.reduce_min(emb.H, axis=0)),
    ]
    return ad.concat(parts, axis=0)


def _mlp(w1: Tensor, w2: Tensor, x: Tensor) -> Tensor:
    h = ad.matmul(w1, x)
    return ad.add(ad.relu(ad.matmul(w2, h)), h)


class RepEncoder:
    def __init__(
        self,
        vocab_size: int,
        d_enc: int,
        d_rep: int,
        prototype_count: int,
        shared_qk: bool,
        seed: int,
        max_text_len: int = 64,
    ):
        if prototype_count < 1:
            raise ValidationError("encoder: prototype_count must be positive")
        self.d_enc = d_enc
        self.d_rep = d_rep
        self.shared_qk = shared_qk
        rng = np.random.default_rng(seed)
        self.embedding = TokenTableEmbedding(vocab_size, d_enc, rng, max_len=max_text_len)
        fan = 4 * d_enc
        self.qk_w1 = Tensor(uniform_fan_in(rng, (d_rep, fan), fan), requires_grad=True, name="qk_w1")
        self.qk_w2 = Tensor(uniform_fan_in(rng, (d_rep, d_rep), d_rep), requires_grad=True, name="qk_w2")
        self.value_w1 = Tensor(uniform_fan_in(rng, (d_rep, fan), fan), requires_grad=True, name="value_w1")
        self.value_w2 = Tensor(uniform_fan_in(rng, (d_rep, d_rep), d_rep), requires_grad=True, name="value_w2")
        self.prototype_tokens = Tensor(
            uniform_fan_in(rng, (prototype_count, d_enc), d_enc), requires_grad=True, name="prototype_tokens"
        )
        if shared_qk:
            self.key_w1 = None
            self.key_w2 = None
        else:
            key_rng = np.random.default_rng(seed + KEY_SEED_OFFSET)
            self.key_w1 = Tensor(uniform_fan_in(key_rng, (d_rep, fan), fan), name="key_w1")
            self.key_w2 = Tensor(uniform_fan_in(key_rng, (d_rep, d_rep), d_rep), name="key_w2")

    def trainable(self) -> list[Tensor]:
        """Parameters with a gradient path; the ablation key pair has none."""
        return [
            self.embedding.table,
            self.qk_w1,
            self.qk_w2,
            self.value_w1,
            self.value_w2,
            self.prototype_tokens,
        ]

    def decayable(self) -> list[Tensor]:
        """The shared query/key pair only. Queries and keys come out of the
        same MLP, so their mutual similarities grow with its weight scale
        whether or not any loss wants them to; decay caps that. The value
        pair, the embedding table, and the prototype rows all carry scale
        the losses actively set, so they stay out of the decay set."""
        return [self.qk_w1, self.qk_w2]

    def encode_shared(self, x: Tensor, role: str) -> RepVector:
        if role not in ("query", "key", "prototype"):
            raise ValidationError(f"encode_shared: bad role {role!r}")
        if role == "key" and not self.shared_qk:
            z = _mlp(self.key_w1, self.key_w2, x)
        else:
            z = _mlp(self.qk_w1, self.qk_w2, x)
        return RepVector(z=z, role=role)

    def encode_value(self, x: Tensor) -> RepVector:
        return RepVector(z=_mlp(self.value_w1, self.value_w2, x), role="value")

    def rep_from_ids(self, token_ids: list[int], role: str) -> RepVector:
        """Embed, pool, and project one token sequence for the given role."""
        x = pool_features(self.embedding(token_ids))
        if role == "value":
            return self.encode_value(x)
        return self.encode_shared(x, role)

    def prototype_rep(self) -> RepVector:
        """Project the pseudo-token block; cls slot is its first row.

        No position offsets here: the pseudo-tokens are already free
        embeddings and absorb any offset they need. Recomputed from the
        live parameters on every call so training always sees a fresh
        prototype.
        """
        h = self.prototype_tokens
        cls = ad.transpose(ad.gather(h, [0]))
        x = pool_features(TokenEmbeddings(H=h, cls=cls))
        return self.encode_shared(x, "prototype")
