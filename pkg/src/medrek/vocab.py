"""Whitespace tokenizer over a fixed vocabulary file.

One token per line, index = line number. Index 0 is reserved for the
sequence-start marker the representation encoder uses as its cls slot;
it never appears in text. The same file drives both the encoder and
the language model so every pipeline stage agrees on token ids.
"""

from __future__ import annotations

from pathlib import Path

from .errors import IoError, ValidationError

CLS_TOKEN = "<cls>"


class Vocab:
    def __init__(self, tokens: list[str]):
        if not tokens or tokens[0] != CLS_TOKEN:
            raise ValidationError(f"vocab: first entry must be {CLS_TOKEN!r}")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocab: duplicate token")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_tokens(cls, text_tokens) -> "Vocab":
        """Build from an iterable of text tokens, preserving first-seen order."""
        seen: dict[str, None] = {}
        for t in text_tokens:
            if t == CLS_TOKEN:
                raise ValidationError(f"vocab: {CLS_TOKEN!r} is reserved")
            seen.setdefault(t, None)
        return cls([CLS_TOKEN, *seen.keys()])

    def encode(self, text: str) -> list[int]:
        ids = []
        for tok in text.split():
            idx = self.index.get(tok)
            if idx is None:
                raise ValidationError(f"vocab: unknown token {tok!r}")
            ids.append(idx)
        if not ids:
            raise ValidationError("vocab: cannot encode empty text")
        return ids

    def decode(self, ids) -> list[str]:
        try:
            return [self.tokens[i] for i in ids]
        except IndexError:
            raise ValidationError("vocab: token id out of range") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        p = Path(path)
        if not p.is_file():
            raise IoError(f"vocab file not found: {p}")
        lines = p.read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])
