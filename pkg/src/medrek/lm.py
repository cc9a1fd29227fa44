"""Small frozen causal language model plus its pretraining loop.

Two pre-norm self-attention blocks, four heads, MLP ratio 4, tied
input/output embedding. The norm layers are RMS norms (expressible in
the closed op set without a division primitive) and positions are
fixed sinusoids added after any soft prompt is prepended, so prompt
rows occupy positions 0..T-1 and shift the text they precede.

After pretraining the model is frozen: gradient still flows *through*
it into a prepended prompt, but its own parameters stop accumulating
grads, which keeps the checkpoint checksum stable across edits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Graph, Tensor, uniform_fan_in
from .container import Reader, Writer
from .encoder import POS_SCALE, sinusoid_table
from .errors import NumericError, ValidationError
from .vocab import Vocab

LM_MAGIC = "MRLM"
LM_VERSION = 1
RMS_EPS = 1e-6
MASK_VALUE = -1e9


@dataclass
class LmConfig:
    d_lm: int = 64
    heads: int = 4
    blocks: int = 2
    mlp_ratio: int = 4
    max_len: int = 64

    def validate(self) -> "LmConfig":
        if self.d_lm % self.heads != 0:
            raise ValidationError(f"lm: heads={self.heads} must divide d_lm={self.d_lm}")
        if self.blocks != 2:
            raise ValidationError("lm: exactly 2 blocks are supported")
        return self


class CausalLM:
    def __init__(self, vocab: Vocab, config: LmConfig, seed: int = 0):
        self.vocab = vocab
        self.config = config.validate()
        d = config.d_lm
        rng = np.random.default_rng(seed)
        self.embed = Tensor(uniform_fan_in(rng, (len(vocab), d), d), requires_grad=True, name="lm_embed")
        self.block_params: list[dict[str, Tensor]] = []
        for b in range(config.blocks):
            hidden = config.mlp_ratio * d
            self.block_params.append(
                {
                    "wq": Tensor(uniform_fan_in(rng, (d, d), d), requires_grad=True, name=f"b{b}.wq"),
                    "wk": Tensor(uniform_fan_in(rng, (d, d), d), requires_grad=True, name=f"b{b}.wk"),
                    "wv": Tensor(uniform_fan_in(rng, (d, d), d), requires_grad=True, name=f"b{b}.wv"),
                    "wo": Tensor(uniform_fan_in(rng, (d, d), d), requires_grad=True, name=f"b{b}.wo"),
                    "norm1": Tensor(np.ones((1, d)), requires_grad=True, name=f"b{b}.norm1"),
                    "norm2": Tensor(np.ones((1, d)), requires_grad=True, name=f"b{b}.norm2"),
                    "mlp_w1": Tensor(uniform_fan_in(rng, (d, hidden), d), requires_grad=True, name=f"b{b}.mlp_w1"),
                    "mlp_w2": Tensor(uniform_fan_in(rng, (hidden, d), hidden), requires_grad=True, name=f"b{b}.mlp_w2"),
                }
            )
        self.final_norm = Tensor(np.ones((1, d)), requires_grad=True, name="final_norm")
        self._pos = POS_SCALE * sinusoid_table(config.max_len, d)
        self._ones: dict[tuple[int, int], Tensor] = {}
        self._masks: dict[int, Tensor] = {}
        self.frozen = False

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        out = [self.embed]
        for blk in self.block_params:
            out.extend(blk[k] for k in ("wq", "wk", "wv", "wo", "norm1", "norm2", "mlp_w1", "mlp_w2"))
        out.append(self.final_norm)
        return out

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
        self.frozen = True

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()

    # -- forward ------------------------------------------------------------

    def _ones_const(self, shape: tuple[int, int]) -> Tensor:
        t = self._ones.get(shape)
        if t is None:
            t = Tensor(np.ones(shape))
            self._ones[shape] = t
        return t

    def _mask(self, n: int) -> Tensor:
        t = self._masks.get(n)
        if t is None:
            t = Tensor(np.triu(np.full((n, n), MASK_VALUE), k=1))
            self._masks[n] = t
        return t

    def _rmsnorm(self, x: Tensor, gain: Tensor) -> Tensor:
        n, d = x.shape
        ms = ad.reduce_mean(ad.mul(x, x), axis=1)  # (n, 1)
        inv = ad.exp(ad.scale(ad.log(ad.add(ms, RMS_EPS)), -0.5))
        inv_b = ad.matmul(inv, self._ones_const((1, d)))
        gain_b = ad.matmul(self._ones_const((n, 1)), gain)
        return ad.mul(ad.mul(x, inv_b), gain_b)

    def _attention(self, x: Tensor, blk: dict[str, Tensor]) -> Tensor:
        n, d = x.shape
        heads = self.config.heads
        dh = d // heads
        q = ad.matmul(x, blk["wq"])
        k = ad.matmul(x, blk["wk"])
        v = ad.matmul(x, blk["wv"])
        qt, kt, vt = ad.transpose(q), ad.transpose(k), ad.transpose(v)
        mask = self._mask(n)
        outs = []
        for h in range(heads):
            rows = list(range(h * dh, (h + 1) * dh))
            q_h = ad.transpose(ad.gather(qt, rows))  # (n, dh)
            k_h = ad.gather(kt, rows)  # (dh, n)
            v_h = ad.transpose(ad.gather(vt, rows))  # (n, dh)
            scores = ad.add(ad.scale(ad.matmul(q_h, k_h), 1.0 / np.sqrt(dh)), mask)
            probs = ad.softmax(scores, axis=1)
            outs.append(ad.matmul(probs, v_h))
        return ad.matmul(ad.concat(outs, axis=1), blk["wo"])

    def forward(self, token_ids: list[int], prompt: Tensor | None = None) -> Tensor:
        """Logits (sequence length, vocab) with optional prompt rows prepended.

        prompt=None is the plain model: the prompted path with an absent
        prompt runs the identical op sequence, so the two are bitwise equal.
        """
        if not token_ids:
            raise ValidationError("lm: empty token sequence")
        d = self.config.d_lm
        e = ad.gather(self.embed, token_ids)
        if prompt is not None:
            if prompt.shape[1] != d:
                raise ValidationError(f"lm: prompt width {prompt.shape[1]} != d_lm {d}")
            x = ad.concat([prompt, e], axis=0)
        else:
            x = e
        n = x.shape[0]
        if n > self.config.max_len:
            raise ValidationError(f"lm: sequence of {n} rows exceeds max_len {self.config.max_len}")
        x = ad.add(x, Tensor(self._pos[:n]))
        for blk in self.block_params:
            x = ad.add(x, self._attention(self._rmsnorm(x, blk["norm1"]), blk))
            h = ad.relu(ad.matmul(self._rmsnorm(x, blk["norm2"]), blk["mlp_w1"]))
            x = ad.add(x, ad.matmul(h, blk["mlp_w2"]))
        x = self._rmsnorm(x, self.final_norm)
        return ad.matmul(x, ad.transpose(self.embed))

    def answer_rows(self, query_ids: list[int], target_ids: list[int], prompt: Tensor | None = None) -> Tensor:
        """Logit rows that predict each target token, teacher-forced.

        Input is query plus all but the last target token; row j then
        predicts target j, with the prompt shift accounted for.
        """
        if not target_ids:
            raise ValidationError("lm: empty target sequence")
        logits = self.forward(query_ids + list(target_ids[:-1]), prompt)
        offset = prompt.shape[0] if prompt is not None else 0
        start = offset + len(query_ids) - 1
        return ad.gather(logits, list(range(start, start + len(target_ids))))

    def greedy_answer(self, query_ids: list[int], n_targets: int, prompt: Tensor | None = None) -> list[int]:
        """Argmax decode of n_targets tokens, feeding each one back in."""
        ids = list(query_ids)
        out = []
        for _ in range(n_targets):
            logits = self.forward(ids, prompt)
            nxt = int(np.argmax(logits.data[-1]))
            out.append(nxt)
            ids.append(nxt)
        return out

    def forced_answer(self, query_ids: list[int], target_ids: list[int], prompt: Tensor | None = None) -> list[int]:
        """Argmax at each answer position with the true answer teacher-forced."""
        rows = self.answer_rows(query_ids, target_ids, prompt)
        return [int(i) for i in np.argmax(rows.data, axis=1)]

    def answer_match(self, query_ids: list[int], target_ids: list[int], prompt: Tensor | None = None) -> bool:
        """True iff teacher-forced argmax reproduces every target token."""
        return self.forced_answer(query_ids, target_ids, prompt) == list(target_ids)

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        cfg = self.config
        w = Writer(LM_MAGIC, LM_VERSION)
        w.u32(cfg.d_lm).u32(cfg.heads).u32(cfg.blocks).u32(cfg.mlp_ratio).u32(cfg.max_len)
        w.u32(len(self.vocab))
        for tok in self.vocab.tokens:
            w.string(tok)
        for p in self.parameters():
            w.f32s(p.data)
        w.save(path)

    @classmethod
    def load(cls, path: str | Path) -> "CausalLM":
        r = Reader.from_file(path, LM_MAGIC, LM_VERSION)
        cfg = LmConfig(d_lm=r.u32(), heads=r.u32(), blocks=r.u32(), mlp_ratio=r.u32(), max_len=r.u32())
        vocab = Vocab([r.string() for _ in range(r.u32())])
        lm = cls(vocab, cfg, seed=0)
        for p in lm.parameters():
            p.data = r.f32s(int(np.prod(p.shape))).reshape(p.shape)
        r.expect_eof()
        lm.freeze()
        return lm


# ---------------------------------------------------------------------------
# Pretraining


def pack_lines(lines: list[list[int]], sep_id: int | None, max_len: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle lines and pack them into sequences of at most max_len tokens.

    Every pack starts at a line boundary and lines inside a pack are
    joined by the separator, so answers appear at many different offsets
    across an epoch. A prepended prompt shifts positions the same way at
    edit time, which is why the variety matters.
    """
    order = rng.permutation(len(lines))
    packs: list[list[int]] = []
    current: list[int] = []
    for idx in order:
        line = lines[int(idx)]
        if len(line) > max_len:
            raise ValidationError(f"pretrain: corpus line of {len(line)} tokens exceeds max_len {max_len}")
        extra = len(line) + (1 if current and sep_id is not None else 0)
        if current and len(current) + extra > max_len:
            packs.append(current)
            current = []
        if current and sep_id is not None:
            current.append(sep_id)
        current.extend(line)
    if current:
        packs.append(current)
    return packs


@dataclass
class PretrainReport:
    epochs_run: int
    final_ce: float
    final_accuracy: float
    history: list[tuple[int, float, float]]  # (epoch, held-out ce, last-token accuracy)


def evaluate_lines(lm: CausalLM, lines: list[list[int]]) -> tuple[float, float]:
    """Mean next-token CE over whole lines and last-token top-1 accuracy."""
    total_ce, total_tokens, hits = 0.0, 0, 0
    for line in lines:
        logits = lm.forward(line[:-1])
        ce = ad.cross_entropy(logits, line[1:])
        total_ce += float(ce.data)
        total_tokens += len(line) - 1
        if int(np.argmax(logits.data[-1])) == line[-1]:
            hits += 1
    return total_ce / max(total_tokens, 1), hits / max(len(lines), 1)


def pretrain(
    lm: CausalLM,
    corpus_lines: list[str],
    *,
    epochs: int,
    lr: float,
    batch_packs: int = 8,
    seed: int = 0,
    target_ce: float | None = None,
    target_accuracy: float | None = None,
    sep_token: str = ".",
    log=None,
) -> PretrainReport:
    """Next-token training on packed corpus lines until targets are met.

    Raises if the targets are set and still unmet after the last epoch.
    The evaluation set is the distinct corpus lines themselves: the goal
    of this model is memorization of its little world, not generalization.
    """
    if not corpus_lines:
        raise ValidationError("pretrain: empty corpus")
    vocab = lm.vocab
    lines = [vocab.encode(ln) for ln in corpus_lines]
    sep_id = vocab.index.get(sep_token)
    rng = np.random.default_rng(seed)
    opt = Adam(lm.parameters(), lr=lr)
    history = []
    ce = acc = float("nan")
    epochs_run = 0
    for epoch in range(epochs):
        packs = pack_lines(lines, sep_id, lm.config.max_len, rng)
        for start in range(0, len(packs), batch_packs):
            batch = packs[start : start + batch_packs]
            opt.zero_grad()
            with Graph() as g:
                losses = []
                for pack in batch:
                    logits = lm.forward(pack[:-1])
                    losses.append(ad.scale(ad.cross_entropy(logits, pack[1:]), 1.0 / (len(pack) - 1)))
                total = ad.scale(_sum(losses), 1.0 / len(losses))
            if not np.isfinite(total.data):
                raise NumericError(f"pretrain: non-finite loss at epoch {epoch}")
            g.backward(total)
            ad.clip_global_norm(opt.params, 1.0)
            opt.step()
        ce, acc = evaluate_lines(lm, lines)
        history.append((epoch, ce, acc))
        epochs_run = epoch + 1
        if log:
            log(f"pretrain epoch {epoch}: held-out ce {ce:.4f}, last-token acc {acc:.3f}")
        if (target_ce is None or ce <= target_ce) and (target_accuracy is None or acc >= target_accuracy):
            if target_ce is not None or target_accuracy is not None:
                break
    if target_accuracy is not None and acc < target_accuracy:
        raise NumericError(f"pretrain: accuracy {acc:.3f} below target {target_accuracy} after {epochs_run} epochs")
    if target_ce is not None and ce > target_ce:
        raise NumericError(f"pretrain: held-out ce {ce:.3f} above target {target_ce} after {epochs_run} epochs")
    return PretrainReport(epochs_run=epochs_run, final_ce=ce, final_accuracy=acc, history=history)


def _sum(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = ad.add(total, t)
    return total
