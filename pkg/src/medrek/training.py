"""Contrastive + editing losses and the editor training loop.

The language model stays frozen throughout; gradients flow only into
the representation encoder, the prompt encoder, and the prototype
pseudo-tokens. Two loss families are combined:

  contrastive  pulls each question representation toward its edit's
               value representation (no-prototype terms) and pulls
               locality questions toward the prototype (so-prototype
               terms), over the candidate set R = batch values plus
               the prototype.
  editing      teacher-forced cross-entropy on the edit target under
               the generated prompt for the efficacy and generality
               questions, plus a KL term keeping the prompted model's
               locality-answer distribution at the plain model's.

Total = contrastive + editing. Every representation is recomputed
from live parameters each step; the only cache is the plain model's
locality logits, which are constant because the LM never moves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Graph, Tensor, clip_global_norm
from .dataset import EditRecord
from .encoder import RepVector
from .errors import NumericError, ValidationError
from .knowledge_base import EditTriple
from .system import MedrekSystem

LOSS_COLUMNS = ("epoch", "eff", "gen", "loc", "no", "so", "total")


@dataclass
class BatchSample:
    record: EditRecord
    triple: EditTriple
    z_qe: RepVector
    z_qg: RepVector
    z_ql: RepVector
    z_v: RepVector
    prompt: Tensor


@dataclass
class LossBreakdown:
    eff: float
    gen: float
    loc: float
    no: float
    so: float
    contra: float
    edit: float
    total: float


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-5
    temperature: float = 1.0
    seed: int = 0
    clip_norm: float | None = 1.0
    weight_decay: float = 0.0
    value_lr_scale: float = 1.0

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("training: epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValidationError("training: lr must be nonnegative")
        if self.temperature <= 0:
            raise ValidationError("training: temperature must be positive")
        if self.weight_decay < 0:
            raise ValidationError("training: weight_decay must be nonnegative")
        if self.value_lr_scale < 0:
            raise ValidationError("training: value_lr_scale must be nonnegative")
        return self


def infonce(query: RepVector, positive: RepVector, candidates: list[RepVector], temperature: float = 1.0) -> Tensor:
    """-log softmax similarity of the positive among the candidates.

    The positive must be one of the candidate objects (same instance,
    not merely equal values): candidate sets are built by collecting
    live representation nodes, and an equal-valued copy would silently
    break the gradient path.
    """
    if temperature <= 0:
        raise ValidationError("infonce: temperature must be positive")
    pos_index = next((i for i, c in enumerate(candidates) if c is positive), None)
    if pos_index is None:
        raise ValidationError("infonce: positive is not among the candidates")
    stacked = ad.concat([c.z for c in candidates], axis=1)  # (d, n)
    sims = ad.matmul(ad.transpose(query.z), stacked)  # (1, n)
    return ad.cross_entropy(ad.scale(sims, 1.0 / temperature), [pos_index])


def contrastive_losses(
    batch: list[BatchSample], prototype: RepVector, temperature: float = 1.0
) -> tuple[Tensor, Tensor]:
    """Batch means of the no-prototype and so-prototype loss groups.

    R holds every sample's value representation plus the prototype.
    The efficacy/generality-to-prototype terms drop the sample's own
    value from R: the prototype must beat the other edits, not the
    value the same queries are simultaneously being pulled toward.
    """
    if not batch:
        raise ValidationError("contrastive_losses: empty batch")
    reps = [s.z_v for s in batch] + [prototype]
    no_terms, so_terms = [], []
    for sample in batch:
        no_terms.append(infonce(sample.z_qe, sample.z_v, reps, temperature))
        no_terms.append(infonce(sample.z_qg, sample.z_v, reps, temperature))
        others = [r for r in reps if r is not sample.z_v]
        so_terms.append(infonce(sample.z_ql, prototype, reps, temperature))
        so_terms.append(infonce(sample.z_qe, prototype, others, temperature))
        so_terms.append(infonce(sample.z_qg, prototype, others, temperature))
    inv_b = 1.0 / len(batch)
    return ad.scale(_sum(no_terms), inv_b), ad.scale(_sum(so_terms), inv_b)


def _sum(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc


class PlainRowsCache:
    """Frozen-model locality logits, keyed by question and answer text."""

    def __init__(self, system: MedrekSystem):
        self.system = system
        self._rows: dict[tuple[str, str], np.ndarray] = {}

    def rows(self, record: EditRecord) -> Tensor:
        key = (record.locality_q, record.locality_gt)
        cached = self._rows.get(key)
        if cached is None:
            ql = self.system.vocab.encode(record.locality_q)
            gt = self.system.vocab.encode(record.locality_gt)
            cached = self.system.lm.answer_rows(ql, gt, None).data
            self._rows[key] = cached
        return Tensor(cached)


def encode_sample(system: MedrekSystem, record: EditRecord) -> BatchSample:
    vocab = system.vocab
    triple = EditTriple(record.subject, record.relation, record.edit_target)
    z_v = system.encoder.rep_from_ids(vocab.encode(triple.value_text()), "value")
    return BatchSample(
        record=record,
        triple=triple,
        z_qe=system.encoder.rep_from_ids(vocab.encode(record.efficacy_q), "query"),
        z_qg=system.encoder.rep_from_ids(vocab.encode(record.generality_q), "query"),
        z_ql=system.encoder.rep_from_ids(vocab.encode(record.locality_q), "query"),
        z_v=z_v,
        prompt=system.prompt_encoder.generate_prompt(z_v),
    )


def edit_losses(sample: BatchSample, system: MedrekSystem, plain_cache: PlainRowsCache) -> tuple[Tensor, Tensor, Tensor]:
    vocab, lm = system.vocab, system.lm
    target = vocab.encode(sample.record.edit_target)
    qe = vocab.encode(sample.record.efficacy_q)
    qg = vocab.encode(sample.record.generality_q)
    ql = vocab.encode(sample.record.locality_q)
    loc_gt = vocab.encode(sample.record.locality_gt)
    eff = ad.cross_entropy(lm.answer_rows(qe, target, sample.prompt), target)
    gen = ad.cross_entropy(lm.answer_rows(qg, target, sample.prompt), target)
    loc = ad.kl_divergence(plain_cache.rows(sample.record), lm.answer_rows(ql, loc_gt, sample.prompt))
    return eff, gen, loc


def compute_losses(
    system: MedrekSystem,
    records: list[EditRecord],
    temperature: float,
    plain_cache: PlainRowsCache,
) -> dict[str, Tensor]:
    """One batch worth of loss terms, as live graph nodes."""
    batch = [encode_sample(system, r) for r in records]
    prototype = system.encoder.prototype_rep()
    no, so = contrastive_losses(batch, prototype, temperature)
    eff_terms, gen_terms, loc_terms = [], [], []
    for sample in batch:
        eff, gen, loc = edit_losses(sample, system, plain_cache)
        eff_terms.append(eff)
        gen_terms.append(gen)
        loc_terms.append(loc)
    inv_b = 1.0 / len(batch)
    eff = ad.scale(_sum(eff_terms), inv_b)
    gen = ad.scale(_sum(gen_terms), inv_b)
    loc = ad.scale(_sum(loc_terms), inv_b)
    contra = ad.add(no, so)
    edit = ad.add(ad.add(eff, gen), loc)
    return {
        "eff": eff,
        "gen": gen,
        "loc": loc,
        "no": no,
        "so": so,
        "contra": contra,
        "edit": edit,
        "total": ad.add(contra, edit),
    }


def _breakdown(losses: dict[str, Tensor]) -> LossBreakdown:
    return LossBreakdown(**{k: float(losses[k].data) for k in ("eff", "gen", "loc", "no", "so", "contra", "edit", "total")})


@dataclass
class TrainResult:
    curve: list[LossBreakdown]
    valid_curve: list[float]
    best_epoch: int
    best_valid_total: float


def evaluate_total(system: MedrekSystem, records: list[EditRecord], temperature: float, plain_cache: PlainRowsCache) -> LossBreakdown:
    """Loss breakdown over a split without recording gradients."""
    if not records:
        raise ValidationError("evaluate_total: empty split")
    return _breakdown(compute_losses(system, records, temperature, plain_cache))


def train(
    system: MedrekSystem,
    train_records: list[EditRecord],
    valid_records: list[EditRecord],
    config: TrainConfig,
    log=None,
) -> TrainResult:
    """Adam over the editor parameters with best-validation selection.

    Emits one loss row per epoch (record-weighted means over its
    batches). The checkpoint restored into the system at the end is the
    epoch whose validation total loss was smallest; with no validation
    records the training loss stands in. A non-finite total loss aborts
    with the failing epoch and step. Weight decay, when nonzero, is
    decoupled from the Adam update and touches only the mixing weights.
    """
    config.validate()
    if not system.lm.frozen:
        raise ValidationError("train: the language model must be frozen")
    if not train_records:
        raise ValidationError("train: empty training split")
    params = system.trainable()
    decay = system.decayable() if config.weight_decay else []
    decay_mult = 1.0 - config.lr * config.weight_decay
    # The value pair may train slower than the rest so the key and value
    # geometries stay coupled.
    slow = {id(system.encoder.value_w1), id(system.encoder.value_w2)}
    scales = [config.value_lr_scale if id(p) in slow else 1.0 for p in params]
    opt = Adam(params, lr=config.lr, lr_scales=scales)
    rng = np.random.default_rng(config.seed)
    plain_cache = PlainRowsCache(system)
    curve: list[LossBreakdown] = []
    valid_curve: list[float] = []
    best_epoch, best_valid, best_state = -1, float("inf"), None

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_records))
        sums = {k: 0.0 for k in ("eff", "gen", "loc", "no", "so", "contra", "edit", "total")}
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            chunk = [train_records[int(i)] for i in order[start : start + config.batch_size]]
            with Graph() as g:
                losses = compute_losses(system, chunk, config.temperature, plain_cache)
                total = losses["total"]
                if not np.isfinite(total.data):
                    raise NumericError(f"train: non-finite loss at epoch {epoch} step {step}")
                row = _breakdown(losses)
                g.backward(total)
            if config.clip_norm is not None:
                clip_global_norm(params, config.clip_norm)
            opt.step()
            opt.zero_grad()
            for p in decay:
                p.data *= decay_mult
            for k in sums:
                sums[k] += getattr(row, k) * len(chunk)
        epoch_row = LossBreakdown(**{k: v / len(train_records) for k, v in sums.items()})
        curve.append(epoch_row)

        if valid_records:
            valid_total = evaluate_total(system, valid_records, config.temperature, plain_cache).total
        else:
            valid_total = epoch_row.total
        valid_curve.append(valid_total)
        if valid_total < best_valid:
            best_epoch, best_valid = epoch, valid_total
            best_state = system.state_arrays()
        if log is not None:
            log(epoch, epoch_row, valid_total)

    system.load_state(best_state)
    return TrainResult(curve=curve, valid_curve=valid_curve, best_epoch=best_epoch, best_valid_total=best_valid)


def write_loss_csv(curve: list[LossBreakdown], path) -> None:
    lines = [",".join(LOSS_COLUMNS)]
    for epoch, row in enumerate(curve):
        lines.append(
            f"{epoch},{row.eff:.10g},{row.gen:.10g},{row.loc:.10g},{row.no:.10g},{row.so:.10g},{row.total:.10g}"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
