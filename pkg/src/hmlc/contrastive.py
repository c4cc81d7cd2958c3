"""Contrastive pretraining of the encoder.

Each record is encoded to h_0, projected by a small MLP head, and length
normalized. Per anchor and per level, sampled positive partners are pushed
toward the anchor and sampled negatives away, through sigmoid pair
probabilities: the batch objective

    L_cl = (1/(|B|·L)) Σ_i Σ_ℓ (1/|V_iℓ⁺|) [Σ log σ(s·s⁺/α) + Σ log(1−σ(s·s⁻/α))]

is a sum of log-probabilities (≤ 0); training minimizes −L_cl. The head is
discarded after pretraining, leaving the encoder weights for the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Corpus
from .encoder import EncoderParams, encode_record
from .metrics import EmbeddingDiagnostics, NonUnitInput, embedding_diagnostics
from .model import HmcnModel, NonFiniteLoss
from .nn import MlpParams, init_mlp, mlp_forward
from .optim import AdamState, adam_step
from .sampling import STRATEGIES, ContrastiveBatch, SamplingError, build_batch


class EmptyBatch(ValueError):
    pass


@dataclass(frozen=True)
class HmclConfig:
    strategy: str = "sibling"
    contrastive_alpha: float = 0.1
    repeats_per_level: tuple[int, ...] = (10, 20, 50)
    batch_size: int = 8
    lr: float = 1e-5
    lr_decay: float = 0.8
    decay_every_batches: int = 4000
    epochs: int = 1
    max_batches: int | None = None  # cap for short calibration runs
    proj_hidden: int = 32
    proj_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SamplingError(f"unknown strategy {self.strategy!r}")
        if self.contrastive_alpha <= 0:
            raise ValueError("contrastive_alpha must be positive")
        if not self.repeats_per_level or any(r < 1 for r in self.repeats_per_level):
            raise ValueError("repeats_per_level entries must be >= 1")


@dataclass
class ProjectionHead:
    mlp: MlpParams

    def named(self, prefix: str = "proj") -> dict[str, Tensor]:
        return self.mlp.named(prefix)


def init_projection(rng: np.random.Generator, in_dim: int, hidden: int,
                    out_dim: int) -> ProjectionHead:
    return ProjectionHead(mlp=init_mlp(rng, [in_dim, hidden, out_dim]))


def project(h_0: Tensor, head: ProjectionHead) -> Tensor:
    """Flattened h_0 through the head, always unit-normalized."""
    return ad.l2_normalize(mlp_forward(ad.flatten(h_0), head.mlp))


def pair_probability(s, s_prime, polarity: str, alpha: float = 0.1) -> float:
    """σ(s·s'/α) for a positive pair, 1−σ(s·s'/α) for a negative one."""
    s = np.asarray(s, dtype=float)
    s_prime = np.asarray(s_prime, dtype=float)
    for vec in (s, s_prime):
        if abs(np.linalg.norm(vec) - 1.0) > 1e-4:
            raise NonUnitInput(f"pair_probability input norm {np.linalg.norm(vec):.6f}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    z = float(s @ s_prime) / alpha
    if polarity == "positive":
        return float(np.exp(-np.logaddexp(0.0, -z)))
    if polarity == "negative":
        return float(np.exp(-np.logaddexp(0.0, z)))
    raise ValueError(f"polarity must be 'positive' or 'negative', got {polarity!r}")


def encode_batch(batch: ContrastiveBatch, corpus: Corpus, encoder: EncoderParams,
                 head: ProjectionHead) -> dict[int, Tensor]:
    """Each record the batch touches is encoded and projected exactly once;
    reuse keeps the tape small and still accumulates every gradient path."""
    return {
        i: project(encode_record(corpus.records[i], encoder), head)
        for i in batch.record_indices()
    }


def contrastive_loss(batch: ContrastiveBatch, corpus: Corpus, encoder: EncoderParams,
                     head: ProjectionHead, cfg: HmclConfig) -> Tensor:
    """L_cl for the batch (a scalar ≤ 0). Levels where the anchor has no
    active label are skipped; minimize the negation."""
    if not batch.anchors:
        raise EmptyBatch("batch has no anchors")
    emb = encode_batch(batch, corpus, encoder, head)
    inv_alpha = 1.0 / cfg.contrastive_alpha
    depth = corpus.hierarchy.depth
    total = None
    for i, per_anchor in zip(batch.anchors, batch.draws):
        s_i = emb[i]
        for ld in per_anchor:
            if ld.n_pos_labels == 0:
                continue
            parts = []
            if ld.positives:
                mat = ad.stack_rows([emb[p] for p in ld.positives])
                scores = ad.matmul(mat, s_i)
                parts.append(ad.sum_all(ad.log_sigmoid(ad.scale(scores, inv_alpha))))
            negs = ld.negative_indices()
            if negs:
                mat = ad.stack_rows([emb[p] for p in negs])
                scores = ad.matmul(mat, s_i)
                # log(1 − σ(z)) = log σ(−z)
                parts.append(ad.sum_all(ad.log_sigmoid(ad.scale(scores, -inv_alpha))))
            if not parts:
                continue
            term = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
            term = ad.scale(term, 1.0 / ld.n_pos_labels)
            total = term if total is None else ad.add(total, term)
    if total is None:
        raise EmptyBatch("no anchor in the batch has any active label")
    return ad.scale(total, 1.0 / (len(batch.anchors) * depth))


def project_corpus(corpus: Corpus, encoder: EncoderParams,
                   head: ProjectionHead) -> np.ndarray:
    """Projected unit embedding per record, forward-only."""
    return np.stack([
        project(encode_record(r, encoder), head).data for r in corpus.records
    ])


@dataclass
class PretrainResult:
    head: ProjectionHead
    batch_losses: list[float]  # the minimized objective, −L_cl, per step
    before: EmbeddingDiagnostics
    after: EmbeddingDiagnostics
    skipped_empty_space: int
    skipped_unsatisfiable: int


def pretrain(corpus: Corpus, model: HmcnModel, cfg: HmclConfig) -> PretrainResult:
    """Adam ascent on L_cl over shuffled anchor batches, updating the encoder
    in place. Embedding diagnostics are measured with identical pair sampling
    before and after."""
    encoder = model.encoder
    h = corpus.hierarchy
    rng = np.random.default_rng(cfg.seed)
    in_dim = len(encoder.cfg.fields) * encoder.cfg.d
    head = init_projection(rng, in_dim, cfg.proj_hidden, cfg.proj_dim)
    params = {**encoder.named("encoder"), **head.named()}
    before = embedding_diagnostics(corpus, project_corpus(corpus, encoder, head),
                                   h, seed=cfg.seed)
    state = AdamState()
    lr = cfg.lr
    losses: list[float] = []
    skipped_empty = 0
    skipped_unsat = 0
    done = 0
    capped = False
    for _ in range(cfg.epochs):
        if capped:
            break
        order = rng.permutation(len(corpus))
        for start in range(0, len(corpus), cfg.batch_size):
            if cfg.max_batches is not None and done >= cfg.max_batches:
                capped = True
                break
            anchors = order[start:start + cfg.batch_size]
            batch = build_batch(corpus, anchors, cfg.repeats_per_level, cfg.strategy, rng)
            skipped_empty += batch.skipped_empty_space
            skipped_unsat += batch.skipped_unsatisfiable
            ad.zero_grads(params)
            try:
                with ad.Tape() as tape:
                    objective = ad.scale(
                        contrastive_loss(batch, corpus, encoder, head, cfg), -1.0)
                    tape.backward(objective)
            except EmptyBatch:
                continue
            except ad.NonFiniteValue as e:
                raise NonFiniteLoss(f"non-finite contrastive loss at step {done}: {e}") from e
            losses.append(objective.item())
            adam_step(params, state, lr)
            done += 1
            if done % cfg.decay_every_batches == 0:
                lr *= cfg.lr_decay
    after = embedding_diagnostics(corpus, project_corpus(corpus, encoder, head),
                                  h, seed=cfg.seed)
    return PretrainResult(head=head, batch_losses=losses, before=before, after=after,
                          skipped_empty_space=skipped_empty,
                          skipped_unsatisfiable=skipped_unsat)
