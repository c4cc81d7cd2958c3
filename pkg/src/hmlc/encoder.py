"""Multi-field text encoder.

Each field is tokenized by a stable hash into a shared embedding table, a
per-field special token is prepended, and one self-attention layer runs over
the sequence; the special-token row is the field vector. Field vectors are
stacked and fused by a second self-attention into the root embedding
``h_0`` of shape (F, d). Empty fields contribute a zero vector and are
masked out of the fusion attention keys.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field as dc_field

import numpy as np

from .autodiff import ShapeMismatch, Tensor, const, default_dtype, embed, row, stack_rows, tensor
from .corpus import DEFAULT_FIELDS, Record
from .nn import AttentionParams, init_attention, multihead_attention

_WORD = re.compile(r"[0-9a-z]+")


class EncoderError(ValueError):
    pass


class AllFieldsEmpty(EncoderError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_buckets: int = 4096
    d: int = 16
    heads: int = 2
    max_tokens: int = 16
    fields: tuple[str, ...] = DEFAULT_FIELDS

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ShapeMismatch(f"width {self.d} not divisible by {self.heads} heads")
        if self.max_tokens < 1 or not self.fields or self.vocab_buckets < 1:
            raise EncoderError("max_tokens >= 1, vocab_buckets >= 1, at least one field")

    @property
    def table_rows(self) -> int:
        # one reserved special id per field, then the hash buckets
        return len(self.fields) + self.vocab_buckets


def special_id(cfg: EncoderConfig, field: str) -> int:
    try:
        return cfg.fields.index(field)
    except ValueError:
        raise EncoderError(f"unknown field {field!r}") from None


def tokenize(text: str, cfg: EncoderConfig) -> list[int]:
    """Lowercase word split hashed into the bucket range. crc32 rather than
    ``hash()`` because the latter is salted per process."""
    n = len(cfg.fields)
    words = _WORD.findall(text.lower())[: cfg.max_tokens]
    return [n + (zlib.crc32(w.encode("utf-8")) % cfg.vocab_buckets) for w in words]


@dataclass
class FieldEmbedding:
    h_field: Tensor
    present: bool


@dataclass
class EncoderParams:
    cfg: EncoderConfig
    table: Tensor
    field_attn: AttentionParams
    fuse_attn: AttentionParams

    def named(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out = {f"{prefix}.table": self.table}
        out.update(self.field_attn.named(f"{prefix}.field_attn"))
        out.update(self.fuse_attn.named(f"{prefix}.fuse_attn"))
        return out


def init_encoder(rng: np.random.Generator, cfg: EncoderConfig) -> EncoderParams:
    table = rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=(cfg.table_rows, cfg.d))
    return EncoderParams(
        cfg=cfg,
        table=tensor(table.astype(default_dtype())),
        field_attn=init_attention(rng, cfg.d, cfg.heads),
        fuse_attn=init_attention(rng, cfg.d, cfg.heads),
    )


def encode_field(tokens: list[int], field: str, params: EncoderParams) -> FieldEmbedding:
    """Self-attention over [special ∥ tokens]; the special-token row is the
    field vector. An empty token sequence yields the zero vector."""
    cfg = params.cfg
    if not tokens:
        zero = const(np.zeros(cfg.d, dtype=params.table.data.dtype))
        return FieldEmbedding(h_field=zero, present=False)
    ids = [special_id(cfg, field)] + list(tokens)
    seq = embed(params.table, ids)
    attended = multihead_attention(seq, seq, seq, params.field_attn)
    return FieldEmbedding(h_field=row(attended, 0), present=True)


def fuse_fields(embs: list[FieldEmbedding], params: EncoderParams) -> Tensor:
    """Stack the F field vectors and self-attend; absent fields are masked out
    of the keys so they receive exactly zero weight."""
    if len(embs) != len(params.cfg.fields):
        raise ShapeMismatch(f"expected {len(params.cfg.fields)} field embeddings, got {len(embs)}")
    present = np.array([e.present for e in embs], dtype=bool)
    if not present.any():
        raise AllFieldsEmpty("record has no non-empty field")
    hstar = stack_rows([e.h_field for e in embs])
    return multihead_attention(hstar, hstar, hstar, params.fuse_attn, key_mask=present)


def encode_record(record: Record, params: EncoderParams) -> Tensor:
    """Record -> h_0 of shape (F, d)."""
    cfg = params.cfg
    embs = [
        encode_field(tokenize(record.fields.get(f, ""), cfg), f, params)
        for f in cfg.fields
    ]
    return fuse_fields(embs, params)
