"""Frozen text and image encoders plus the COAPTEMB embedding exchange format.

Both encoders are small pre-norm transformers with seeded random weights,
standing in for a pretrained dual encoder. They are frozen at construction:
gradients flow *through* them to the soft prompt rows and the meta-net, but
their own weights never receive updates. The text feature is pooled at the
EOS position (matching the dual-encoder convention) and projected; the
image encoder either runs a token transformer with mean pooling or passes
precomputed feature vectors straight through.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BudgetOverflowError, ConfigurationError, DimensionError, FormatError
from .prompts import AssembledQuery, SoftPromptBank, assemble_image_input
from .tensor import AttentionBlockParams, Tensor, add, attention_block, matmul, mean_rows, row_select

EMB_MAGIC = b"COAPTEMB"
EMB_VERSION = 1
KIND_TOKEN = 0
KIND_IMAGE = 1


@dataclass
class TextEncoderParams:
    token_table: Tensor  # V x d, frozen
    positional: Tensor  # ctx_len x d, frozen
    blocks: list[AttentionBlockParams]
    out_proj: Tensor  # d x d, frozen
    ctx_len: int
    dim: int
    heads: int

    def tensors(self) -> list[Tensor]:
        out = [self.token_table, self.positional, self.out_proj]
        for b in self.blocks:
            out.extend(b.tensors())
        return out


@dataclass
class ImageEncoderParams:
    mode: str  # "tokens" or "passthrough"
    dim: int  # output feature width (joint space)
    token_dim: int = 0
    blocks: list[AttentionBlockParams] = field(default_factory=list)
    out_proj: Tensor | None = None  # token_dim x dim
    ctx_len: int = 0

    def tensors(self) -> list[Tensor]:
        out = [] if self.out_proj is None else [self.out_proj]
        for b in self.blocks:
            out.extend(b.tensors())
        return out


@dataclass
class TextFeature:
    vector: Tensor  # 1 x d
    class_index: int = 0
    attr_set_index: int = 0


@dataclass
class ImageFeature:
    vector: Tensor  # 1 x d
    image_id: int = 0


def _random_block(rng: np.random.Generator, dim: int, heads: int, max_len: int) -> AttentionBlockParams:
    def w(rows, cols):
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(rows), size=(rows, cols))).freeze()

    hidden = 2 * dim
    return AttentionBlockParams(
        ln1_gain=Tensor(np.ones((1, dim))).freeze(),
        ln1_shift=Tensor(np.zeros((1, dim))).freeze(),
        wq=w(dim, dim), bq=Tensor(np.zeros((1, dim))).freeze(),
        wk=w(dim, dim), bk=Tensor(np.zeros((1, dim))).freeze(),
        wv=w(dim, dim), bv=Tensor(np.zeros((1, dim))).freeze(),
        wo=w(dim, dim), bo=Tensor(np.zeros((1, dim))).freeze(),
        ln2_gain=Tensor(np.ones((1, dim))).freeze(),
        ln2_shift=Tensor(np.zeros((1, dim))).freeze(),
        w1=w(dim, hidden), b1=Tensor(np.zeros((1, hidden))).freeze(),
        w2=w(hidden, dim), b2=Tensor(np.zeros((1, dim))).freeze(),
        heads=heads,
        max_len=max_len,
    )


def build_frozen_encoders(
    seed: int,
    vocab_size: int,
    dim: int = 64,
    depth: int = 2,
    heads: int = 4,
    ctx_len: int = 77,
    image_mode: str = "passthrough",
    image_token_dim: int | None = None,
    image_depth: int | None = None,
    image_ctx_len: int = 16,
    token_row_overrides: dict[int, np.ndarray] | None = None,
) -> tuple[TextEncoderParams, ImageEncoderParams]:
    """Build the seeded random dual encoder and freeze every weight.

    ``token_row_overrides`` lets a caller pin specific embedding-table rows
    (by token id) before the table is frozen, e.g. rows imported from an
    embedding export or synthesized by the toy dataset generator.
    """
    if dim % heads != 0:
        raise ConfigurationError(f"width {dim} must be divisible by heads {heads}")
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(dim)
    table = rng.normal(0.0, std, size=(vocab_size, dim))
    if token_row_overrides:
        for token_id, row in token_row_overrides.items():
            row = np.asarray(row, dtype=np.float64).reshape(-1)
            if row.shape[0] != dim:
                raise DimensionError(f"override row for id {token_id} has width {row.shape[0]}, expected {dim}")
            if not 0 <= token_id < vocab_size:
                raise ConfigurationError(f"override id {token_id} outside table of size {vocab_size}")
            table[token_id] = row
    text = TextEncoderParams(
        token_table=Tensor(table).freeze(),
        positional=Tensor(rng.normal(0.0, std, size=(ctx_len, dim))).freeze(),
        blocks=[_random_block(rng, dim, heads, ctx_len) for _ in range(depth)],
        out_proj=Tensor(rng.normal(0.0, std, size=(dim, dim))).freeze(),
        ctx_len=ctx_len,
        dim=dim,
        heads=heads,
    )

    if image_mode == "passthrough":
        image = ImageEncoderParams(mode="passthrough", dim=dim)
    elif image_mode == "tokens":
        tdim = image_token_dim or dim
        tdepth = image_depth if image_depth is not None else depth
        if tdim % heads != 0:
            raise ConfigurationError(f"image token width {tdim} must be divisible by heads {heads}")
        image = ImageEncoderParams(
            mode="tokens",
            dim=dim,
            token_dim=tdim,
            blocks=[_random_block(rng, tdim, heads, image_ctx_len) for _ in range(tdepth)],
            out_proj=Tensor(rng.normal(0.0, 1.0 / math.sqrt(tdim), size=(tdim, dim))).freeze(),
            ctx_len=image_ctx_len,
        )
    else:
        raise ConfigurationError(f"unknown image encoder mode {image_mode!r}")
    return text, image


def encode_text(query: AssembledQuery, params: TextEncoderParams) -> TextFeature:
    """Run the frozen text transformer and pool the EOS-position state."""
    length, dim = query.embeddings.shape
    if dim != params.dim:
        raise DimensionError(f"query width {dim} != encoder width {params.dim}")
    if length > params.ctx_len:
        raise BudgetOverflowError(f"query length {length} exceeds context length {params.ctx_len}")
    positions = Tensor(params.positional.data[:length].copy())
    x = add(query.embeddings, positions)
    mask = query.key_mask()
    for block in params.blocks:
        x = attention_block(x, block, key_mask=mask)
    pooled = row_select(x, query.eos_position)
    feature = matmul(pooled, params.out_proj)
    return TextFeature(feature, query.class_index, query.attr_set_index)


def encode_image(
    x: Tensor | np.ndarray,
    params: ImageEncoderParams,
    bank: SoftPromptBank | None = None,
    image_id: int = 0,
) -> ImageFeature:
    """Encode image tokens (token mode) or pass a feature vector through."""
    has_vision_prompts = bank is not None and bank.vision_prompts is not None
    if params.mode == "passthrough":
        if has_vision_prompts:
            raise ConfigurationError("pass-through image features cannot carry vision prompts")
        vec = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if vec.shape != (1, params.dim):
            raise DimensionError(f"feature shape {vec.shape} != (1, {params.dim})")
        return ImageFeature(vec, image_id)

    tokens = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if tokens.shape[1] != params.token_dim:
        raise DimensionError(f"image token width {tokens.shape[1]} != encoder width {params.token_dim}")
    if bank is not None:
        tokens = assemble_image_input(tokens, bank)
    if tokens.shape[0] > params.ctx_len:
        raise BudgetOverflowError(
            f"{tokens.shape[0]} image tokens exceed context length {params.ctx_len}"
        )
    h = tokens
    for block in params.blocks:
        h = attention_block(h, block)
    pooled = mean_rows(h)
    return ImageFeature(matmul(pooled, params.out_proj), image_id)


# --------------------------------------------------------------------------
# Checksums (frozen-backbone verification)
# --------------------------------------------------------------------------


def tensors_checksum(tensors: list[Tensor]) -> str:
    digest = hashlib.sha256()
    for t in tensors:
        digest.update(np.ascontiguousarray(t.data).tobytes())
    return digest.hexdigest()


def encoder_checksums(text: TextEncoderParams, image: ImageEncoderParams) -> dict[str, str]:
    return {
        "text_encoder": tensors_checksum(text.tensors()),
        "embedding_table": tensors_checksum([text.token_table]),
        "image_encoder": tensors_checksum(image.tensors()) if image.tensors() else "empty",
    }


# --------------------------------------------------------------------------
# COAPTEMB binary exchange format
# --------------------------------------------------------------------------


@dataclass
class EmbeddingExport:
    kind: int  # KIND_TOKEN or KIND_IMAGE
    dim: int
    records: dict[str, np.ndarray]  # name -> float32 vector, insertion ordered


def save_embedding_export(path: str | Path, kind: int, dim: int, records: dict[str, np.ndarray]) -> None:
    if kind not in (KIND_TOKEN, KIND_IMAGE):
        raise FormatError(f"unknown embedding kind {kind}")
    blob = bytearray()
    blob += EMB_MAGIC
    blob += struct.pack("<IBII", EMB_VERSION, kind, dim, len(records))
    for name, vec in records.items():
        vec = np.asarray(vec, dtype="<f4").reshape(-1)
        if vec.shape[0] != dim:
            raise DimensionError(f"record {name!r} has width {vec.shape[0]}, expected {dim}")
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise FormatError(f"record name too long: {name[:32]!r}...")
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        blob += vec.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_embedding_export(path: str | Path) -> EmbeddingExport:
    """Parse a COAPTEMB file; format errors report the offending byte offset."""
    raw = Path(path).read_bytes()
    offset = 0

    def need(count: int, what: str) -> bytes:
        nonlocal offset
        if offset + count > len(raw):
            raise FormatError(f"truncated {what} at byte {offset} in {path}")
        piece = raw[offset : offset + count]
        offset += count
        return piece

    magic = need(len(EMB_MAGIC), "magic")
    if magic != EMB_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0 in {path}")
    version, kind, dim, count = struct.unpack("<IBII", need(13, "header"))
    if version != EMB_VERSION:
        raise FormatError(f"unsupported version {version} at byte {len(EMB_MAGIC)} in {path}")
    if kind not in (KIND_TOKEN, KIND_IMAGE):
        raise FormatError(f"unknown kind {kind} at byte {len(EMB_MAGIC) + 4} in {path}")
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(2, "record name length"))
        name = need(name_len, "record name").decode("utf-8")
        vec_offset = offset
        vec = np.frombuffer(need(4 * dim, f"vector for {name!r}"), dtype="<f4").copy()
        if name in records:
            raise FormatError(f"duplicate record {name!r} at byte {vec_offset} in {path}")
        records[name] = vec
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes at byte {offset} in {path}")
    return EmbeddingExport(kind=kind, dim=dim, records=records)


def table_overrides_from_export(
    export: EmbeddingExport, token_vocab, expected_dim: int
) -> dict[int, np.ndarray]:
    """Map a token-kind export onto embedding-table row overrides."""
    if export.kind != KIND_TOKEN:
        raise ConfigurationError("embedding-table overrides need a token-kind export")
    if export.dim != expected_dim:
        raise FormatError(f"export width {export.dim} != engine width {expected_dim}")
    overrides: dict[int, np.ndarray] = {}
    for name, vec in export.records.items():
        token_id = token_vocab.word_to_id.get(name)
        if token_id is not None:
            overrides[token_id] = vec.astype(np.float64)
    return overrides
