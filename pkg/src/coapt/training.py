"""Training loop: adapted-scoring forward pass, momentum SGD, checkpoints.

Only the soft prompt bank and the meta-network receive updates; encoder
weights are frozen and verified unchanged by checksum. Batch order is a
pure function of (seed, step), so a run resumed from a checkpoint replays
the exact same schedule as an uninterrupted one.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attributes import AttributeVocab, fit_to_budget
from .encoders import ImageEncoderParams, TextEncoderParams, encode_image, encode_text
from .errors import ContractError, DivergenceError, FormatError, ParameterError
from .metanet import MetaNetParams, bias
from .prompts import SoftPromptBank, assemble_text_query
from .scoring import (
    ClassifierConfig,
    adapted_probabilities,
    cross_entropy_loss,
)
from .tensor import GradTape, Tensor, add, cosine_similarity, hconcat, softmax_rows
from . import tokenizer

CKPT_MAGIC = b"COAPTCKPT"
CKPT_VERSION = 1


@dataclass
class OptimizerConfig:
    base_lr: float = 2e-3
    momentum: float = 0.9
    total_steps: int = 200
    warmup_steps: int = 12
    batch_size: int = 4


@dataclass
class TrainContext:
    """Frozen material shared by every step of one training run."""

    text_params: TextEncoderParams
    image_params: ImageEncoderParams
    token_vocab: tokenizer.Vocabulary
    class_names: list[str]
    train_attrs: dict[str, list[str]]
    ctx_len: int
    classifier: ClassifierConfig
    optimizer: OptimizerConfig


@dataclass
class TrainState:
    bank: SoftPromptBank
    meta: MetaNetParams
    momentum: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0

    def named_parameters(self) -> dict[str, Tensor]:
        params = {"text_prompts": self.bank.text_prompts}
        if self.bank.vision_prompts is not None:
            params["vision_prompts"] = self.bank.vision_prompts
        params.update(
            meta_w1=self.meta.w1, meta_b1=self.meta.b1, meta_w2=self.meta.w2, meta_b2=self.meta.b2
        )
        return params


def init_train_state(bank: SoftPromptBank, meta: MetaNetParams, seed: int) -> TrainState:
    state = TrainState(bank=bank, meta=meta, momentum={}, step=0, seed=seed)
    state.momentum = {name: np.zeros_like(t.data) for name, t in state.named_parameters().items()}
    return state


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """Linear warmup to ``base_lr`` followed by half-cosine decay to zero."""
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps < 0 or warmup_steps > total_steps:
        raise ParameterError(f"warmup {warmup_steps} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps == warmup_steps:
        return 0.0 if step == total_steps else base_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def fitted_training_attrs(
    vocab: AttributeVocab,
    class_names: Sequence[str],
    num_attrs: int,
    soft_prompt_count: int,
    ctx_len: int,
    token_vocab: tokenizer.Vocabulary,
) -> dict[str, list[str]]:
    """Set-0 attribute words per class, truncated to the requested count and budget."""
    out = {}
    for name in class_names:
        class_tokens = len(tokenizer.encode(name, token_vocab).ids)
        fitted = fit_to_budget(vocab, name, 0, soft_prompt_count, class_tokens, ctx_len, token_vocab)
        out[name] = fitted[:num_attrs]
    return out


def encode_class_features(state: TrainState, ctx: TrainContext, attr_set_index: int = 0) -> list:
    """Text features for every class under the context's attribute words."""
    features = []
    for index, name in enumerate(ctx.class_names):
        query = assemble_text_query(
            name,
            ctx.train_attrs[name],
            state.bank,
            ctx.text_params.token_table,
            ctx.token_vocab,
            ctx.ctx_len,
            class_index=index,
            attr_set_index=attr_set_index,
        )
        features.append(encode_text(query, ctx.text_params))
    return features


def _prompt_bias_probabilities(
    state: TrainState, ctx: TrainContext, image_feature: Tensor, text_features: list
) -> Tensor:
    """Table-5 style variant: the meta-net output shifts the soft prompt rows.

    Each class is re-encoded with its shifted prompts, which costs one extra
    text encoding per (class, image) pair.
    """
    logits = []
    for index, name in enumerate(ctx.class_names):
        beta = bias(text_features[index].vector, image_feature, state.meta)
        shifted = SoftPromptBank(
            text_prompts=add(state.bank.text_prompts, beta),
            vision_prompts=state.bank.vision_prompts,
            init_mode=state.bank.init_mode,
        )
        query = assemble_text_query(
            name, ctx.train_attrs[name], shifted, ctx.text_params.token_table,
            ctx.token_vocab, ctx.ctx_len, class_index=index,
        )
        adapted = encode_text(query, ctx.text_params)
        logits.append(cosine_similarity(image_feature, adapted.vector))
    return softmax_rows(hconcat(logits), ctx.classifier.temperature)


def probabilities_for_feature(
    state: TrainState, ctx: TrainContext, image_feature: Tensor, text_features: list
) -> Tensor:
    """Adapted class distribution for one already-encoded image feature."""
    if ctx.classifier.bias_mode == "bias_on_prompts":
        return _prompt_bias_probabilities(state, ctx, image_feature, text_features)
    return adapted_probabilities(
        image_feature,
        [t.vector for t in text_features],
        state.meta,
        ctx.classifier.temperature,
        ctx.classifier.bias_mode,
    )


def batch_probabilities(
    state: TrainState,
    ctx: TrainContext,
    image_inputs: Sequence[np.ndarray],
    text_features: list | None = None,
) -> list[Tensor]:
    """Adapted class distributions for a batch of images (training pathway)."""
    if text_features is None:
        text_features = encode_class_features(state, ctx)
    rows = []
    for j, image in enumerate(image_inputs):
        bank = state.bank if ctx.image_params.mode == "tokens" else None
        f = encode_image(image, ctx.image_params, bank=bank, image_id=j).vector
        rows.append(probabilities_for_feature(state, ctx, f, text_features))
    return rows


def batch_indices(seed: int, step: int, population: int, batch_size: int) -> np.ndarray:
    rng = np.random.default_rng([seed, step])
    replace = population < batch_size
    return rng.choice(population, size=batch_size, replace=replace)


def train_step(
    state: TrainState,
    batch: tuple[Sequence[np.ndarray], Sequence[int]],
    ctx: TrainContext,
) -> float:
    """One forward/backward/update pass; returns the batch loss."""
    images, labels = batch
    tape = GradTape()
    with tape:
        rows = batch_probabilities(state, ctx, images)
        loss = cross_entropy_loss(rows, list(labels))
    loss_value = loss.item()
    if not math.isfinite(loss_value):
        raise DivergenceError(f"non-finite loss {loss_value!r} at step {state.step}")
    grads = tape.backward(loss)

    lr = cosine_lr(state.step, ctx.optimizer.total_steps, ctx.optimizer.base_lr, ctx.optimizer.warmup_steps)
    if lr != 0.0:
        mu = ctx.optimizer.momentum
        for name, param in state.named_parameters().items():
            if param.frozen:
                raise ContractError(f"attempted to update frozen parameter {name}")
            g = grads.get(param)
            if g is None:
                g = np.zeros_like(param.data)
            buf = state.momentum[name]
            buf *= mu
            buf += g
            param.data -= lr * buf
    state.step += 1
    return loss_value


def train_loop(
    state: TrainState,
    ctx: TrainContext,
    support_inputs: Sequence[np.ndarray],
    support_labels: Sequence[int],
    steps: int,
    out_dir: str | Path | None = None,
    config_echo: dict[str, str] | None = None,
) -> list[float]:
    """Run ``steps`` training steps; on divergence, save the last good state."""
    losses = []
    labels = np.asarray(support_labels)
    for _ in range(steps):
        idx = batch_indices(state.seed, state.step, len(support_inputs), ctx.optimizer.batch_size)
        batch = ([support_inputs[i] for i in idx], [int(labels[i]) for i in idx])
        try:
            losses.append(train_step(state, batch, ctx))
        except DivergenceError:
            if out_dir is not None:
                save_checkpoint(state, Path(out_dir) / "last_good.ckpt", config_echo or {})
            raise
    return losses


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def _block_order(state: TrainState) -> list[str]:
    names = ["text_prompts"]
    if state.bank.vision_prompts is not None:
        names.append("vision_prompts")
    names += ["meta_w1", "meta_b1", "meta_w2", "meta_b2"]
    return names


def save_checkpoint(state: TrainState, path: str | Path, config_echo: dict[str, str] | None = None) -> None:
    params = state.named_parameters()
    bank = state.bank
    vision_shape = (0, 0) if bank.vision_prompts is None else bank.vision_prompts.shape
    blob = bytearray()
    blob += CKPT_MAGIC
    blob += struct.pack("<I", CKPT_VERSION)
    blob += struct.pack(
        "<IIIIIIIQQB",
        bank.text_prompts.shape[0],
        bank.text_prompts.shape[1],
        vision_shape[0],
        vision_shape[1],
        state.meta.dim,
        state.meta.hidden,
        state.meta.w2.shape[1],
        state.step,
        state.seed,
        1 if state.meta.affine else 0,
    )
    for name in _block_order(state):
        blob += np.ascontiguousarray(params[name].data, dtype="<f8").tobytes()
    for name in _block_order(state):
        blob += np.ascontiguousarray(state.momentum[name], dtype="<f8").tobytes()
    echo = "".join(f"{k}={v}\n" for k, v in sorted((config_echo or {}).items()))
    echo_bytes = echo.encode("utf-8")
    blob += struct.pack("<I", len(echo_bytes))
    blob += echo_bytes
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path, expected_dim: int | None = None) -> tuple[TrainState, dict[str, str]]:
    raw = Path(path).read_bytes()
    offset = 0

    def need(count: int, what: str) -> bytes:
        nonlocal offset
        if offset + count > len(raw):
            raise FormatError(f"truncated {what} at byte {offset} in {path}")
        piece = raw[offset : offset + count]
        offset += count
        return piece

    if need(len(CKPT_MAGIC), "magic") != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} in {path}")
    m, d, mv, dv, meta_dim, hidden, out_dim, step, seed, affine = struct.unpack(
        "<IIIIIIIQQB", need(45, "header")
    )
    if expected_dim is not None and d != expected_dim:
        raise FormatError(f"checkpoint width {d} does not match engine width {expected_dim}")

    def block(rows: int, cols: int, what: str) -> np.ndarray:
        return np.frombuffer(need(8 * rows * cols, what), dtype="<f8").reshape(rows, cols).copy()

    shapes = {"text_prompts": (m, d)}
    if mv > 0:
        shapes["vision_prompts"] = (mv, dv)
    shapes.update(
        meta_w1=(2 * meta_dim, hidden), meta_b1=(1, hidden), meta_w2=(hidden, out_dim), meta_b2=(1, out_dim)
    )
    values = {name: block(*shape, name) for name, shape in shapes.items()}
    momentum = {name: block(*shape, f"momentum {name}") for name, shape in shapes.items()}
    (echo_len,) = struct.unpack("<I", need(4, "config length"))
    echo_text = need(echo_len, "config echo").decode("utf-8")
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes in {path}")
    config_echo = dict(line.split("=", 1) for line in echo_text.splitlines() if line)

    bank = SoftPromptBank(
        text_prompts=Tensor(values["text_prompts"], requires_grad=True, name="text_prompts"),
        vision_prompts=(
            Tensor(values["vision_prompts"], requires_grad=True, name="vision_prompts") if mv > 0 else None
        ),
        init_mode=config_echo.get("init_mode", "gaussian"),
    )
    meta = MetaNetParams(
        w1=Tensor(values["meta_w1"], requires_grad=True, name="meta_w1"),
        b1=Tensor(values["meta_b1"], requires_grad=True, name="meta_b1"),
        w2=Tensor(values["meta_w2"], requires_grad=True, name="meta_w2"),
        b2=Tensor(values["meta_b2"], requires_grad=True, name="meta_b2"),
        dim=meta_dim,
        hidden=hidden,
        affine=bool(affine),
    )
    state = TrainState(bank=bank, meta=meta, momentum=momentum, step=step, seed=seed)
    return state, config_echo
