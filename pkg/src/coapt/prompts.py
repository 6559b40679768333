"""Query assembly: soft prompts + class tokens + attribute words + padding.

A text query is a fixed-length stack of embedding rows
[SOS, soft prompts, class tokens, attribute tokens, EOS, zero padding].
Soft prompt rows reference the trainable bank so gradients reach it; every
other row is copied from frozen tables. The slot map records which is which
so training can be restricted to the soft positions and attention can mask
the padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tokenizer
from .errors import BudgetOverflowError, ConfigurationError, DimensionError
from .tensor import Tensor, vstack


@dataclass(frozen=True)
class Slot:
    kind: str  # one of: sos, soft, class, attr, eos, pad
    index: int = 0

    def __str__(self):
        return self.kind if self.kind in ("sos", "class", "eos", "pad") else f"{self.kind}({self.index})"


@dataclass
class SoftPromptBank:
    """The trainable context vectors; the only trainable state besides the meta-net."""

    text_prompts: Tensor
    vision_prompts: Tensor | None = None
    init_mode: str = "gaussian"

    @property
    def count(self) -> int:
        return self.text_prompts.shape[0]

    @property
    def vision_count(self) -> int:
        return 0 if self.vision_prompts is None else self.vision_prompts.shape[0]

    def trainable_tensors(self) -> list[Tensor]:
        out = [self.text_prompts]
        if self.vision_prompts is not None:
            out.append(self.vision_prompts)
        return out


@dataclass
class AssembledQuery:
    embeddings: Tensor  # L x d, built on the active tape
    slot_map: list[Slot]
    class_index: int
    attr_set_index: int
    eos_position: int

    @property
    def length(self) -> int:
        return len(self.slot_map)

    def key_mask(self) -> np.ndarray:
        """True for every non-PAD position; used to mask attention keys."""
        return np.array([s.kind != "pad" for s in self.slot_map])


def init_soft_prompts(
    mode: str,
    dim: int,
    count: int,
    seed: int,
    phrase: str | None = None,
    table: Tensor | None = None,
    token_vocab: tokenizer.Vocabulary | None = None,
    vision_dim: int | None = None,
    vision_count: int = 0,
) -> SoftPromptBank:
    """Create the trainable prompt bank.

    ``gaussian`` draws rows from N(0, 0.02^2); ``phrase`` copies the frozen
    embedding rows of a starter phrase (token count must equal ``count``).
    """
    if mode == "gaussian":
        rng = np.random.default_rng(seed)
        text = Tensor(rng.normal(0.0, 0.02, size=(count, dim)), requires_grad=True, name="text_prompts")
    elif mode == "phrase":
        if phrase is None or table is None or token_vocab is None:
            raise ConfigurationError("phrase initialization needs a phrase, embedding table, and vocabulary")
        ids = tokenizer.encode(phrase, token_vocab, on_unknown="error").ids
        if len(ids) != count:
            raise ConfigurationError(
                f"phrase {phrase!r} has {len(ids)} tokens but {count} soft prompts were requested"
            )
        text = Tensor(table.data[ids].copy(), requires_grad=True, name="text_prompts")
    else:
        raise ConfigurationError(f"unknown soft prompt init mode {mode!r}")

    vision = None
    if vision_count > 0:
        if vision_dim is None:
            raise ConfigurationError("vision prompts requested without a vision dimension")
        rng_v = np.random.default_rng(seed + 1)
        vision = Tensor(
            rng_v.normal(0.0, 0.02, size=(vision_count, vision_dim)),
            requires_grad=True,
            name="vision_prompts",
        )
    return SoftPromptBank(text_prompts=text, vision_prompts=vision, init_mode=mode)


def assemble_text_query(
    class_name: str,
    attrs: Sequence[str],
    bank: SoftPromptBank,
    table: Tensor,
    token_vocab: tokenizer.Vocabulary,
    ctx_len: int,
    class_index: int = 0,
    attr_set_index: int = 0,
) -> AssembledQuery:
    """Stack SOS + soft prompts + class + attributes + EOS + padding rows."""
    dim = table.shape[1]
    if bank.text_prompts.shape[1] != dim:
        raise DimensionError(
            f"soft prompt width {bank.text_prompts.shape[1]} != embedding width {dim}"
        )
    class_ids = tokenizer.encode(class_name, token_vocab, on_unknown="error").ids
    attr_ids: list[list[int]] = [
        tokenizer.encode(word, token_vocab, on_unknown="error").ids for word in attrs
    ]
    n_attr_tokens = sum(len(ids) for ids in attr_ids)
    used = 1 + bank.count + len(class_ids) + n_attr_tokens + 1
    if used > ctx_len:
        raise BudgetOverflowError(
            f"query for class {class_name!r} needs {used} slots, {used - ctx_len} over ctx_len={ctx_len}"
        )

    parts: list[Tensor] = [Tensor(table.data[tokenizer.SOS_ID : tokenizer.SOS_ID + 1].copy())]
    slots: list[Slot] = [Slot("sos")]
    if bank.count > 0:
        parts.append(bank.text_prompts)
        slots.extend(Slot("soft", m) for m in range(bank.count))
    parts.append(Tensor(table.data[class_ids].copy()))
    slots.extend(Slot("class") for _ in class_ids)
    for n, ids in enumerate(attr_ids):
        parts.append(Tensor(table.data[ids].copy()))
        slots.extend(Slot("attr", n) for _ in ids)
    parts.append(Tensor(table.data[tokenizer.EOS_ID : tokenizer.EOS_ID + 1].copy()))
    eos_position = len(slots)
    slots.append(Slot("eos"))
    if used < ctx_len:
        parts.append(Tensor(np.zeros((ctx_len - used, dim))))
        slots.extend(Slot("pad") for _ in range(ctx_len - used))

    return AssembledQuery(
        embeddings=vstack(parts),
        slot_map=slots,
        class_index=class_index,
        attr_set_index=attr_set_index,
        eos_position=eos_position,
    )


def assemble_image_input(image_tokens: Tensor, bank: SoftPromptBank) -> Tensor:
    """Append the trainable vision prompt rows after the frozen image tokens."""
    if bank.vision_prompts is None:
        return image_tokens
    if bank.vision_prompts.shape[1] != image_tokens.shape[1]:
        raise DimensionError(
            f"vision prompt width {bank.vision_prompts.shape[1]} != image token width {image_tokens.shape[1]}"
        )
    return vstack([image_tokens, bank.vision_prompts])
