"""Class probability scoring: plain, bias-adapted, and vocabulary-ensembled.

Plain scoring softmaxes temperature-scaled cosine similarities between the
image feature and each class text feature. Adapted scoring first adds the
meta-network bias to each class text feature (or applies the affine
variant). Ensembled scoring averages adapted distributions over K attribute
word sets and is meant for novel-class inference only; since the K
distributions are equally weighted, the argmax is the same whether the
combination is read as a sum or a mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, ParameterError
from .metanet import MetaNetParams, bias
from .tensor import Tensor, add, add_scalar, cosine_similarity, hconcat, log_clamped, mul, scale, softmax_rows

log = logging.getLogger(__name__)

BIAS_MODES = ("bias_on_feature", "bias_on_prompts", "affine_on_feature", "off")


@dataclass
class ClassifierConfig:
    temperature: float = 0.01
    ensemble_size: int = 3
    bias_mode: str = "bias_on_feature"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        if self.ensemble_size < 1:
            raise ParameterError(f"ensemble size must be >= 1, got {self.ensemble_size}")
        if self.bias_mode not in BIAS_MODES:
            raise ConfigurationError(f"bias_mode must be one of {BIAS_MODES}, got {self.bias_mode!r}")


@dataclass
class LossStats:
    """Counts probability clamps so silent underflow is visible."""

    clamp_warnings: int = 0


_loss_stats = LossStats()


def loss_stats() -> LossStats:
    return _loss_stats


def class_probabilities(image_feature: Tensor, text_features: Sequence[Tensor], temperature: float) -> Tensor:
    """Softmax over cosine(image, text_i) / temperature (the unadapted rule)."""
    if not text_features:
        raise DimensionError("need at least one class text feature")
    logits = hconcat([cosine_similarity(image_feature, t) for t in text_features])
    return softmax_rows(logits, temperature)


def adapted_probabilities(
    image_feature: Tensor,
    text_features: Sequence[Tensor],
    meta: MetaNetParams,
    temperature: float,
    bias_mode: str = "bias_on_feature",
) -> Tensor:
    """Scoring after the meta-network adapts each class text feature."""
    if bias_mode == "off":
        return class_probabilities(image_feature, text_features, temperature)
    if bias_mode == "bias_on_prompts":
        raise ConfigurationError(
            "bias_on_prompts operates on prompt rows before encoding; use the scoring pipeline"
        )
    adapted = [apply_feature_adaptation(t, image_feature, meta, bias_mode) for t in text_features]
    logits = hconcat([cosine_similarity(image_feature, t) for t in adapted])
    return softmax_rows(logits, temperature)


def apply_feature_adaptation(
    text_feature: Tensor, image_feature: Tensor, meta: MetaNetParams, bias_mode: str
) -> Tensor:
    if bias_mode == "bias_on_feature":
        if meta.affine:
            raise ConfigurationError("bias_on_feature needs a bias-output meta-net, got affine")
        return add(text_feature, bias(text_feature, image_feature, meta))
    if bias_mode == "affine_on_feature":
        if not meta.affine:
            raise ConfigurationError("affine_on_feature needs an affine-output meta-net")
        raw = bias(text_feature, image_feature, meta)
        d = meta.dim
        scale_row = add_scalar(row_slice_cols(raw, 0, d), 1.0)
        shift_row = row_slice_cols(raw, d, 2 * d)
        return add(mul(text_feature, scale_row), shift_row)
    raise ConfigurationError(f"unknown feature adaptation mode {bias_mode!r}")


def row_slice_cols(t: Tensor, start: int, stop: int) -> Tensor:
    from .tensor import col_slice

    return col_slice(t, start, stop)


def ensemble_probabilities(
    image_feature: Tensor,
    attr_sets: Sequence[Sequence[str]],
    per_set_probabilities: Callable[[Tensor, Sequence[str], int], np.ndarray],
    temperature: float | None = None,
) -> np.ndarray:
    """Average the per-set adapted distributions over K attribute sets.

    ``per_set_probabilities`` assembles, encodes, and scores one attribute
    set; failures are re-raised with the offending set index. Inference
    only, so the result is a plain probability vector.
    """
    if not attr_sets:
        raise ParameterError("ensemble needs at least one attribute set")
    distributions = []
    for k, attr_set in enumerate(attr_sets):
        try:
            p = per_set_probabilities(image_feature, attr_set, k)
        except Exception as exc:
            raise type(exc)(f"attribute set {k}: {exc}") from exc
        distributions.append(np.asarray(p, dtype=np.float64).reshape(-1))
    return np.mean(distributions, axis=0)


def cross_entropy_loss(probabilities: Sequence[Tensor], labels: Sequence[int]) -> Tensor:
    """Mean of -log p[label] over the batch, clamping p at 1e-12 with a warning."""
    if len(probabilities) != len(labels) or not probabilities:
        raise DimensionError(f"{len(probabilities)} probability rows vs {len(labels)} labels")
    terms = []
    for p, label in zip(probabilities, labels):
        if not 0 <= label < p.shape[1]:
            raise DimensionError(f"label {label} out of range for {p.shape[1]} classes")
        picked = row_slice_cols(p, label, label + 1)
        if picked.data[0, 0] < 1e-12:
            _loss_stats.clamp_warnings += 1
            level = logging.WARNING if _loss_stats.clamp_warnings == 1 else logging.DEBUG
            log.log(level, "probability for label %d underflowed; clamped at 1e-12", label)
        terms.append(scale(log_clamped(picked), -1.0))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(terms))
