"""The trainable meta-network producing a per-(text, image) feature bias.

A two-layer MLP over the concatenated text and image features. The output
layer is zero-initialized, so at step 0 the bias is exactly zero and
adapted scoring reduces to plain cosine scoring. In affine mode the network
emits (scale, shift) halves instead of a single bias vector; the scale is
parameterized as 1 + raw so initialization is again the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import Tensor, add, hconcat, matmul, relu


@dataclass
class MetaNetParams:
    w1: Tensor  # 2d x h
    b1: Tensor  # 1 x h
    w2: Tensor  # h x out (out = d for bias mode, 2d for affine mode)
    b2: Tensor  # 1 x out
    dim: int
    hidden: int
    affine: bool = False

    def trainable_tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def init_meta_net(dim: int, hidden: int | None = None, seed: int = 0, affine: bool = False) -> MetaNetParams:
    """First layer seeded N(0, 1/sqrt(2d)); output layer exactly zero."""
    if dim < 1:
        raise ParameterError(f"meta-net dimension must be >= 1, got {dim}")
    if hidden is None:
        hidden = (dim + 1) // 2
    if hidden < 1:
        raise ParameterError(f"meta-net hidden width must be >= 1, got {hidden}")
    rng = np.random.default_rng(seed)
    out_dim = 2 * dim if affine else dim
    return MetaNetParams(
        w1=Tensor(rng.normal(0.0, 1.0 / math.sqrt(2 * dim), size=(2 * dim, hidden)), requires_grad=True, name="meta_w1"),
        b1=Tensor(np.zeros((1, hidden)), requires_grad=True, name="meta_b1"),
        w2=Tensor(np.zeros((hidden, out_dim)), requires_grad=True, name="meta_w2"),
        b2=Tensor(np.zeros((1, out_dim)), requires_grad=True, name="meta_b2"),
        dim=dim,
        hidden=hidden,
        affine=affine,
    )


class _EvalStats:
    """Counts bias evaluations: exactly one per (class, image) pair per pass."""

    def __init__(self):
        self.evaluations = 0


_stats = _EvalStats()


def eval_stats() -> _EvalStats:
    return _stats


def bias(text_feature: Tensor, image_feature: Tensor, params: MetaNetParams) -> Tensor:
    """Evaluate the meta-network on one (text, image) feature pair."""
    if text_feature.shape != (1, params.dim) or image_feature.shape != (1, params.dim):
        raise DimensionError(
            f"meta-net expects two 1x{params.dim} features, got {text_feature.shape} and {image_feature.shape}"
        )
    _stats.evaluations += 1
    joint = hconcat([text_feature, image_feature])
    hidden = relu(add(matmul(joint, params.w1), params.b1))
    return add(matmul(hidden, params.w2), params.b2)
