"""Seeded synthetic datasets for desk-scale experiments.

Images are represented by feature vectors clustered around per-class
directions (or small token matrices derived from them for the token-mode
image encoder). The generator also emits an attribute vocabulary whose
words get dedicated embedding-table rows: with probability
``attr_correlation`` a word's row points near its class direction,
otherwise it is an independent random row. Correlated rows are the channel
that lets attribute words carry class information to the text encoder.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .attributes import AttributeVocab
from .errors import ConfigurationError

FEATURES = "features"
TOKENS = "tokens"


@dataclass
class ToyDataset:
    name: str
    class_names: list[str]
    support_inputs: list[np.ndarray]
    support_labels: list[int]
    query_inputs: list[np.ndarray]
    query_labels: list[int]
    feature_dim: int
    input_kind: str = FEATURES
    domain: str = "source"
    class_directions: np.ndarray | None = None
    token_embeddings: dict[str, np.ndarray] = field(default_factory=dict)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for arr in self.support_inputs + self.query_inputs:
            digest.update(np.ascontiguousarray(arr).tobytes())
        digest.update(bytes(self.support_labels))
        digest.update(bytes(self.query_labels))
        return digest.hexdigest()


def _class_directions(rng: np.random.Generator, count: int, dim: int, subspace_dim: int | None) -> np.ndarray:
    """Unit class directions; orthonormal, or confined to a shared subspace.

    Confining directions to a low-dimensional subspace makes novel-class
    directions linear combinations of base-class ones, which is what lets a
    trained adaptation transfer across the base/novel split.
    """
    if subspace_dim is None:
        if count > dim:
            raise ConfigurationError(f"{count} classes need feature dim >= {count}, got {dim}")
        basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        return basis[:count]
    if not 2 <= subspace_dim <= dim:
        raise ConfigurationError(f"subspace dim {subspace_dim} outside [2, {dim}]")
    basis, _ = np.linalg.qr(rng.normal(size=(dim, subspace_dim)))
    basis = basis[:, :subspace_dim]
    directions: list[np.ndarray] = []
    for _ in range(count):
        candidate = None
        for _ in range(200):  # keep directions separated for class separability
            v = basis @ rng.normal(size=subspace_dim)
            v /= np.linalg.norm(v)
            if all(abs(v @ d) <= 0.8 for d in directions):
                candidate = v
                break
        if candidate is None:
            raise ConfigurationError(
                f"cannot place {count} separated directions in a {subspace_dim}-dim subspace"
            )
        directions.append(candidate)
    return np.stack(directions)


def _attr_word(class_index: int, set_index: int, word_index: int) -> str:
    return f"attr{class_index:02d}s{set_index}w{word_index:02d}"


def make_toy_dataset(
    seed: int,
    n_classes: int,
    shots: int = 16,
    dim: int = 16,
    cluster_spread: float = 0.2,
    attr_correlation: float = 0.9,
    cluster_radius: float = 1.0,
    query_shots: int = 16,
    num_attr_words: int = 8,
    num_sets: int = 3,
    subspace_dim: int | None = None,
    input_kind: str = FEATURES,
    token_rows: int = 4,
    name: str | None = None,
    class_name_prefix: str = "class",
) -> tuple[ToyDataset, AttributeVocab]:
    """Per-class Gaussian feature clusters plus a generated attribute vocabulary."""
    if n_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {n_classes}")
    if not 0.0 <= attr_correlation <= 1.0:
        raise ConfigurationError(f"attr_correlation must be in [0, 1], got {attr_correlation}")
    if input_kind not in (FEATURES, TOKENS):
        raise ConfigurationError(f"input kind must be 'features' or 'tokens', got {input_kind!r}")
    rng = np.random.default_rng(seed)
    directions = _class_directions(rng, n_classes, dim, subspace_dim)
    class_names = [f"{class_name_prefix}{i:02d}" for i in range(n_classes)]

    def sample_inputs(count: int):
        inputs, labels = [], []
        for label in range(n_classes):
            for _ in range(count):
                feature = cluster_radius * directions[label] + cluster_spread * rng.normal(size=dim)
                if input_kind == TOKENS:
                    # spread the feature over token rows plus row-specific noise
                    noise = 0.1 * rng.normal(size=(token_rows, dim))
                    inputs.append(np.tile(feature, (token_rows, 1)) + noise)
                else:
                    inputs.append(feature.reshape(1, -1))
                labels.append(label)
        return inputs, labels

    support_inputs, support_labels = sample_inputs(shots)
    query_inputs, query_labels = sample_inputs(query_shots)

    token_embeddings: dict[str, np.ndarray] = {}
    classes: dict[str, list[list[str]]] = {}
    row_std = 1.0 / np.sqrt(dim)
    for i, class_name in enumerate(class_names):
        sets = []
        for k in range(num_sets):
            words = []
            for n in range(num_attr_words):
                word = _attr_word(i, k, n)
                words.append(word)
                if rng.random() < attr_correlation:
                    row = directions[i] + 0.25 * rng.normal(size=dim)
                    row = row / np.linalg.norm(row)
                else:
                    row = rng.normal(0.0, row_std, size=dim)
                token_embeddings[word] = row
            sets.append(words)
        classes[class_name] = sets

    dataset_name = name or f"toy-{seed}"
    dataset = ToyDataset(
        name=dataset_name,
        class_names=class_names,
        support_inputs=support_inputs,
        support_labels=support_labels,
        query_inputs=query_inputs,
        query_labels=query_labels,
        feature_dim=dim,
        input_kind=input_kind,
        class_directions=directions,
        token_embeddings=token_embeddings,
    )
    vocab = AttributeVocab(
        dataset=dataset_name,
        generator="toy-generator",
        num_words=num_attr_words,
        num_sets=num_sets,
        classes=classes,
    )
    return dataset, vocab


def split_base_novel(class_names: list[str], seed: int) -> tuple[list[str], list[str]]:
    """Disjoint, exhaustive half/half split; the odd class goes to base."""
    if len(class_names) < 2:
        raise ConfigurationError(f"need at least 2 classes to split, got {len(class_names)}")
    order = list(class_names)
    np.random.default_rng(seed).shuffle(order)
    cut = (len(order) + 1) // 2
    return order[:cut], order[cut:]


def _rotation_matrix(rng: np.random.Generator, dim: int, angle: float) -> np.ndarray:
    """Orthogonal matrix rotating every paired 2-plane of a random basis by ``angle``."""
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    block = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for k in range(dim // 2):
        i, j = 2 * k, 2 * k + 1
        block[i, i] = c
        block[j, j] = c
        block[i, j] = -s
        block[j, i] = s
    return basis @ block @ basis.T


def perturb_domain(dataset: ToyDataset, rotation: float, noise: float, seed: int, tag: str) -> ToyDataset:
    """Shifted-domain copy: rotate feature space by an angle and add noise."""
    if dataset.input_kind != FEATURES:
        raise ConfigurationError("domain perturbation is defined on feature-vector datasets")
    rng = np.random.default_rng(seed)
    dim = dataset.feature_dim
    rot = _rotation_matrix(rng, dim, rotation)

    def transform(inputs):
        return [x @ rot.T + noise * rng.normal(size=x.shape) for x in inputs]

    return ToyDataset(
        name=f"{dataset.name}-{tag}",
        class_names=list(dataset.class_names),
        support_inputs=transform(dataset.support_inputs),
        support_labels=list(dataset.support_labels),
        query_inputs=transform(dataset.query_inputs),
        query_labels=list(dataset.query_labels),
        feature_dim=dim,
        input_kind=dataset.input_kind,
        domain=tag,
        class_directions=dataset.class_directions,
        token_embeddings=dict(dataset.token_embeddings),
    )
