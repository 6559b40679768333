"""Experiment protocols: few-shot training, base-to-novel, cross-dataset,
domain shift, attribute-count sweeps, and the full-loss gradient check.

Every run is a deterministic function of its configuration and seed list.
Reports carry base/novel accuracy and their harmonic mean plus per-seed
rows for the CSV summary. Novel classes are scored with the K-set
vocabulary ensemble; base classes always use the single fixed training
vocabulary.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tokenizer
from .attributes import AttributeVocab, fit_to_budget, load_vocab
from .config import ExperimentConfig
from .encoders import (
    KIND_TOKEN,
    build_frozen_encoders,
    encode_image,
    load_embedding_export,
)
from .errors import BudgetOverflowError, ConfigurationError, MetricDomainError, VocabLookupError
from .metanet import init_meta_net
from .prompts import init_soft_prompts
from .scoring import ClassifierConfig, ensemble_probabilities
from .tensor import finite_diff_check
from .scoring import cross_entropy_loss
from .toydata import ToyDataset, make_toy_dataset, perturb_domain, split_base_novel
from .training import (
    OptimizerConfig,
    TrainContext,
    TrainState,
    batch_probabilities,
    encode_class_features,
    fitted_training_attrs,
    init_train_state,
    probabilities_for_feature,
    train_loop,
)


def harmonic_mean(base: float, novel: float) -> float:
    """2bn/(b+n) of two positive percentages."""
    if base <= 0 or novel <= 0:
        raise MetricDomainError(f"harmonic mean needs positive inputs, got ({base}, {novel})")
    return 2.0 * base * novel / (base + novel)


def _hm_or_zero(base: float | None, novel: float | None) -> float | None:
    if base is None or novel is None:
        return None
    if base <= 0 or novel <= 0:
        return 0.0
    return harmonic_mean(base, novel)


@dataclass
class MetricsReport:
    protocol: str
    base_accuracy: float | None
    novel_accuracy: float | None
    harmonic_mean: float | None
    per_class_accuracy: dict[str, float]
    seeds: list[int]
    config: dict[str, str]
    per_seed: list[dict] = field(default_factory=list)
    target: str = ""

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    def csv_rows(self) -> list[str]:
        rows = ["seed,base,novel,hm"]
        for entry in self.per_seed:
            rows.append(
                f"{entry['seed']},{_fmt(entry.get('base'))},{_fmt(entry.get('novel'))},{_fmt(entry.get('hm'))}"
            )
        rows.append(f"mean,{_fmt(self.base_accuracy)},{_fmt(self.novel_accuracy)},{_fmt(self.harmonic_mean)}")
        return rows


def _fmt(value) -> str:
    return "" if value is None else f"{value:.4f}"


# --------------------------------------------------------------------------
# World construction
# --------------------------------------------------------------------------


@dataclass
class BuiltWorld:
    cfg: ExperimentConfig
    datasets: list[ToyDataset]
    attr_vocabs: list[AttributeVocab]
    token_vocab: tokenizer.Vocabulary
    text_params: object
    image_params: object


def _generate_dataset(cfg: ExperimentConfig, seed: int, prefix: str = "class") -> tuple[ToyDataset, AttributeVocab]:
    subspace = cfg.subspace_dim if cfg.subspace_dim > 0 else None
    return make_toy_dataset(
        seed=seed,
        n_classes=cfg.classes,
        shots=cfg.shots,
        dim=cfg.dim,
        cluster_spread=cfg.cluster_spread,
        attr_correlation=cfg.attr_correlation,
        cluster_radius=cfg.cluster_radius,
        query_shots=cfg.query_shots,
        num_attr_words=cfg.num_attrs if cfg.num_attrs > 0 else 1,
        num_sets=cfg.num_sets,
        subspace_dim=subspace,
        input_kind="tokens" if cfg.image_mode == "tokens" else "features",
        token_rows=cfg.image_tokens,
        class_name_prefix=prefix,
    )


def build_world(cfg: ExperimentConfig, datasets: list[ToyDataset], attr_vocabs: list[AttributeVocab]) -> BuiltWorld:
    """Token vocabulary and frozen encoders spanning every provided dataset."""
    corpora = []
    for ds in datasets:
        corpora.append(ds.class_names)
        corpora.append(list(ds.token_embeddings))
    for vocab in attr_vocabs:
        corpora.append(vocab.class_names())
        corpora.append(vocab.all_words())
    if cfg.init_mode == "phrase":
        corpora.append(cfg.init_phrase.split())
    token_vocab = tokenizer.build_vocab(corpora)

    overrides: dict[int, np.ndarray] = {}
    for ds in datasets:
        for word, row in ds.token_embeddings.items():
            overrides[token_vocab.word_to_id[word]] = row
    if cfg.embeddings_path:
        export = load_embedding_export(cfg.embeddings_path)
        if export.kind != KIND_TOKEN:
            raise ConfigurationError(
                "run configs accept token-kind embedding exports; image-kind files hold feature banks"
            )
        from .encoders import table_overrides_from_export

        overrides.update(table_overrides_from_export(export, token_vocab, cfg.dim))

    text_params, image_params = build_frozen_encoders(
        seed=cfg.encoder_seed,
        vocab_size=token_vocab.size,
        dim=cfg.dim,
        depth=cfg.depth,
        heads=cfg.heads,
        ctx_len=cfg.ctx_len,
        image_mode="tokens" if cfg.image_mode == "tokens" else "passthrough",
        image_token_dim=cfg.dim,
        image_ctx_len=cfg.image_tokens + cfg.vision_prompts,
        token_row_overrides=overrides,
    )
    return BuiltWorld(cfg, datasets, attr_vocabs, token_vocab, text_params, image_params)


def _fresh_state(cfg: ExperimentConfig, world: BuiltWorld, seed: int) -> TrainState:
    bank = init_soft_prompts(
        cfg.init_mode,
        cfg.dim,
        cfg.soft_prompts,
        seed=seed,
        phrase=cfg.init_phrase,
        table=world.text_params.token_table,
        token_vocab=world.token_vocab,
        vision_dim=cfg.dim if cfg.vision_prompts > 0 else None,
        vision_count=cfg.vision_prompts,
    )
    meta = init_meta_net(cfg.dim, seed=seed, affine=cfg.bias_mode == "affine_on_feature")
    return init_train_state(bank, meta, seed=seed)


def _train_context(
    cfg: ExperimentConfig,
    world: BuiltWorld,
    attr_vocab: AttributeVocab,
    class_names: list[str],
    support_count: int,
) -> TrainContext:
    warmup = cfg.warmup_steps
    if warmup < 0:
        warmup = math.ceil(support_count / cfg.batch_size)  # one epoch
    return TrainContext(
        text_params=world.text_params,
        image_params=world.image_params,
        token_vocab=world.token_vocab,
        class_names=class_names,
        train_attrs=fitted_training_attrs(
            attr_vocab, class_names, cfg.num_attrs, cfg.soft_prompts, cfg.ctx_len, world.token_vocab
        ),
        ctx_len=cfg.ctx_len,
        classifier=ClassifierConfig(
            temperature=cfg.temperature, ensemble_size=cfg.k_ensemble, bias_mode=cfg.bias_mode
        ),
        optimizer=OptimizerConfig(
            base_lr=cfg.base_lr,
            momentum=cfg.momentum,
            total_steps=cfg.steps,
            warmup_steps=warmup,
            batch_size=cfg.batch_size,
        ),
    )


def _subset(dataset: ToyDataset, class_names: list[str], split: str) -> tuple[list[np.ndarray], list[int]]:
    inputs = dataset.support_inputs if split == "support" else dataset.query_inputs
    labels = dataset.support_labels if split == "support" else dataset.query_labels
    keep_in, keep_lab = [], []
    for x, y in zip(inputs, labels):
        name = dataset.class_names[y]
        if name in class_names:
            keep_in.append(x)
            keep_lab.append(class_names.index(name))
    return keep_in, keep_lab


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def eval_accuracy(
    state: TrainState,
    ctx: TrainContext,
    inputs: Sequence[np.ndarray],
    labels: Sequence[int],
) -> tuple[float, dict[str, float]]:
    """Adapted-scoring accuracy with the fixed training vocabulary."""
    features = encode_class_features(state, ctx)
    hits = {name: 0 for name in ctx.class_names}
    totals = {name: 0 for name in ctx.class_names}
    for x, y in zip(inputs, labels):
        row = batch_probabilities(state, ctx, [x], text_features=features)[0]
        name = ctx.class_names[y]
        totals[name] += 1
        if int(row.data.argmax()) == y:
            hits[name] += 1
    per_class = {n: 100.0 * hits[n] / totals[n] for n in ctx.class_names if totals[n]}
    overall = 100.0 * sum(hits.values()) / max(sum(totals.values()), 1)
    return overall, per_class


def ensemble_accuracy(
    state: TrainState,
    cfg: ExperimentConfig,
    world: BuiltWorld,
    attr_vocab: AttributeVocab,
    class_names: list[str],
    inputs: Sequence[np.ndarray],
    labels: Sequence[int],
) -> tuple[float, dict[str, float]]:
    """Zero-shot accuracy with the K-set vocabulary ensemble (novel-class path)."""
    k = min(cfg.k_ensemble, attr_vocab.num_sets)
    set_attrs: list[dict[str, list[str]]] = []
    for set_index in range(k):
        fitted = {}
        for name in class_names:
            class_tokens = len(tokenizer.encode(name, world.token_vocab).ids)
            fitted[name] = fit_to_budget(
                attr_vocab, name, set_index, cfg.soft_prompts, class_tokens, cfg.ctx_len, world.token_vocab
            )[: cfg.num_attrs]
        set_attrs.append(fitted)
    base_ctx = _train_context(cfg, world, attr_vocab, class_names, support_count=1)
    set_ctxs = [dataclasses.replace(base_ctx, train_attrs=fitted) for fitted in set_attrs]
    set_features = [
        encode_class_features(state, ctx, attr_set_index=i) for i, ctx in enumerate(set_ctxs)
    ]

    def per_set(image_feature, attr_set, set_index):
        row = probabilities_for_feature(state, set_ctxs[set_index], image_feature, set_features[set_index])
        return row.data.reshape(-1)

    hits = {name: 0 for name in class_names}
    totals = {name: 0 for name in class_names}
    word_sets = [fitted for fitted in set_attrs]
    for x, y in zip(inputs, labels):
        bank = state.bank if world.image_params.mode == "tokens" else None
        f = encode_image(x, world.image_params, bank=bank).vector
        p = ensemble_probabilities(f, word_sets, per_set)
        name = class_names[y]
        totals[name] += 1
        if int(p.argmax()) == y:
            hits[name] += 1
    per_class = {n: 100.0 * hits[n] / totals[n] for n in class_names if totals[n]}
    overall = 100.0 * sum(hits.values()) / max(sum(totals.values()), 1)
    return overall, per_class


# --------------------------------------------------------------------------
# Protocols
# --------------------------------------------------------------------------


def _load_or_generate_vocab(cfg: ExperimentConfig, generated: AttributeVocab) -> AttributeVocab:
    if cfg.vocab_path:
        return load_vocab(cfg.vocab_path)
    return generated


def run_few_shot(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> MetricsReport:
    """Train on every class's support set and report query accuracy."""
    per_seed = []
    per_class_acc: dict[str, list[float]] = {}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        dataset, generated = _generate_dataset(cfg, seed)
        attr_vocab = _load_or_generate_vocab(cfg, generated)
        _check_coverage(attr_vocab, dataset.class_names)
        world = build_world(cfg, [dataset], [attr_vocab])
        state = _fresh_state(cfg, world, seed)
        ctx = _train_context(cfg, world, attr_vocab, dataset.class_names, len(dataset.support_inputs))
        train_loop(
            state, ctx, dataset.support_inputs, dataset.support_labels, cfg.steps,
            out_dir=out_dir, config_echo=cfg.echo(),
        )
        accuracy, per_class = eval_accuracy(state, ctx, dataset.query_inputs, dataset.query_labels)
        per_seed.append({"seed": seed, "base": accuracy, "novel": None, "hm": None})
        for name, value in per_class.items():
            per_class_acc.setdefault(name, []).append(value)
        if out_dir is not None:
            from .training import save_checkpoint

            save_checkpoint(state, Path(out_dir) / f"seed{seed}.ckpt", cfg.echo())
    base = float(np.mean([row["base"] for row in per_seed]))
    return MetricsReport(
        protocol="train",
        base_accuracy=base,
        novel_accuracy=None,
        harmonic_mean=None,
        per_class_accuracy={n: float(np.mean(v)) for n, v in per_class_acc.items()},
        seeds=list(cfg.seeds),
        config=cfg.echo(),
        per_seed=per_seed,
    )


def _check_coverage(vocab: AttributeVocab, class_names: Sequence[str]) -> None:
    missing = [name for name in class_names if name not in vocab.classes]
    if missing:
        raise VocabLookupError(f"attribute vocabulary missing classes: {missing}")


def run_base_to_novel(cfg: ExperimentConfig) -> MetricsReport:
    """Train on base support, evaluate base queries and zero-shot novel classes."""
    per_seed = []
    per_class_acc: dict[str, list[float]] = {}
    for seed in cfg.seeds:
        dataset, generated = _generate_dataset(cfg, seed)
        attr_vocab = _load_or_generate_vocab(cfg, generated)
        _check_coverage(attr_vocab, dataset.class_names)  # before any training
        base_classes, novel_classes = split_base_novel(dataset.class_names, seed)
        world = build_world(cfg, [dataset], [attr_vocab])
        state = _fresh_state(cfg, world, seed)
        support_in, support_lab = _subset(dataset, base_classes, "support")
        ctx = _train_context(cfg, world, attr_vocab, base_classes, len(support_in))
        train_loop(state, ctx, support_in, support_lab, cfg.steps)

        base_in, base_lab = _subset(dataset, base_classes, "query")
        base_acc, base_per_class = eval_accuracy(state, ctx, base_in, base_lab)
        novel_in, novel_lab = _subset(dataset, novel_classes, "query")
        novel_acc, novel_per_class = ensemble_accuracy(
            state, cfg, world, attr_vocab, novel_classes, novel_in, novel_lab
        )
        per_seed.append({"seed": seed, "base": base_acc, "novel": novel_acc, "hm": _hm_or_zero(base_acc, novel_acc)})
        for name, value in {**base_per_class, **novel_per_class}.items():
            per_class_acc.setdefault(name, []).append(value)
    base = float(np.mean([row["base"] for row in per_seed]))
    novel = float(np.mean([row["novel"] for row in per_seed]))
    return MetricsReport(
        protocol="base-to-novel",
        base_accuracy=base,
        novel_accuracy=novel,
        harmonic_mean=_hm_or_zero(base, novel),
        per_class_accuracy={n: float(np.mean(v)) for n, v in per_class_acc.items()},
        seeds=list(cfg.seeds),
        config=cfg.echo(),
        per_seed=per_seed,
    )


def run_cross_dataset(cfg: ExperimentConfig) -> list[MetricsReport]:
    """Train once per seed on the source, evaluate zero-shot on target datasets."""
    reports: dict[str, list[dict]] = {}
    target_names: list[str] = []
    for seed in cfg.seeds:
        source, source_vocab = _generate_dataset(cfg, seed)
        targets = []
        for t in range(cfg.cross_targets):
            ds, vocab = _generate_dataset(cfg, seed=seed + 1000 * (t + 1), prefix=f"t{t}cls")
            targets.append((ds, vocab))
        world = build_world(
            cfg, [source] + [ds for ds, _ in targets], [source_vocab] + [v for _, v in targets]
        )
        state = _fresh_state(cfg, world, seed)
        ctx = _train_context(cfg, world, source_vocab, source.class_names, len(source.support_inputs))
        train_loop(state, ctx, source.support_inputs, source.support_labels, cfg.steps)

        source_acc, _ = eval_accuracy(state, ctx, source.query_inputs, source.query_labels)
        reports.setdefault("source", []).append({"seed": seed, "base": source_acc, "novel": None, "hm": None})
        for t, (ds, vocab) in enumerate(targets):
            acc, _ = ensemble_accuracy(
                state, cfg, world, vocab, ds.class_names, ds.query_inputs, ds.query_labels
            )
            role = f"target{t}"
            reports.setdefault(role, []).append(
                {"seed": seed, "base": source_acc, "novel": acc, "hm": _hm_or_zero(source_acc, acc)}
            )
            if role not in target_names:
                target_names.append(role)

    out = []
    source_rows = reports["source"]
    source_mean = float(np.mean([r["base"] for r in source_rows]))
    out.append(
        MetricsReport(
            protocol="cross-dataset",
            base_accuracy=source_mean,
            novel_accuracy=None,
            harmonic_mean=None,
            per_class_accuracy={},
            seeds=list(cfg.seeds),
            config=cfg.echo(),
            per_seed=source_rows,
            target="source",
        )
    )
    for name in target_names:
        rows = reports[name]
        novel = float(np.mean([r["novel"] for r in rows]))
        out.append(
            MetricsReport(
                protocol="cross-dataset",
                base_accuracy=source_mean,
                novel_accuracy=novel,
                harmonic_mean=_hm_or_zero(source_mean, novel),
                per_class_accuracy={},
                seeds=list(cfg.seeds),
                config=cfg.echo(),
                per_seed=rows,
                target=name,
            )
        )
    return out


def run_domain_generalization(cfg: ExperimentConfig) -> list[MetricsReport]:
    """Train on the source domain, evaluate on rotated/noised variants."""
    if cfg.image_mode == "tokens":
        raise ConfigurationError("domain shift runs operate on feature-vector datasets")
    rows_by_target: dict[str, list[dict]] = {}
    for seed in cfg.seeds:
        source, source_vocab = _generate_dataset(cfg, seed)
        attr_vocab = _load_or_generate_vocab(cfg, source_vocab)
        _check_coverage(attr_vocab, source.class_names)
        world = build_world(cfg, [source], [attr_vocab])
        state = _fresh_state(cfg, world, seed)
        ctx = _train_context(cfg, world, attr_vocab, source.class_names, len(source.support_inputs))
        train_loop(state, ctx, source.support_inputs, source.support_labels, cfg.steps)

        source_acc, _ = eval_accuracy(state, ctx, source.query_inputs, source.query_labels)
        rows_by_target.setdefault("source", []).append(
            {"seed": seed, "base": source_acc, "novel": None, "hm": None}
        )
        for rotation in cfg.domain_rotations:
            shifted = perturb_domain(
                source, rotation=rotation, noise=cfg.domain_noise, seed=seed + 7, tag=f"rot{rotation:g}"
            )
            if shifted.class_names != source.class_names:
                raise ConfigurationError("domain targets must keep the source class set")
            acc, _ = eval_accuracy(state, ctx, shifted.query_inputs, shifted.query_labels)
            rows_by_target.setdefault(shifted.domain, []).append(
                {"seed": seed, "base": source_acc, "novel": acc, "hm": _hm_or_zero(source_acc, acc)}
            )

    out = []
    source_rows = rows_by_target.pop("source")
    source_mean = float(np.mean([r["base"] for r in source_rows]))
    out.append(
        MetricsReport(
            protocol="domain-shift",
            base_accuracy=source_mean,
            novel_accuracy=None,
            harmonic_mean=None,
            per_class_accuracy={},
            seeds=list(cfg.seeds),
            config=cfg.echo(),
            per_seed=source_rows,
            target="source",
        )
    )
    for name, rows in rows_by_target.items():
        novel = float(np.mean([r["novel"] for r in rows]))
        out.append(
            MetricsReport(
                protocol="domain-shift",
                base_accuracy=source_mean,
                novel_accuracy=novel,
                harmonic_mean=_hm_or_zero(source_mean, novel),
                per_class_accuracy={},
                seeds=list(cfg.seeds),
                config=cfg.echo(),
                per_seed=rows,
                target=name,
            )
        )
    return out


def sweep_attribute_count(cfg: ExperimentConfig, counts: Sequence[int]) -> tuple[list[dict], str]:
    """Base-to-novel runs per attribute count; returns rows and a CSV text."""
    budget = cfg.ctx_len - (1 + cfg.soft_prompts + 1 + 1)
    for count in counts:
        if count < 0 or count > budget:
            raise BudgetOverflowError(
                f"attribute count {count} exceeds the context budget of {budget}"
            )
    rows = []
    for count in counts:
        sub_cfg = dataclasses.replace(cfg, num_attrs=count)
        report = run_base_to_novel(sub_cfg)
        rows.append(
            {
                "count": count,
                "base": report.base_accuracy,
                "novel": report.novel_accuracy,
                "hm": report.harmonic_mean,
            }
        )
    csv_lines = ["count,base,novel,hm"] + [
        f"{r['count']},{_fmt(r['base'])},{_fmt(r['novel'])},{_fmt(r['hm'])}" for r in rows
    ]
    return rows, "\n".join(csv_lines) + "\n"


# --------------------------------------------------------------------------
# Full-loss gradient check
# --------------------------------------------------------------------------


def gradcheck_full_loss(cfg: ExperimentConfig | None = None, h: float = 1e-5) -> float:
    """Finite-difference check of the full adapted-scoring loss.

    Covers every trainable parameter: text soft prompts, vision prompts,
    and all four meta-net tensors.
    """
    if cfg is None:
        cfg = ExperimentConfig(
            classes=3,
            dim=16,
            depth=2,
            heads=4,
            ctx_len=12,
            soft_prompts=4,
            vision_prompts=2,
            num_attrs=4,
            num_sets=1,
            image_mode="tokens",
            image_tokens=3,
            shots=2,
            query_shots=1,
            k_ensemble=1,
            seeds=[0],
        )
    dataset, attr_vocab = _generate_dataset(cfg, cfg.seed)
    world = build_world(cfg, [dataset], [attr_vocab])
    state = _fresh_state(cfg, world, cfg.seed)
    # perturb the zero-initialized output layer so its gradient is generic
    rng = np.random.default_rng(cfg.seed + 17)
    state.meta.w2.data += rng.normal(0.0, 0.05, size=state.meta.w2.shape)
    state.meta.b2.data += rng.normal(0.0, 0.05, size=state.meta.b2.shape)
    ctx = _train_context(cfg, world, attr_vocab, dataset.class_names, len(dataset.support_inputs))
    batch_inputs = dataset.support_inputs[:2]
    batch_labels = dataset.support_labels[:2]
    params = list(state.named_parameters().values())

    def loss_fn(_params):
        rows = batch_probabilities(state, ctx, batch_inputs)
        return cross_entropy_loss(rows, batch_labels)

    return finite_diff_check(loss_fn, params, h=h)
