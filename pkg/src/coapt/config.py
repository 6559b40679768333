"""Run configuration: declared defaults plus a ``key = value`` file format.

Config files are UTF-8 text, one assignment per line, ``#`` starts a
comment. Values are coerced to the declared field types; unknown keys are
rejected so typos fail fast.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError


@dataclass
class ExperimentConfig:
    # toy data
    classes: int = 6
    shots: int = 16
    query_shots: int = 16
    dim: int = 16
    cluster_radius: float = 1.0
    cluster_spread: float = 0.2
    attr_correlation: float = 0.9
    subspace_dim: int = 4  # 0: orthonormal class directions
    num_sets: int = 3
    image_mode: str = "passthrough"  # or "tokens"
    image_tokens: int = 4

    # attribute vocabulary
    num_attrs: int = 8
    k_ensemble: int = 3
    vocab_path: str = ""
    embeddings_path: str = ""

    # frozen dual encoder
    encoder_seed: int = 1234
    depth: int = 2
    heads: int = 4
    ctx_len: int = 77

    # trainable state
    soft_prompts: int = 4
    vision_prompts: int = 0
    init_mode: str = "gaussian"
    init_phrase: str = "a photo of a"

    # scoring
    temperature: float = 0.01
    bias_mode: str = "bias_on_feature"

    # optimizer
    steps: int = 200
    base_lr: float = 2e-3
    momentum: float = 0.9
    warmup_steps: int = -1  # -1: one epoch over the support set
    batch_size: int = 4

    # protocol
    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    domain_rotations: list[float] = field(default_factory=lambda: [0.4, 0.8])
    domain_noise: float = 0.05
    cross_targets: int = 2

    def echo(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                out[f.name] = ",".join(str(v) for v in value)
            else:
                out[f.name] = str(value)
        return out


def _coerce(name: str, text: str, kind) -> object:
    text = text.strip()
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text
        if kind == list[int]:
            return [int(v) for v in text.split(",") if v.strip()]
        if kind == list[float]:
            return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"config key {name!r}: cannot parse {text!r}: {exc}") from exc
    raise ConfigurationError(f"config key {name!r} has unsupported type {kind!r}")


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base else ExperimentConfig()
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    runtime = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        if name not in types:
            raise ConfigurationError(f"config line {lineno}: unknown key {name!r}")
        f = runtime[name]
        kind = f.type
        if kind == "int":
            kind = int
        elif kind == "float":
            kind = float
        elif kind == "str":
            kind = str
        elif kind in ("list[int]",):
            kind = list[int]
        elif kind in ("list[float]",):
            kind = list[float]
        setattr(cfg, name, _coerce(name, value, kind))
    return cfg


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base)
