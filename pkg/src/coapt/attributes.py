"""Per-class attribute vocabularies: loading, validation, budgeting, selection.

An attribute vocabulary holds K independently sampled word sets per class.
Training always uses set 0 so runs are reproducible; novel-class inference
may ensemble over all K sets. Words are normalized on load (lowercase,
trimmed) and duplicates within a set are dropped with a warning; a word
that merely equals the class name is kept, since generators do emit those.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import tokenizer
from .errors import BudgetOverflowError, FormatError, StructuralError, VocabLookupError

log = logging.getLogger(__name__)


@dataclass
class AttributeVocab:
    dataset: str
    generator: str
    num_words: int
    num_sets: int
    classes: dict[str, list[list[str]]] = field(default_factory=dict)

    def class_names(self) -> list[str]:
        return list(self.classes)

    def all_words(self) -> list[str]:
        words = []
        for sets in self.classes.values():
            for s in sets:
                words.extend(s)
        return words


def _normalize_word(word: str) -> str:
    return " ".join(tokenizer.normalize(word))


def _validate_and_normalize(doc: dict, source: str) -> AttributeVocab:
    for key, kind in (("dataset", str), ("generator", str), ("num_words", int), ("num_sets", int), ("classes", dict)):
        if key not in doc:
            raise FormatError(f"{source}: missing field {key!r}")
        if not isinstance(doc[key], kind) or isinstance(doc[key], bool):
            raise FormatError(f"{source}: field {key!r} must be {kind.__name__}")
    n, k = doc["num_words"], doc["num_sets"]
    if n < 1 or k < 1:
        raise FormatError(f"{source}: num_words and num_sets must be >= 1")
    if not doc["classes"]:
        raise FormatError(f"{source}: classes map is empty")

    classes: dict[str, list[list[str]]] = {}
    for name, sets in doc["classes"].items():
        if not isinstance(sets, list) or not all(isinstance(s, list) for s in sets):
            raise FormatError(f"{source}: class {name!r}: sets must be a list of word lists")
        if len(sets) != k:
            raise StructuralError(
                f"{source}: class {name!r} has {len(sets)} sets, expected num_sets={k}"
            )
        normalized_sets = []
        for set_index, words in enumerate(sets):
            seen: set[str] = set()
            cleaned: list[str] = []
            for word in words:
                if not isinstance(word, str):
                    raise FormatError(f"{source}: class {name!r} set {set_index}: non-string word {word!r}")
                norm = _normalize_word(word)
                if not norm:
                    raise FormatError(f"{source}: class {name!r} set {set_index}: empty word after normalization")
                if norm in seen:
                    log.warning("class %r set %d: duplicate word %r dropped", name, set_index, norm)
                    continue
                seen.add(norm)
                cleaned.append(norm)
            if len(cleaned) > n:
                raise StructuralError(
                    f"{source}: class {name!r} set {set_index} has {len(cleaned)} words, more than num_words={n}"
                )
            if len(cleaned) < n:
                log.warning("class %r set %d: only %d of %d words", name, set_index, len(cleaned), n)
            normalized_sets.append(cleaned)
        classes[name] = normalized_sets
    return AttributeVocab(doc["dataset"], doc["generator"], n, k, classes)


def load_vocab(path: str | Path) -> AttributeVocab:
    """Load and validate an attribute vocabulary JSON file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse vocabulary file: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top-level value must be an object")
    return _validate_and_normalize(doc, str(path))


def vocab_from_dict(doc: dict, source: str = "<inline>") -> AttributeVocab:
    return _validate_and_normalize(doc, source)


def save_vocab(vocab: AttributeVocab, path: str | Path) -> None:
    doc = {
        "dataset": vocab.dataset,
        "generator": vocab.generator,
        "num_words": vocab.num_words,
        "num_sets": vocab.num_sets,
        "classes": vocab.classes,
    }
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _require_class(vocab: AttributeVocab, class_name: str) -> list[list[str]]:
    sets = vocab.classes.get(class_name)
    if sets is None:
        raise VocabLookupError(f"class {class_name!r} is not in the attribute vocabulary")
    return sets


def training_set(vocab: AttributeVocab, class_name: str) -> list[str]:
    """The single fixed word set used during training (always set index 0)."""
    return list(_require_class(vocab, class_name)[0])


def inference_sets(vocab: AttributeVocab, class_name: str) -> list[list[str]]:
    """All K word sets, in file order, for inference-time ensembling."""
    return [list(s) for s in _require_class(vocab, class_name)]


def fit_to_budget(
    vocab: AttributeVocab,
    class_name: str,
    set_index: int,
    soft_prompt_count: int,
    class_token_count: int,
    ctx_len: int,
    token_vocab: tokenizer.Vocabulary,
) -> list[str]:
    """Longest attribute-word prefix whose tokens fit the context budget.

    The layout SOS + soft prompts + class tokens + attributes + EOS must fit
    in ``ctx_len``; whole words only, trailing words are dropped.
    """
    sets = _require_class(vocab, class_name)
    if not 0 <= set_index < len(sets):
        raise VocabLookupError(f"class {class_name!r} has no set index {set_index}")
    budget = ctx_len - (1 + soft_prompt_count + class_token_count + 1)
    if budget < 0:
        raise BudgetOverflowError(
            f"class {class_name!r}: even zero attributes overflow ctx_len={ctx_len} "
            f"(needs {1 + soft_prompt_count + class_token_count + 1})"
        )
    kept: list[str] = []
    used = 0
    for word in sets[set_index]:
        n_tokens = len(tokenizer.encode(word, token_vocab, on_unknown="error"))
        if used + n_tokens > budget:
            break
        kept.append(word)
        used += n_tokens
    return kept
