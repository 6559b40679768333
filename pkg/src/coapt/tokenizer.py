"""Word-level tokenizer mapping class names and attribute words to ids.

Ids 0, 1, 2 are reserved for the start, end, and unknown tokens; corpus
words get ids from 3 upward in lexicographic order, so identical corpora
always produce identical vocabularies regardless of input order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ConfigurationError, FormatError, IntegrityError, VocabLookupError

SOS_ID = 0
EOS_ID = 1
UNK_ID = 2
RESERVED = {SOS_ID: "<sos>", EOS_ID: "<eos>", UNK_ID: "<unk>"}

_SPLIT = re.compile(r"[\s\-]+")


def normalize(text: str) -> list[str]:
    """Lowercase, trim, and split on whitespace/hyphens into word pieces."""
    return [piece for piece in _SPLIT.split(text.strip().lower()) if piece]


@dataclass
class Vocabulary:
    word_to_id: dict[str, int]
    id_to_word: dict[int, str]

    @property
    def size(self) -> int:
        return len(RESERVED) + len(self.word_to_id)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id


@dataclass
class TokenSequence:
    ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def build_vocab(corpora: Iterable[Iterable[str]]) -> Vocabulary:
    """Assign deterministic ids to every normalized word across the corpora."""
    words: set[str] = set()
    saw_any = False
    for corpus in corpora:
        for raw in corpus:
            saw_any = True
            pieces = normalize(raw)
            if not pieces:
                raise ConfigurationError(f"word {raw!r} is empty after normalization")
            words.update(pieces)
    if not saw_any:
        raise ConfigurationError("cannot build a vocabulary from empty corpora")
    word_to_id = {w: i for i, w in enumerate(sorted(words), start=len(RESERVED))}
    return Vocabulary(word_to_id, {i: w for w, i in word_to_id.items()})


def encode(text: str, vocab: Vocabulary, on_unknown: str = "error") -> TokenSequence:
    """Map normalized word pieces to ids; unknown words error or map to <unk>."""
    if on_unknown not in ("error", "unk"):
        raise ConfigurationError(f"unknown-word policy must be 'error' or 'unk', got {on_unknown!r}")
    ids = []
    for piece in normalize(text):
        token_id = vocab.word_to_id.get(piece)
        if token_id is None:
            if on_unknown == "error":
                raise VocabLookupError(f"word {piece!r} is not in the vocabulary")
            token_id = UNK_ID
        ids.append(token_id)
    return TokenSequence(ids)


def decode(seq: TokenSequence, vocab: Vocabulary) -> str:
    words = []
    for token_id in seq:
        if token_id in RESERVED:
            words.append(RESERVED[token_id])
        elif token_id in vocab.id_to_word:
            words.append(vocab.id_to_word[token_id])
        else:
            raise IntegrityError(f"token id {token_id} is not assigned in this vocabulary")
    return " ".join(words)


def dump_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """Write the vocabulary as ``<id><TAB><word>`` lines sorted by id."""
    lines = [f"{i}\t{w}" for i, w in sorted(RESERVED.items())]
    lines += [f"{i}\t{w}" for i, w in sorted(vocab.id_to_word.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab_dump(path: str | Path) -> Vocabulary:
    word_to_id: dict[str, int] = {}
    expected = 0
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        try:
            id_text, word = line.split("\t", 1)
            token_id = int(id_text)
        except ValueError as exc:
            raise FormatError(f"line {lineno}: expected '<id><TAB><word>', got {line!r}") from exc
        if token_id != expected:
            raise FormatError(f"line {lineno}: ids must be dense and sorted, expected {expected}")
        if token_id in RESERVED:
            if word != RESERVED[token_id]:
                raise FormatError(f"line {lineno}: reserved id {token_id} must map to {RESERVED[token_id]!r}")
        else:
            word_to_id[word] = token_id
        expected += 1
    if expected < len(RESERVED):
        raise FormatError("vocabulary dump is missing the reserved token rows")
    return Vocabulary(word_to_id, {i: w for w, i in word_to_id.items()})
