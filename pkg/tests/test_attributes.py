import json
from pathlib import Path

import pytest

from coapt import tokenizer
from coapt.attributes import (
    fit_to_budget,
    inference_sets,
    load_vocab,
    save_vocab,
    training_set,
    vocab_from_dict,
)
from coapt.errors import BudgetOverflowError, FormatError, StructuralError, VocabLookupError

FIXTURES = Path(__file__).parent / "fixtures"


def make_doc(**overrides):
    doc = {
        "dataset": "toy",
        "generator": "hand",
        "num_words": 4,
        "num_sets": 2,
        "classes": {
            "goldfish": [["aquatic", "fins", "orange", "water"], ["bowl", "pet", "tank", "swimming"]],
            "beaver": [["dam", "fur", "rodent", "tail"], ["brown", "pond", "tree", "log"]],
        },
    }
    doc.update(overrides)
    return doc


def test_load_goldfish_fixture():
    vocab = load_vocab(FIXTURES / "goldfish_vocab.json")
    words = vocab.classes["goldfish"][0]
    assert words == ["goldfish", "aquatic", "fish", "ornamental", "pet", "swimming", "water", "bowl"]
    assert len(words) == 8


def test_duplicates_within_set_dropped(caplog):
    doc = make_doc(classes={"goldfish": [["water", "Water", "fins"], ["a", "b", "c"]]})
    with caplog.at_level("WARNING"):
        vocab = vocab_from_dict(doc)
    assert vocab.classes["goldfish"][0] == ["water", "fins"]
    assert any("duplicate" in r.message for r in caplog.records)


def test_class_name_duplicate_is_kept():
    # generators sometimes emit the class name itself; it stays in the set
    doc = make_doc(classes={"nunchucks": [["nunchucks", "training", "rotation", "spinning"]] * 2})
    vocab = vocab_from_dict(doc)
    assert "nunchucks" in vocab.classes["nunchucks"][0]


def test_set_count_mismatch_is_structural_error():
    doc = make_doc(classes={"goldfish": [["a", "b", "c", "d"]]})
    with pytest.raises(StructuralError, match="goldfish"):
        vocab_from_dict(doc)


def test_too_many_words_rejected():
    doc = make_doc(num_words=2, classes={"x": [["a", "b", "c"], ["d", "e"]]})
    with pytest.raises(StructuralError, match="more than num_words"):
        vocab_from_dict(doc)


def test_short_set_accepted_with_warning(caplog):
    doc = make_doc(classes={"x": [["a", "b"], ["c", "d", "e", "f"]]})
    with caplog.at_level("WARNING"):
        vocab = vocab_from_dict(doc)
    assert vocab.classes["x"][0] == ["a", "b"]


def test_schema_violations_name_the_field(tmp_path):
    for key in ("dataset", "generator", "num_words", "num_sets", "classes"):
        doc = make_doc()
        del doc[key]
        path = tmp_path / "v.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(FormatError, match=key):
            load_vocab(path)


def test_load_serialize_load_is_idempotent(tmp_path):
    vocab = load_vocab(FIXTURES / "goldfish_vocab.json")
    out = tmp_path / "round.json"
    save_vocab(vocab, out)
    again = load_vocab(out)
    assert again == vocab
    save_vocab(again, tmp_path / "round2.json")
    assert (tmp_path / "round.json").read_text() == (tmp_path / "round2.json").read_text()


def test_training_and_inference_sets():
    vocab = load_vocab(FIXTURES / "three_set_vocab.json")
    assert len(inference_sets(vocab, "goldfish")) == 3
    assert training_set(vocab, "goldfish") == vocab.classes["goldfish"][0]
    assert training_set(vocab, "goldfish") == training_set(vocab, "goldfish")
    assert training_set(vocab, "goldfish") in inference_sets(vocab, "goldfish")
    with pytest.raises(VocabLookupError):
        training_set(vocab, "missing")


def test_single_set_file_training_equals_inference():
    vocab = load_vocab(FIXTURES / "goldfish_vocab.json")
    assert inference_sets(vocab, "goldfish") == [training_set(vocab, "goldfish")]


class TestFitToBudget:
    def setup_method(self):
        words = [f"w{i:02d}" for i in range(40)]
        self.doc = {
            "dataset": "toy",
            "generator": "hand",
            "num_words": 40,
            "num_sets": 1,
            "classes": {"goldfish": [words]},
        }
        self.vocab = vocab_from_dict(self.doc)
        self.tokens = tokenizer.build_vocab([["goldfish"], words])

    def fit(self, n_words, ctx_len, soft=4, class_tokens=1):
        doc = dict(self.doc)
        doc["classes"] = {"goldfish": [self.doc["classes"]["goldfish"][0][:n_words]]}
        doc["num_words"] = max(n_words, 1)
        vocab = vocab_from_dict(doc)
        return fit_to_budget(vocab, "goldfish", 0, soft, class_tokens, ctx_len, self.tokens)

    def test_thirty_two_words_fit_at_77(self):
        kept = self.fit(32, 77)
        assert len(kept) == 32

    def test_budget_nine_keeps_nine(self):
        # ctx 16 - (1 sos + 4 soft + 1 class + 1 eos) = 9
        kept = self.fit(40, 16)
        assert len(kept) == 9
        assert kept == self.doc["classes"]["goldfish"][0][:9]

    def test_empty_set(self):
        doc = make_doc(num_words=1, num_sets=1, classes={"goldfish": [[]]})
        vocab = vocab_from_dict(doc)
        assert fit_to_budget(vocab, "goldfish", 0, 4, 1, 77, self.tokens) == []

    def test_zero_attribute_overflow(self):
        with pytest.raises(BudgetOverflowError):
            self.fit(4, 6)  # needs 1+4+1+1 = 7 slots

    def test_monotone_in_soft_prompt_count(self):
        lengths = [len(self.fit(40, 16, soft=m)) for m in range(0, 8)]
        assert lengths == sorted(lengths, reverse=True)

    def test_monotone_in_class_token_count(self):
        lengths = [len(self.fit(40, 16, class_tokens=c)) for c in range(1, 6)]
        assert lengths == sorted(lengths, reverse=True)

    def test_multi_token_words_never_split(self):
        doc = {
            "dataset": "toy",
            "generator": "hand",
            "num_words": 3,
            "num_sets": 1,
            "classes": {"goldfish": [["deep sea", "blue", "deep-sea"]]},
        }
        vocab = vocab_from_dict(doc)
        tokens = tokenizer.build_vocab([["goldfish", "deep sea", "blue"]])
        # budget of 3 attribute tokens: "deep sea" (2) + "blue" (1) fit,
        # the next 2-token word must be dropped whole
        kept = fit_to_budget(vocab, "goldfish", 0, 4, 1, 10, tokens)
        assert kept == ["deep sea", "blue"]
