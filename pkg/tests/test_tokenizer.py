import numpy as np
import pytest

from coapt.errors import ConfigurationError, FormatError, IntegrityError, VocabLookupError
from coapt.tokenizer import (
    EOS_ID,
    SOS_ID,
    UNK_ID,
    TokenSequence,
    build_vocab,
    decode,
    dump_vocab,
    encode,
    load_vocab_dump,
    normalize,
)


def test_lexicographic_assignment():
    v = build_vocab([["Goldfish", "Aquatic"]])
    assert v.word_to_id == {"aquatic": 3, "goldfish": 4}


def test_multi_word_class_name_splits():
    v = build_vocab([["sea or lake"]])
    assert set(v.word_to_id) == {"lake", "or", "sea"}
    assert len(set(v.word_to_id.values())) == 3


def test_duplicates_collapse_to_one_id():
    v = build_vocab([["water", "Water"], ["water "]])
    assert list(v.word_to_id) == ["water"]


def test_reserved_ids_never_reused():
    v = build_vocab([["alpha", "beta", "gamma"]])
    assert min(v.word_to_id.values()) == 3
    assert SOS_ID == 0 and EOS_ID == 1 and UNK_ID == 2


def test_empty_corpora_rejected():
    with pytest.raises(ConfigurationError):
        build_vocab([])
    with pytest.raises(ConfigurationError):
        build_vocab([[]])


def test_word_empty_after_normalization_rejected():
    with pytest.raises(ConfigurationError):
        build_vocab([["  - "]])


def test_encode_round_trip_single_word():
    v = build_vocab([["Goldfish"]])
    seq = encode("Goldfish", v)
    assert seq.ids == [v.word_to_id["goldfish"]]


def test_encode_splits_multiword_names():
    v = build_vocab([["Passion Flower"]])
    seq = encode("Passion Flower", v)
    assert seq.ids == [v.word_to_id["passion"], v.word_to_id["flower"]]


def test_unknown_word_policies():
    v = build_vocab([["known"]])
    with pytest.raises(VocabLookupError, match="zzzunknown"):
        encode("zzzunknown", v, on_unknown="error")
    assert encode("zzzunknown", v, on_unknown="unk").ids == [UNK_ID]


def test_decode_inverse_of_encode():
    v = build_vocab([["Passion Flower", "sea or lake", "goldfish"]])
    for text in ["passion flower", "Sea Or  Lake", "GOLDFISH"]:
        assert decode(encode(text, v), v) == " ".join(normalize(text))


def test_decode_reserved_and_empty():
    v = build_vocab([["x"]])
    assert decode(TokenSequence([SOS_ID]), v) == "<sos>"
    assert decode(TokenSequence([]), v) == ""


def test_decode_unassigned_id():
    v = build_vocab([["x"]])
    with pytest.raises(IntegrityError):
        decode(TokenSequence([99]), v)


def test_build_is_order_independent():
    rng = np.random.default_rng(7)
    words = [f"word{i}" for i in range(30)]
    baseline = build_vocab([words])
    for _ in range(5):
        shuffled = list(words)
        rng.shuffle(shuffled)
        assert build_vocab([shuffled]).word_to_id == baseline.word_to_id


def test_dump_load_round_trip(tmp_path):
    v = build_vocab([["sea or lake", "Goldfish", "Aquatic"]])
    path = tmp_path / "vocab.tsv"
    dump_vocab(v, path)
    loaded = load_vocab_dump(path)
    assert loaded.word_to_id == v.word_to_id
    text = path.read_text(encoding="utf-8")
    assert text.startswith("0\t<sos>\n1\t<eos>\n2\t<unk>\n")


def test_load_rejects_bad_rows(tmp_path):
    path = tmp_path / "vocab.tsv"
    path.write_text("0\t<sos>\n1\t<eos>\n2\t<unk>\n5\tskip\n", encoding="utf-8")
    with pytest.raises(FormatError, match="dense"):
        load_vocab_dump(path)
    path.write_text("not a row\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_vocab_dump(path)
