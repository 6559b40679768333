import numpy as np
import pytest

from coapt import tokenizer
from coapt.errors import BudgetOverflowError, ConfigurationError, VocabLookupError
from coapt.prompts import assemble_image_input, assemble_text_query, init_soft_prompts
from coapt.tensor import GradTape, Tensor, mul, sum_all

RNG = np.random.default_rng(99)
DIM = 8


@pytest.fixture
def setup():
    words = ["goldfish", "passion flower"] + [f"a{i:02d}" for i in range(40)]
    vocab = tokenizer.build_vocab([words])
    table = Tensor(RNG.normal(size=(vocab.size, DIM))).freeze()
    bank = init_soft_prompts("gaussian", DIM, 4, seed=0)
    return vocab, table, bank


def slots_of(query):
    return [str(s) for s in query.slot_map]


class TestAssembleTextQuery:
    def test_layout_32_attrs_at_77(self, setup):
        vocab, table, bank = setup
        attrs = [f"a{i:02d}" for i in range(32)]
        q = assemble_text_query("goldfish", attrs, bank, table, vocab, ctx_len=77)
        assert q.length == 77
        assert q.eos_position == 1 + 4 + 1 + 32  # 38
        kinds = [s.kind for s in q.slot_map]
        assert kinds.count("pad") == 38
        assert kinds[0] == "sos" and kinds[38] == "eos"
        # trailing padding rows are zeros
        np.testing.assert_array_equal(q.embeddings.data[39:], 0.0)

    def test_no_attrs_matches_plain_soft_prompt_layout(self, setup):
        vocab, table, bank = setup
        q = assemble_text_query("goldfish", [], bank, table, vocab, ctx_len=10)
        assert [s.kind for s in q.slot_map][:7] == ["sos", "soft", "soft", "soft", "soft", "class", "eos"]

    def test_overflow_names_excess(self, setup):
        vocab, table, bank = setup
        attrs = [f"a{i:02d}" for i in range(5)]
        # 1 + 4 + 2 + 5 + 1 = 13 needs 3 more than 10
        with pytest.raises(BudgetOverflowError, match="3 over"):
            assemble_text_query("passion flower", attrs, bank, table, vocab, ctx_len=10)

    def test_unknown_attribute_propagates(self, setup):
        vocab, table, bank = setup
        with pytest.raises(VocabLookupError, match="zzz"):
            assemble_text_query("goldfish", ["zzz"], bank, table, vocab, ctx_len=77)

    def test_layout_is_reproducible_bitwise(self, setup):
        vocab, table, bank = setup
        attrs = ["a00", "a01"]
        a = assemble_text_query("goldfish", attrs, bank, table, vocab, ctx_len=20)
        b = assemble_text_query("goldfish", attrs, bank, table, vocab, ctx_len=20)
        np.testing.assert_array_equal(a.embeddings.data, b.embeddings.data)
        assert a.slot_map == b.slot_map

    def test_only_soft_rows_track_the_bank(self, setup):
        vocab, table, bank = setup
        q = assemble_text_query("goldfish", ["a00"], bank, table, vocab, ctx_len=20)
        before = q.embeddings.data.copy()
        bank.text_prompts.data += 1.0
        q2 = assemble_text_query("goldfish", ["a00"], bank, table, vocab, ctx_len=20)
        soft = [i for i, s in enumerate(q2.slot_map) if s.kind == "soft"]
        other = [i for i, s in enumerate(q2.slot_map) if s.kind != "soft"]
        assert (q2.embeddings.data[soft] != before[soft]).all()
        np.testing.assert_array_equal(q2.embeddings.data[other], before[other])

    def test_two_attr_sets_differ_only_in_attr_rows_and_eos(self, setup):
        vocab, table, bank = setup
        qa = assemble_text_query("goldfish", ["a00", "a01"], bank, table, vocab, ctx_len=20)
        qb = assemble_text_query("goldfish", ["a02", "a03", "a04"], bank, table, vocab, ctx_len=20)
        first_attr = 1 + 4 + 1
        np.testing.assert_array_equal(qa.embeddings.data[:first_attr], qb.embeddings.data[:first_attr])
        assert qb.eos_position == qa.eos_position + 1

    def test_gradient_reaches_only_soft_rows(self, setup):
        vocab, table, bank = setup
        tape = GradTape()
        with tape:
            q = assemble_text_query("goldfish", ["a00"], bank, table, vocab, ctx_len=20)
            loss = sum_all(mul(q.embeddings, q.embeddings))
        grads = tape.backward(loss)
        assert bank.text_prompts in grads
        assert table not in grads


class TestAssembleImageInput:
    def test_empty_bank_is_identity(self):
        bank = init_soft_prompts("gaussian", DIM, 2, seed=0)  # no vision prompts
        tokens = Tensor(RNG.normal(size=(4, DIM)))
        assert assemble_image_input(tokens, bank) is tokens

    def test_rows_appended(self):
        bank = init_soft_prompts("gaussian", DIM, 2, seed=0, vision_dim=DIM, vision_count=2)
        tokens = Tensor(RNG.normal(size=(4, DIM)))
        out = assemble_image_input(tokens, bank)
        assert out.shape == (6, DIM)
        np.testing.assert_array_equal(out.data[4:], bank.vision_prompts.data)

    def test_gradient_reaches_only_vision_prompts(self):
        bank = init_soft_prompts("gaussian", DIM, 2, seed=0, vision_dim=DIM, vision_count=2)
        tokens = Tensor(RNG.normal(size=(4, DIM))).freeze()
        tape = GradTape()
        with tape:
            out = assemble_image_input(tokens, bank)
            loss = sum_all(mul(out, out))
        grads = tape.backward(loss)
        assert bank.vision_prompts in grads
        assert tokens not in grads


class TestInitSoftPrompts:
    def test_gaussian_reproducible(self):
        a = init_soft_prompts("gaussian", DIM, 4, seed=5)
        b = init_soft_prompts("gaussian", DIM, 4, seed=5)
        np.testing.assert_array_equal(a.text_prompts.data, b.text_prompts.data)

    def test_different_seeds_differ(self):
        a = init_soft_prompts("gaussian", DIM, 4, seed=5)
        b = init_soft_prompts("gaussian", DIM, 4, seed=6)
        assert (a.text_prompts.data != b.text_prompts.data).any()

    def test_phrase_mode_copies_table_rows(self):
        vocab = tokenizer.build_vocab([["a photo of a", "goldfish"]])
        table = Tensor(RNG.normal(size=(vocab.size, DIM))).freeze()
        bank = init_soft_prompts("phrase", DIM, 4, seed=0, phrase="a photo of a", table=table, token_vocab=vocab)
        ids = tokenizer.encode("a photo of a", vocab).ids
        np.testing.assert_array_equal(bank.text_prompts.data, table.data[ids])
        assert bank.text_prompts.requires_grad

    def test_phrase_token_count_mismatch(self):
        vocab = tokenizer.build_vocab([["a photo of a"]])
        table = Tensor(RNG.normal(size=(vocab.size, DIM))).freeze()
        with pytest.raises(ConfigurationError):
            init_soft_prompts("phrase", DIM, 3, seed=0, phrase="a photo of a", table=table, token_vocab=vocab)
