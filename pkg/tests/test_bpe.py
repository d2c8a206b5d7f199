import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newscap import bpe
from newscap.bpe import BASE_SIZE, MergeTable, Tokenizer, Vocabulary, bpe_train


def test_first_merge_on_repeated_pairs():
    # "aaab aaab": pair (a,a) occurs 4 times, (a,b) twice, (space,a) once
    vocab, merges = bpe_train("aaab aaab", BASE_SIZE + 1)
    assert merges.rules[0] == (b"a", b"a")


def test_target_equal_base_means_no_merges():
    vocab, merges = bpe_train("hello world", BASE_SIZE)
    assert len(merges) == 0
    assert vocab.size == BASE_SIZE


def test_training_is_deterministic():
    corpus = ["the cat sat on the mat", "the mat sat"]
    _, m1 = bpe_train(corpus, BASE_SIZE + 10)
    _, m2 = bpe_train(corpus, BASE_SIZE + 10)
    assert m1.rules == m2.rules


def test_merge_table_prefix_monotone():
    corpus = ["banana bandana band", "an ban and banana"]
    _, small = bpe_train(corpus, BASE_SIZE + 3)
    _, large = bpe_train(corpus, BASE_SIZE + 9)
    assert large.rules[: len(small)] == small.rules


def test_empty_corpus_rejected():
    with pytest.raises(ValueError, match="empty corpus"):
        bpe_train([], BASE_SIZE + 5)


def test_encode_applies_merges():
    tok = Tokenizer.train("aaab aaab", BASE_SIZE + 1)
    ids = tok.encode("aaab")
    assert len(ids) == 3
    assert [tok.vocab.token(i) for i in ids] == [b"aa", b"a", b"b"]


def test_encode_empty():
    tok = Tokenizer.train("abc", BASE_SIZE)
    assert tok.encode("") == []


def test_encode_prefix_stable_across_words():
    tok = Tokenizer.train("alpha beta gamma delta alpha beta", BASE_SIZE + 20)
    joint = tok.encode("alpha beta")
    assert joint[: len(tok.encode("alpha"))] == tok.encode("alpha")


def test_decode_roundtrip_text():
    tok = Tokenizer.train("Ms. Pedersen opened the museum", BASE_SIZE + 12)
    assert tok.decode(tok.encode("Ms. Pedersen")) == "Ms. Pedersen"


def test_decode_empty():
    tok = Tokenizer.train("x", BASE_SIZE)
    assert tok.decode([]) == ""


def test_decode_strips_reserved():
    tok = Tokenizer.train("hi there", BASE_SIZE + 2)
    ids = [bpe.BOS] + tok.encode("hi there") + [bpe.EOS, bpe.PAD]
    assert tok.decode(ids) == "hi there"


def test_decode_out_of_range_id():
    tok = Tokenizer.train("x y", BASE_SIZE)
    with pytest.raises(ValueError, match="out of range"):
        tok.decode([tok.vocab.size])


def test_vocab_and_merge_files_roundtrip(tmp_path):
    tok = Tokenizer.train(["a tab\tand a newline\n inside", "weird <pad> bytes \x00\xff"],
                          BASE_SIZE + 30)
    tok.save(tmp_path / "vocab.tsv", tmp_path / "merges.txt")
    back = Tokenizer.load(tmp_path / "vocab.tsv", tmp_path / "merges.txt")
    assert back.merges.rules == tok.merges.rules
    assert back.vocab.size == tok.vocab.size
    sample = "a tab\tand a newline"
    assert back.encode(sample) == tok.encode(sample)
    assert back.vocab.content_hash() == tok.vocab.content_hash()


def test_escape_bijective_on_all_bytes():
    token = bytes(range(256))
    assert bpe.unescape_token(bpe.escape_token(token)) == token


@settings(max_examples=150, deadline=None)
@given(st.binary(max_size=80))
def test_roundtrip_arbitrary_bytes(data):
    tok = _SHARED_TOKENIZER
    assert tok.decode_bytes(tok.encode(data)) == data


@settings(max_examples=150, deadline=None)
@given(st.text(max_size=60))
def test_roundtrip_arbitrary_text(text):
    tok = _SHARED_TOKENIZER
    assert tok.decode(tok.encode(text)) == text


_SHARED_TOKENIZER = Tokenizer.train(
    ["the quick brown fox jumps over the lazy dog", "pack my box with five dozen jugs"],
    BASE_SIZE + 40,
)
