import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from speechchain.corpus import (
    EOB_ID,
    EOS_ID,
    SOS_ID,
    CorpusConfig,
    CorpusError,
    FrameSpec,
    Vocabulary,
    VocabularyError,
    block_duration,
    checksum_tree,
    generate,
    load_corpus,
    load_manifest,
    prototypes,
    render,
    write_corpus,
)


def test_special_ids_come_first():
    v = Vocabulary("xyz")
    assert (v.sos, v.eos, v.eob) == (SOS_ID, EOS_ID, EOB_ID) == (0, 1, 2)
    assert v.encode("zx") == [5, 3]
    assert len(v) == 6


@given(st.text(alphabet="abcd", max_size=30))
def test_encode_decode_roundtrip(text):
    v = Vocabulary("abcd")
    assert v.decode(v.encode(text)) == text


def test_unknown_character_reports_position():
    with pytest.raises(VocabularyError) as err:
        Vocabulary("ab").encode("abxa")
    assert err.value.position == 2


@pytest.mark.parametrize("chars", ["", "aa"])
def test_bad_vocabulary_rejected(chars):
    with pytest.raises(CorpusError):
        Vocabulary(chars)


def test_block_duration():
    assert block_duration(FrameSpec(50.0, 12.5), 8) == pytest.approx(0.1375, abs=1e-15)
    assert block_duration(FrameSpec(50.0, 12.5), 1) == pytest.approx(0.05)


def test_frame_spec_validation():
    with pytest.raises(CorpusError):
        FrameSpec(10.0, 12.5)
    with pytest.raises(CorpusError):
        FrameSpec(feature_dim=0)


def test_generation_is_deterministic():
    cfg = CorpusConfig(train=3, chain=3, dev=2, test=2, seed=4)
    assert generate(cfg) == generate(cfg)
    other = generate(CorpusConfig(train=3, chain=3, dev=2, test=2, seed=5))
    assert other != generate(cfg)


def test_features_follow_text():
    cfg = CorpusConfig(train=5, chain=0, dev=0, test=0, noise_std=0.0, max_len=10)
    protos = prototypes(cfg)
    for u in generate(cfg)["train"]:
        assert u.features.shape == (cfg.frames_per_char * len(u.text), cfg.feature_dim)
        np.testing.assert_array_equal(u.features, render(u.text, protos))


def test_disk_roundtrip_and_checksums(tmp_path):
    cfg = CorpusConfig(train=4, chain=4, dev=2, test=2, seed=1)
    corpus = generate(cfg)
    write_corpus(tmp_path / "a", corpus)
    write_corpus(tmp_path / "b", generate(cfg))
    assert load_corpus(tmp_path / "a") == corpus
    assert checksum_tree(tmp_path / "a") == checksum_tree(tmp_path / "b")


def test_200_utterance_manifest(tmp_path):
    corpus = generate(CorpusConfig(train=200, chain=0, dev=0, test=0, max_len=6))
    write_corpus(tmp_path, corpus)
    lines = (tmp_path / "train.jsonl").read_text().splitlines()
    assert len(lines) == 200


def test_missing_feature_file_is_reported(tmp_path):
    corpus = generate(CorpusConfig(train=2, chain=0, dev=0, test=0))
    write_corpus(tmp_path, corpus)
    victim = sorted((tmp_path / "feats").iterdir())[0]
    victim.unlink()
    with pytest.raises(FileNotFoundError, match=victim.stem):
        load_manifest(tmp_path / "train.jsonl", corpus.vocab)


def test_config_validation():
    with pytest.raises(CorpusError):
        CorpusConfig(min_len=5, max_len=3).validate()
    with pytest.raises(CorpusError):
        CorpusConfig(labeled_split="nope").validate()
