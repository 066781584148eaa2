"""Synthetic paired speech/text corpus, vocabulary, and on-disk formats.

Each character owns a fixed random prototype of ``frames_per_char`` feature
frames.  An utterance's features are its characters' prototypes laid end to
end plus i.i.d. Gaussian noise, so the text is recoverable from the speech
and vice versa.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SOS, EOS, EOB = "<sos>", "<eos>", "<eob>"
SPECIALS = (SOS, EOS, EOB)
SOS_ID, EOS_ID, EOB_ID = 0, 1, 2
SPLITS = ("train", "chain", "dev", "test")


class CorpusError(ValueError):
    pass


class VocabularyError(CorpusError):
    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class FrameSpec:
    frame_length_ms: float = 50.0
    frame_shift_ms: float = 12.5
    feature_dim: int = 8

    def __post_init__(self):
        if self.feature_dim < 1:
            raise CorpusError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if not 0 < self.frame_shift_ms <= self.frame_length_ms:
            raise CorpusError(
                f"need 0 < frame_shift_ms <= frame_length_ms, got {self.frame_shift_ms} / {self.frame_length_ms}"
            )


def block_duration(spec: FrameSpec, frames_per_block: int) -> float:
    """Seconds spanned by ``frames_per_block`` consecutive frames."""
    if frames_per_block < 1:
        raise CorpusError(f"frames_per_block must be >= 1, got {frames_per_block}")
    return spec.frame_length_ms / 1000.0 + (frames_per_block - 1) * spec.frame_shift_ms / 1000.0


class Vocabulary:
    """Special tokens first (ids 0..2), then characters in the given order."""

    def __init__(self, chars):
        chars = list(chars)
        if not chars:
            raise CorpusError("vocabulary is empty")
        if len(set(chars)) != len(chars):
            raise CorpusError("vocabulary contains duplicate characters")
        for ch in chars:
            if ch in SPECIALS or len(ch) != 1:
                raise CorpusError(f"vocabulary entries must be single characters, got {ch!r}")
        self.chars = chars
        self.symbols = list(SPECIALS) + chars
        self._index = {s: i for i, s in enumerate(self.symbols)}
        self.sos, self.eos, self.eob = SOS_ID, EOS_ID, EOB_ID

    def __len__(self):
        return len(self.symbols)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and other.chars == self.chars

    @property
    def special_ids(self):
        return frozenset((self.sos, self.eos, self.eob))

    def encode(self, text):
        ids = []
        for pos, ch in enumerate(text):
            if ch not in self._index or ch in SPECIALS:
                raise VocabularyError(f"character {ch!r} at position {pos} is not in the vocabulary", pos)
            ids.append(self._index[ch])
        return ids

    def decode(self, ids):
        return "".join(self.symbols[i] for i in ids if i not in self.special_ids)

    def check_ids(self, ids):
        for pos, i in enumerate(ids):
            if not 0 <= int(i) < len(self.symbols):
                raise VocabularyError(f"token id {i} at position {pos} is outside the vocabulary", pos)

    def strip(self, ids):
        return [int(i) for i in ids if i not in self.special_ids]


@dataclass(frozen=True)
class Utterance:
    id: str
    text: str
    features: np.ndarray = field(compare=False, repr=False)

    def __eq__(self, other):
        return (
            isinstance(other, Utterance)
            and self.id == other.id
            and self.text == other.text
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None

    @property
    def num_frames(self):
        return self.features.shape[0]


@dataclass
class CorpusConfig:
    vocabulary: str = "abcdef"
    frames_per_char: int = 4
    feature_dim: int = 8
    noise_std: float = 0.1
    min_len: int = 5
    max_len: int = 40
    train: int = 50
    chain: int = 100
    dev: int = 25
    test: int = 25
    labeled_split: str = "train"
    chain_split: str = "chain"
    seed: int = 0

    def validate(self):
        Vocabulary(self.vocabulary)
        if self.frames_per_char < 1:
            raise CorpusError("frames_per_char must be >= 1")
        if self.feature_dim < 1:
            raise CorpusError("feature_dim must be >= 1")
        if self.noise_std < 0:
            raise CorpusError("noise_std must be >= 0")
        if not 1 <= self.min_len <= self.max_len:
            raise CorpusError(f"need 1 <= min_len <= max_len, got {self.min_len}..{self.max_len}")
        for name in SPLITS:
            if getattr(self, name) < 0:
                raise CorpusError(f"split size {name} must be >= 0")
        for name in (self.labeled_split, self.chain_split):
            if name not in SPLITS:
                raise CorpusError(f"unknown split {name!r}")


class Corpus:
    def __init__(self, vocab, splits, labeled_split="train", chain_split="chain"):
        self.vocab = vocab
        self.splits = {name: list(utts) for name, utts in splits.items()}
        self.labeled_split = labeled_split
        self.chain_split = chain_split

    def __getitem__(self, split):
        return self.splits.get(split, [])

    def __len__(self):
        return sum(len(v) for v in self.splits.values())

    def __eq__(self, other):
        return isinstance(other, Corpus) and self.vocab == other.vocab and self.splits == other.splits

    @property
    def labeled(self):
        return self[self.labeled_split]

    @property
    def chain(self):
        return self[self.chain_split]


def prototypes(config: CorpusConfig):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    return {ch: rng.normal(size=(config.frames_per_char, config.feature_dim)) for ch in config.vocabulary}


def render(text, protos, noise_std=0.0, rng=None):
    """Features for ``text``: prototypes end to end, plus optional noise."""
    feats = np.concatenate([protos[ch] for ch in text], axis=0)
    if noise_std > 0:
        feats = feats + noise_std * rng.normal(size=feats.shape)
    return feats


def generate(config: CorpusConfig) -> Corpus:
    config.validate()
    vocab = Vocabulary(config.vocabulary)
    protos = prototypes(config)
    splits = {}
    for k, name in enumerate(SPLITS, start=1):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, k]))
        utts = []
        for i in range(getattr(config, name)):
            n = int(rng.integers(config.min_len, config.max_len + 1))
            text = "".join(config.vocabulary[j] for j in rng.integers(0, len(config.vocabulary), size=n))
            utts.append(Utterance(f"{name}-{i:05d}", text, render(text, protos, config.noise_std, rng)))
        splits[name] = utts
    return Corpus(vocab, splits, config.labeled_split, config.chain_split)


# ------------------------------------------------------------------ file I/O

def write_features(path, feats):
    feats = np.ascontiguousarray(feats, dtype="<f8")
    if feats.ndim != 2:
        raise CorpusError(f"features must be 2-D, got shape {feats.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", *feats.shape))
        fh.write(feats.tobytes())


def read_features(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise CorpusError(f"{path}: feature file too short")
    s, d = struct.unpack("<QQ", raw[:16])
    if len(raw) != 16 + 8 * s * d:
        raise CorpusError(f"{path}: header says {s}x{d} but payload has {(len(raw) - 16) // 8} values")
    return np.frombuffer(raw, dtype="<f8", offset=16).astype(np.float64).reshape(s, d)


def write_manifest(path, utterances, feature_dir="feats"):
    """Write one JSON record per utterance, sorted by id, plus feature files."""
    path = Path(path)
    (path.parent / feature_dir).mkdir(parents=True, exist_ok=True)
    lines = []
    for utt in sorted(utterances, key=lambda u: u.id):
        rel = f"{feature_dir}/{utt.id}.feat"
        write_features(path.parent / rel, utt.features)
        lines.append(json.dumps({"id": utt.id, "text": utt.text, "features": rel}, sort_keys=True))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_manifest(path, vocab: Vocabulary):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} does not exist")
    utts = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            vocab.encode(rec["text"])
        except VocabularyError as exc:
            raise VocabularyError(f"utterance {rec['id']} (line {lineno}): {exc}", exc.position) from None
        feat_path = path.parent / rec["features"]
        if not feat_path.exists():
            raise FileNotFoundError(f"utterance {rec['id']}: feature file {feat_path} is missing")
        utts.append(Utterance(rec["id"], rec["text"], read_features(feat_path)))
    return utts


def write_corpus(root, corpus: Corpus):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "vocabulary": "".join(corpus.vocab.chars),
        "labeled_split": corpus.labeled_split,
        "chain_split": corpus.chain_split,
        "splits": sorted(corpus.splits),
    }
    (root / "corpus.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    for name, utts in corpus.splits.items():
        write_manifest(root / f"{name}.jsonl", utts)


def load_corpus(root) -> Corpus:
    root = Path(root)
    meta_path = root / "corpus.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} is missing; generate the corpus first")
    meta = json.loads(meta_path.read_text())
    vocab = Vocabulary(meta["vocabulary"])
    splits = {name: load_manifest(root / f"{name}.jsonl", vocab) for name in meta["splits"]}
    return Corpus(vocab, splits, meta["labeled_split"], meta["chain_split"])


def checksum_tree(root):
    """SHA-256 of every file under ``root`` (excluding the checksum file), sorted by path."""
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "SHA256SUMS":
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out
