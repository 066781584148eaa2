"""Attention-based sequence-to-sequence speech recognizer.

One architecture serves as the non-incremental teacher, the non-incremental
baseline and the incremental (ISR) student.  The encoder is an input
projection followed by ``layers`` bidirectional LSTMs, each halving the time
axis by concatenating adjacent output pairs, so one encoder state covers
``2 ** layers`` input frames.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from . import layers as L
from . import numerics as nx
from .corpus import EOS_ID, SOS_ID, Vocabulary, VocabularyError

ROLE_LOOK_BACK, ROLE_MAIN, ROLE_LOOK_AHEAD = 0, 1, 2


@dataclass(frozen=True)
class RecognizerConfig:
    feature_dim: int = 8
    vocab_size: int = 9
    layers: int = 3
    input_dim: int = 32
    enc_hidden: int = 32
    emb_dim: int = 16
    dec_hidden: int = 64
    att_dim: int = 32
    # width of the filter over the previous attention row; 0 disables it
    attention_history: int = 3

    @property
    def subsampling(self):
        return 2 ** self.layers

    @property
    def memory_dim(self):
        return 4 * self.enc_hidden

    def to_dict(self):
        return asdict(self)


@dataclass
class DecoderState:
    """Recurrent decoder state.

    LSTM ``h``/``c``, last context vector, last token, and the last attention
    row (``None`` at the start of an utterance or window).
    """

    h: nx.Tensor
    c: nx.Tensor
    context: nx.Tensor
    prev: int
    weights: nx.Tensor | None = None

    def snapshot(self):
        w = None if self.weights is None else self.weights.detach()
        return DecoderState(self.h.detach(), self.c.detach(), self.context.detach(), self.prev, w)

    def new_window(self):
        """Same recurrent state, attention history cleared for a fresh memory."""
        return DecoderState(self.h, self.c, self.context, self.prev, None)

    def with_prev(self, token):
        return DecoderState(self.h, self.c, self.context, int(token), self.weights)


@dataclass
class DecodeResult:
    tokens: list
    attention: np.ndarray
    log_probs: np.ndarray
    truncated: bool
    state: DecoderState


def param_shapes(cfg: RecognizerConfig):
    shapes = {
        "in/w": (cfg.feature_dim, cfg.input_dim),
        "in/b": (cfg.input_dim,),
        "in/role": (3, cfg.input_dim),
        "dec/emb": (cfg.vocab_size, cfg.emb_dim),
        "out/w": (cfg.dec_hidden + cfg.memory_dim, cfg.vocab_size),
        "out/b": (cfg.vocab_size,),
    }
    d_in = cfg.input_dim
    for layer in range(cfg.layers):
        shapes.update(L.bilstm_shapes(f"enc{layer}", d_in, cfg.enc_hidden))
        d_in = 4 * cfg.enc_hidden
    shapes.update(L.cell_shapes("dec", cfg.emb_dim + cfg.memory_dim, cfg.dec_hidden))
    shapes.update(L.attention_shapes("att", cfg.dec_hidden, cfg.memory_dim, cfg.att_dim, cfg.attention_history))
    return shapes


def pad_to_multiple(features, k):
    """Right-pad with copies of the last frame so the length divides by ``k``."""
    S = features.shape[0]
    extra = (-S) % k
    if extra == 0:
        return features
    return np.concatenate([features, np.repeat(features[-1:], extra, axis=0)], axis=0)


class Recognizer:
    def __init__(self, config: RecognizerConfig, params: dict):
        missing = set(param_shapes(config)) - set(params)
        if missing:
            raise KeyError(f"recognizer parameters missing: {sorted(missing)}")
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: RecognizerConfig, rng):
        return cls(config, nx.init_uniform(param_shapes(config), rng))

    def with_params(self, params):
        return Recognizer(self.config, params)

    def tensors(self, p=None):
        return p if p is not None else nx.constants(self.params)

    # ------------------------------------------------------------- encoder

    def encode(self, features, roles=None, p=None):
        """Encoder states, one per ``2 ** layers`` frames (after last-frame padding).

        ``roles`` optionally tags each frame as look-back / main / look-ahead
        context; untagged frames are main.
        """
        p = self.tensors(p)
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError(f"encode needs a non-empty (frames, dim) array, got shape {features.shape}")
        if features.shape[1] != self.config.feature_dim:
            raise nx.ShapeError(f"feature dim {features.shape[1]} != configured {self.config.feature_dim}")
        k = self.config.subsampling
        S = features.shape[0]
        x = pad_to_multiple(features, k)
        if roles is None:
            roles = np.full(S, ROLE_MAIN)
        roles = np.asarray(roles, dtype=np.int64)
        if roles.shape[0] < x.shape[0]:
            roles = np.concatenate([roles, np.full(x.shape[0] - roles.shape[0], roles[-1])])
        h = nx.matmul(x, p["in/w"]) + p["in/b"] + nx.embedding(p["in/role"], roles)
        h = nx.lrelu(h)
        for layer in range(self.config.layers):
            h = L.bilstm(p, f"enc{layer}", h)
            T, D = h.shape
            h = nx.reshape(h, (T // 2, 2 * D))
        return h

    # ------------------------------------------------------------- decoder

    def initial_state(self):
        cfg = self.config
        return DecoderState(L.zeros(1, cfg.dec_hidden), L.zeros(1, cfg.dec_hidden), L.zeros(1, cfg.memory_dim), SOS_ID)

    def keys(self, memory, p=None):
        return L.attention_keys(self.tensors(p), "att", memory)

    def step(self, state: DecoderState, token, memory, keys, p=None):
        """Feed ``token``; return ``(logits (1, V), attention (1, M), new state)``."""
        p = self.tensors(p)
        emb = nx.embedding(p["dec/emb"], [token])
        h, c = L.cell(p, "dec", nx.concat([emb, state.context], axis=1), state.h, state.c)
        history = None
        if self.config.attention_history:
            history = state.weights if state.weights is not None else L.zeros(1, memory.shape[0])
        ctx, weights = L.attend(p, "att", h, memory, keys, history)
        logits = nx.matmul(nx.concat([h, ctx], axis=1), p["out/w"]) + p["out/b"]
        return logits, weights, DecoderState(h, c, ctx, token, weights)

    def decode_teacher_forced(self, memory, reference, state=None, p=None):
        """Score ``reference`` given its own prefix.

        Returns ``(logits (n, V), attention (n, M), final state)``.  The final
        state has consumed every reference token but the last, whose id is
        recorded as the state's previous token.
        """
        if len(reference) == 0:
            raise ValueError("teacher-forced decoding needs a non-empty reference")
        self._check_ids(reference)
        p = self.tensors(p)
        state = state or self.initial_state()
        keys = self.keys(memory, p)
        logits, atts = [], []
        inputs = [state.prev] + [int(t) for t in reference[:-1]]
        for tok in inputs:
            lg, att, state = self.step(state, tok, memory, keys, p)
            logits.append(lg)
            atts.append(att)
        state = state.with_prev(reference[-1])
        return nx.concat(logits, axis=0), nx.concat(atts, axis=0), state

    def decode_greedy(self, memory, max_len, state=None, stop_tokens=None, p=None):
        """Argmax decoding until a stop token (end-of-sentence by default) or ``max_len``."""
        if memory.shape[0] < 1:
            raise ValueError("greedy decoding needs at least one encoder state")
        stop = {EOS_ID} if stop_tokens is None else set(stop_tokens)
        p = self.tensors(p)
        state = state or self.initial_state()
        keys = self.keys(memory, p)
        tokens, atts, logps = [], [], []
        truncated = True
        for _ in range(max_len):
            lg, att, state = self.step(state, state.prev, memory, keys, p)
            row = lg.data[0]
            tok = int(np.argmax(row))
            z = row - row.max()
            logps.append(float(z[tok] - np.log(np.exp(z).sum())))
            atts.append(att.data[0])
            tokens.append(tok)
            state = state.with_prev(tok)
            if tok in stop:
                truncated = False
                break
        att = np.array(atts) if atts else np.zeros((0, memory.shape[0]))
        return DecodeResult(tokens, att, np.array(logps), truncated, state)

    def recognize(self, features, max_len=None):
        """Non-incremental greedy transcription of a whole utterance."""
        memory = self.encode(features)
        if max_len is None:
            max_len = default_max_len(features.shape[0])
        return self.decode_greedy(memory, max_len)

    def _check_ids(self, ids):
        for pos, t in enumerate(ids):
            if not 0 <= int(t) < self.config.vocab_size:
                raise VocabularyError(f"token id {t} at position {pos} is outside the vocabulary", pos)


def default_max_len(num_frames):
    return num_frames + 8


def cer(hypothesis, reference, vocab: Vocabulary | None = None):
    """Character error rate in percent: edit distance over reference length.

    When ``vocab`` is given, special tokens are removed from both sides first.
    Strings are compared character by character.
    """
    hyp, ref = _as_units(hypothesis, vocab), _as_units(reference, vocab)
    if len(ref) == 0:
        raise ValueError("CER needs a non-empty reference")
    return 100.0 * edit_distance(hyp, ref) / len(ref)


def edit_distance(a, b):
    if isinstance(a, str) or isinstance(b, str):
        table = {}
        a = [table.setdefault(ch, len(table)) for ch in a]
        b = [table.setdefault(ch, len(table)) for ch in b]
    return kernels.levenshtein(list(a), list(b))


def edit_distance_table(hypotheses, references):
    """``(len(hypotheses), len(references))`` matrix of pairwise edit distances."""
    def pack(seqs):
        seqs = [np.asarray(s, dtype=np.int64).reshape(-1) for s in seqs]
        offsets = np.concatenate([[0], np.cumsum([len(s) for s in seqs])]).astype(np.int64)
        flat = np.concatenate(seqs) if seqs else np.zeros(0, dtype=np.int64)
        return flat.astype(np.int64), offsets

    return kernels.levenshtein_table(*pack(hypotheses), *pack(references))


def corpus_cer(pairs, vocab: Vocabulary | None = None):
    """Total edits over total reference length, in percent."""
    edits = total = 0
    for hyp, ref in pairs:
        h, r = _as_units(hyp, vocab), _as_units(ref, vocab)
        edits += edit_distance(h, r)
        total += len(r)
    if total == 0:
        raise ValueError("CER needs a non-empty reference")
    return 100.0 * edits / total


def _as_units(seq, vocab):
    if isinstance(seq, str) or vocab is None:
        return seq
    return vocab.strip(seq)
