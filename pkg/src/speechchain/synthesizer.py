"""Attention-based text-to-feature synthesizer emitting ``r`` frames per step.

The text encoder is an embedding, a leaky-ReLU projection and a
bidirectional LSTM.  The decoder has a leaky-ReLU prenet on the previous
frame, two stacked LSTM cells, additive attention, a frame projection of
``r * feature_dim`` outputs and a stop-flag logit.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import layers as L
from . import numerics as nx
from .corpus import VocabularyError
from .recognizer import ROLE_MAIN


@dataclass(frozen=True)
class SynthesizerConfig:
    feature_dim: int = 8
    vocab_size: int = 9
    frames_per_step: int = 4
    emb_dim: int = 16
    enc_hidden: int = 32
    prenet_dim: int = 32
    dec_hidden: int = 64
    att_dim: int = 32
    stop_threshold: float = 0.5
    # width of a fixed conditioning vector appended to the first decoder cell's
    # input; 0 disables it (single-speaker data)
    speaker_dim: int = 0

    @property
    def memory_dim(self):
        return 2 * self.enc_hidden

    def to_dict(self):
        return asdict(self)


@dataclass
class SynthState:
    h1: nx.Tensor
    c1: nx.Tensor
    h2: nx.Tensor
    c2: nx.Tensor
    context: nx.Tensor
    prev_frame: np.ndarray

    def snapshot(self):
        return SynthState(self.h1.detach(), self.c1.detach(), self.h2.detach(), self.c2.detach(),
                          self.context.detach(), self.prev_frame.copy())


@dataclass
class SynthesisResult:
    frames: np.ndarray
    stop_probs: np.ndarray
    attention: np.ndarray
    truncated: bool
    state: SynthState


class FeatureLoss(NamedTuple):
    l2: float
    stop: float

    @property
    def total(self):
        return self.l2 + self.stop


def param_shapes(cfg: SynthesizerConfig):
    r, d, M = cfg.frames_per_step, cfg.feature_dim, cfg.memory_dim
    shapes = {
        "txt/emb": (cfg.vocab_size, cfg.emb_dim),
        "txt/role": (3, cfg.emb_dim),
        "txt/pre/w": (cfg.emb_dim, cfg.emb_dim),
        "txt/pre/b": (cfg.emb_dim,),
        "dec/pre/w": (d, cfg.prenet_dim),
        "dec/pre/b": (cfg.prenet_dim,),
        "out/w": (cfg.dec_hidden + M, r * d),
        "out/b": (r * d,),
        "stop/w": (cfg.dec_hidden + M, 1),
        "stop/b": (1,),
    }
    shapes.update(L.bilstm_shapes("txt/enc", cfg.emb_dim, cfg.enc_hidden))
    shapes.update(L.cell_shapes("dec1", cfg.prenet_dim + M + cfg.speaker_dim, cfg.dec_hidden))
    shapes.update(L.cell_shapes("dec2", cfg.dec_hidden, cfg.dec_hidden))
    shapes.update(L.attention_shapes("att", cfg.dec_hidden, M, cfg.att_dim))
    return shapes


def pad_frames(frames, r):
    extra = (-frames.shape[0]) % r
    if extra == 0:
        return frames
    return np.concatenate([frames, np.repeat(frames[-1:], extra, axis=0)], axis=0)


class Synthesizer:
    def __init__(self, config: SynthesizerConfig, params: dict):
        missing = set(param_shapes(config)) - set(params)
        if missing:
            raise KeyError(f"synthesizer parameters missing: {sorted(missing)}")
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: SynthesizerConfig, rng):
        return cls(config, nx.init_uniform(param_shapes(config), rng))

    def with_params(self, params):
        return Synthesizer(self.config, params)

    def tensors(self, p=None):
        return p if p is not None else nx.constants(self.params)

    def encode(self, tokens, roles=None, p=None):
        """Encoder memory (K, 2 * enc_hidden) for a token sequence."""
        p = self.tensors(p)
        if len(tokens) == 0:
            raise ValueError("synthesis needs a non-empty token sequence")
        for pos, t in enumerate(tokens):
            if not 0 <= int(t) < self.config.vocab_size:
                raise VocabularyError(f"token id {t} at position {pos} is outside the vocabulary", pos)
        if roles is None:
            roles = np.full(len(tokens), ROLE_MAIN)
        x = nx.embedding(p["txt/emb"], tokens) + nx.embedding(p["txt/role"], roles)
        x = nx.lrelu(nx.matmul(x, p["txt/pre/w"]) + p["txt/pre/b"])
        return L.bilstm(p, "txt/enc", x)

    def initial_state(self):
        cfg = self.config
        z = L.zeros
        return SynthState(z(1, cfg.dec_hidden), z(1, cfg.dec_hidden), z(1, cfg.dec_hidden),
                          z(1, cfg.dec_hidden), z(1, cfg.memory_dim), np.zeros((1, cfg.feature_dim)))

    def keys(self, memory, p=None):
        return L.attention_keys(self.tensors(p), "att", memory)

    def step(self, state: SynthState, memory, keys, p=None, speaker=None):
        """One decoder step: ``(frames (1, r*d), stop logit (1, 1), attention (1, K), state)``.

        The returned state's ``prev_frame`` is still the input frame; callers
        set it to whatever frame should feed the next step.
        """
        p = self.tensors(p)
        pre = nx.lrelu(nx.matmul(state.prev_frame, p["dec/pre/w"]) + p["dec/pre/b"])
        parts = [pre, state.context]
        if self.config.speaker_dim:
            vec = np.zeros((1, self.config.speaker_dim)) if speaker is None else np.reshape(speaker, (1, -1))
            parts.append(nx.Tensor(vec))
        h1, c1 = L.cell(p, "dec1", nx.concat(parts, axis=1), state.h1, state.c1)
        h2, c2 = L.cell(p, "dec2", h1, state.h2, state.c2)
        ctx, weights = L.attend(p, "att", h2, memory, keys)
        out = nx.concat([h2, ctx], axis=1)
        frames = nx.matmul(out, p["out/w"]) + p["out/b"]
        stop = nx.matmul(out, p["stop/w"]) + p["stop/b"]
        return frames, stop, weights, SynthState(h1, c1, h2, c2, ctx, state.prev_frame)

    def synthesize_teacher_forced(self, memory, reference_frames, state=None, p=None):
        """Predict ``reference_frames`` group by group, feeding ground-truth frames.

        Returns ``(frames (F, d) tensor, stop logits (F/r, 1) tensor,
        attention (F/r, K) tensor, final state)``.
        """
        cfg = self.config
        ref = np.asarray(reference_frames, dtype=np.float64)
        if ref.ndim != 2 or ref.shape[1] != cfg.feature_dim:
            raise nx.ShapeError(f"reference frames of shape {ref.shape} do not match feature_dim {cfg.feature_dim}")
        r = cfg.frames_per_step
        if ref.shape[0] == 0 or ref.shape[0] % r:
            raise nx.ShapeError(f"reference length {ref.shape[0]} is not a positive multiple of r={r}")
        p = self.tensors(p)
        state = state or self.initial_state()
        keys = self.keys(memory, p)
        frames, stops, atts = [], [], []
        for k in range(ref.shape[0] // r):
            fr, st, att, state = self.step(state, memory, keys, p)
            state.prev_frame = ref[(k + 1) * r - 1:(k + 1) * r]
            frames.append(fr)
            stops.append(st)
            atts.append(att)
        out = nx.reshape(nx.concat(frames, axis=0), (ref.shape[0], cfg.feature_dim))
        return out, nx.concat(stops, axis=0), nx.concat(atts, axis=0), state

    def synthesize_greedy(self, memory, max_steps, state=None, p=None):
        cfg = self.config
        r, d = cfg.frames_per_step, cfg.feature_dim
        p = self.tensors(p)
        state = state or self.initial_state()
        keys = self.keys(memory, p)
        frames, probs, atts = [], [], []
        truncated = True
        for _ in range(max_steps):
            fr, st, att, state = self.step(state, memory, keys, p)
            group = fr.data.reshape(r, d)
            frames.append(group)
            prob = float(0.5 * (1.0 + np.tanh(0.5 * st.data[0, 0])))
            probs.append(prob)
            atts.append(att.data[0])
            state.prev_frame = group[-1:].copy()
            if prob > cfg.stop_threshold:
                truncated = False
                break
        out = np.concatenate(frames, axis=0) if frames else np.zeros((0, d))
        att = np.array(atts) if atts else np.zeros((0, memory.shape[0]))
        return SynthesisResult(out, np.array(probs), att, truncated, state)

    def synthesize(self, tokens, max_steps=None):
        """Non-incremental greedy synthesis of a whole token sequence."""
        memory = self.encode(tokens)
        if max_steps is None:
            max_steps = default_max_steps(len(tokens))
        return self.synthesize_greedy(memory, max_steps)


def default_max_steps(num_tokens):
    return 4 * num_tokens + 8


def stop_targets(num_steps):
    y = np.zeros((num_steps, 1))
    y[-1, 0] = 1.0
    return y


def frame_l2(predicted, reference):
    """Mean over frames of the squared Euclidean distance, as a graph node."""
    return nx.mul(nx.squared_error(predicted, reference), 1.0 / reference.shape[0])


def pad_to_match(a, b):
    """Pad the shorter of two frame arrays with copies of its last frame."""
    n = max(a.shape[0], b.shape[0])

    def grow(x):
        if x.shape[0] == n:
            return x
        if x.shape[0] == 0:
            return np.zeros((n, x.shape[1]))
        return np.concatenate([x, np.repeat(x[-1:], n - x.shape[0], axis=0)], axis=0)

    return grow(a), grow(b)


def feature_loss(predicted, reference, stop_probs=None, pad=False):
    """L2 component (mean per-frame squared distance) and stop-flag BCE.

    ``pad`` applies the greedy-evaluation rule of padding the shorter sequence
    with copies of its last frame; otherwise shapes must match exactly.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if pad:
        predicted, reference = pad_to_match(predicted, reference)
    if predicted.shape != reference.shape:
        raise nx.ShapeError(f"feature_loss: predicted {predicted.shape} vs reference {reference.shape}")
    if reference.shape[0] == 0:
        raise ValueError("feature_loss needs at least one frame")
    diff = predicted - reference
    l2 = float((diff * diff).sum() / reference.shape[0])
    stop = 0.0
    if stop_probs is not None and len(stop_probs):
        p = np.clip(np.asarray(stop_probs, dtype=np.float64).reshape(-1), 1e-12, 1 - 1e-12)
        y = stop_targets(len(p)).reshape(-1)
        stop = float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())
    return FeatureLoss(l2, stop)
