"""Attention transfer: teacher attention to segment alignments and windows.

A non-incremental teacher's attention row for each token picks one encoder
state (argmax, earliest on ties).  Encoder states are grouped into fixed
windows of ``main_blocks`` blocks, so every window covers W frames and owns a
variable number K_n of tokens.  ISR learns each window's tokens followed by
an end-of-block marker.  ITTS uses the same alignment after folding windows
with no tokens into a neighbour.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import EOB_ID, EOS_ID, FrameSpec, block_duration
from .recognizer import ROLE_LOOK_AHEAD, ROLE_LOOK_BACK, ROLE_MAIN, pad_to_multiple

log = logging.getLogger(__name__)


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class BlockConfig:
    """Window geometry.  Defaults are the reference system's settings:
    8-frame blocks, 4 main, 2 look-back, 4 look-ahead, 5-character blocks
    averaging 2 main character blocks per step."""

    frames_per_block: int = 8
    main_blocks: int = 4
    look_back_blocks: int = 2
    look_ahead_blocks: int = 4
    chars_per_block: int = 5
    # nominal average ITTS main size in character blocks, used for delay arithmetic
    main_char_blocks: float = 2.0

    def __post_init__(self):
        if self.frames_per_block < 1 or self.frames_per_block & (self.frames_per_block - 1):
            raise AlignmentError(f"frames_per_block must be a power of two, got {self.frames_per_block}")
        if self.main_blocks < 1 or self.chars_per_block < 1:
            raise AlignmentError("main_blocks and chars_per_block must be >= 1")
        if self.look_back_blocks < 0 or self.look_ahead_blocks < 0:
            raise AlignmentError("context block counts must be >= 0")
        if self.main_char_blocks <= 0:
            raise AlignmentError("main_char_blocks must be > 0")

    @property
    def window_frames(self):
        """W: frames in one window's main part."""
        return self.main_blocks * self.frames_per_block

    @property
    def layers(self):
        return int(math.log2(self.frames_per_block))

    @property
    def chars_per_segment(self):
        """Main segment size for text-only input (no alignment available)."""
        return max(1, round(self.main_char_blocks * self.chars_per_block))

    def whole_utterance(self):
        """Same block size with one window spanning any utterance and no context."""
        return BlockConfig(self.frames_per_block, 1 << 40, 0, 0, self.chars_per_block, float(1 << 40))


@dataclass(frozen=True)
class SegmentAlignment:
    """Frame ranges paired with token ranges, both half-open and in order."""

    num_frames: int
    num_tokens: int
    window: int
    frame_ranges: tuple
    token_ranges: tuple
    repairs: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.frame_ranges) != len(self.token_ranges):
            raise AlignmentError("frame and token range counts differ")
        f_pos = t_pos = 0
        for (fs, fe), (ts, te) in zip(self.frame_ranges, self.token_ranges):
            if fs != f_pos or fe <= fs or ts != t_pos or te < ts:
                raise AlignmentError(f"ranges do not tile: frames {self.frame_ranges}, tokens {self.token_ranges}")
            f_pos, t_pos = fe, te
        if f_pos != self.num_frames or t_pos != self.num_tokens:
            raise AlignmentError("ranges do not cover every frame and token")

    @property
    def N(self):
        return len(self.frame_ranges)

    @property
    def K(self):
        return [te - ts for ts, te in self.token_ranges]

    @property
    def widths(self):
        return [fe - fs for fs, fe in self.frame_ranges]

    def to_record(self, utt_id):
        return {
            "id": utt_id,
            "segments": [
                {"frames": list(f), "tokens": list(t)} for f, t in zip(self.frame_ranges, self.token_ranges)
            ],
        }


def num_windows(S, config: BlockConfig):
    return max(1, math.ceil(S / config.window_frames))


def window_ranges(S, config: BlockConfig):
    W = config.window_frames
    return [(n * W, min(S, (n + 1) * W)) for n in range(num_windows(S, config))]


def token_windows(attention, config: BlockConfig, S):
    """Per-token window index from argmax attention, before monotonic repair."""
    states = np.argmax(np.asarray(attention), axis=1)
    return np.minimum(states // config.main_blocks, num_windows(S, config) - 1)


def extract_alignment(attention, config: BlockConfig, S, T):
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 2 or attention.shape[0] != T:
        raise AlignmentError(f"attention has {attention.shape[0] if attention.ndim == 2 else '?'} rows, expected T={T}")
    expected = math.ceil(S / config.frames_per_block)
    if attention.shape[1] != expected:
        raise AlignmentError(f"attention has {attention.shape[1]} columns, expected ceil(S/block)={expected}")
    N = num_windows(S, config)
    assign = token_windows(attention, config, S) if T else np.zeros(0, dtype=np.int64)
    repairs = 0
    for t in range(1, T):
        if assign[t] < assign[t - 1]:
            assign[t] = assign[t - 1]
            repairs += 1
    if repairs:
        log.debug("monotonicity repair applied to %d of %d tokens", repairs, T)
    counts = np.bincount(assign, minlength=N)[:N] if T else np.zeros(N, dtype=np.int64)
    bounds = np.concatenate([[0], np.cumsum(counts)]).astype(int)
    tokens = tuple((int(bounds[n]), int(bounds[n + 1])) for n in range(N))
    return SegmentAlignment(S, T, config.window_frames, tuple(window_ranges(S, config)), tokens, repairs)


def build_isr_targets(alignment: SegmentAlignment, tokens):
    """Per-window targets: the window's tokens then end-of-block; the last
    window gets end-of-sentence before its end-of-block."""
    targets = []
    for n, (ts, te) in enumerate(alignment.token_ranges):
        seg = [int(t) for t in tokens[ts:te]]
        if n == alignment.N - 1:
            seg.append(EOS_ID)
        seg.append(EOB_ID)
        targets.append(seg)
    return targets


def scored_length(target):
    """Number of target positions scored in training: nothing after end-of-sentence."""
    target = list(target)
    return target.index(EOS_ID) + 1 if EOS_ID in target else len(target)


def build_itts_segments(alignment: SegmentAlignment):
    """Fold token-less windows into a neighbour so every segment has K >= 1.

    Leading empty windows join the first non-empty one; any later empty
    window joins the nearest preceding non-empty segment.
    """
    if alignment.num_tokens == 0:
        raise AlignmentError("cannot build ITTS segments for an utterance with no tokens")
    frames, toks = [], []
    pending_start = None
    for (fs, fe), (ts, te) in zip(alignment.frame_ranges, alignment.token_ranges):
        if te == ts:
            if frames:
                frames[-1] = (frames[-1][0], fe)
            elif pending_start is None:
                pending_start = fs
            continue
        start = fs if pending_start is None else pending_start
        pending_start = None
        frames.append((start, fe))
        toks.append((ts, te))
    return SegmentAlignment(alignment.num_frames, alignment.num_tokens, alignment.window,
                            tuple(frames), tuple(toks), alignment.repairs)


def segments_from_outputs(S, config: BlockConfig, token_segments):
    """Pair each speech window with the tokens emitted for it, then fold
    windows that emitted nothing.  Missing trailing windows count as empty."""
    ranges = window_ranges(S, config)
    counts = [len(s) for s in token_segments] + [0] * (len(ranges) - len(token_segments))
    if len(counts) != len(ranges):
        raise AlignmentError(f"{len(token_segments)} token segments for {len(ranges)} windows")
    bounds = np.concatenate([[0], np.cumsum(counts)]).astype(int)
    toks = tuple((int(bounds[i]), int(bounds[i + 1])) for i in range(len(counts)))
    return build_itts_segments(SegmentAlignment(S, int(bounds[-1]), config.window_frames, tuple(ranges), toks))


def realized_main_char_blocks(alignments, config: BlockConfig):
    """Mean ITTS main-segment size in character blocks over merged alignments."""
    sizes = [k for a in alignments for k in a.K]
    return float(np.mean(sizes)) / config.chars_per_block if sizes else 0.0


def compute_delays(config: BlockConfig, spec: FrameSpec, main_char_blocks=None):
    """``(isr_delay_seconds, itts_delay_characters)``.

    ISR waits for its main and look-ahead blocks (look-back frames are already
    in the past); ITTS waits for its main and look-ahead character blocks.
    """
    frames = (config.main_blocks + config.look_ahead_blocks) * config.frames_per_block
    avg = config.main_char_blocks if main_char_blocks is None else main_char_blocks
    return block_duration(spec, frames), (avg + config.look_ahead_blocks) * config.chars_per_block


# ------------------------------------------------------------------ windows

def isr_window(features, frame_range, config: BlockConfig, subsampling):
    """Recognizer input for one step: look-back + main + look-ahead frames.

    Missing look-back frames are zeros, the main part is last-frame padded to
    a multiple of ``subsampling``, and missing look-ahead frames repeat the
    last available frame.  Returns ``(frames, roles)``.
    """
    features = np.asarray(features, dtype=np.float64)
    S, d = features.shape
    start, end = frame_range
    lb = config.look_back_blocks * config.frames_per_block
    la = config.look_ahead_blocks * config.frames_per_block
    back = features[max(0, start - lb):start]
    if back.shape[0] < lb:
        back = np.concatenate([np.zeros((lb - back.shape[0], d)), back], axis=0)
    main = pad_to_multiple(features[start:end], subsampling)
    ahead = features[end:end + la]
    if ahead.shape[0] < la:
        fill = features[-1:] if S else np.zeros((1, d))
        ahead = np.concatenate([ahead, np.repeat(fill, la - ahead.shape[0], axis=0)], axis=0)
    frames = np.concatenate([back, main, ahead], axis=0)
    roles = np.concatenate([
        np.full(lb, ROLE_LOOK_BACK), np.full(main.shape[0], ROLE_MAIN), np.full(la, ROLE_LOOK_AHEAD)
    ]).astype(np.int64)
    return frames, roles


def itts_input(tokens, token_range, config: BlockConfig, look_ahead=True):
    """Synthesizer input for one step: context tokens around the main segment.

    Returns ``(tokens, roles)``; there is no padding, edge segments simply
    have less context.
    """
    start, end = token_range
    if end <= start:
        raise AlignmentError("ITTS main segment is empty")
    lb = config.look_back_blocks * config.chars_per_block
    la = config.look_ahead_blocks * config.chars_per_block if look_ahead else 0
    back = list(tokens[max(0, start - lb):start])
    ahead = list(tokens[end:end + la])
    seq = back + list(tokens[start:end]) + ahead
    roles = [ROLE_LOOK_BACK] * len(back) + [ROLE_MAIN] * (end - start) + [ROLE_LOOK_AHEAD] * len(ahead)
    return [int(t) for t in seq], np.asarray(roles, dtype=np.int64)


def text_segments(T, chars_per_segment):
    """Fixed-size token ranges for text-only input."""
    if T <= 0:
        raise AlignmentError("cannot segment an empty token sequence")
    return [(s, min(T, s + chars_per_segment)) for s in range(0, T, chars_per_segment)]


def write_alignments(path, items):
    """Line-delimited alignment export; ``items`` yields ``(utt_id, alignment)``."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, al in items:
            fh.write(json.dumps(al.to_record(utt_id), sort_keys=True) + "\n")
