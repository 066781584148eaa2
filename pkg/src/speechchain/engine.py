"""Streaming inference for ISR and ITTS, alone or chained.

Encoder states are recomputed for every window (context blocks overlap from
one window to the next); only the decoder's recurrent state is carried.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .alignment import (
    BlockConfig,
    compute_delays,
    isr_window,
    itts_input,
    num_windows,
    text_segments,
    window_ranges,
)
from .corpus import EOB_ID, EOS_ID, FrameSpec
from .recognizer import Recognizer, default_max_len
from .synthesizer import Synthesizer, default_max_steps

MODES = ("isr", "itts", "isr_to_itts", "itts_to_isr")


class StreamError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass
class StreamState:
    decoder: object
    origin: int = -1
    emitted: list = field(default_factory=list)
    closed: bool = False

    def advance(self, origin):
        if self.closed:
            raise StreamError("stream is closed")
        if origin <= self.origin:
            raise StreamError(f"window origin {origin} does not advance past {self.origin}")


@dataclass
class StepTrace:
    mode: str
    component: str
    n: int
    bounds: tuple
    emitted: int
    wall_ms: float
    delay_seconds: float | None = None
    delay_chars: float | None = None

    def to_record(self):
        return {
            "mode": self.mode, "component": self.component, "n": self.n, "bounds": list(self.bounds),
            "emitted": self.emitted, "wall_ms": round(self.wall_ms, 3),
            "delay_seconds": self.delay_seconds, "delay_chars": self.delay_chars,
        }


@dataclass
class StreamResult:
    tokens: list
    frames: np.ndarray | None
    traces: list
    token_segments: list = field(default_factory=list)
    frame_segments: list = field(default_factory=list)


def isr_stream(recognizer: Recognizer):
    return StreamState(recognizer.initial_state())


def itts_stream(synthesizer: Synthesizer):
    return StreamState(synthesizer.initial_state())


def isr_step(recognizer: Recognizer, state: StreamState, window, roles, origin, main_frames,
             final=False, max_tokens=15):
    """Recognize one window; returns ``(tokens, state)`` with specials removed.

    Non-final windows decode until end-of-block (or ``max_tokens``).  The
    final window flushes: it decodes until end-of-sentence, capped like a
    non-incremental decode of its main frames, and drops any end-of-block.
    """
    state.advance(origin)
    memory = recognizer.encode(window, roles)
    if final:
        res = recognizer.decode_greedy(memory, default_max_len(main_frames), state.decoder.new_window(),
                                       stop_tokens={EOS_ID})
    else:
        res = recognizer.decode_greedy(memory, max_tokens, state.decoder.new_window(),
                                       stop_tokens={EOB_ID, EOS_ID})
    tokens = [t for t in res.tokens if t > EOB_ID]
    out = StreamState(res.state, origin, state.emitted + [tokens], EOS_ID in res.tokens)
    return tokens, out


def itts_step(synthesizer: Synthesizer, state: StreamState, tokens, roles, origin, main_len, max_steps=None):
    """Synthesize one segment; returns ``(frames, state)``."""
    if main_len < 1:
        raise ValueError("ITTS step needs a non-empty main segment")
    state.advance(origin)
    memory = synthesizer.encode(tokens, roles)
    cap = default_max_steps(main_len) if max_steps is None else max_steps
    res = synthesizer.synthesize_greedy(memory, cap, state.decoder)
    if res.frames.shape[0] == 0:
        raise StreamError("synthesizer emitted no frames")
    return res.frames, StreamState(res.state, origin, state.emitted + [res.frames], False)


def run_isr(recognizer: Recognizer, features, block: BlockConfig, max_tokens=None):
    """Stream a whole utterance through ISR; returns per-window token lists."""
    features = np.asarray(features, dtype=np.float64)
    state = isr_stream(recognizer)
    cap = max_tokens or 3 * block.chars_per_block
    ranges = window_ranges(features.shape[0], block)
    segs = []
    for n, rng in enumerate(ranges):
        if state.closed:
            segs.append([])
            continue
        window, roles = isr_window(features, rng, block, recognizer.config.subsampling)
        toks, state = isr_step(recognizer, state, window, roles, rng[0], rng[1] - rng[0],
                               final=n == len(ranges) - 1, max_tokens=cap)
        segs.append(toks)
    return segs


def run_stream(mode, source, block: BlockConfig, spec: FrameSpec = FrameSpec(), recognizer=None,
               synthesizer=None, token_ranges=None, max_tokens=None, wait_for_look_ahead=True):
    """Drive a stream to completion.

    ``source`` is a feature array for ``isr``/``isr_to_itts`` and a token id
    list for ``itts``/``itts_to_isr``.  ``token_ranges`` optionally fixes the
    text segmentation; otherwise fixed-size character segments are used.

    In chained modes the consumer handles the producer's segments in order,
    one step per segment, never running ahead of its input.  With
    ``wait_for_look_ahead`` a consumer step starts as soon as the producer
    has delivered the segment and the consumer's look-ahead context, so it
    trails the producer by a fixed number of steps.  Without it, every
    producer step is consumed before the next one starts and the consumer's
    look-ahead is edge-padded (ISR) or empty (ITTS).
    """
    if mode not in MODES:
        raise ValueError(f"unknown stream mode {mode!r}; expected one of {MODES}")
    if mode in ("isr", "isr_to_itts", "itts_to_isr") and recognizer is None:
        raise ValueError(f"mode {mode} needs a recognizer")
    if mode in ("itts", "isr_to_itts", "itts_to_isr") and synthesizer is None:
        raise ValueError(f"mode {mode} needs a synthesizer")
    isr_delay, _ = compute_delays(block, spec)
    cap = max_tokens or 3 * block.chars_per_block
    la_chars = block.look_ahead_blocks * block.chars_per_block
    la_frames = block.look_ahead_blocks * block.frames_per_block
    traces = []

    def timed(fn):
        t0 = time.perf_counter()
        out = fn()
        return out, 1000.0 * (time.perf_counter() - t0)

    if mode in ("isr", "isr_to_itts"):
        features = np.asarray(source, dtype=np.float64)
        ranges = window_ranges(features.shape[0], block)
        r_state = isr_stream(recognizer)
        chained = mode == "isr_to_itts"
        s_state = itts_stream(synthesizer) if chained else None
        tokens, tok_segs, frame_segs, pending = [], [], [], []

        def consume(done):
            nonlocal s_state
            while pending:
                n, start, end = pending[0]
                if wait_for_look_ahead and not done and len(tokens) < end + la_chars:
                    return
                pending.pop(0)
                ctx, roles_t = itts_input(tokens, (start, end), block, look_ahead=wait_for_look_ahead)
                try:
                    (frames, s_state), ms = timed(lambda: itts_step(synthesizer, s_state, ctx, roles_t, start, end - start))
                except (StreamError, ValueError) as exc:
                    raise StreamError(f"consumer failed: {exc}", n) from exc
                frame_segs[n] = frames
                ahead = int(np.sum(roles_t == 2))
                traces.append(StepTrace(mode, "itts", n, (start, end), frames.shape[0], ms,
                                        delay_chars=float(end - start + ahead)))

        for n, rng in enumerate(ranges):
            if r_state.closed:
                tok_segs.append([])
                if chained:
                    frame_segs.append(np.zeros((0, features.shape[1])))
                continue
            window, roles = isr_window(features, rng, block, recognizer.config.subsampling)
            (toks, r_state), ms = timed(lambda: isr_step(recognizer, r_state, window, roles, rng[0],
                                                         rng[1] - rng[0], n == len(ranges) - 1, cap))
            traces.append(StepTrace(mode, "isr", n, rng, len(toks), ms, delay_seconds=isr_delay))
            start = len(tokens)
            tokens.extend(toks)
            tok_segs.append(toks)
            if not chained:
                continue
            frame_segs.append(np.zeros((0, features.shape[1])))
            if toks:
                pending.append((n, start, len(tokens)))
            consume(done=r_state.closed or n == len(ranges) - 1)
        if not chained:
            return StreamResult(tokens, None, traces, tok_segs, [])
        consume(done=True)
        return StreamResult(tokens, np.concatenate(frame_segs, axis=0), traces, tok_segs, frame_segs)

    tokens = [int(t) for t in source]
    ranges = token_ranges or text_segments(len(tokens), block.chars_per_segment)
    chained = mode == "itts_to_isr"
    s_state = itts_stream(synthesizer)
    r_state = isr_stream(recognizer) if chained else None
    frame_segs, tok_segs, out_tokens, pending = [], [], [], []
    produced = np.zeros((0, synthesizer.config.feature_dim))

    def consume(done):
        nonlocal r_state
        while pending:
            n, start, end = pending[0]
            if wait_for_look_ahead and not done and produced.shape[0] < end + la_frames:
                return
            pending.pop(0)
            if r_state.closed:
                tok_segs.append([])
                continue
            src = produced if wait_for_look_ahead else produced[:end]
            window, roles = isr_window(src, (start, end), block, recognizer.config.subsampling)
            try:
                (toks, r_state), ms = timed(lambda: isr_step(recognizer, r_state, window, roles, start,
                                                             end - start, n == len(ranges) - 1, cap))
            except (StreamError, ValueError) as exc:
                raise StreamError(f"consumer failed: {exc}", n) from exc
            out_tokens.extend(toks)
            tok_segs.append(toks)
            traces.append(StepTrace(mode, "isr", n, (start, end), len(toks), ms, delay_seconds=isr_delay))

    for n, rng in enumerate(ranges):
        ctx, roles_t = itts_input(tokens, rng, block, look_ahead=True)
        (frames, s_state), ms = timed(lambda: itts_step(synthesizer, s_state, ctx, roles_t, rng[0], rng[1] - rng[0]))
        frame_segs.append(frames)
        ahead = min(la_chars, len(tokens) - rng[1])
        traces.append(StepTrace(mode, "itts", n, rng, frames.shape[0], ms, delay_chars=float(rng[1] - rng[0] + ahead)))
        if not chained:
            continue
        start = produced.shape[0]
        produced = np.concatenate([produced, frames], axis=0)
        pending.append((n, start, produced.shape[0]))
        consume(done=n == len(ranges) - 1)
    return StreamResult(out_tokens if chained else [], np.concatenate(frame_segs, axis=0), traces, tok_segs, frame_segs)


def write_traces(path, traces):
    with open(path, "w", encoding="utf-8") as fh:
        for tr in traces:
            fh.write(json.dumps(tr.to_record(), sort_keys=True) + "\n")


__all__ = [
    "MODES", "StreamError", "StreamState", "StepTrace", "StreamResult", "isr_stream", "itts_stream",
    "isr_step", "itts_step", "run_isr", "run_stream", "write_traces", "num_windows",
]
