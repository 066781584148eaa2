"""Training losses for the four model guises and the two chain directions.

Every function takes parameter tensors ``p`` (leaves when gradients are
wanted, constants otherwise) and returns graph nodes.
"""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .alignment import (
    BlockConfig,
    SegmentAlignment,
    build_isr_targets,
    isr_window,
    itts_input,
    scored_length,
)
from .corpus import EOS_ID
from .recognizer import Recognizer
from .synthesizer import Synthesizer, frame_l2, pad_frames, stop_targets


def diagonal_guide(rows, cols, width):
    """Penalty weights that are small near the normalized diagonal."""
    t = (np.arange(rows)[:, None] + 0.5) / rows
    j = (np.arange(cols)[None, :] + 0.5) / cols
    return 1.0 - np.exp(-((j - t) ** 2) / (2.0 * width ** 2))


def centered_guide(centers, cols, sigma):
    """One row per entry of ``centers`` (column units); ``None`` rows are unpenalized."""
    out = np.zeros((len(centers), cols))
    j = np.arange(cols) + 0.5
    for i, c in enumerate(centers):
        if c is not None:
            out[i] = 1.0 - np.exp(-((j - c) ** 2) / (2.0 * sigma ** 2))
    return out


def attention_penalty(attention, weights, scale):
    """``scale * sum(attention * weights) / rows``."""
    return nx.mul(nx.sum_(nx.mul(attention, weights)), scale / attention.shape[0])


def mean(losses):
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return nx.mul(total, 1.0 / len(losses))


# ----------------------------------------------------------- non-incremental

def asr_loss(rec: Recognizer, p, features, tokens, guide_weight=0.0, guide_width=0.2):
    memory = rec.encode(features, p=p)
    target = list(tokens) + [EOS_ID]
    logits, att, _ = rec.decode_teacher_forced(memory, target, p=p)
    loss = nx.cross_entropy(logits, target)
    if guide_weight:
        loss = loss + attention_penalty(att, diagonal_guide(*att.shape, guide_width), guide_weight)
    return loss


def tts_loss(syn: Synthesizer, p, tokens, features, guide_weight=0.0, guide_width=0.2):
    memory = syn.encode(tokens, p=p)
    ref = pad_frames(np.asarray(features, dtype=np.float64), syn.config.frames_per_step)
    frames, stops, att, _ = syn.synthesize_teacher_forced(memory, ref, p=p)
    loss = frame_l2(frames, ref) + nx.bce_with_logits(stops, stop_targets(stops.shape[0]))
    if guide_weight:
        loss = loss + attention_penalty(att, diagonal_guide(*att.shape, guide_width), guide_weight)
    return loss


# ------------------------------------------------------------------ ISR

def isr_step_losses(rec: Recognizer, p, features, frame_ranges, targets, block: BlockConfig,
                    causal=False, guides=None, guide_weight=0.0):
    """Per-window cross-entropy with the decoder state carried across windows.

    ``causal`` limits each window to frames up to the end of its main part,
    so look-ahead is edge-padded (the situation when the frames arrive one
    segment at a time from a synthesizer).  Positions after end-of-sentence
    are not scored.
    """
    features = np.asarray(features, dtype=np.float64)
    state = rec.initial_state()
    losses = []
    for n, (rng, target) in enumerate(zip(frame_ranges, targets)):
        source = features[:rng[1]] if causal else features
        window, roles = isr_window(source, rng, block, rec.config.subsampling)
        memory = rec.encode(window, roles, p=p)
        logits, att, state = rec.decode_teacher_forced(memory, target, state.new_window(), p=p)
        k = scored_length(target)
        if k < len(target):
            logits, att = logits[:k], att[:k]
        loss = nx.cross_entropy(logits, list(target[:k]))
        if guides is not None and guide_weight:
            loss = loss + attention_penalty(att, guides[n][:k], guide_weight)
        losses.append(loss)
    return losses


def isr_guides(teacher_states, alignment: SegmentAlignment, block: BlockConfig, sigma=1.0):
    """Attention-transfer prior for ISR windows.

    Each main token is pulled toward the teacher's chosen encoder state,
    expressed in the window's own coordinates; end markers are free.
    """
    mb, lb, la = block.main_blocks, block.look_back_blocks, block.look_ahead_blocks
    guides = []
    for n, (ts, te) in enumerate(alignment.token_ranges):
        main_states = -(-(alignment.frame_ranges[n][1] - alignment.frame_ranges[n][0]) // block.frames_per_block)
        cols = lb + main_states + la
        lo = n * mb - lb
        centers = []
        for t in range(ts, te):
            local = int(teacher_states[t]) - lo
            local = min(max(local, lb), lb + main_states - 1)
            centers.append(local + 0.5)
        centers += [None, None, None]
        guides.append(centered_guide(centers, cols, sigma))
    return guides


def isr_loss(rec, p, features, tokens, alignment, block, teacher_states=None, guide_weight=0.0):
    targets = build_isr_targets(alignment, tokens)
    guides = isr_guides(teacher_states, alignment, block) if teacher_states is not None and guide_weight else None
    return mean(isr_step_losses(rec, p, features, alignment.frame_ranges, targets, block,
                                guides=guides, guide_weight=guide_weight))


# ------------------------------------------------------------------ ITTS

def itts_step_losses(syn: Synthesizer, p, tokens, features, segments: SegmentAlignment, block: BlockConfig,
                     look_ahead=True, guide_weight=0.0, guide_width=0.2):
    """Per-segment feature loss (frame L2 plus stop BCE), state carried."""
    features = np.asarray(features, dtype=np.float64)
    r = syn.config.frames_per_step
    state = syn.initial_state()
    losses = []
    for (fs, fe), (ts, te) in zip(segments.frame_ranges, segments.token_ranges):
        ctx, roles = itts_input(tokens, (ts, te), block, look_ahead=look_ahead)
        ref = pad_frames(features[fs:fe], r)
        memory = syn.encode(ctx, roles, p=p)
        frames, stops, att, state = syn.synthesize_teacher_forced(memory, ref, state, p=p)
        loss = frame_l2(frames, ref) + nx.bce_with_logits(stops, stop_targets(stops.shape[0]))
        if guide_weight:
            K, steps = te - ts, stops.shape[0]
            offset = int(np.sum(roles == 0))
            centers = [offset + (k + 0.5) / steps * K for k in range(steps)]
            weights = centered_guide(centers, len(ctx), max(guide_width * K, 0.5))
            loss = loss + attention_penalty(att, weights, guide_weight)
        losses.append(loss)
    return losses


def itts_loss(syn, p, tokens, features, segments, block, guide_weight=0.0, guide_width=0.2):
    return mean(itts_step_losses(syn, p, tokens, features, segments, block,
                                 guide_weight=guide_weight, guide_width=guide_width))
