"""Two-stage training: independent supervised training, then the closed loop.

Stage 1 trains the recognizer and the synthesizer separately on paired
data.  In incremental mode a trained non-incremental recognizer (the
teacher) supplies the segment alignments for ISR and ITTS.

Stage 2 unrolls the loop both ways.  ISR-to-ITTS: ISR turns each speech
segment into tokens, ITTS rebuilds the segment from them, and only ITTS is
updated.  ITTS-to-ISR: ITTS turns each text segment into frames, ISR
transcribes them, and only ISR is updated.  Each direction's loss is the
mean of its per-step losses.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .alignment import (
    BlockConfig,
    SegmentAlignment,
    build_isr_targets,
    build_itts_segments,
    extract_alignment,
    isr_window,
    itts_input,
    realized_main_char_blocks,
    segments_from_outputs,
    text_segments,
)
from .corpus import EOB_ID, EOS_ID, Utterance
from .engine import itts_step, itts_stream, run_isr
from .losses import (
    asr_loss,
    isr_loss,
    isr_step_losses,
    itts_loss,
    itts_step_losses,
    mean,
    tts_loss,
)
from .recognizer import Recognizer
from .synthesizer import Synthesizer, pad_frames

log = logging.getLogger(__name__)

TEACHER_FORCING, GREEDY = "teacher_forcing", "greedy"
NONINCREMENTAL, INCREMENTAL = "nonincremental", "incremental"


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 1
    lr: float = 3e-3
    clip_norm: float = 5.0
    patience: int = 10
    # weight and width of the diagonal attention prior used in supervised training
    guide_weight: float = 1.0
    guide_width: float = 0.2
    divergence_factor: float = 100.0
    intermediate: str = TEACHER_FORCING
    # run one supervised batch per component after every chain batch
    supervised_interleave: bool = False
    seed: int = 0

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("need epochs >= 0, batch_size >= 1, patience >= 1")
        if not self.lr > 0 or self.divergence_factor <= 1:
            raise ConfigError("need lr > 0 and divergence_factor > 1")
        if self.intermediate not in (TEACHER_FORCING, GREEDY):
            raise ConfigError(f"intermediate must be {TEACHER_FORCING!r} or {GREEDY!r}, got {self.intermediate!r}")


@dataclass
class TrainRecord:
    stage: int
    epoch: int
    component: str
    loss: float
    dev_loss: float
    dev_cer: float | None = None
    dev_feature_loss: float | None = None
    itts_avg_main_blocks: float | None = None
    degenerate_steps: int = 0

    def to_dict(self):
        return asdict(self)


# ------------------------------------------------------------------- data

@dataclass
class Example:
    """An utterance with its token ids and, when a teacher is available,
    its teacher alignment and per-token teacher encoder states."""

    utt: Utterance
    tokens: list
    alignment: SegmentAlignment | None = None
    teacher_states: np.ndarray | None = None

    @property
    def segments(self):
        return build_itts_segments(self.alignment)


def teacher_alignment(teacher: Recognizer, features, tokens, block: BlockConfig):
    """Teacher-forced attention of the teacher on ``tokens``; returns
    ``(alignment, argmax state per token)``."""
    if teacher.config.subsampling != block.frames_per_block:
        raise ConfigError(f"teacher subsampling {teacher.config.subsampling} != frames_per_block {block.frames_per_block}")
    memory = teacher.encode(features)
    _, att, _ = teacher.decode_teacher_forced(memory, list(tokens) + [EOS_ID])
    rows = att.data[:len(tokens)]
    return extract_alignment(rows, block, features.shape[0], len(tokens)), np.argmax(rows, axis=1)


def make_examples(utts, vocab, teacher=None, block=None):
    out = []
    for u in utts:
        toks = vocab.encode(u.text)
        if teacher is None:
            out.append(Example(u, toks))
        else:
            al, states = teacher_alignment(teacher, u.features, toks, block)
            out.append(Example(u, toks, al, states))
    return out


def epoch_order(n, seed, epoch, salt=0):
    return np.random.default_rng([seed, salt, epoch]).permutation(n)


# ------------------------------------------------------------- chain steps

@dataclass
class ChainOutcome:
    """Result of one unrolled direction on one utterance."""

    loss: nx.Tensor | None
    step_losses: list
    degenerate: int
    hypothesis: list = field(default_factory=list)


def _best_char(row):
    return int(np.argmax(row[EOB_ID + 1:])) + EOB_ID + 1


def isr_hypotheses(isr: Recognizer, ex: Example, block: BlockConfig, mode):
    """Per-window ISR output on natural speech.

    Teacher forcing scores the reference segment targets and takes the best
    character at each aligned position; greedy streams the windows.
    """
    if mode == GREEDY:
        return run_isr(isr, ex.utt.features, block)
    if ex.alignment is None:
        raise ConfigError("teacher-forced chain steps need teacher alignments")
    targets = build_isr_targets(ex.alignment, ex.tokens)
    state = isr.initial_state()
    segs = []
    for rng, target, K in zip(ex.alignment.frame_ranges, targets, ex.alignment.K):
        window, roles = isr_window(ex.utt.features, rng, block, isr.config.subsampling)
        memory = isr.encode(window, roles)
        logits, _, state = isr.decode_teacher_forced(memory, target, state.new_window())
        segs.append([_best_char(logits.data[i]) for i in range(K)])
    return segs


def chain_isr_to_itts(isr: Recognizer, itts: Synthesizer, p_itts, ex: Example, block: BlockConfig, mode):
    """Unrolled ISR-to-ITTS on one utterance; gradient reaches only ``p_itts``.

    Windows where ISR emits nothing are folded into a neighbouring segment and
    counted as degenerate, so the average runs over steps that produced text.
    """
    segs = isr_hypotheses(isr, ex, block, mode)
    hyp = [t for s in segs for t in s]
    empty = sum(1 for s in segs if not s)
    if not hyp:
        log.warning("ISR emitted no tokens for %s; step skipped", ex.utt.id)
        return ChainOutcome(None, [], len(segs))
    merged = segments_from_outputs(ex.utt.num_frames, block, segs)
    losses = itts_step_losses(itts, p_itts, hyp, ex.utt.features, merged, block, look_ahead=True)
    return ChainOutcome(mean(losses), losses, empty, hyp)


def itts_outputs(itts: Synthesizer, ex: Example, block: BlockConfig, mode):
    """Per-segment ITTS output frames for the utterance text and the token ranges used."""
    if mode == GREEDY:
        ranges = text_segments(len(ex.tokens), block.chars_per_segment)
        state = itts_stream(itts)
        out = []
        for rng in ranges:
            ctx, roles = itts_input(ex.tokens, rng, block)
            frames, state = itts_step(itts, state, ctx, roles, rng[0], rng[1] - rng[0])
            out.append(frames)
        return out, ranges
    if ex.alignment is None:
        raise ConfigError("teacher-forced chain steps need teacher alignments")
    segments = ex.segments
    r = itts.config.frames_per_step
    state = itts.initial_state()
    out = []
    for (fs, fe), (ts, te) in zip(segments.frame_ranges, segments.token_ranges):
        ctx, roles = itts_input(ex.tokens, (ts, te), block)
        memory = itts.encode(ctx, roles)
        frames, _, _, state = itts.synthesize_teacher_forced(memory, pad_frames(ex.utt.features[fs:fe], r), state)
        out.append(frames.data[:fe - fs])
    return out, list(segments.token_ranges)


def chain_itts_to_isr(isr: Recognizer, itts: Synthesizer, p_isr, ex: Example, block: BlockConfig, mode):
    """Unrolled ITTS-to-ISR on one utterance; gradient reaches only ``p_isr``.

    Each ISR window reads the synthesized segment plus real look-back and
    look-ahead frames from neighbouring synthesized segments.
    """
    frames, ranges = itts_outputs(itts, ex, block, mode)
    lengths = [f.shape[0] for f in frames]
    degenerate = sum(1 for n in lengths if n == 0)
    keep = [i for i, n in enumerate(lengths) if n > 0]
    if not keep:
        return ChainOutcome(None, [], degenerate)
    if degenerate:
        log.warning("ITTS emitted no frames for %d segment(s) of %s; skipped", degenerate, ex.utt.id)
        ranges = _fold_empty_frames(ranges, lengths)
        frames = [frames[i] for i in keep]
    synth = np.concatenate(frames, axis=0)
    bounds = np.concatenate([[0], np.cumsum([f.shape[0] for f in frames])]).astype(int)
    frame_ranges = tuple((int(bounds[i]), int(bounds[i + 1])) for i in range(len(frames)))
    al = SegmentAlignment(synth.shape[0], len(ex.tokens), block.window_frames, frame_ranges, tuple(ranges))
    targets = build_isr_targets(al, ex.tokens)
    losses = isr_step_losses(isr, p_isr, synth, frame_ranges, targets, block, causal=False)
    return ChainOutcome(mean(losses), losses, degenerate)


def _fold_empty_frames(ranges, lengths):
    """Hand the tokens of segments that produced no frames to the next kept segment."""
    out, carry = [], None
    for (ts, te), n in zip(ranges, lengths):
        start = ts if carry is None else carry
        if n == 0:
            carry = start
            continue
        carry = None
        out.append((start, te))
    if carry is not None:
        out[-1] = (out[-1][0], ranges[-1][1])
    return out


# ------------------------------------------------- basic (whole-utterance) chain

def basic_asr_to_tts(asr: Recognizer, tts: Synthesizer, p_tts, features, tokens, mode):
    """Non-incremental ASR-to-TTS loss; ``None`` when ASR produced no text."""
    if mode == GREEDY:
        hyp = [t for t in asr.recognize(features).tokens if t > EOB_ID]
    else:
        memory = asr.encode(features)
        logits, _, _ = asr.decode_teacher_forced(memory, list(tokens) + [EOS_ID])
        hyp = [_best_char(logits.data[i]) for i in range(len(tokens))]
    if not hyp:
        return None
    return tts_loss(tts, p_tts, hyp, features)


def basic_tts_to_asr(asr: Recognizer, tts: Synthesizer, p_asr, features, tokens, mode):
    if mode == GREEDY:
        synth = tts.synthesize(tokens).frames
    else:
        features = np.asarray(features, dtype=np.float64)
        memory = tts.encode(tokens)
        frames, _, _, _ = tts.synthesize_teacher_forced(memory, pad_frames(features, tts.config.frames_per_step))
        synth = frames.data[:features.shape[0]]
    return asr_loss(asr, p_asr, synth, tokens)


# --------------------------------------------------------------- run state

class _Slot:
    """One trainable component: current params, optimizer, early-stopping memory."""

    def __init__(self, name, params, cfg: TrainConfig):
        self.name = name
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self.opt = nx.Adam(lr=cfg.lr, clip_norm=cfg.clip_norm)
        self.best = dict(self.params)
        self.best_dev = math.inf
        self.bad_epochs = 0
        self.initial_loss = None
        self.done = False

    def update(self, grads_sum, count):
        if count == 0:
            return
        grads = {k: g / count for k, g in grads_sum.items()}
        self.params = self.opt.step(self.params, grads)

    def observe(self, dev_loss, patience):
        if dev_loss < self.best_dev:
            self.best_dev = dev_loss
            self.best = dict(self.params)
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= patience:
                self.done = True
                self.params = dict(self.best)

    def check_finite(self, loss, checkpoint):
        if not math.isfinite(loss):
            raise DivergenceError(f"{self.name}: non-finite loss", checkpoint)

    def check_batch(self, loss, checkpoint):
        """Reject a non-finite batch; the first batch, seen before any update, sets the baseline."""
        self.check_finite(loss, checkpoint)
        if self.initial_loss is None:
            self.initial_loss = max(loss, 1e-12)

    def check_epoch(self, loss, factor, checkpoint):
        """Compare an epoch's mean training loss with the pre-training baseline."""
        self.check_finite(loss, checkpoint)
        if self.initial_loss is not None and loss > factor * self.initial_loss:
            raise DivergenceError(
                f"{self.name}: loss {loss:.4g} exceeds {factor:g}x initial {self.initial_loss:.4g}", checkpoint)

    def tensors(self):
        out = {}
        for k, v in self.params.items():
            out[f"{self.name}/param/{k}"] = v
        for k, v in self.best.items():
            out[f"{self.name}/best/{k}"] = v
        for k, v in self.opt.state_arrays().items():
            out[f"{self.name}/{k}"] = v
        return out

    def meta(self):
        return {"best_dev": None if math.isinf(self.best_dev) else self.best_dev, "bad_epochs": self.bad_epochs,
                "initial_loss": self.initial_loss, "done": self.done, "adam_step": self.opt.step_count}

    def restore(self, tensors, meta):
        pre = f"{self.name}/"
        self.params = {k[len(pre + "param/"):]: v for k, v in tensors.items() if k.startswith(pre + "param/")}
        self.best = {k[len(pre + "best/"):]: v for k, v in tensors.items() if k.startswith(pre + "best/")}
        adam = {k[len(pre):]: v for k, v in tensors.items() if k.startswith(pre + "adam.")}
        self.opt.load_state_arrays(adam, meta["adam_step"])
        self.best_dev = math.inf if meta["best_dev"] is None else meta["best_dev"]
        self.bad_epochs = meta["bad_epochs"]
        self.initial_loss = meta["initial_loss"]
        self.done = meta["done"]


def _save_state(path, slots, epoch, records, seed):
    if path is None:
        return
    tensors = {}
    for s in slots:
        tensors.update(s.tensors())
    meta = {"epoch": epoch, "slots": {s.name: s.meta() for s in slots}, "records": [r.to_dict() for r in records]}
    nx.save_checkpoint(path, tensors, seed, epoch, meta)


def _load_state(path, slots):
    tensors, _, _, meta = nx.load_checkpoint(path)
    for s in slots:
        s.restore(tensors, meta["slots"][s.name])
    return meta["epoch"], [TrainRecord(**r) for r in meta["records"]]


def _accumulate(acc, leaf_map):
    grads = nx.collect_grads(leaf_map)
    if acc is None:
        return grads
    for k, g in grads.items():
        acc[k] = acc[k] + g
    return acc


def _batches(order, size):
    return [order[i:i + size] for i in range(0, len(order), size)]


# ---------------------------------------------------------------- stage 1

@dataclass
class Stage1Result:
    recognizer: dict
    synthesizer: dict
    records: list


def train_component(name, params, loss_fn, examples, dev_loss_fn, cfg: TrainConfig, metrics_fn=None,
                    state_path=None, stop_after=None, stage=1, salt=0):
    """Generic supervised loop with early stopping and resumable state.

    ``loss_fn(p, example)`` returns a graph node or ``None`` to skip.
    ``stop_after`` ends the run after that many epochs in this call (the
    state file lets a later call carry on from there).
    """
    cfg.validate()
    slot = _Slot(name, params, cfg)
    start, records = 0, []
    if state_path is not None and Path(state_path).exists():
        start, records = _load_state(state_path, [slot])
    if cfg.epochs and start == 0 and not records:
        slot.observe(dev_loss_fn(slot.params), cfg.patience)
    ran = 0
    for epoch in range(start, cfg.epochs):
        if slot.done or (stop_after is not None and ran >= stop_after):
            break
        total, count = 0.0, 0
        for batch in _batches(epoch_order(len(examples), cfg.seed, epoch, salt), cfg.batch_size):
            acc, used, batch_loss = None, 0, 0.0
            for i in batch:
                p = nx.leaves(slot.params)
                loss = loss_fn(p, examples[i])
                if loss is None:
                    continue
                nx.backward(loss)
                acc = _accumulate(acc, p)
                used += 1
                batch_loss += float(loss.data)
            if used:
                slot.check_batch(batch_loss / used, state_path)
                slot.update(acc, used)
                total += batch_loss
                count += used
        if count:
            slot.check_epoch(total / count, cfg.divergence_factor, state_path)
        dev = dev_loss_fn(slot.params)
        slot.observe(dev, cfg.patience)
        rec = TrainRecord(stage, epoch, name, total / max(count, 1), dev)
        if metrics_fn is not None:
            for k, v in metrics_fn(slot.params).items():
                setattr(rec, k, v)
        records.append(rec)
        log.info("%s epoch %d loss %.4f dev %.4f", name, epoch, rec.loss, dev)
        ran += 1
        _save_state(state_path, [slot], epoch + 1, records, cfg.seed)
    finished = slot.done or start + ran >= cfg.epochs or cfg.epochs == 0
    return (slot.best if finished else slot.params), records, finished


def _mean_over(fn, examples):
    vals = [float(v.data) for v in (fn(ex) for ex in examples) if v is not None]
    return float(np.mean(vals)) if vals else math.inf


def train_asr(rec: Recognizer, train, dev, cfg: TrainConfig, name="asr", state_path=None, stop_after=None,
              metrics_fn=None):
    def loss_fn(p, ex):
        return asr_loss(rec, p, ex.utt.features, ex.tokens, cfg.guide_weight, cfg.guide_width)

    def dev_fn(params):
        r = rec.with_params(params)
        return _mean_over(lambda ex: asr_loss(r, None, ex.utt.features, ex.tokens), dev)

    return train_component(name, rec.params, loss_fn, train, dev_fn, cfg, metrics_fn, state_path, stop_after, salt=1)


def train_tts(syn: Synthesizer, train, dev, cfg: TrainConfig, name="tts", state_path=None, stop_after=None,
              metrics_fn=None):
    def loss_fn(p, ex):
        return tts_loss(syn, p, ex.tokens, ex.utt.features, cfg.guide_weight, cfg.guide_width)

    def dev_fn(params):
        s = syn.with_params(params)
        return _mean_over(lambda ex: tts_loss(s, None, ex.tokens, ex.utt.features), dev)

    return train_component(name, syn.params, loss_fn, train, dev_fn, cfg, metrics_fn, state_path, stop_after, salt=2)


def train_isr(rec: Recognizer, train, dev, block: BlockConfig, cfg: TrainConfig, name="isr", state_path=None,
              stop_after=None, metrics_fn=None):
    def loss_fn(p, ex):
        return isr_loss(rec, p, ex.utt.features, ex.tokens, ex.alignment, block, ex.teacher_states, cfg.guide_weight)

    def dev_fn(params):
        r = rec.with_params(params)
        return _mean_over(lambda ex: isr_loss(r, None, ex.utt.features, ex.tokens, ex.alignment, block), dev)

    return train_component(name, rec.params, loss_fn, train, dev_fn, cfg, metrics_fn, state_path, stop_after, salt=3)


def train_itts(syn: Synthesizer, train, dev, block: BlockConfig, cfg: TrainConfig, name="itts", state_path=None,
               stop_after=None, metrics_fn=None):
    def loss_fn(p, ex):
        return itts_loss(syn, p, ex.tokens, ex.utt.features, ex.segments, block, cfg.guide_weight, cfg.guide_width)

    def dev_fn(params):
        s = syn.with_params(params)
        return _mean_over(lambda ex: itts_loss(s, None, ex.tokens, ex.utt.features, ex.segments, block), dev)

    return train_component(name, syn.params, loss_fn, train, dev_fn, cfg, metrics_fn, state_path, stop_after, salt=4)


# ---------------------------------------------------------------- stage 2

@dataclass
class Stage2Result:
    recognizer: dict
    synthesizer: dict
    records: list
    finished: bool = True


def split_views(examples, mode):
    """Examples for the ISR-to-ITTS and ITTS-to-ISR directions.

    Teacher forcing uses every labeled chain utterance in both directions.
    Greedy uses disjoint halves: even positions contribute speech only,
    odd positions text only.
    """
    if mode == TEACHER_FORCING:
        return list(examples), list(examples)
    return list(examples[0::2]), list(examples[1::2])


def train_stage2(isr: Recognizer, itts: Synthesizer, chain, dev, block: BlockConfig, cfg: TrainConfig,
                 incremental=True, labeled=None, state_path=None, stop_after=None, metrics_fn=None,
                 on_update=None):
    """Closed-loop training with strict per-batch alternation of directions.

    In every batch ISR-to-ITTS runs first and updates the synthesizer, then
    ITTS-to-ISR runs with the updated synthesizer and updates the
    recognizer.  ``incremental=False`` gives the basic whole-utterance
    chain.  ``on_update(direction, isr_params, itts_params)`` is called after
    each optimizer step (used to audit parameter isolation).
    """
    cfg.validate()
    mode = cfg.intermediate
    speech_view, text_view = split_views(chain, mode)
    if not speech_view or not text_view:
        raise ConfigError("chain split is too small to feed both directions")
    s_isr, s_itts = _Slot("isr", isr.params, cfg), _Slot("itts", itts.params, cfg)
    slots = [s_isr, s_itts]

    def isr_dev(params):
        r = isr.with_params(params)
        if incremental:
            return _mean_over(lambda ex: isr_loss(r, None, ex.utt.features, ex.tokens, ex.alignment, block), dev)
        return _mean_over(lambda ex: asr_loss(r, None, ex.utt.features, ex.tokens), dev)

    def itts_dev(params):
        s = itts.with_params(params)
        if incremental:
            return _mean_over(lambda ex: itts_loss(s, None, ex.tokens, ex.utt.features, ex.segments, block), dev)
        return _mean_over(lambda ex: tts_loss(s, None, ex.tokens, ex.utt.features), dev)

    def a_to_b(p_itts, ex):
        r, s = isr.with_params(s_isr.params), itts.with_params(s_itts.params)
        if incremental:
            return chain_isr_to_itts(r, s, p_itts, ex, block, mode)
        loss = basic_asr_to_tts(r, s, p_itts, ex.utt.features, ex.tokens, mode)
        return ChainOutcome(loss, [loss] if loss is not None else [], 0 if loss is not None else 1)

    def b_to_a(p_isr, ex):
        r, s = isr.with_params(s_isr.params), itts.with_params(s_itts.params)
        if incremental:
            return chain_itts_to_isr(r, s, p_isr, ex, block, mode)
        loss = basic_tts_to_asr(r, s, p_isr, ex.utt.features, ex.tokens, mode)
        return ChainOutcome(loss, [loss], 0)

    start, records = 0, []
    if state_path is not None and Path(state_path).exists():
        start, records = _load_state(state_path, slots)
    if cfg.epochs and start == 0 and not records:
        s_isr.observe(isr_dev(s_isr.params), cfg.patience)
        s_itts.observe(itts_dev(s_itts.params), cfg.patience)
    realized = None
    if incremental and mode == TEACHER_FORCING and chain[0].alignment is not None:
        realized = realized_main_char_blocks([ex.segments for ex in chain], block)
    ran = 0
    for epoch in range(start, cfg.epochs):
        if (s_isr.done and s_itts.done) or (stop_after is not None and ran >= stop_after):
            break
        sums = {"isr": [0.0, 0, 0], "itts": [0.0, 0, 0]}
        a_batches = _batches(epoch_order(len(speech_view), cfg.seed, epoch, 5), cfg.batch_size)
        b_batches = _batches(epoch_order(len(text_view), cfg.seed, epoch, 6), cfg.batch_size)
        sup_order = epoch_order(len(labeled), cfg.seed, epoch, 7) if labeled and cfg.supervised_interleave else None
        for b in range(max(len(a_batches), len(b_batches))):
            if b < len(a_batches) and not s_itts.done:
                _chain_update(s_itts, a_to_b, [speech_view[i] for i in a_batches[b]], sums["itts"], cfg, state_path)
                if on_update:
                    on_update("isr_to_itts", s_isr.params, s_itts.params)
            if b < len(b_batches) and not s_isr.done:
                _chain_update(s_isr, b_to_a, [text_view[i] for i in b_batches[b]], sums["isr"], cfg, state_path)
                if on_update:
                    on_update("itts_to_isr", s_isr.params, s_itts.params)
            if sup_order is not None:
                ex = labeled[sup_order[b % len(sup_order)]]
                _supervised_update(isr, itts, s_isr, s_itts, ex, block, incremental, cfg)
        for slot, name in ((s_isr, "isr"), (s_itts, "itts")):
            if sums[name][1]:
                slot.check_epoch(sums[name][0] / sums[name][1], cfg.divergence_factor, state_path)
        dev_isr, dev_itts = isr_dev(s_isr.params), itts_dev(s_itts.params)
        if not s_isr.done:
            s_isr.observe(dev_isr, cfg.patience)
        if not s_itts.done:
            s_itts.observe(dev_itts, cfg.patience)
        metrics = metrics_fn(s_isr.params, s_itts.params) if metrics_fn else {}
        for name, dev_loss in (("isr", dev_isr), ("itts", dev_itts)):
            total, count, degenerate = sums[name]
            rec = TrainRecord(2, epoch, name, total / max(count, 1), dev_loss, degenerate_steps=degenerate,
                              itts_avg_main_blocks=realized if name == "itts" else None)
            for k, v in metrics.get(name, {}).items():
                setattr(rec, k, v)
            records.append(rec)
        log.info("stage2 epoch %d isr %.4f/%.4f itts %.4f/%.4f", epoch, records[-2].loss, dev_isr,
                 records[-1].loss, dev_itts)
        ran += 1
        _save_state(state_path, slots, epoch + 1, records, cfg.seed)
    finished = (s_isr.done and s_itts.done) or start + ran >= cfg.epochs or cfg.epochs == 0
    if not finished:
        return Stage2Result(s_isr.params, s_itts.params, records, False)
    return Stage2Result(s_isr.best, s_itts.best, records, True)


def _chain_update(slot, direction, batch, sums, cfg, state_path):
    acc, used, batch_loss = None, 0, 0.0
    for ex in batch:
        p = nx.leaves(slot.params)
        out = direction(p, ex)
        sums[2] += out.degenerate
        if out.loss is None:
            continue
        nx.backward(out.loss)
        acc = _accumulate(acc, p)
        used += 1
        batch_loss += float(out.loss.data)
    if used:
        slot.check_batch(batch_loss / used, state_path)
        slot.update(acc, used)
        sums[0] += batch_loss
        sums[1] += used


def _supervised_update(isr, itts, s_isr, s_itts, ex, block, incremental, cfg):
    p = nx.leaves(s_isr.params)
    if incremental:
        loss = isr_loss(isr, p, ex.utt.features, ex.tokens, ex.alignment, block, ex.teacher_states, cfg.guide_weight)
    else:
        loss = asr_loss(isr, p, ex.utt.features, ex.tokens, cfg.guide_weight, cfg.guide_width)
    nx.backward(loss)
    s_isr.update(nx.collect_grads(p), 1)
    p = nx.leaves(s_itts.params)
    if incremental:
        loss = itts_loss(itts, p, ex.tokens, ex.utt.features, ex.segments, block, cfg.guide_weight, cfg.guide_width)
    else:
        loss = tts_loss(itts, p, ex.tokens, ex.utt.features, cfg.guide_weight, cfg.guide_width)
    nx.backward(loss)
    s_itts.update(nx.collect_grads(p), 1)


# --------------------------------------------------------------- records

def write_records(path_jsonl, path_csv, records):
    with open(path_jsonl, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    names = [f.name for f in fields(TrainRecord)]
    with open(path_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for r in records:
            w.writerow(r.to_dict())
