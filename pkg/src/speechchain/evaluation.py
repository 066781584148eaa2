"""Dev/test metrics: CER for recognizers, frame L2 for synthesizers.

Natural input is the corpus itself.  Synthetic input comes from the
counterpart component run on natural input under the same regime:
recognizers read synthesized speech, synthesizers read recognized text.
Incremental synthesizer output is scored segment by segment against the
speech frames the segment stands for, so a length error in one segment
does not shift every later comparison.
"""
from __future__ import annotations

import numpy as np

from .alignment import BlockConfig, segments_from_outputs, text_segments
from .corpus import EOB_ID, Vocabulary
from .engine import run_isr, run_stream
from .recognizer import Recognizer, corpus_cer
from .synthesizer import Synthesizer, feature_loss


def asr_cer(asr: Recognizer, examples, vocab: Vocabulary, synthesizer: Synthesizer | None = None):
    """Whole-utterance CER; with ``synthesizer`` the input is its greedy output."""
    pairs = []
    for ex in examples:
        feats = ex.utt.features if synthesizer is None else synthesizer.synthesize(ex.tokens).frames
        pairs.append((asr.recognize(feats).tokens, ex.tokens))
    return corpus_cer(pairs, vocab)


def isr_cer(isr: Recognizer, examples, vocab: Vocabulary, block: BlockConfig, synthesizer: Synthesizer | None = None):
    """Streaming CER; with ``synthesizer`` ISR consumes ITTS output segment by segment."""
    pairs = []
    for ex in examples:
        if synthesizer is None:
            toks = [t for seg in run_isr(isr, ex.utt.features, block) for t in seg]
        else:
            toks = run_stream("itts_to_isr", ex.tokens, block, recognizer=isr, synthesizer=synthesizer).tokens
        pairs.append((toks, ex.tokens))
    return corpus_cer(pairs, vocab)


def tts_l2(tts: Synthesizer, examples, recognizer: Recognizer | None = None):
    """Mean whole-utterance frame L2 of greedy synthesis (shorter side edge-padded)."""
    vals = []
    for ex in examples:
        toks = ex.tokens
        if recognizer is not None:
            toks = [t for t in recognizer.recognize(ex.utt.features).tokens if t > EOB_ID]
        if not toks:
            vals.append(feature_loss(np.zeros((0, ex.utt.features.shape[1])), ex.utt.features, pad=True).l2)
            continue
        vals.append(feature_loss(tts.synthesize(toks).frames, ex.utt.features, pad=True).l2)
    return float(np.mean(vals))


def _segment_l2(pieces, features, frame_ranges):
    vals = []
    for frames, (fs, fe) in zip(pieces, frame_ranges):
        vals.append(feature_loss(frames, features[fs:fe], pad=True).l2)
    return float(np.mean(vals))


def itts_l2(itts: Synthesizer, examples, block: BlockConfig, recognizer: Recognizer | None = None):
    """Mean per-segment frame L2 of streaming synthesis.

    Natural text uses each example's teacher segments.  With ``recognizer``
    the text comes from ISR window by window; windows where ISR emitted
    nothing fold into the preceding segment, as in training.
    """
    vals = []
    for ex in examples:
        feats = ex.utt.features
        if recognizer is None:
            seg = ex.segments if ex.alignment is not None else None
            ranges = list(seg.token_ranges) if seg is not None else text_segments(len(ex.tokens), block.chars_per_segment)
            res = run_stream("itts", ex.tokens, block, synthesizer=itts, token_ranges=ranges)
            if seg is None:
                vals.append(feature_loss(res.frames, feats, pad=True).l2)
            else:
                vals.append(_segment_l2(res.frame_segments, feats, seg.frame_ranges))
            continue
        res = run_stream("isr_to_itts", feats, block, recognizer=recognizer, synthesizer=itts)
        if not res.tokens:
            vals.append(feature_loss(np.zeros((0, feats.shape[1])), feats, pad=True).l2)
            continue
        merged = segments_from_outputs(feats.shape[0], block, res.token_segments)
        pieces = [f for f in res.frame_segments if f.shape[0] > 0]
        vals.append(_segment_l2(pieces, feats, merged.frame_ranges))
    return float(np.mean(vals))
