"""Independent reference computations shared by the unit and acceptance tests."""
import itertools

import numpy as np


def dp_edit_distance(a, b):
    """Textbook full-table Levenshtein distance."""
    D = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        D[i][0] = i
    for j in range(len(b) + 1):
        D[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            D[i][j] = min(D[i - 1][j] + 1, D[i][j - 1] + 1, D[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return D[-1][-1]


def all_sequences(length, alphabet):
    """Every sequence of ``length`` over ``range(alphabet)`` in lexicographic order, as rows."""
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(alphabet), repeat=length)), dtype=np.int64)


def exhaustive_distance_blocks(max_len, alphabet, prefix_len=2):
    """Yield ``(a_seqs, b_seqs, distances)`` covering every pair with lengths <= max_len.

    The table for all ``a`` sharing a prefix is grown symbol by symbol, one DP
    row per prefix, vectorized over every ``b`` of one length.
    """
    for lb in range(max_len + 1):
        B = all_sequences(lb, alphabet)
        nb = B.shape[0]
        base = np.broadcast_to(np.arange(lb + 1, dtype=np.int16), (1, nb, lb + 1)).copy()
        # short a sequences (below the prefix length) handled in one go
        rows = base
        for la in range(0, min(prefix_len, max_len) + 1):
            if la > 0:
                rows = _extend(rows, B, alphabet, la)
            yield all_sequences(la, alphabet), B, rows[:, :, lb].astype(np.int64)
        if max_len <= prefix_len:
            continue
        prefixes = all_sequences(prefix_len, alphabet)
        for p, sub in zip(prefixes, rows):
            cur = sub[None]
            for la in range(prefix_len + 1, max_len + 1):
                cur = _extend(cur, B, alphabet, la)
                tails = all_sequences(la - prefix_len, alphabet)
                A = np.concatenate([np.broadcast_to(p, (tails.shape[0], prefix_len)), tails], axis=1)
                yield A, B, cur[:, :, lb].astype(np.int64)


def _extend(rows, B, alphabet, i):
    """Rows for every one-symbol extension; children ordered (parent, symbol)."""
    n, nb, width = rows.shape
    out = np.empty((n, alphabet, nb, width), dtype=rows.dtype)
    for s in range(alphabet):
        new = out[:, s]
        new[:, :, 0] = i
        for j in range(1, width):
            sub = rows[:, :, j - 1] + (B[:, j - 1] != s)
            new[:, :, j] = np.minimum(np.minimum(rows[:, :, j] + 1, new[:, :, j - 1] + 1), sub)
    return out.reshape(n * alphabet, nb, width)


# ------------------------------------------------------- per-step loss oracles
#
# Each step's loss is recomputed from scratch: the decoder is unrolled again
# over every earlier step to rebuild the carried state, and the loss value is
# reduced with plain numpy.  The average over steps is a Python float sum.

EOS, EOB = 1, 2


def np_cross_entropy(logits, targets):
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for row, t in zip(logits, targets):
        m = row.max()
        total += -(row[t] - m - np.log(np.sum(np.exp(row - m))))
    return total / len(targets)


def np_bce(logits, targets):
    z = np.asarray(logits, dtype=np.float64).ravel()
    y = np.asarray(targets, dtype=np.float64).ravel()
    p = 1.0 / (1.0 + np.exp(-z))
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def np_feature_step(frames, stops, reference):
    ref = np.asarray(reference)
    l2 = float(np.sum((np.asarray(frames) - ref) ** 2)) / ref.shape[0]
    y = np.zeros(len(stops))
    y[-1] = 1.0
    return l2 + np_bce(stops, y)


def _scored(target):
    return target.index(EOS) + 1 if EOS in target else len(target)


def _pad(frames, r):
    extra = (-frames.shape[0]) % r
    return np.concatenate([frames, np.repeat(frames[-1:], extra, axis=0)]) if extra else frames


def isr_step_oracle(rec, features, frame_ranges, targets, block, n):
    from speechchain.alignment import isr_window

    state = rec.initial_state()
    for m in range(n + 1):
        window, roles = isr_window(features, frame_ranges[m], block, rec.config.subsampling)
        memory = rec.encode(window, roles)
        logits, _, state = rec.decode_teacher_forced(memory, targets[m], state.new_window())
    k = _scored(list(targets[n]))
    return np_cross_entropy(logits.data[:k], list(targets[n])[:k])


def isr_loss_oracle(rec, features, frame_ranges, token_ranges, tokens, block):
    targets = []
    for n, (ts, te) in enumerate(token_ranges):
        targets.append(list(tokens[ts:te]) + ([EOS] if n == len(token_ranges) - 1 else []) + [EOB])
    steps = [isr_step_oracle(rec, features, frame_ranges, targets, block, n) for n in range(len(targets))]
    return sum(steps) / len(steps)


def itts_step_oracle(syn, tokens, features, frame_ranges, token_ranges, block, n):
    from speechchain.alignment import itts_input

    r = syn.config.frames_per_step
    state = syn.initial_state()
    for m in range(n + 1):
        ctx, roles = itts_input(tokens, token_ranges[m], block)
        fs, fe = frame_ranges[m]
        ref = _pad(features[fs:fe], r)
        frames, stops, _, state = syn.synthesize_teacher_forced(syn.encode(ctx, roles), ref, state)
    return np_feature_step(frames.data, stops.data, ref)


def itts_loss_oracle(syn, tokens, features, frame_ranges, token_ranges, block):
    steps = [itts_step_oracle(syn, tokens, features, frame_ranges, token_ranges, block, n)
             for n in range(len(token_ranges))]
    return sum(steps) / len(steps)


def fold_empty(frame_ranges, counts):
    """Merge windows with no tokens: leading ones forward, later ones backward."""
    frames, toks, pos, lead = [], [], 0, None
    for (fs, fe), k in zip(frame_ranges, counts):
        if k == 0:
            if frames:
                frames[-1] = (frames[-1][0], fe)
            elif lead is None:
                lead = fs
            continue
        frames.append((fs if lead is None else lead, fe))
        lead = None
        toks.append((pos, pos + k))
        pos += k
    return frames, toks


def tf_hypothesis_oracle(isr, ex, block):
    """Best character per aligned position, window by window, rebuilt from scratch."""
    frame_ranges = list(ex.alignment.frame_ranges)
    targets = []
    for n, (ts, te) in enumerate(ex.alignment.token_ranges):
        targets.append(list(ex.tokens[ts:te]) + ([EOS] if n == ex.alignment.N - 1 else []) + [EOB])
    from speechchain.alignment import isr_window

    segs = []
    for n in range(len(targets)):
        state = isr.initial_state()
        for m in range(n + 1):
            window, roles = isr_window(ex.utt.features, frame_ranges[m], block, isr.config.subsampling)
            logits, _, state = isr.decode_teacher_forced(isr.encode(window, roles), targets[m], state.new_window())
        K = ex.alignment.token_ranges[n][1] - ex.alignment.token_ranges[n][0]
        segs.append([int(np.argmax(row[EOB + 1:])) + EOB + 1 for row in logits.data[:K]])
    return segs


def chain_isr_to_itts_oracle(isr, itts, ex, block, greedy):
    from speechchain.engine import run_stream

    if greedy:
        segs = run_stream("isr", ex.utt.features, block, recognizer=isr).token_segments
    else:
        segs = tf_hypothesis_oracle(isr, ex, block)
    hyp = [t for s in segs for t in s]
    if not hyp:
        return None
    from speechchain.alignment import window_ranges

    wins = window_ranges(ex.utt.num_frames, block)
    counts = [len(s) for s in segs] + [0] * (len(wins) - len(segs))
    frames, toks = fold_empty(wins, counts)
    return itts_loss_oracle(itts, hyp, ex.utt.features, frames, toks, block)


def chain_itts_to_isr_oracle(isr, itts, ex, block, greedy):
    from speechchain.alignment import itts_input, text_segments
    from speechchain.engine import run_stream

    if greedy:
        ranges = text_segments(len(ex.tokens), block.chars_per_segment)
        pieces = run_stream("itts", ex.tokens, block, synthesizer=itts, token_ranges=ranges).frame_segments
    else:
        merged = ex.segments
        ranges = list(merged.token_ranges)
        r = itts.config.frames_per_step
        pieces = []
        for n, ((fs, fe), rng) in enumerate(zip(merged.frame_ranges, ranges)):
            state = itts.initial_state()
            for m in range(n + 1):
                ctx, roles = itts_input(ex.tokens, ranges[m], block)
                a, b = merged.frame_ranges[m]
                out, _, _, state = itts.synthesize_teacher_forced(
                    itts.encode(ctx, roles), _pad(ex.utt.features[a:b], r), state)
            pieces.append(out.data[:fe - fs])
    synth = np.concatenate(pieces)
    bounds = np.cumsum([0] + [p.shape[0] for p in pieces])
    frame_ranges = [(int(bounds[i]), int(bounds[i + 1])) for i in range(len(pieces))]
    return isr_loss_oracle(isr, synth, frame_ranges, ranges, ex.tokens, block)
