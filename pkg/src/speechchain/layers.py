"""Building blocks shared by the recognizer and the synthesizer."""
from __future__ import annotations

import numpy as np

from . import numerics as nx


def bilstm(p, prefix, x):
    """Bidirectional LSTM over rows of ``x``; forward and backward outputs concatenated."""
    fw = nx.lstm_sequence(x, p[f"{prefix}/fw/wi"], p[f"{prefix}/fw/wh"], p[f"{prefix}/fw/b"])
    bw = nx.lstm_sequence(x, p[f"{prefix}/bw/wi"], p[f"{prefix}/bw/wh"], p[f"{prefix}/bw/b"], reverse=True)
    return nx.concat([fw, bw], axis=1)


def bilstm_shapes(prefix, d_in, hidden):
    shapes = {}
    for direction in ("fw", "bw"):
        shapes[f"{prefix}/{direction}/wi"] = (d_in, 4 * hidden)
        shapes[f"{prefix}/{direction}/wh"] = (hidden, 4 * hidden)
        shapes[f"{prefix}/{direction}/b"] = (4 * hidden,)
    return shapes


def cell(p, prefix, x, h, c):
    """One decoder LSTM step; returns ``(h', c')``."""
    hc = nx.lstm_cell(x, h, c, p[f"{prefix}/wi"], p[f"{prefix}/wh"], p[f"{prefix}/b"])
    H = h.shape[-1]
    return hc[:, :H], hc[:, H:]


def cell_shapes(prefix, d_in, hidden):
    return {f"{prefix}/wi": (d_in, 4 * hidden), f"{prefix}/wh": (hidden, 4 * hidden), f"{prefix}/b": (4 * hidden,)}


def attention_keys(p, prefix, memory):
    return nx.matmul(memory, p[f"{prefix}/wk"]) + p[f"{prefix}/bk"]


def attend(p, prefix, query, memory, keys, history=None):
    """Additive (MLP-scored) attention of a (1, H) query over ``memory`` rows.

    ``history`` is the previous step's (1, M) weight row; when given, a
    learned filter over its neighbourhood enters the score so the alignment
    can advance from where it was.  Returns ``(context (1, C), weights (1, M))``.
    """
    q = nx.matmul(query, p[f"{prefix}/wq"])
    energy = keys + q
    if history is not None:
        M = memory.shape[0]
        u = p[f"{prefix}/u"]
        width = u.shape[0]
        windows = nx.reshape(nx.matmul(history, _shift_bank(M, width)), (M, width))
        energy = energy + nx.matmul(windows, u)
    scores = nx.matmul(nx.tanh(energy), p[f"{prefix}/v"])
    weights = nx.softmax(nx.reshape(scores, (1, scores.shape[0])))
    return nx.matmul(weights, memory), weights


_BANKS = {}


def _shift_bank(M, width):
    """Constant (M, M * width) matrix: row vector @ bank, reshaped (M, width),
    lists each position's neighbourhood ``[j - width//2, ..., j + width//2]``."""
    key = (M, width)
    if key not in _BANKS:
        bank = np.zeros((M, M * width))
        half = width // 2
        for j in range(M):
            for k in range(width):
                src = j + k - half
                if 0 <= src < M:
                    bank[src, j * width + k] = 1.0
        _BANKS[key] = bank
    return _BANKS[key]


def attention_shapes(prefix, d_query, d_memory, d_att, history=0):
    shapes = {
        f"{prefix}/wq": (d_query, d_att),
        f"{prefix}/wk": (d_memory, d_att),
        f"{prefix}/bk": (d_att,),
        f"{prefix}/v": (d_att, 1),
    }
    if history:
        shapes[f"{prefix}/u"] = (history, d_att)
    return shapes


def zeros(*shape):
    return nx.Tensor(np.zeros(shape))
