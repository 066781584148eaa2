"""NumPy reference implementations of the recurrent and edit-distance kernels.

Gate layout everywhere is ``[input, forget, cell, output]`` along the last axis.
"""
import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell_forward(z, c_prev):
    """Apply gate nonlinearities to pre-activations ``z`` (B, 4H).

    Returns ``(h, c, acts)`` where ``acts`` holds the activated gates and is
    what :func:`lstm_cell_backward` needs.
    """
    H = c_prev.shape[-1]
    acts = np.empty_like(z)
    acts[:, :2 * H] = _sigmoid(z[:, :2 * H])
    acts[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
    acts[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
    i, f, g, o = acts[:, :H], acts[:, H:2 * H], acts[:, 2 * H:3 * H], acts[:, 3 * H:]
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, acts


def lstm_cell_backward(dh, dc, c_prev, c, acts):
    """Gradients w.r.t. the pre-activations and the previous cell state."""
    H = c.shape[-1]
    i, f, g, o = acts[:, :H], acts[:, H:2 * H], acts[:, 2 * H:3 * H], acts[:, 3 * H:]
    tc = np.tanh(c)
    dc_total = dc + dh * o * (1.0 - tc * tc)
    dz = np.empty_like(acts)
    dz[:, :H] = dc_total * g * i * (1.0 - i)
    dz[:, H:2 * H] = dc_total * c_prev * f * (1.0 - f)
    dz[:, 2 * H:3 * H] = dc_total * i * (1.0 - g * g)
    dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
    return dz, dc_total * f


def lstm_seq_forward(pre, w_hh, reverse):
    """Run an LSTM over ``pre`` (T, 4H), the input projections with bias added.

    Initial hidden and cell states are zero.  Returns ``(hs, cs, acts)``, each
    indexed by time position (not processing order).
    """
    T, G = pre.shape
    H = G // 4
    hs = np.zeros((T, H))
    cs = np.zeros((T, H))
    acts = np.zeros((T, G))
    h = np.zeros((1, H))
    c = np.zeros((1, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = pre[t:t + 1] + h @ w_hh
        h, c, a = lstm_cell_forward(z, c)
        hs[t] = h[0]
        cs[t] = c[0]
        acts[t] = a[0]
    return hs, cs, acts


def lstm_seq_backward(dhs, w_hh, hs, cs, acts, reverse):
    """Backpropagate through :func:`lstm_seq_forward`.

    Returns ``(dpre, dw_hh)``.
    """
    T, H = hs.shape
    dpre = np.zeros((T, 4 * H))
    dw_hh = np.zeros_like(w_hh)
    dh_next = np.zeros((1, H))
    dc_next = np.zeros((1, H))
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        prev = t + 1 if reverse else t - 1
        if 0 <= prev < T:
            h_prev = hs[prev:prev + 1]
            c_prev = cs[prev:prev + 1]
        else:
            h_prev = np.zeros((1, H))
            c_prev = np.zeros((1, H))
        dh = dhs[t:t + 1] + dh_next
        dz, dc_next = lstm_cell_backward(dh, dc_next, c_prev, cs[t:t + 1], acts[t:t + 1])
        dpre[t] = dz[0]
        dw_hh += h_prev.T @ dz
        dh_next = dz @ w_hh.T
    return dpre, dw_hh


def levenshtein(a, b):
    """Edit distance between two integer sequences (unit costs)."""
    a = [int(x) for x in a]
    b = [int(x) for x in b]
    m = len(b)
    prev = list(range(m + 1))
    for i, ai in enumerate(a, 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ai != b[j - 1]))
        prev = cur
    return prev[m]


def levenshtein_table(a_flat, a_offsets, b_flat, b_offsets):
    """Distances for every (a, b) pair of two packed sequence sets."""
    a_seqs = [a_flat[a_offsets[i]:a_offsets[i + 1]] for i in range(len(a_offsets) - 1)]
    b_seqs = [b_flat[b_offsets[j]:b_offsets[j + 1]] for j in range(len(b_offsets) - 1)]
    return np.array([[levenshtein(a, b) for b in b_seqs] for a in a_seqs], dtype=np.int64).reshape(
        len(a_seqs), len(b_seqs))
