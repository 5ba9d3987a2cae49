"""Hot numeric kernels with numba and pure-numpy implementations.

Both variants of each kernel are always importable (``*_numpy`` and
``*_numba``); the unsuffixed names point at whichever one
``EDITLOOP_DISABLE_NUMBA`` selects.  The LSTM forward cell is dominated by
tanh, which numba only vectorizes when built against SVML; without it the
numpy ufuncs are faster, so that one kernel stays on numpy.
"""
import numpy as np

from ._accel import USE_NUMBA, numba, njit

# ---------------------------------------------------------------------------
# Levenshtein table (unit costs)
# ---------------------------------------------------------------------------


def edit_table_numpy(a, b):
    m, n = a.shape[0], b.shape[0]
    table = np.empty((m + 1, n + 1), dtype=np.int64)
    cols = np.arange(n + 1, dtype=np.int64)
    table[0] = cols
    for i in range(1, m + 1):
        prev = table[i - 1]
        row = np.empty(n + 1, dtype=np.int64)
        row[0] = i
        row[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (b != a[i - 1]))
        # insertion chain along the row: row[j] = min_k<=j row[k] + (j - k)
        table[i] = np.minimum.accumulate(row - cols) + cols
    return table


def _edit_table_loops(a, b):
    m, n = a.shape[0], b.shape[0]
    table = np.empty((m + 1, n + 1), dtype=np.int64)
    for j in range(n + 1):
        table[0, j] = j
    for i in range(1, m + 1):
        table[i, 0] = i
        ai = a[i - 1]
        for j in range(1, n + 1):
            best = table[i - 1, j - 1] + (0 if ai == b[j - 1] else 1)
            d = table[i - 1, j] + 1
            if d < best:
                best = d
            ins = table[i, j - 1] + 1
            if ins < best:
                best = ins
            table[i, j] = best
    return table


edit_table_numba = njit(_edit_table_loops)

# ---------------------------------------------------------------------------
# LSTM cell, gate order (input, forget, cell, output)
# ---------------------------------------------------------------------------


def lstm_forward_numpy(z, c_prev):
    """Activate preactivations ``z`` (B, 4H) given the previous cell state.

    Returns ``(gates, c, tanh_c, h)`` where ``gates`` holds the activated
    input/forget/cell/output gates in the same layout as ``z``.
    """
    hid = c_prev.shape[1]
    gates = np.empty_like(z)
    sig = slice(0, 2 * hid)
    gates[:, sig] = 0.5 * (1.0 + np.tanh(0.5 * z[:, sig]))
    gates[:, 2 * hid:3 * hid] = np.tanh(z[:, 2 * hid:3 * hid])
    gates[:, 3 * hid:] = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * hid:]))
    i = gates[:, :hid]
    f = gates[:, hid:2 * hid]
    g = gates[:, 2 * hid:3 * hid]
    o = gates[:, 3 * hid:]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    return gates, c, tanh_c, o * tanh_c


def lstm_backward_numpy(dh, dc, gates, c_prev, tanh_c):
    """Backpropagate through one cell; returns ``(dz, dc_prev)``."""
    hid = c_prev.shape[1]
    i = gates[:, :hid]
    f = gates[:, hid:2 * hid]
    g = gates[:, 2 * hid:3 * hid]
    o = gates[:, 3 * hid:]
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(gates)
    dz[:, :hid] = dc_total * g * i * (1.0 - i)
    dz[:, hid:2 * hid] = dc_total * c_prev * f * (1.0 - f)
    dz[:, 2 * hid:3 * hid] = dc_total * i * (1.0 - g * g)
    dz[:, 3 * hid:] = dh * tanh_c * o * (1.0 - o)
    return dz, dc_total * f


def _lstm_forward_loops(z, c_prev):
    bsz, hid = c_prev.shape
    gates = np.empty_like(z)
    c = np.empty_like(c_prev)
    tanh_c = np.empty_like(c_prev)
    h = np.empty_like(c_prev)
    for b in range(bsz):
        for k in range(hid):
            i = 0.5 * (1.0 + np.tanh(0.5 * z[b, k]))
            f = 0.5 * (1.0 + np.tanh(0.5 * z[b, hid + k]))
            g = np.tanh(z[b, 2 * hid + k])
            o = 0.5 * (1.0 + np.tanh(0.5 * z[b, 3 * hid + k]))
            gates[b, k] = i
            gates[b, hid + k] = f
            gates[b, 2 * hid + k] = g
            gates[b, 3 * hid + k] = o
            cc = f * c_prev[b, k] + i * g
            tc = np.tanh(cc)
            c[b, k] = cc
            tanh_c[b, k] = tc
            h[b, k] = o * tc
    return gates, c, tanh_c, h


def _lstm_backward_loops(dh, dc, gates, c_prev, tanh_c):
    bsz, hid = c_prev.shape
    dz = np.empty_like(gates)
    dc_prev = np.empty_like(c_prev)
    for b in range(bsz):
        for k in range(hid):
            i = gates[b, k]
            f = gates[b, hid + k]
            g = gates[b, 2 * hid + k]
            o = gates[b, 3 * hid + k]
            tc = tanh_c[b, k]
            dhk = dh[b, k]
            dct = dc[b, k] + dhk * o * (1.0 - tc * tc)
            dz[b, k] = dct * g * i * (1.0 - i)
            dz[b, hid + k] = dct * c_prev[b, k] * f * (1.0 - f)
            dz[b, 2 * hid + k] = dct * i * (1.0 - g * g)
            dz[b, 3 * hid + k] = dhk * tc * o * (1.0 - o)
            dc_prev[b, k] = dct * f
    return dz, dc_prev


lstm_forward_numba = njit(_lstm_forward_loops)
lstm_backward_numba = njit(_lstm_backward_loops)

HAVE_SVML = bool(numba is not None and numba.config.USING_SVML)

if USE_NUMBA:
    edit_table = edit_table_numba
    lstm_forward = lstm_forward_numba if HAVE_SVML else lstm_forward_numpy
    lstm_backward = lstm_backward_numba
else:
    edit_table = edit_table_numpy
    lstm_forward = lstm_forward_numpy
    lstm_backward = lstm_backward_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
