"""Compiled single-sample training step.

Same math as ``StreamingMLP.gradients`` followed by the Adagrad update, but
in one pass without temporaries; the NumPy path stays as the reference.
Gradient entries that are exactly zero (inactive ReLU units, zero inputs)
leave both the parameter and its accumulator unchanged, so they are skipped.
"""

import math

import numpy as np
from numba import njit

# no "nnan"/"ninf": the finiteness check below must survive optimisation
_FAST = {"reassoc", "contract", "arcp", "nsz", "afn"}


@njit(cache=True, fastmath=_FAST)
def train_step(theta, theta_acc, widths, E, E_acc, static_rows, plan_rows, plan_w, y, lr, eps):
    """Returns ``(loss, ok)``; nothing is updated when ``ok`` is False."""
    d = E.shape[1]
    n_static = static_rows.shape[0]
    m, s = plan_rows.shape
    n_layers = widths.shape[0] - 1
    width_max = 0
    for i in range(widths.shape[0]):
        width_max = max(width_max, widths[i])

    # forward: acts[i] is the input of layer i, pre[i] its pre-activation
    acts = np.zeros((n_layers + 1, width_max))
    pre = np.zeros((n_layers, width_max))
    x = acts[0]
    for i in range(n_static):
        r = static_rows[i]
        for k in range(d):
            x[i * d + k] = E[r, k]
    base = n_static * d
    for t in range(m):
        w = plan_w[t]
        for j in range(s):
            r = plan_rows[t, j]
            for k in range(d):
                x[base + j * d + k] += w * E[r, k]

    offsets = np.zeros(n_layers + 1, dtype=np.int64)
    pos = 0
    for i in range(n_layers):
        offsets[i] = pos
        pos += widths[i] * widths[i + 1] + widths[i + 1]
    offsets[n_layers] = pos

    for i in range(n_layers):
        fi, fo = widths[i], widths[i + 1]
        W0 = offsets[i]
        b0 = W0 + fi * fo
        z = pre[i]
        for o in range(fo):
            z[o] = theta[b0 + o]
        a = acts[i]
        for r in range(fi):
            ar = a[r]
            row = W0 + r * fo
            for o in range(fo):
                z[o] += ar * theta[row + o]
        nxt = acts[i + 1]
        for o in range(fo):
            nxt[o] = z[o] if i == n_layers - 1 else max(z[o], 0.0)

    logit = acts[n_layers][0]
    p = 0.5 * (1.0 + math.tanh(0.5 * logit))
    pc = min(max(p, eps), 1.0 - eps)
    loss = -y * math.log(pc) - (1.0 - y) * math.log(1.0 - pc)

    # backward with the old weights: deltas[i] is dL/d(pre-activation of layer i)
    deltas = np.zeros((n_layers + 1, width_max))
    deltas[n_layers - 1, 0] = p - y
    for i in range(n_layers - 1, -1, -1):
        fi, fo = widths[i], widths[i + 1]
        W0 = offsets[i]
        delta = deltas[i]
        out = deltas[i - 1] if i > 0 else deltas[n_layers]  # last row holds dL/dx
        for r in range(fi):
            if i > 0 and pre[i - 1][r] <= 0.0:
                out[r] = 0.0
                continue
            row = W0 + r * fo
            acc = 0.0
            for o in range(fo):
                acc += theta[row + o] * delta[o]
            out[r] = acc
    dx = deltas[n_layers]

    # every gradient is a product of these vectors (and slot weights)
    total = loss
    for i in range(n_layers + 1):
        for r in range(width_max):
            total += acts[i, r] + deltas[i, r]
    for t in range(m):
        total += plan_w[t]
    if not math.isfinite(total):
        return loss, False

    # embedding gradients, merged per row
    n_occ = n_static + m * s
    occ_rows = np.empty(n_occ, dtype=np.int64)
    for i in range(n_static):
        occ_rows[i] = static_rows[i]
    q = n_static
    for t in range(m):
        for j in range(s):
            occ_rows[q] = plan_rows[t, j]
            q += 1
    order = np.argsort(occ_rows, kind="mergesort")
    uniq = np.empty(n_occ, dtype=np.int64)
    merged = np.zeros((n_occ, d))
    n_uniq = 0
    for idx in range(n_occ):
        i = order[idx]
        if n_uniq == 0 or uniq[n_uniq - 1] != occ_rows[i]:
            uniq[n_uniq] = occ_rows[i]
            n_uniq += 1
        if i < n_static:
            for k in range(d):
                merged[n_uniq - 1, k] += dx[i * d + k]
        else:
            t = (i - n_static) // s
            j = (i - n_static) % s
            w = plan_w[t]
            for k in range(d):
                merged[n_uniq - 1, k] += w * dx[base + j * d + k]

    # Adagrad
    for i in range(n_layers):
        fi, fo = widths[i], widths[i + 1]
        W0 = offsets[i]
        b0 = W0 + fi * fo
        delta = deltas[i]
        a = acts[i]
        for o in range(fo):
            g = delta[o]
            if g != 0.0:
                theta_acc[b0 + o] += g * g
                theta[b0 + o] -= lr * g / math.sqrt(theta_acc[b0 + o])
        for r in range(fi):
            ar = a[r]
            if ar == 0.0:
                continue
            row = W0 + r * fo
            for o in range(fo):
                if delta[o] != 0.0:
                    g = ar * delta[o]
                    theta_acc[row + o] += g * g
                    theta[row + o] -= lr * g / math.sqrt(theta_acc[row + o])
    for u in range(n_uniq):
        r = uniq[u]
        for k in range(d):
            g = merged[u, k]
            E_acc[r, k] += g * g
            E[r, k] -= lr * g / math.sqrt(E_acc[r, k])
    return loss, True
