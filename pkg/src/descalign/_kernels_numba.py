"""Numba ``@njit`` kernel implementations.

Same arithmetic contract as ``_kernels_numpy`` (see its module docstring);
plain nested loops in the canonical order compile to strict IEEE double
operations (no fastmath, no reassociation), so results are bit-identical
to the fallback.  ``nogil`` lets the episode harness overlap kernel calls
across worker threads.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True, nogil=True)
def nn_best(q, p):
    n, d = q.shape
    l = p.shape[0]
    qn = np.empty(n)
    for i in range(n):
        acc = 0.0
        for c in range(d):
            acc += q[i, c] * q[i, c]
        qn[i] = np.sqrt(acc)
    pn = np.empty(l)
    for j in range(l):
        acc = 0.0
        for c in range(d):
            acc += p[j, c] * p[j, c]
        pn[j] = np.sqrt(acc)
    sims = np.empty(n)
    idx = np.empty(n, np.int64)
    for i in range(n):
        best = -np.inf
        best_j = 0
        for j in range(l):
            acc = 0.0
            for c in range(d):
                acc += q[i, c] * p[j, c]
            denom = qn[i] * pn[j]
            if denom == 0.0:
                s = 0.0
            else:
                s = acc / denom
            if s > best:
                best = s
                best_j = j
        sims[i] = best
        idx[i] = best_j
    return sims, idx


@njit(cache=True, nogil=True)
def conv2d(x, w, b, pad):
    cin, h, wid = x.shape
    cout = w.shape[0]
    kh = w.shape[2]
    kw = w.shape[3]
    oh = h + 2 * pad - kh + 1
    ow = wid + 2 * pad - kw + 1
    xp = np.zeros((cin, h + 2 * pad, wid + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wid] = x
    y = np.empty((cout, oh, ow))
    for co in range(cout):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ci in range(cin):
                    for ki in range(kh):
                        for kj in range(kw):
                            acc += w[co, ci, ki, kj] * xp[ci, i + ki, j + kj]
                y[co, i, j] = acc + b[co]
    return y
