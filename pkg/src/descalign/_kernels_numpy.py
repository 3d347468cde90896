"""Pure-numpy kernel implementations.

Arithmetic contract (shared with the numba backend, bit-for-bit):

* dot products and squared norms accumulate sequentially over the channel
  index in ascending order, one rounding per multiply and per add;
* cosine = dot / (norm_a * norm_b), norms multiplied before the divide,
  with 0.0 substituted when the denominator is exactly zero;
* argmax scans candidates in ascending index order with a strict ``>``,
  so ties resolve to the lowest index;
* convolution accumulates over (in-channel, kernel-row, kernel-col) in
  ascending order and adds the bias once at the end.

The channel loops below run at Python level but every step is a full
vectorized array operation, so each output element sees exactly the
scalar sequence above.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def nn_best(q: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best cosine similarity in ``p`` for every row of ``q``.

    q: (n, d) query descriptors; p: (l, d) pool descriptors, both float64.
    Returns (best similarity (n,), argmax pool index (n,) int64).
    """
    n, d = q.shape
    l = p.shape[0]
    dots = np.zeros((n, l))
    qs = np.zeros(n)
    ps = np.zeros(l)
    for c in range(d):
        dots += q[:, c, None] * p[None, :, c]
        qs += q[:, c] * q[:, c]
        ps += p[:, c] * p[:, c]
    denom = np.sqrt(qs)[:, None] * np.sqrt(ps)[None, :]
    zero = denom == 0.0
    sims = np.where(zero, 0.0, dots / np.where(zero, 1.0, denom))
    idx = np.argmax(sims, axis=1)  # first occurrence wins ties
    return sims[np.arange(n), idx], idx.astype(np.int64)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    """Cross-correlation of x (cin, h, w) with w (cout, cin, kh, kw) + bias."""
    cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    oh = h + 2 * pad - kh + 1
    ow = wid + 2 * pad - kw + 1
    if pad > 0:
        xp = np.zeros((cin, h + 2 * pad, wid + 2 * pad))
        xp[:, pad:pad + h, pad:pad + wid] = x
    else:
        xp = x
    y = np.zeros((cout, oh, ow))
    for ci in range(cin):
        for ki in range(kh):
            for kj in range(kw):
                y += w[:, ci, ki, kj, None, None] * xp[None, ci, ki:ki + oh, kj:kj + ow]
    return y + b[:, None, None]
