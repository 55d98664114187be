"""Pure NumPy Bellman backup; reference for the compiled kernel.

Both implementations take the same per-stage transition tables:

``iv0, wv``     lower velocity node and weight of the upper one, shape (n_v, n_u)
``joff, wt``    time-node shift and weight of the next node, shape (n_v, n_u)
``valid``       transition admissible for every time node, shape (n_v, n_u)
``stage``       stage cost, shape (n_v, n_u)
``cross_ok``    optional per-time-node admissibility, shape (n_v, n_u, n_t)

and return the backed-up value (n_v, n_t) and argmin torque index (n_v, n_t),
with -1 marking nodes without a finite continuation. Only time nodes in
``[j_lo, j_hi]`` are computed; the rest stay infinite. Neighbours with zero weight are skipped so an
infinite value there does not poison the interpolation; the summation
order is fixed so both kernels agree bit for bit.
"""

from __future__ import annotations

import numpy as np


def bellman_stage(V_next, iv0, wv, joff, wt, valid, stage, cross_ok, j_lo, j_hi):
    n_v, n_t = V_next.shape
    n_u = iv0.shape[1]
    V = np.full((n_v, n_t), np.inf)
    U = np.full((n_v, n_t), -1, dtype=np.int16)
    j_hi = min(j_hi, n_t - 1)
    if j_lo > j_hi:
        return V, U
    j = np.arange(j_lo, j_hi + 1)
    jj = j[None, None, :] + joff[:, :, None]  # (n_v, n_u, m)
    wt3 = np.broadcast_to(wt[:, :, None], jj.shape)
    wv3 = np.broadcast_to(wv[:, :, None], jj.shape)
    ok = valid[:, :, None] & (jj <= n_t - 1) & ((wt3 == 0.0) | (jj + 1 <= n_t - 1))
    if cross_ok is not None:
        ok &= cross_ok[:, :, j_lo:j_hi + 1]
    jj0 = np.minimum(jj, n_t - 1)
    jj1 = np.minimum(jj + 1, n_t - 1)
    iv = np.broadcast_to(iv0[:, :, None], jj.shape)
    iv1 = np.minimum(iv + 1, n_v - 1)

    w00 = (1.0 - wv3) * (1.0 - wt3)
    w10 = wv3 * (1.0 - wt3)
    w01 = (1.0 - wv3) * wt3
    w11 = wv3 * wt3
    with np.errstate(invalid="ignore"):
        t00 = np.where(w00 > 0.0, w00 * V_next[iv, jj0], 0.0)
        t10 = np.where(w10 > 0.0, w10 * V_next[iv1, jj0], 0.0)
        t01 = np.where(w01 > 0.0, w01 * V_next[iv, jj1], 0.0)
        t11 = np.where(w11 > 0.0, w11 * V_next[iv1, jj1], 0.0)
        q = stage[:, :, None] + (((t00 + t10) + t01) + t11)
    q = np.where(ok, q, np.inf)

    best = np.argmin(q, axis=1)  # first minimiser, like the serial loop
    vals = np.take_along_axis(q, best[:, None, :], axis=1)[:, 0, :]
    V[:, j_lo:j_hi + 1] = vals
    U[:, j_lo:j_hi + 1] = np.where(np.isfinite(vals), best, -1).astype(np.int16)
    return V, U
