"""Pure numpy kernels: batched triple scores and gradient accumulation.

Reference implementation of the hot loops; a compiled Cython twin lives in
``_core.pyx``.  Both backends expose the same eight functions.  The score
kernels avoid BLAS so results are deterministic and independent of batch
size, and entity factors are multiplied together before the relation factor
so that tri-linear scores are exactly symmetric in the two entity slots.

Gradient kernels accumulate ``coef[i] * d(theta_i)/d(param)`` into the
caller's dense gradient arrays (``coef`` is the upstream per-triple weight,
e.g. the derivative of a cost w.r.t. theta).  Repeated rows, including
s == o, accumulate via unbuffered scatter-adds.
"""

from __future__ import annotations

import numpy as np


def scores_distmult(ent, rel, s, p, o):
    a_s = ent[s]
    a_o = ent[o]
    return (a_s * a_o * rel[p]).sum(axis=-1)


def grads_distmult(ent, rel, s, p, o, coef, g_ent, g_rel):
    a_s = ent[s]
    a_o = ent[o]
    r_p = rel[p]
    c = coef[:, None]
    np.add.at(g_ent, s, c * (r_p * a_o))
    np.add.at(g_ent, o, c * (r_p * a_s))
    np.add.at(g_rel, p, c * (a_s * a_o))


def scores_complex(ent_re, ent_im, rel_re, rel_im, s, p, o):
    sr, si = ent_re[s], ent_im[s]
    orr, oi = ent_re[o], ent_im[o]
    pr, pi = rel_re[p], rel_im[p]
    terms = sr * orr * pr + si * oi * pr + sr * oi * pi - si * orr * pi
    return terms.sum(axis=-1)


def grads_complex(ent_re, ent_im, rel_re, rel_im, s, p, o, coef,
                  g_ent_re, g_ent_im, g_rel_re, g_rel_im):
    sr, si = ent_re[s], ent_im[s]
    orr, oi = ent_re[o], ent_im[o]
    pr, pi = rel_re[p], rel_im[p]
    c = coef[:, None]
    np.add.at(g_ent_re, s, c * (pr * orr + pi * oi))
    np.add.at(g_ent_im, s, c * (pr * oi - pi * orr))
    np.add.at(g_rel_re, p, c * (sr * orr + si * oi))
    np.add.at(g_rel_im, p, c * (sr * oi - si * orr))
    np.add.at(g_ent_re, o, c * (sr * pr - si * pi))
    np.add.at(g_ent_im, o, c * (si * pr + sr * pi))


def scores_rescal(ent, rel_mat, s, p, o):
    a_s = ent[s]
    a_o = ent[o]
    prod = (a_s[:, :, None] * rel_mat[p]) * a_o[:, None, :]
    return prod.sum(axis=(1, 2))


def grads_rescal(ent, rel_mat, s, p, o, coef, g_ent, g_rel_mat):
    a_s = ent[s]
    a_o = ent[o]
    r_p = rel_mat[p]
    c = coef[:, None]
    np.add.at(g_ent, s, c * (r_p * a_o[:, None, :]).sum(axis=2))
    np.add.at(g_ent, o, c * (r_p * a_s[:, :, None]).sum(axis=1))
    np.add.at(g_rel_mat, p, coef[:, None, None] * (a_s[:, :, None] * a_o[:, None, :]))


def _multiway_forward(ent, rel, w_in, s, p, o):
    x = np.concatenate([ent[s], rel[p], ent[o]], axis=1)
    z = (w_in[None, :, :] * x[:, None, :]).sum(axis=-1)
    return x, np.tanh(z)


def scores_multiway(ent, rel, w_in, w_out, s, p, o):
    _, h = _multiway_forward(ent, rel, w_in, s, p, o)
    return (h * w_out[None, :]).sum(axis=-1)


def grads_multiway(ent, rel, w_in, w_out, s, p, o, coef,
                   g_ent, g_rel, g_w_in, g_w_out):
    d = ent.shape[1]
    x, h = _multiway_forward(ent, rel, w_in, s, p, o)
    c = coef[:, None]
    g_w_out += (c * h).sum(axis=0)
    gz = c * (w_out[None, :] * (1.0 - h * h))
    g_w_in += (gz[:, :, None] * x[:, None, :]).sum(axis=0)
    gx = (gz[:, :, None] * w_in[None, :, :]).sum(axis=1)
    np.add.at(g_ent, s, gx[:, :d])
    np.add.at(g_rel, p, gx[:, d:2 * d])
    np.add.at(g_ent, o, gx[:, 2 * d:])
