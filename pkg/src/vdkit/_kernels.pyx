# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels.

Twin of ``vdkit._kernels_py``: same operations, same floating point
evaluation order (ordered accumulations, libm transcendentals, no fma,
no fast-math), so both backends produce bit-identical results. Keep any
edit here in lockstep with the python module.
"""

import math

import numpy as np

from libc.math cimport exp, floor, log1p, sqrt, tanh as c_tanh, INFINITY


LOG_FLOOR = math.log(1e-12)

cdef double _LOG_FLOOR = LOG_FLOOR
cdef double _NEG_INF = -INFINITY


cdef inline double _lae(double a, double b) noexcept:
    if a == _NEG_INF:
        return b
    if b == _NEG_INF:
        return a
    if a >= b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def matmul(double[:, ::1] a, double[:, ::1] b):
    """Matrix product of float64 arrays (m,k) @ (k,n) with ordered k-sums."""
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t kk = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(kk):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out_arr


def softmax_rows(double[:, ::1] x):
    """Row-wise softmax with max-shift, (m,n) -> (m,n)."""
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double hi, s, e
    for i in range(m):
        hi = x[i, 0]
        for j in range(1, n):
            if x[i, j] > hi:
                hi = x[i, j]
        s = 0.0
        for j in range(n):
            e = exp(x[i, j] - hi)
            out[i, j] = e
            s += e
        for j in range(n):
            out[i, j] = out[i, j] / s
    return out_arr


def sigmoid(double[::1] x):
    """Elementwise logistic on a 1-d float64 array."""
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double v, e
    for i in range(n):
        v = x[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + exp(-v))
        else:
            e = exp(v)
            out[i] = e / (1.0 + e)
    return out_arr


def tanh(double[::1] x):
    """Elementwise tanh on a 1-d float64 array."""
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = c_tanh(x[i])
    return out_arr


def layer_norm_rows(double[:, ::1] x, double eps):
    """Per-row standardization: (x - mean) / sqrt(var + eps), (m,d) -> (m,d)."""
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.empty((m, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double s, mean, acc, dv, var, inv
    for i in range(m):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mean = s / d
        acc = 0.0
        for j in range(d):
            dv = x[i, j] - mean
            acc += dv * dv
        var = acc / d
        inv = 1.0 / sqrt(var + eps)
        for j in range(d):
            out[i, j] = (x[i, j] - mean) * inv
    return out_arr


def region_mean(double[:, :, ::1] feat, Py_ssize_t x0, Py_ssize_t y0,
                Py_ssize_t w, Py_ssize_t h):
    """Mean feature over the rectangle [x0,x0+w) x [y0,y0+h) of (H,W,C) feat."""
    cdef Py_ssize_t c = feat.shape[2]
    out_arr = np.zeros(c, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t yy, xx, ci
    for yy in range(y0, y0 + h):
        for xx in range(x0, x0 + w):
            for ci in range(c):
                out[ci] += feat[yy, xx, ci]
    cdef double n = <double>(w * h)
    for ci in range(c):
        out[ci] = out[ci] / n
    return out_arr


def region_variance(double[:, :, ::1] feat, Py_ssize_t x0, Py_ssize_t y0,
                    Py_ssize_t w, Py_ssize_t h):
    """Two-pass variance of per-pixel channel means over a rectangle."""
    cdef Py_ssize_t c = feat.shape[2]
    cdef double n = <double>(w * h)
    cdef Py_ssize_t yy, xx, ci
    cdef double s = 0.0
    cdef double cm, mu, acc, dv
    for yy in range(y0, y0 + h):
        for xx in range(x0, x0 + w):
            cm = 0.0
            for ci in range(c):
                cm += feat[yy, xx, ci]
            s += cm / c
    mu = s / n
    acc = 0.0
    for yy in range(y0, y0 + h):
        for xx in range(x0, x0 + w):
            cm = 0.0
            for ci in range(c):
                cm += feat[yy, xx, ci]
            dv = cm / c - mu
            acc += dv * dv
    return acc / n


def deform_conv3x3(double[:, :, ::1] x, double[:, :, ::1] w, offsets):
    """3x3 sampled convolution with per-tap fractional offsets.

    Same contract as the python twin: x (H,W,Ci) zero padded, w (9,Ci,Co)
    row-major taps, offsets (H,W,9,2) of (dy,dx) or None for the standard
    convolution. Returns (H,W,Co).
    """
    cdef Py_ssize_t hh = x.shape[0]
    cdef Py_ssize_t ww = x.shape[1]
    cdef Py_ssize_t ci = x.shape[2]
    cdef Py_ssize_t co = w.shape[2]
    out_arr = np.empty((hh, ww, co), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    samp_arr = np.zeros((9, ci), dtype=np.float64)
    cdef double[:, ::1] samp = samp_arr
    cdef bint has_off = offsets is not None
    cdef double[:, :, :, ::1] off
    if has_off:
        off = offsets
    cdef Py_ssize_t i, j, k, cc, c2, dy, dx, y0, x0
    cdef double fy, fx, y0f, x0f, ry, rx
    cdef double w00, w01, w10, w11, acc
    cdef bint in00, in01, in10, in11
    for i in range(hh):
        for j in range(ww):
            for k in range(9):
                dy = k // 3 - 1
                dx = k % 3 - 1
                if not has_off:
                    fy = <double>(i + dy)
                    fx = <double>(j + dx)
                else:
                    fy = i + dy + off[i, j, k, 0]
                    fx = j + dx + off[i, j, k, 1]
                y0f = floor(fy)
                x0f = floor(fx)
                ry = fy - y0f
                rx = fx - x0f
                y0 = <Py_ssize_t>y0f
                x0 = <Py_ssize_t>x0f
                if ry == 0.0 and rx == 0.0:
                    if 0 <= y0 < hh and 0 <= x0 < ww:
                        for cc in range(ci):
                            samp[k, cc] = x[y0, x0, cc]
                    else:
                        for cc in range(ci):
                            samp[k, cc] = 0.0
                else:
                    w00 = (1.0 - ry) * (1.0 - rx)
                    w01 = (1.0 - ry) * rx
                    w10 = ry * (1.0 - rx)
                    w11 = ry * rx
                    in00 = 0 <= y0 < hh and 0 <= x0 < ww
                    in01 = 0 <= y0 < hh and 0 <= x0 + 1 < ww
                    in10 = 0 <= y0 + 1 < hh and 0 <= x0 < ww
                    in11 = 0 <= y0 + 1 < hh and 0 <= x0 + 1 < ww
                    for cc in range(ci):
                        acc = 0.0
                        if in00:
                            acc += w00 * x[y0, x0, cc]
                        if in01:
                            acc += w01 * x[y0, x0 + 1, cc]
                        if in10:
                            acc += w10 * x[y0 + 1, x0, cc]
                        if in11:
                            acc += w11 * x[y0 + 1, x0 + 1, cc]
                        samp[k, cc] = acc
            for c2 in range(co):
                acc = 0.0
                for k in range(9):
                    for cc in range(ci):
                        acc += w[k, cc, c2] * samp[k, cc]
                out[i, j, c2] = acc
    return out_arr


def ctc_forward_nll(double[:, ::1] logp, int[::1] ext):
    """Negative log-likelihood of a label sequence under ctc.

    Same lattice as the python twin: blank-interleaved extended target,
    emissions clamped at LOG_FLOOR, log-space forward recursion.
    """
    cdef Py_ssize_t t_len = logp.shape[0]
    cdef Py_ssize_t s_len = ext.shape[0]
    prev_arr = np.empty(s_len, dtype=np.float64)
    cur_arr = np.empty(s_len, dtype=np.float64)
    cdef double[::1] prev = prev_arr
    cdef double[::1] cur = cur_arr
    cdef double[::1] tmp
    cdef Py_ssize_t t, s
    cdef double a, v, log_z
    for s in range(s_len):
        prev[s] = _NEG_INF
    v = logp[0, ext[0]]
    if v < _LOG_FLOOR:
        v = _LOG_FLOOR
    prev[0] = v
    if s_len > 1:
        v = logp[0, ext[1]]
        if v < _LOG_FLOOR:
            v = _LOG_FLOOR
        prev[1] = v
    for t in range(1, t_len):
        for s in range(s_len):
            a = prev[s]
            if s >= 1:
                a = _lae(a, prev[s - 1])
            if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                a = _lae(a, prev[s - 2])
            if a != _NEG_INF:
                v = logp[t, ext[s]]
                if v < _LOG_FLOOR:
                    v = _LOG_FLOOR
                cur[s] = a + v
            else:
                cur[s] = _NEG_INF
        tmp = prev
        prev = cur
        cur = tmp
    log_z = prev[s_len - 1]
    if s_len > 1:
        log_z = _lae(log_z, prev[s_len - 2])
    return -log_z


def ctc_grad(double[:, ::1] logp, int[::1] ext):
    """CTC nll and gradient wrt every logp entry, via forward/backward.

    beta excludes the emission at t, so
    d nll / d logp[t,k] = -sum_{s: ext[s]==k} exp(alpha[t,s]+beta[t,s]-logZ).
    Entries clamped by LOG_FLOOR get zero gradient.
    """
    cdef Py_ssize_t t_len = logp.shape[0]
    cdef Py_ssize_t a1 = logp.shape[1]
    cdef Py_ssize_t s_len = ext.shape[0]
    alpha_arr = np.empty((t_len, s_len), dtype=np.float64)
    beta_arr = np.empty((t_len, s_len), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef Py_ssize_t t, s, k
    cdef double a, b, v, log_z
    for t in range(t_len):
        for s in range(s_len):
            alpha[t, s] = _NEG_INF
            beta[t, s] = _NEG_INF
    v = logp[0, ext[0]]
    if v < _LOG_FLOOR:
        v = _LOG_FLOOR
    alpha[0, 0] = v
    if s_len > 1:
        v = logp[0, ext[1]]
        if v < _LOG_FLOOR:
            v = _LOG_FLOOR
        alpha[0, 1] = v
    for t in range(1, t_len):
        for s in range(s_len):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _lae(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                a = _lae(a, alpha[t - 1, s - 2])
            if a != _NEG_INF:
                v = logp[t, ext[s]]
                if v < _LOG_FLOOR:
                    v = _LOG_FLOOR
                alpha[t, s] = a + v
    log_z = alpha[t_len - 1, s_len - 1]
    if s_len > 1:
        log_z = _lae(log_z, alpha[t_len - 1, s_len - 2])

    beta[t_len - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        for s in range(s_len):
            b = beta[t + 1, s]
            if b != _NEG_INF:
                v = logp[t + 1, ext[s]]
                if v < _LOG_FLOOR:
                    v = _LOG_FLOOR
                b = b + v
            if s + 1 < s_len and beta[t + 1, s + 1] != _NEG_INF:
                v = logp[t + 1, ext[s + 1]]
                if v < _LOG_FLOOR:
                    v = _LOG_FLOOR
                b = _lae(b, beta[t + 1, s + 1] + v)
            if (s + 2 < s_len and ext[s + 2] != 0 and ext[s + 2] != ext[s]
                    and beta[t + 1, s + 2] != _NEG_INF):
                v = logp[t + 1, ext[s + 2]]
                if v < _LOG_FLOOR:
                    v = _LOG_FLOOR
                b = _lae(b, beta[t + 1, s + 2] + v)
            beta[t, s] = b

    grad_arr = np.zeros((t_len, a1), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    for t in range(t_len):
        for s in range(s_len):
            if alpha[t, s] == _NEG_INF or beta[t, s] == _NEG_INF:
                continue
            k = ext[s]
            if logp[t, k] < _LOG_FLOOR:
                continue
            grad[t, k] -= exp(alpha[t, s] + beta[t, s] - log_z)
    return -log_z, grad_arr
