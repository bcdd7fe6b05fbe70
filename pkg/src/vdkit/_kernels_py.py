"""Pure python numeric kernels.

This module is the fallback twin of the compiled extension ``vdkit._kernels``.
Both implement the same operations with the same floating point evaluation
order, so results are bit-for-bit identical across backends:

* accumulations run left to right / row major, never pairwise or vectorized,
* transcendentals go through libm (``math.exp`` etc., which is also what the
  C side calls); numpy's SIMD routines round differently and are not used,
* no fused multiply-add, no fast-math.

Keep any edit here in lockstep with ``_kernels.pyx``.
"""

import math

import numpy as np

# emission probabilities are clamped at 1e-12 before entering the ctc
# recursions so -inf log-probs cannot poison the lattice
LOG_FLOOR = math.log(1e-12)

_NEG_INF = float("-inf")


def _logaddexp(a, b):
    if a == _NEG_INF:
        return b
    if b == _NEG_INF:
        return a
    if a >= b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def matmul(a, b):
    """Matrix product of float64 arrays (m,k) @ (k,n) with ordered k-sums."""
    m, kk = a.shape
    k2, n = b.shape
    out = np.empty((m, n), dtype=np.float64)
    al = a.tolist()
    bl = b.tolist()
    for i in range(m):
        ai = al[i]
        oi = out[i]
        for j in range(n):
            acc = 0.0
            for k in range(kk):
                acc += ai[k] * bl[k][j]
            oi[j] = acc
    return out


def softmax_rows(x):
    """Row-wise softmax with max-shift, (m,n) -> (m,n)."""
    m, n = x.shape
    out = np.empty((m, n), dtype=np.float64)
    xl = x.tolist()
    for i in range(m):
        row = xl[i]
        hi = row[0]
        for j in range(1, n):
            if row[j] > hi:
                hi = row[j]
        s = 0.0
        oi = out[i]
        for j in range(n):
            e = math.exp(row[j] - hi)
            oi[j] = e
            s += e
        for j in range(n):
            oi[j] = oi[j] / s
    return out


def sigmoid(x):
    """Elementwise logistic on a 1-d float64 array."""
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    xl = x.tolist()
    for i in range(n):
        v = xl[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + math.exp(-v))
        else:
            e = math.exp(v)
            out[i] = e / (1.0 + e)
    return out


def tanh(x):
    """Elementwise tanh on a 1-d float64 array."""
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    xl = x.tolist()
    for i in range(n):
        out[i] = math.tanh(xl[i])
    return out


def layer_norm_rows(x, eps):
    """Per-row standardization: (x - mean) / sqrt(var + eps), (m,d) -> (m,d)."""
    m, d = x.shape
    out = np.empty((m, d), dtype=np.float64)
    xl = x.tolist()
    for i in range(m):
        row = xl[i]
        s = 0.0
        for j in range(d):
            s += row[j]
        mean = s / d
        acc = 0.0
        for j in range(d):
            dv = row[j] - mean
            acc += dv * dv
        var = acc / d
        inv = 1.0 / math.sqrt(var + eps)
        oi = out[i]
        for j in range(d):
            oi[j] = (row[j] - mean) * inv
    return out


def region_mean(feat, x0, y0, w, h):
    """Mean feature over the rectangle [x0,x0+w) x [y0,y0+h) of (H,W,C) feat."""
    c = feat.shape[2]
    out = np.zeros(c, dtype=np.float64)
    fl = feat.tolist()
    for yy in range(y0, y0 + h):
        frow = fl[yy]
        for xx in range(x0, x0 + w):
            px = frow[xx]
            for ci in range(c):
                out[ci] += px[ci]
    n = float(w * h)
    for ci in range(c):
        out[ci] = out[ci] / n
    return out


def region_variance(feat, x0, y0, w, h):
    """Two-pass variance of per-pixel channel means over a rectangle."""
    c = feat.shape[2]
    fl = feat.tolist()
    n = float(w * h)
    s = 0.0
    for yy in range(y0, y0 + h):
        frow = fl[yy]
        for xx in range(x0, x0 + w):
            px = frow[xx]
            cm = 0.0
            for ci in range(c):
                cm += px[ci]
            s += cm / c
    mu = s / n
    acc = 0.0
    for yy in range(y0, y0 + h):
        frow = fl[yy]
        for xx in range(x0, x0 + w):
            px = frow[xx]
            cm = 0.0
            for ci in range(c):
                cm += px[ci]
            dv = cm / c - mu
            acc += dv * dv
    return acc / n


def deform_conv3x3(x, w, offsets):
    """3x3 sampled convolution with per-tap fractional offsets.

    x: (H,W,Ci) input, zero padded outside the frame.
    w: (9,Ci,Co) taps, k indexes the 3x3 grid row major (dy,dx in {-1,0,1}).
    offsets: (H,W,9,2) float (dy,dx) shifts added to each tap position, or
        None for the standard convolution (exactly the zero-offset path).
    Returns (H,W,Co). Fractional positions are bilinearly interpolated.
    """
    hh, ww, ci = x.shape
    co = w.shape[2]
    out = np.empty((hh, ww, co), dtype=np.float64)
    xl = x.tolist()
    wl = w.tolist()
    ol = offsets.tolist() if offsets is not None else None
    samp = [[0.0] * ci for _ in range(9)]
    for i in range(hh):
        for j in range(ww):
            for k in range(9):
                dy = k // 3 - 1
                dx = k % 3 - 1
                if ol is None:
                    fy = float(i + dy)
                    fx = float(j + dx)
                else:
                    okk = ol[i][j][k]
                    fy = i + dy + okk[0]
                    fx = j + dx + okk[1]
                y0f = math.floor(fy)
                x0f = math.floor(fx)
                ry = fy - y0f
                rx = fx - x0f
                y0 = int(y0f)
                x0 = int(x0f)
                sk = samp[k]
                if ry == 0.0 and rx == 0.0:
                    if 0 <= y0 < hh and 0 <= x0 < ww:
                        px = xl[y0][x0]
                        for cc in range(ci):
                            sk[cc] = px[cc]
                    else:
                        for cc in range(ci):
                            sk[cc] = 0.0
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
                            acc += w00 * xl[y0][x0][cc]
                        if in01:
                            acc += w01 * xl[y0][x0 + 1][cc]
                        if in10:
                            acc += w10 * xl[y0 + 1][x0][cc]
                        if in11:
                            acc += w11 * xl[y0 + 1][x0 + 1][cc]
                        sk[cc] = acc
            oij = out[i, j]
            for c2 in range(co):
                acc = 0.0
                for k in range(9):
                    wk = wl[k]
                    sk = samp[k]
                    for cc in range(ci):
                        acc += wk[cc][c2] * sk[cc]
                oij[c2] = acc
    return out


def ctc_forward_nll(logp, ext):
    """Negative log-likelihood of a label sequence under ctc.

    logp: (T, A+1) log-probabilities, column 0 is blank.
    ext: int32 extended target with blanks interleaved, length S = 2L+1.
    Emissions are clamped below at LOG_FLOOR. Uses the standard two/three
    arc forward recursion in log space.
    """
    t_len, _ = logp.shape
    s_len = ext.shape[0]
    lp = logp.tolist()
    ex = ext.tolist()

    def em(t, s):
        v = lp[t][ex[s]]
        if v < LOG_FLOOR:
            return LOG_FLOOR
        return v

    prev = [_NEG_INF] * s_len
    prev[0] = em(0, 0)
    if s_len > 1:
        prev[1] = em(0, 1)
    for t in range(1, t_len):
        cur = [_NEG_INF] * s_len
        for s in range(s_len):
            a = prev[s]
            if s >= 1:
                a = _logaddexp(a, prev[s - 1])
            if s >= 2 and ex[s] != 0 and ex[s] != ex[s - 2]:
                a = _logaddexp(a, prev[s - 2])
            if a != _NEG_INF:
                cur[s] = a + em(t, s)
        prev = cur
    log_z = prev[s_len - 1]
    if s_len > 1:
        log_z = _logaddexp(log_z, prev[s_len - 2])
    return -log_z


def ctc_grad(logp, ext):
    """CTC nll and its gradient wrt every logp entry.

    Runs the forward/backward lattice and folds posteriors:
    d nll / d logp[t,k] = -sum_{s: ext[s]==k} exp(alpha[t,s]+beta[t,s]-logZ),
    where beta excludes the emission at t. Entries clamped by LOG_FLOOR get
    zero gradient. Returns (nll, grad) with grad shaped like logp.
    """
    t_len, a1 = logp.shape
    s_len = ext.shape[0]
    lp = logp.tolist()
    ex = ext.tolist()

    def em(t, s):
        v = lp[t][ex[s]]
        if v < LOG_FLOOR:
            return LOG_FLOOR
        return v

    alpha = [[_NEG_INF] * s_len for _ in range(t_len)]
    alpha[0][0] = em(0, 0)
    if s_len > 1:
        alpha[0][1] = em(0, 1)
    for t in range(1, t_len):
        ap = alpha[t - 1]
        ac = alpha[t]
        for s in range(s_len):
            a = ap[s]
            if s >= 1:
                a = _logaddexp(a, ap[s - 1])
            if s >= 2 and ex[s] != 0 and ex[s] != ex[s - 2]:
                a = _logaddexp(a, ap[s - 2])
            if a != _NEG_INF:
                ac[s] = a + em(t, s)
    log_z = alpha[t_len - 1][s_len - 1]
    if s_len > 1:
        log_z = _logaddexp(log_z, alpha[t_len - 1][s_len - 2])

    beta = [[_NEG_INF] * s_len for _ in range(t_len)]
    beta[t_len - 1][s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1][s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        bn = beta[t + 1]
        bc = beta[t]
        for s in range(s_len):
            b = bn[s]
            if b != _NEG_INF:
                b = b + em(t + 1, s)
            if s + 1 < s_len and bn[s + 1] != _NEG_INF:
                b = _logaddexp(b, bn[s + 1] + em(t + 1, s + 1))
            if (
                s + 2 < s_len
                and ex[s + 2] != 0
                and ex[s + 2] != ex[s]
                and bn[s + 2] != _NEG_INF
            ):
                b = _logaddexp(b, bn[s + 2] + em(t + 1, s + 2))
            bc[s] = b

    grad = np.zeros((t_len, a1), dtype=np.float64)
    for t in range(t_len):
        at = alpha[t]
        bt = beta[t]
        gt = grad[t]
        for s in range(s_len):
            if at[s] == _NEG_INF or bt[s] == _NEG_INF:
                continue
            k = ex[s]
            if lp[t][k] < LOG_FLOOR:
                continue
            gt[k] -= math.exp(at[s] + bt[s] - log_z)
    return -log_z, grad
