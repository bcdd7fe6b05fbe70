"""Neural building blocks: forward passes and the input gradients used by
the gradient check suite.

Everything here is a pure function of ndarrays plus small frozen weight
records. Heavy inner products route through the kernel backend; elementwise
glue stays in numpy (single-source, so both backends share it bit-for-bit).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .tensorops import as_f64, layer_norm, matmul, relu, sigmoid, softmax_rows, tanh
from ._backend import kernels as _K

N_DAMAGE = 26
N_PART = 61
N_FAKE = 7


# ---------------------------------------------------------------------------
# weight records


@dataclass(frozen=True, eq=False)
class PatchConfig:
    """Patch embedding: size P, dim d, matrix E ((P*P*C) x d), table E_pos."""

    patch_size: int
    embed_dim: int
    embedding: np.ndarray
    pos_table: np.ndarray

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.embedding.ndim != 2 or self.embedding.shape[1] != self.embed_dim:
            raise ValueError(
                f"embedding shape {self.embedding.shape} does not end in "
                f"embed_dim {self.embed_dim}"
            )
        if self.pos_table.ndim != 2 or self.pos_table.shape[1] != self.embed_dim:
            raise ValueError(f"pos_table shape {self.pos_table.shape} invalid")


def _stack_heads(w):
    w = as_f64(w, "attention weight")
    if w.ndim == 2:
        w = w[None]
    if w.ndim != 3:
        raise ValueError(f"attention weight must be (h, C, d_k), got {w.shape}")
    return w


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    """Per-head projections stacked as (h, C, d_k), output map (h*d_k, C)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "wq", _stack_heads(self.wq))
        object.__setattr__(self, "wk", _stack_heads(self.wk))
        object.__setattr__(self, "wv", _stack_heads(self.wv))
        object.__setattr__(self, "wo", as_f64(self.wo, "wo"))
        if not (self.wq.shape == self.wk.shape == self.wv.shape):
            raise ValueError(
                f"wq/wk/wv shapes differ: {self.wq.shape}, {self.wk.shape}, "
                f"{self.wv.shape}"
            )
        h, c, dk = self.wq.shape
        if self.wo.shape != (h * dk, c):
            raise ValueError(
                f"wo shape {self.wo.shape} does not match heads {h}, d_k {dk}, "
                f"C {c}"
            )

    @property
    def heads(self):
        return self.wq.shape[0]

    @property
    def d_k(self):
        return self.wq.shape[2]

    @property
    def channels(self):
        return self.wq.shape[1]


@dataclass(frozen=True, eq=False)
class FfnWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            object.__setattr__(self, name, as_f64(getattr(self, name), name))
        c, hidden = self.w1.shape
        if self.b1.shape != (hidden,):
            raise ValueError(f"b1 shape {self.b1.shape}, expected ({hidden},)")
        if self.w2.shape != (hidden, c):
            raise ValueError(f"w2 shape {self.w2.shape}, expected {(hidden, c)}")
        if self.b2.shape != (c,):
            raise ValueError(f"b2 shape {self.b2.shape}, expected ({c},)")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


@dataclass(frozen=True, eq=False)
class GruWeights:
    """Standard GRU cell parameters, row-vector convention (x @ W)."""

    wz: np.ndarray
    uz: np.ndarray
    bz: np.ndarray
    wr: np.ndarray
    ur: np.ndarray
    br: np.ndarray
    wh: np.ndarray
    uh: np.ndarray
    bh: np.ndarray

    def __post_init__(self):
        for name in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"):
            object.__setattr__(self, name, as_f64(getattr(self, name), name))
        d, hidden = self.wz.shape
        for name in ("wr", "wh"):
            if getattr(self, name).shape != (d, hidden):
                raise ValueError(f"{name} shape mismatch")
        for name in ("uz", "ur", "uh"):
            if getattr(self, name).shape != (hidden, hidden):
                raise ValueError(f"{name} shape mismatch")
        for name in ("bz", "br", "bh"):
            if getattr(self, name).shape != (hidden,):
                raise ValueError(f"{name} shape mismatch")

    @property
    def hidden(self):
        return self.wz.shape[1]

    @property
    def input_dim(self):
        return self.wz.shape[0]


@dataclass(frozen=True, eq=False)
class DeformableOffsets:
    """(H, W, 9, 2) fractional (dy, dx) shifts for each 3x3 tap."""

    values: np.ndarray

    def __post_init__(self):
        v = as_f64(self.values, "offsets")
        if v.ndim == 5 and v.shape[2:] == (3, 3, 2):
            v = v.reshape(v.shape[0], v.shape[1], 9, 2)
        if v.ndim != 4 or v.shape[2:] != (9, 2):
            raise ValueError(f"offsets must be (H, W, 9, 2), got {v.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class AdaptiveDropoutConfig:
    p_min: float = 0.1
    p_max: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.p_min <= self.p_max <= 1.0):
            raise ValueError(
                f"need 0 <= p_min <= p_max <= 1, got {self.p_min}, {self.p_max}"
            )


@dataclass(frozen=True)
class GaussianAmplifyConfig:
    sigma: float
    center: tuple = None  # (i, j) or None for the mask-peak policy

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class MaskHeadWeights:
    """Affine map from a query to a 1x1 kernel over C channels plus a bias."""

    kernel_map: np.ndarray  # (d, C)
    kernel_bias: np.ndarray  # (C,)
    bias_map: np.ndarray  # (d,)
    bias_bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kernel_map", as_f64(self.kernel_map, "kernel_map"))
        object.__setattr__(self, "kernel_bias", as_f64(self.kernel_bias, "kernel_bias"))
        object.__setattr__(self, "bias_map", as_f64(self.bias_map, "bias_map"))
        d, c = self.kernel_map.shape
        if self.kernel_bias.shape != (c,):
            raise ValueError(f"kernel_bias shape {self.kernel_bias.shape}")
        if self.bias_map.shape != (d,):
            raise ValueError(f"bias_map shape {self.bias_map.shape}")


# ---------------------------------------------------------------------------
# forward passes


def patch_embed(image, cfg):
    """Row-major patch flattening, linear embedding, positional add."""
    image = as_f64(image, "image")
    if image.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got {image.shape}")
    h, w, c = image.shape
    p = cfg.patch_size
    if h % p or w % p:
        raise InputError(
            f"image {h}x{w} is not divisible by patch size {p}"
        )
    n = (h // p) * (w // p)
    if cfg.embedding.shape[0] != p * p * c:
        raise ValueError(
            f"embedding rows {cfg.embedding.shape[0]} != P*P*C = {p * p * c}"
        )
    if cfg.pos_table.shape[0] != n:
        raise ValueError(f"pos_table rows {cfg.pos_table.shape[0]} != N = {n}")
    rows = np.empty((n, p * p * c), dtype=np.float64)
    idx = 0
    for gy in range(h // p):
        for gx in range(w // p):
            patch = image[gy * p : (gy + 1) * p, gx * p : (gx + 1) * p, :]
            rows[idx] = patch.reshape(-1)
            idx += 1
    return matmul(rows, cfg.embedding) + cfg.pos_table


def _attention_head(z, wq, wk, wv, dk):
    q = matmul(z, wq)
    k = matmul(z, wk)
    v = matmul(z, wv)
    scores = matmul(q, k.T) / math.sqrt(dk)
    a = softmax_rows(scores)
    return a, v, q, k


def multi_head_attention(z, w):
    """Scaled dot-product attention per head, concat, output projection."""
    z = as_f64(z, "Z")
    if z.ndim != 2:
        raise ValueError(f"Z must be (T, C), got {z.shape}")
    if z.shape[1] != w.channels:
        raise ValueError(
            f"Z feature dim {z.shape[1]} != attention C {w.channels}"
        )
    t = z.shape[0]
    h, dk = w.heads, w.d_k
    concat = np.empty((t, h * dk), dtype=np.float64)
    for i in range(h):
        a, v, _, _ = _attention_head(z, w.wq[i], w.wk[i], w.wv[i], dk)
        concat[:, i * dk : (i + 1) * dk] = matmul(a, v)
    return matmul(concat, w.wo)


def attention_input_grad(z, w, upstream):
    """d(sum(upstream * MHA(Z))) / dZ."""
    z = as_f64(z, "Z")
    upstream = as_f64(upstream, "upstream")
    h, dk = w.heads, w.d_k
    dcat = matmul(upstream, w.wo.T)
    dz = np.zeros_like(z)
    inv_scale = 1.0 / math.sqrt(dk)
    for i in range(h):
        a, v, q, k = _attention_head(z, w.wq[i], w.wk[i], w.wv[i], dk)
        gh = np.ascontiguousarray(dcat[:, i * dk : (i + 1) * dk])
        dv = matmul(a.T, gh)
        da = matmul(gh, v.T)
        ds = a * (da - np.sum(da * a, axis=1, keepdims=True)) * inv_scale
        dq = matmul(ds, k)
        dkk = matmul(ds.T, q)
        dz += matmul(dq, w.wq[i].T)
        dz += matmul(dkk, w.wk[i].T)
        dz += matmul(dv, w.wv[i].T)
    return dz


def ffn_block(z, w):
    """LayerNorm(Z + relu(Z W1 + b1) W2 + b2): the residual refinement block."""
    z = as_f64(z, "Z")
    if z.ndim != 2 or z.shape[1] != w.w1.shape[0]:
        raise ValueError(
            f"Z shape {z.shape} incompatible with FFN w1 {w.w1.shape}"
        )
    u = matmul(z, w.w1) + w.b1
    a = relu(u)
    v = matmul(a, w.w2) + w.b2
    return layer_norm(z + v, w.eps)


def _layer_norm_input_grad(x, g, eps):
    # rows: y = (x - mu) / s; dx = (g - mean(g) - y*mean(g*y)) / s
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    s = np.sqrt(var + eps)
    y = (x - mu) / s
    return (g - g.mean(axis=1, keepdims=True) - y * (g * y).mean(axis=1, keepdims=True)) / s


def ffn_input_grad(z, w, upstream):
    """d(sum(upstream * ffn_block(Z))) / dZ."""
    z = as_f64(z, "Z")
    upstream = as_f64(upstream, "upstream")
    u = matmul(z, w.w1) + w.b1
    a = relu(u)
    v = matmul(a, w.w2) + w.b2
    dx = _layer_norm_input_grad(z + v, upstream, w.eps)
    da = matmul(dx, w.w2.T)
    du = da * (u > 0.0)
    return dx + matmul(du, w.w1.T)


def _row(vec):
    return np.ascontiguousarray(vec)[None, :]


def gru_cell(x, h, w):
    """One GRU step: returns the next hidden state."""
    x = as_f64(x, "x")
    h = as_f64(h, "h")
    az = matmul(_row(x), w.wz)[0] + matmul(_row(h), w.uz)[0] + w.bz
    ar = matmul(_row(x), w.wr)[0] + matmul(_row(h), w.ur)[0] + w.br
    z = sigmoid(az)
    r = sigmoid(ar)
    ac = matmul(_row(x), w.wh)[0] + matmul(_row(r * h), w.uh)[0] + w.bh
    c = tanh(ac)
    return (1.0 - z) * h + z * c


def gru_cell_grads(x, h, w, upstream):
    """Gradients of sum(upstream * gru_cell(x, h, w)) wrt x and h."""
    x = as_f64(x, "x")
    h = as_f64(h, "h")
    g = as_f64(upstream, "upstream")
    az = matmul(_row(x), w.wz)[0] + matmul(_row(h), w.uz)[0] + w.bz
    ar = matmul(_row(x), w.wr)[0] + matmul(_row(h), w.ur)[0] + w.br
    z = sigmoid(az)
    r = sigmoid(ar)
    ac = matmul(_row(x), w.wh)[0] + matmul(_row(r * h), w.uh)[0] + w.bh
    c = tanh(ac)
    dz = (c - h) * g
    dc = z * g
    dh = (1.0 - z) * g
    dac = dc * (1.0 - c * c)
    drh = matmul(_row(dac), w.uh.T)[0]
    dr = drh * h
    dh = dh + drh * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    dx = (
        matmul(_row(daz), w.wz.T)[0]
        + matmul(_row(dar), w.wr.T)[0]
        + matmul(_row(dac), w.wh.T)[0]
    )
    dh = dh + matmul(_row(daz), w.uz.T)[0] + matmul(_row(dar), w.ur.T)[0]
    return dx, dh


def bigru_forward(x, fwd, bwd):
    """Bidirectional GRU: per-step concat of forward and backward passes."""
    x = as_f64(x, "X")
    if x.ndim != 2:
        raise ValueError(f"X must be (T, d_in), got {x.shape}")
    t = x.shape[0]
    if t < 1:
        raise ValueError("T must be >= 1")
    hidden_f, hidden_b = fwd.hidden, bwd.hidden
    out = np.empty((t, hidden_f + hidden_b), dtype=np.float64)
    h = np.zeros(hidden_f, dtype=np.float64)
    for step in range(t):
        h = gru_cell(x[step], h, fwd)
        out[step, :hidden_f] = h
    h = np.zeros(hidden_b, dtype=np.float64)
    for step in range(t - 1, -1, -1):
        h = gru_cell(x[step], h, bwd)
        out[step, hidden_f:] = h
    return out


def deformable_conv2d(x, w, offsets=None):
    """3x3 convolution sampling at fractionally offset tap positions.

    x: (H, W, C_in); w: (9, C_in, C_out) or (3, 3, C_in, C_out); offsets:
    DeformableOffsets, raw (H, W, 9, 2) array, or None (standard conv).
    Out-of-frame samples read as zero; fractional positions bilinear.
    """
    x = as_f64(x, "x")
    if x.ndim != 3:
        raise ValueError(f"x must be (H, W, C_in), got {x.shape}")
    w = as_f64(w, "w")
    if w.ndim == 4 and w.shape[:2] == (3, 3):
        w = w.reshape(9, w.shape[2], w.shape[3])
    if w.ndim != 3 or w.shape[0] != 9 or w.shape[1] != x.shape[2]:
        raise ValueError(
            f"kernel shape {w.shape} incompatible with input {x.shape}"
        )
    if offsets is None:
        off = None
    else:
        if not isinstance(offsets, DeformableOffsets):
            offsets = DeformableOffsets(offsets)
        off = offsets.values
        if off.shape[:2] != x.shape[:2]:
            raise ValueError(
                f"offsets spatial shape {off.shape[:2]} != input {x.shape[:2]}"
            )
    return _K.deform_conv3x3(x, np.ascontiguousarray(w), off)


def adaptive_dropout_rate(gate, cfg=AdaptiveDropoutConfig()):
    """p_min + sigmoid(gate) * (p_max - p_min); monotone in the gate."""
    gate = float(gate)
    if gate >= 0.0:
        s = 1.0 / (1.0 + math.exp(-gate))
    else:
        e = math.exp(gate)
        s = e / (1.0 + e)
    return cfg.p_min + s * (cfg.p_max - cfg.p_min)


def dynamic_mask_head(q, feat, w):
    """Soft mask from a query: sigmoid of a query-generated 1x1 conv + bias."""
    q = as_f64(q, "q")
    feat = as_f64(feat, "F")
    if q.ndim != 1 or q.shape[0] != w.kernel_map.shape[0]:
        raise ValueError(
            f"query shape {q.shape} incompatible with head {w.kernel_map.shape}"
        )
    if feat.ndim != 3 or feat.shape[2] != w.kernel_map.shape[1]:
        raise ValueError(
            f"feature shape {feat.shape} incompatible with head "
            f"{w.kernel_map.shape}"
        )
    kernel = matmul(_row(q), w.kernel_map)[0] + w.kernel_bias
    bias = float(np.dot(q, w.bias_map)) + w.bias_bias
    logits = np.tensordot(feat, kernel, axes=([2], [0])) + bias
    return sigmoid(logits)


def mask_head_query_grad(q, feat, w, upstream):
    """d(sum(upstream * dynamic_mask_head(q, F))) / dq."""
    q = as_f64(q, "q")
    feat = as_f64(feat, "F")
    upstream = as_f64(upstream, "upstream")
    kernel = matmul(_row(q), w.kernel_map)[0] + w.kernel_bias
    bias = float(np.dot(q, w.bias_map)) + w.bias_bias
    logits = np.tensordot(feat, kernel, axes=([2], [0])) + bias
    m = sigmoid(logits)
    dlogit = upstream * m * (1.0 - m)
    dkernel = np.tensordot(feat, dlogit, axes=([0, 1], [0, 1]))
    dbias = float(dlogit.sum())
    return matmul(w.kernel_map, dkernel[:, None])[:, 0] + w.bias_map * dbias


def gaussian_amplify(mask, cfg):
    """Attenuate a mask by a Gaussian centered at the peak (or given center)."""
    mask = as_f64(mask, "M")
    if mask.ndim != 2:
        raise ValueError(f"M must be (H, W), got {mask.shape}")
    if cfg.center is not None:
        ci, cj = cfg.center
    else:
        if not np.any(mask > 0.0):
            raise InputError(
                "gaussian_amplify: all-zero mask has no peak; give an "
                "explicit center"
            )
        flat = int(np.argmax(mask))
        ci, cj = divmod(flat, mask.shape[1])
    ii = np.arange(mask.shape[0], dtype=np.float64)[:, None]
    jj = np.arange(mask.shape[1], dtype=np.float64)[None, :]
    d2 = (ii - float(ci)) ** 2 + (jj - float(cj)) ** 2
    factor = np.exp(-d2 / (2.0 * cfg.sigma * cfg.sigma))
    return mask * factor


def fpn_fuse(levels, laterals):
    """Top-down pyramid fusion: lateral 1x1 projections plus x2 nearest
    upsampling, finest level first in `levels`. Returns the fused finest map."""
    if not levels:
        raise ValueError("fpn_fuse needs at least one level")
    if len(levels) != len(laterals):
        raise ValueError(
            f"{len(levels)} levels vs {len(laterals)} lateral weights"
        )
    levels = [as_f64(lv, f"level {i}") for i, lv in enumerate(levels)]
    for i, lv in enumerate(levels):
        if lv.ndim != 3:
            raise ValueError(f"level {i} must be (H, W, C), got {lv.shape}")
        if i:
            ph, pw, _ = levels[i - 1].shape
            if (lv.shape[0] * 2, lv.shape[1] * 2) != (ph, pw):
                raise InputError(
                    f"level {i} shape {lv.shape[:2]} is not half of level "
                    f"{i - 1} shape {(ph, pw)}"
                )

    def lateral(feat, wmat):
        h, w_, c = feat.shape
        wmat = as_f64(wmat, "lateral")
        if wmat.shape[0] != c:
            raise ValueError(
                f"lateral weight {wmat.shape} incompatible with C={c}"
            )
        flat = matmul(feat.reshape(h * w_, c), wmat)
        return flat.reshape(h, w_, wmat.shape[1])

    fused = lateral(levels[-1], laterals[-1])
    for i in range(len(levels) - 2, -1, -1):
        up = np.repeat(np.repeat(fused, 2, axis=0), 2, axis=1)
        fused = lateral(levels[i], laterals[i]) + up
    return fused


def classification_heads(q, w_d, w_p, w_f):
    """Damage softmax (26), part softmax (61), fake sigmoids (7) from query q."""
    q = as_f64(q, "q")
    w_d = as_f64(w_d, "W_d")
    w_p = as_f64(w_p, "W_p")
    w_f = as_f64(w_f, "W_f")
    d = q.shape[0]
    if w_d.shape != (N_DAMAGE, d):
        raise ValueError(f"W_d shape {w_d.shape}, expected ({N_DAMAGE}, {d})")
    if w_p.shape != (N_PART, d):
        raise ValueError(f"W_p shape {w_p.shape}, expected ({N_PART}, {d})")
    if w_f.shape != (N_FAKE, d):
        raise ValueError(f"W_f shape {w_f.shape}, expected ({N_FAKE}, {d})")
    damage = softmax_rows(matmul(_row(q), w_d.T))[0]
    part = softmax_rows(matmul(_row(q), w_p.T))[0]
    fake = sigmoid(matmul(_row(q), w_f.T)[0])
    return damage, part, fake


def heads_query_grad(q, w_d, w_p, w_f, g_damage, g_part, g_fake):
    """dq for sum(g_damage*damage) + sum(g_part*part) + sum(g_fake*fake)."""
    q = as_f64(q, "q")
    damage, part, fake = classification_heads(q, w_d, w_p, w_f)
    g_damage = as_f64(g_damage, "g_damage")
    g_part = as_f64(g_part, "g_part")
    g_fake = as_f64(g_fake, "g_fake")
    ds_d = damage * (g_damage - float(np.dot(g_damage, damage)))
    ds_p = part * (g_part - float(np.dot(g_part, part)))
    dl_f = g_fake * fake * (1.0 - fake)
    dq = matmul(_row(ds_d), as_f64(w_d, "W_d"))[0]
    dq = dq + matmul(_row(ds_p), as_f64(w_p, "W_p"))[0]
    dq = dq + matmul(_row(dl_f), as_f64(w_f, "W_f"))[0]
    return dq
