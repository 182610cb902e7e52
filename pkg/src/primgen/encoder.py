"""Depth-image encoder producing the conditioning vector, plus the
nearest-neighbor bank lookup used to seed generation.

The full encoder is the printed conv stack (64x64 input):

    conv 32@7x7 stride 2 -> LeakyReLU(0.1)                64 -> 29
    conv 64@5x5 stride 2 -> LeakyReLU -> maxpool 2x2      29 -> 13 -> 6
    conv 128@3x3 stride 2 -> LeakyReLU -> maxpool 2x2      6 ->  2 -> 1
    fc 128 -> 64 -> LeakyReLU -> fc 64 -> 32 (linear)

All convolutions are valid (no padding), pooling floors odd sizes.  A
"tiny" variant (4x4 average downsample to 16x16, then fc 256 -> 64 -> 32)
exists for fast test tiers.  Forward and backward are explicit numpy.
"""

from __future__ import annotations

import numpy as np

LEAK = 0.1

CONV_SPECS = [   # (out_channels, kernel, stride) for the full encoder
    (32, 7, 2),
    (64, 5, 2),
    (128, 3, 2),
]
FC_SPECS = [64, 32]
TINY_DOWN = 4    # 64 -> 16
TINY_FC = [64, 32]


def validate_depth_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.shape != (64, 64):
        raise ValueError(f"depth image must be 64x64, got {arr.shape}")
    return np.clip(arr, 0.0, 1.0)


def init_encoder_params(kind: str, seed: int, prefix: str = "enc.") -> dict:
    """Seeded parameter dict; names carry the given prefix."""
    rng = np.random.default_rng(seed)
    p = {}

    def mat(name, shape, fan_in):
        p[prefix + name] = rng.uniform(-1, 1, shape) / np.sqrt(fan_in)

    if kind == "conv":
        c_in = 1
        for i, (c_out, ksz, _) in enumerate(CONV_SPECS):
            mat(f"conv{i}.K", (c_out, c_in, ksz, ksz), c_in * ksz * ksz)
            p[prefix + f"conv{i}.b"] = np.zeros(c_out)
            c_in = c_out
        prev = CONV_SPECS[-1][0]   # 128-dim after the final 1x1 spatial pool
        for i, width in enumerate(FC_SPECS):
            mat(f"fc{i}.W", (width, prev), prev)
            p[prefix + f"fc{i}.b"] = np.zeros(width)
            prev = width
    elif kind == "tiny":
        prev = (64 // TINY_DOWN) ** 2
        for i, width in enumerate(TINY_FC):
            mat(f"fc{i}.W", (width, prev), prev)
            p[prefix + f"fc{i}.b"] = np.zeros(width)
            prev = width
    else:
        raise ValueError(f"unknown encoder kind {kind!r}")
    return p


def conv2d_forward(x, kernels, bias, stride):
    """Valid cross-correlation; x (C_in, H, W) -> (C_out, H', W')."""
    c_out, c_in, kh, kw = kernels.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]             # (C_in, H', W', kh, kw)
    out = np.einsum("cijuv,ocuv->oij", win, kernels, optimize=True)
    return out + bias[:, None, None]


def conv2d_backward(x, kernels, stride, d_out):
    """Gradients (dx, dK, db) for the valid cross-correlation."""
    c_out, c_in, kh, kw = kernels.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    dk = np.einsum("cijuv,oij->ocuv", win, d_out, optimize=True)
    db = d_out.sum(axis=(1, 2))
    dx = np.zeros_like(x)
    h_out, w_out = d_out.shape[1:]
    for u in range(kh):
        for v in range(kw):
            # scatter each kernel tap's contribution back over strided rows/cols
            contrib = np.einsum("oc,oij->cij", kernels[:, :, u, v], d_out)
            dx[:, u:u + h_out * stride:stride, v:v + w_out * stride:stride] += contrib
    return dx, dk, db


def maxpool2_forward(x):
    """2x2 stride-2 max pooling, odd trailing row/col dropped."""
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    view = x[:, :h2 * 2, :w2 * 2].reshape(c, h2, 2, w2, 2)
    blocks = view.transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    arg = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]
    return out, arg


def maxpool2_backward(x_shape, arg, d_out):
    c, h, w = x_shape
    h2, w2 = d_out.shape[1:]
    d_blocks = np.zeros((c, h2, w2, 4))
    np.put_along_axis(d_blocks, arg[..., None], d_out[..., None], axis=3)
    dx = np.zeros(x_shape)
    dx[:, :h2 * 2, :w2 * 2] = d_blocks.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4) \
        .reshape(c, h2 * 2, w2 * 2)
    return dx


def leaky_forward(x):
    return np.where(x > 0, x, LEAK * x)


def leaky_backward(x, d_out):
    return np.where(x > 0, 1.0, LEAK) * d_out


def encode_depth(img, params: dict, kind: str, prefix: str = "enc.",
                 cache: dict = None) -> np.ndarray:
    """Deterministic 32-vector feature of a 64x64 depth image."""
    x2d = validate_depth_image(img)
    if kind == "conv":
        a = x2d[None, :, :]
        conv_caches = []
        for i, (_, _, stride) in enumerate(CONV_SPECS):
            kern = params[prefix + f"conv{i}.K"]
            pre = conv2d_forward(a, kern, params[prefix + f"conv{i}.b"], stride)
            act = leaky_forward(pre)
            entry = {"x": a, "pre": pre, "act_shape": act.shape}
            if i > 0:
                pooled, arg = maxpool2_forward(act)
                entry["arg"] = arg
                a = pooled
            else:
                a = act
            conv_caches.append(entry)
        flat = a.reshape(-1)
        fc_caches = []
        vec = flat
        for i in range(len(FC_SPECS)):
            pre = params[prefix + f"fc{i}.W"] @ vec + params[prefix + f"fc{i}.b"]
            fc_caches.append({"x": vec, "pre": pre})
            vec = leaky_forward(pre) if i < len(FC_SPECS) - 1 else pre
        if cache is not None:
            cache.update({"conv": conv_caches, "fc": fc_caches, "flat_shape": a.shape})
        return vec
    if kind == "tiny":
        ds = x2d.reshape(64 // TINY_DOWN, TINY_DOWN, 64 // TINY_DOWN, TINY_DOWN).mean(axis=(1, 3))
        vec = ds.reshape(-1)
        fc_caches = []
        for i in range(len(TINY_FC)):
            pre = params[prefix + f"fc{i}.W"] @ vec + params[prefix + f"fc{i}.b"]
            fc_caches.append({"x": vec, "pre": pre})
            vec = leaky_forward(pre) if i < len(TINY_FC) - 1 else pre
        if cache is not None:
            cache.update({"fc": fc_caches})
        return vec
    raise ValueError(f"unknown encoder kind {kind!r}")


def encoder_backward(d_feature, params: dict, kind: str, cache: dict,
                     grads: dict, prefix: str = "enc.") -> None:
    """Chain the loss gradient w.r.t. the feature back into encoder params."""
    fc_specs = FC_SPECS if kind == "conv" else TINY_FC
    delta = np.asarray(d_feature, dtype=np.float64)
    for i in range(len(fc_specs) - 1, -1, -1):
        entry = cache["fc"][i]
        if i < len(fc_specs) - 1:
            delta = leaky_backward(entry["pre"], delta)
        grads[prefix + f"fc{i}.W"] += np.outer(delta, entry["x"])
        grads[prefix + f"fc{i}.b"] += delta
        delta = params[prefix + f"fc{i}.W"].T @ delta
    if kind == "tiny":
        return
    d_a = delta.reshape(cache["flat_shape"])
    for i in range(len(CONV_SPECS) - 1, -1, -1):
        entry = cache["conv"][i]
        if i > 0:
            d_act = maxpool2_backward(entry["act_shape"], entry["arg"], d_a)
        else:
            d_act = d_a
        d_pre = leaky_backward(entry["pre"], d_act)
        dx, dk, db = conv2d_backward(entry["x"], params[prefix + f"conv{i}.K"],
                                     CONV_SPECS[i][2], d_pre)
        grads[prefix + f"conv{i}.K"] += dk
        grads[prefix + f"conv{i}.b"] += db
        d_a = dx


def nn_retrieve(feature: np.ndarray, bank):
    """Payload of the Euclidean-nearest bank feature; ties -> lowest index."""
    if not bank:
        raise ValueError("empty retrieval bank")
    feature = np.asarray(feature, dtype=np.float64)
    best_i = 0
    best_d = None
    for i, (feat, payload) in enumerate(bank):
        dist = float(np.sum((np.asarray(feat) - feature) ** 2))
        if best_d is None or dist < best_d:
            best_d, best_i = dist, i
    return bank[best_i][1]
