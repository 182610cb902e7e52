"""Recurrent mixture-density generator: stacked gated recurrent layers, a
bivariate Gaussian mixture head with a stop probability, and two small
rotation heads.  Forward, losses and full backpropagation are written out
explicitly so every parameter gradient can be checked against finite
differences.

Layer recurrence (all gates share one affine pre-activation z):

    z^l_t = Wx^l x_t + Wh^l h^l_{t-1} + Wc^l h^{l-1}_t + Wd^l d + b^l
    i = f = o = sigmoid(z),  g = tanh(z)
    c^l_t = f * c^l_{t-1} + i * g
    h^l_t = o * tanh(c^l_t)

The bottom layer has no hidden input from below; its depth injection uses
its own matrix.  The summary vector is a linear map of the concatenation of
all hidden states, y_t = Wy [h^1_t; ...; h^L_t] + by.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .tokens import IDX_A, IDX_E, IDX_R, IDX_S, IDX_T, TOKEN_DIM, NormStats

LOG_2PI = float(np.log(2.0 * np.pi))
PROB_FLOOR = 1e-12
LOG_PROB_FLOOR = float(np.log(PROB_FLOOR))


@dataclass(frozen=True)
class NetConfig:
    hidden_size: int = 400
    layers: int = 3
    mixtures: int = 20
    feature_size: int = 64
    cond_size: int = 32
    head_hidden: tuple = (64, 32)
    token_dim: int = TOKEN_DIM

    def as_dict(self) -> dict:
        return {"hidden_size": self.hidden_size, "layers": self.layers,
                "mixtures": self.mixtures, "feature_size": self.feature_size,
                "cond_size": self.cond_size, "head_hidden": list(self.head_hidden),
                "token_dim": self.token_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(d["hidden_size"], d["layers"], d["mixtures"], d["feature_size"],
                   d["cond_size"], tuple(d["head_hidden"]), d["token_dim"])


@dataclass
class MixtureParams:
    """Constrained mixture head outputs for one step."""

    pi: np.ndarray        # (K,) simplex
    mu: np.ndarray        # (K, 2)
    sigma: np.ndarray     # (K, 2) positive
    rho: np.ndarray       # (K,) in (-1, 1)
    e: float              # stop probability in (0, 1)


@dataclass
class ModelWeights:
    """All trainable tensors keyed by name, plus configuration and stats."""

    params: dict
    config: NetConfig
    stats: NormStats = None
    encoder_kind: str = "none"   # "none" | "tiny" | "conv"
    bank: list = field(default_factory=list)  # [(feature, first-primitive token triple)]

    def zero_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: v.copy() for k, v in self.params.items()},
                            self.config, self.stats, self.encoder_kind,
                            [(f.copy(), t.copy()) for f, t in self.bank])


def head_layer_sizes(cfg: NetConfig):
    return (*cfg.head_hidden, 1)


def mdn_output_size(cfg: NetConfig) -> int:
    return 6 * cfg.mixtures + 1


def init_weights(cfg: NetConfig, seed: int, stats: NormStats = None) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), ..) matrices, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    p = {}

    def mat(name, rows, cols):
        k = 1.0 / np.sqrt(cols)
        p[name] = rng.uniform(-k, k, (rows, cols))

    h, l_count = cfg.hidden_size, cfg.layers
    for l in range(l_count):
        mat(f"lstm{l}.Wx", h, cfg.token_dim)
        mat(f"lstm{l}.Wh", h, h)
        if l > 0:
            mat(f"lstm{l}.Wc", h, h)
        mat(f"lstm{l}.Wd", h, cfg.cond_size)
        p[f"lstm{l}.b"] = np.zeros(h)
    mat("out.Wy", cfg.feature_size, l_count * h)
    p["out.by"] = np.zeros(cfg.feature_size)
    mat("mdn.W", mdn_output_size(cfg), cfg.feature_size)
    p["mdn.b"] = np.zeros(mdn_output_size(cfg))
    for head in ("rotv", "rota"):
        prev = cfg.feature_size
        for i, width in enumerate(head_layer_sizes(cfg)):
            mat(f"{head}.W{i}", width, prev)
            p[f"{head}.b{i}"] = np.zeros(width)
            prev = width
    return ModelWeights(p, cfg, stats)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


@dataclass
class LSTMState:
    h: np.ndarray  # (L, H)
    c: np.ndarray  # (L, H)

    @classmethod
    def zeros(cls, cfg: NetConfig) -> "LSTMState":
        return cls(np.zeros((cfg.layers, cfg.hidden_size)),
                   np.zeros((cfg.layers, cfg.hidden_size)))

    def copy(self) -> "LSTMState":
        return LSTMState(self.h.copy(), self.c.copy())


def lstm_step(x_prev: np.ndarray, d: np.ndarray, state: LSTMState,
              weights: ModelWeights, cache: dict = None):
    """One recurrent step; returns (y, new_state).

    Pass a dict as `cache` to record the intermediates backward needs.
    """
    cfg = weights.config
    p = weights.params
    x_prev = np.asarray(x_prev, dtype=np.float64).reshape(cfg.token_dim)
    d = (np.zeros(cfg.cond_size) if d is None
         else np.asarray(d, dtype=np.float64).reshape(cfg.cond_size))
    h_new = np.empty_like(state.h)
    c_new = np.empty_like(state.c)
    layer_caches = []
    below = None
    for l in range(cfg.layers):
        z = p[f"lstm{l}.Wx"] @ x_prev + p[f"lstm{l}.Wh"] @ state.h[l] \
            + p[f"lstm{l}.Wd"] @ d + p[f"lstm{l}.b"]
        if l > 0:
            z = z + p[f"lstm{l}.Wc"] @ below
        s = _sigmoid(z)
        g = np.tanh(z)
        c = s * (state.c[l] + g)
        u = np.tanh(c)
        h = s * u
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("numerical blowup in recurrent step")
        h_new[l], c_new[l] = h, c
        if cache is not None:
            layer_caches.append({"s": s, "g": g, "c_prev": state.c[l].copy(),
                                 "h_prev": state.h[l].copy(), "u": u,
                                 "below": None if below is None else below.copy()})
        below = h
    y = p["out.Wy"] @ h_new.reshape(-1) + p["out.by"]
    if cache is not None:
        cache["x"] = x_prev
        cache["d"] = d
        cache["layers"] = layer_caches
        cache["h_concat"] = h_new.reshape(-1).copy()
    return y, LSTMState(h_new, c_new)


def mdn_head(y: np.ndarray, weights: ModelWeights, cache: dict = None) -> MixtureParams:
    """Map the summary vector to constrained mixture parameters."""
    cfg = weights.config
    k = cfg.mixtures
    raw = weights.params["mdn.W"] @ y + weights.params["mdn.b"]
    pi_hat = raw[:k]
    mu = np.stack([raw[k:2 * k], raw[2 * k:3 * k]], axis=1)
    sig_hat = np.stack([raw[3 * k:4 * k], raw[4 * k:5 * k]], axis=1)
    rho_hat = raw[5 * k:6 * k]
    e_hat = raw[6 * k]
    shifted = pi_hat - pi_hat.max()
    expp = np.exp(shifted)
    pi = expp / expp.sum()
    sigma = np.exp(np.clip(sig_hat, -300, 300))
    rho = np.clip(np.tanh(rho_hat), -1.0 + 1e-12, 1.0 - 1e-12)
    e = float(_sigmoid(np.array([e_hat]))[0])
    if cache is not None:
        cache["raw"] = raw
        cache["y"] = y
    return MixtureParams(pi, mu, sigma, rho, e)


def _mlp_forward(y, weights, head, n_layers, cache=None):
    """tanh-hidden MLP; returns the final pre-activation scalar."""
    a = y
    acts = [a]
    for i in range(n_layers):
        z = weights.params[f"{head}.W{i}"] @ a + weights.params[f"{head}.b{i}"]
        a = np.tanh(z) if i < n_layers - 1 else z
        acts.append(a)
    if cache is not None:
        cache[head] = acts
    return float(a[0])


def rotation_heads(y: np.ndarray, weights: ModelWeights, cache: dict = None):
    """(rotation value in (-1, 1), rotation-axis probability in (0, 1))."""
    n = len(head_layer_sizes(weights.config))
    rv_raw = _mlp_forward(y, weights, "rotv", n, cache)
    ra_raw = _mlp_forward(y, weights, "rota", n, cache)
    r = float(np.tanh(rv_raw))
    a = float(_sigmoid(np.array([ra_raw]))[0])
    if cache is not None:
        cache["r"] = r
        cache["a"] = a
    return r, a


def bivariate_log_density(x1, x2, mu, sigma, rho):
    """Vector over components: log N((x1,x2) | mu, sigma, rho)."""
    z1 = (x1 - mu[:, 0]) / sigma[:, 0]
    z2 = (x2 - mu[:, 1]) / sigma[:, 1]
    one_m_r2 = (1.0 - rho) * (1.0 + rho)
    zz = z1 * z1 + z2 * z2 - 2.0 * rho * z1 * z2
    return (-LOG_2PI - np.log(sigma[:, 0]) - np.log(sigma[:, 1])
            - 0.5 * np.log(one_m_r2) - zz / (2.0 * one_m_r2))


def mdn_step_loss(params: MixtureParams, target_s: float, target_t: float,
                  target_e: int) -> float:
    """Negative log mixture density plus the Bernoulli stop term."""
    log_n = bivariate_log_density(target_s, target_t, params.mu, params.sigma, params.rho)
    log_mix = log_n + np.log(np.maximum(params.pi, PROB_FLOOR))
    m = log_mix.max()
    log_density = m + np.log(np.exp(log_mix - m).sum())
    nll = -max(log_density, LOG_PROB_FLOOR)
    if target_e == 1:
        nll -= np.log(max(params.e, PROB_FLOOR))
    else:
        nll -= np.log(max(1.0 - params.e, PROB_FLOOR))
    return float(nll)


def mdn_loss(step_params, targets) -> float:
    """Sum of per-step losses; `targets` is a TokenSequence or (T, 5) array."""
    arr = targets.as_array() if hasattr(targets, "as_array") else np.asarray(targets)
    if len(step_params) != len(arr):
        raise ValueError("sequence lengths do not match")
    return float(sum(
        mdn_step_loss(p, row[IDX_S], row[IDX_T], int(round(row[IDX_E])))
        for p, row in zip(step_params, arr)))


def total_loss(step_params, r_pred, a_pred, targets):
    """(total, mdn part, rotation-value part, rotation-axis part)."""
    arr = targets.as_array() if hasattr(targets, "as_array") else np.asarray(targets)
    l_s = mdn_loss(step_params, arr)
    r_pred = np.asarray(r_pred, dtype=np.float64)
    a_pred = np.asarray(a_pred, dtype=np.float64)
    l_r = float(np.sum((r_pred - arr[:, IDX_R]) ** 2))
    l_a = float(np.sum((a_pred - arr[:, IDX_A]) ** 2))
    return l_s + l_r + l_a, l_s, l_r, l_a


@dataclass
class ForwardRecord:
    """Everything the backward pass needs about one teacher-forced sequence."""

    inputs: np.ndarray
    targets: np.ndarray
    d: np.ndarray
    step_caches: list
    mixtures: list
    r_pred: np.ndarray
    a_pred: np.ndarray
    loss: float
    loss_parts: tuple


def forward_sequence(weights: ModelWeights, tokens: np.ndarray,
                     d: np.ndarray = None) -> ForwardRecord:
    """Teacher forcing over one token array (T, 5): inputs are tokens[:-1],
    targets tokens[1:]."""
    cfg = weights.config
    arr = np.asarray(tokens, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != cfg.token_dim or arr.shape[0] < 2:
        raise ValueError("token array must be (T >= 2, token_dim)")
    d_vec = (np.zeros(cfg.cond_size) if d is None
             else np.asarray(d, dtype=np.float64).reshape(cfg.cond_size))
    inputs, targets = arr[:-1], arr[1:]
    state = LSTMState.zeros(cfg)
    caches, mixtures, r_pred, a_pred = [], [], [], []
    for t in range(len(inputs)):
        cache = {}
        y, state = lstm_step(inputs[t], d_vec, state, weights, cache)
        mix = mdn_head(y, weights, cache)
        r, a = rotation_heads(y, weights, cache)
        caches.append(cache)
        mixtures.append(mix)
        r_pred.append(r)
        a_pred.append(a)
    r_pred = np.array(r_pred)
    a_pred = np.array(a_pred)
    loss, l_s, l_r, l_a = total_loss(mixtures, r_pred, a_pred, targets)
    return ForwardRecord(inputs, targets, d_vec, caches, mixtures,
                         r_pred, a_pred, loss, (l_s, l_r, l_a))


def _mdn_raw_gradient(mix: MixtureParams, target_s, target_t, target_e):
    """Gradient of the step loss w.r.t. the raw mixture pre-activations."""
    k = len(mix.pi)
    mu, sigma, rho, pi = mix.mu, mix.sigma, mix.rho, mix.pi
    log_n = bivariate_log_density(target_s, target_t, mu, sigma, rho)
    log_mix = log_n + np.log(np.maximum(pi, PROB_FLOOR))
    m = log_mix.max()
    log_density = m + np.log(np.exp(log_mix - m).sum())
    grad = np.zeros(6 * k + 1)
    if log_density >= LOG_PROB_FLOOR:
        gamma = np.exp(log_mix - log_density)
        z1 = (target_s - mu[:, 0]) / sigma[:, 0]
        z2 = (target_t - mu[:, 1]) / sigma[:, 1]
        c = 1.0 / ((1.0 - rho) * (1.0 + rho))
        zz = z1 * z1 + z2 * z2 - 2.0 * rho * z1 * z2
        grad[:k] = pi - gamma
        grad[k:2 * k] = -gamma * c * (z1 - rho * z2) / sigma[:, 0]
        grad[2 * k:3 * k] = -gamma * c * (z2 - rho * z1) / sigma[:, 1]
        grad[3 * k:4 * k] = -gamma * (c * z1 * (z1 - rho * z2) - 1.0)
        grad[4 * k:5 * k] = -gamma * (c * z2 * (z2 - rho * z1) - 1.0)
        grad[5 * k:6 * k] = -gamma * (z1 * z2 + rho * (1.0 - c * zz))
    # stop-flag term is active either way
    grad[6 * k] = mix.e - (1.0 if target_e == 1 else 0.0)
    return grad


def _mlp_backward(head, d_out, acts, weights, grads, n_layers):
    """Backprop a scalar-output tanh MLP; returns gradient w.r.t. its input."""
    delta = np.array([d_out])
    for i in range(n_layers - 1, -1, -1):
        a_in = acts[i]
        grads[f"{head}.W{i}"] += np.outer(delta, a_in)
        grads[f"{head}.b{i}"] += delta
        d_in = weights.params[f"{head}.W{i}"].T @ delta
        if i > 0:
            d_in = d_in * (1.0 - acts[i] ** 2)
        delta = d_in
    return delta


def backward_sequence(weights: ModelWeights, record: ForwardRecord,
                      grads: dict = None):
    """Accumulate parameter gradients for one sequence; returns (grads, dd).

    `dd` is the loss gradient w.r.t. the conditioning vector, to be chained
    into the encoder.
    """
    cfg = weights.config
    p = weights.params
    if grads is None:
        grads = {k: np.zeros_like(v) for k, v in p.items()}
    steps = len(record.inputs)
    h_dim = cfg.hidden_size
    n_head = len(head_layer_sizes(cfg))

    dd = np.zeros(cfg.cond_size)
    dh_next = np.zeros((cfg.layers, h_dim))   # from t+1 via Wh
    dc_next = np.zeros((cfg.layers, h_dim))
    for t in range(steps - 1, -1, -1):
        cache = record.step_caches[t]
        target = record.targets[t]
        mix = record.mixtures[t]

        d_raw = _mdn_raw_gradient(mix, target[IDX_S], target[IDX_T],
                                  int(round(target[IDX_E])))
        y = cache["y"]
        grads["mdn.W"] += np.outer(d_raw, y)
        grads["mdn.b"] += d_raw
        dy = p["mdn.W"].T @ d_raw

        r, a = cache["r"], cache["a"]
        d_rv_raw = 2.0 * (r - target[IDX_R]) * (1.0 - r * r)
        d_ra_raw = 2.0 * (a - target[IDX_A]) * a * (1.0 - a)
        dy += _mlp_backward("rotv", d_rv_raw, cache["rotv"], weights, grads, n_head)
        dy += _mlp_backward("rota", d_ra_raw, cache["rota"], weights, grads, n_head)
        if not np.all(np.isfinite(dy)):
            raise FloatingPointError("non-finite gradient in head backward")

        grads["out.Wy"] += np.outer(dy, cache["h_concat"])
        grads["out.by"] += dy
        dh_concat = p["out.Wy"].T @ dy

        dh_below = np.zeros(h_dim)
        for l in range(cfg.layers - 1, -1, -1):
            lc = cache["layers"][l]
            dh = dh_concat[l * h_dim:(l + 1) * h_dim] + dh_next[l]
            if l < cfg.layers - 1:
                dh = dh + dh_from_above
            s, g, u = lc["s"], lc["g"], lc["u"]
            dc = dc_next[l] + dh * s * (1.0 - u * u)
            ds = dh * u + dc * (lc["c_prev"] + g)
            dg = dc * s
            dz = ds * s * (1.0 - s) + dg * (1.0 - g * g)

            grads[f"lstm{l}.Wx"] += np.outer(dz, cache["x"])
            grads[f"lstm{l}.Wh"] += np.outer(dz, lc["h_prev"])
            grads[f"lstm{l}.Wd"] += np.outer(dz, cache["d"])
            grads[f"lstm{l}.b"] += dz
            if l > 0:
                grads[f"lstm{l}.Wc"] += np.outer(dz, lc["below"])
                dh_from_above = p[f"lstm{l}.Wc"].T @ dz
            dd += p[f"lstm{l}.Wd"].T @ dz
            dh_next[l] = p[f"lstm{l}.Wh"].T @ dz
            dc_next[l] = dc * s
    return grads, dd


def save_weights(path, weights: ModelWeights) -> None:
    """Deterministic zip container (fixed timestamps) of named float64 arrays
    plus a JSON meta entry; round-trips bit-exactly."""
    meta = {
        "format_version": 1,
        "config": weights.config.as_dict(),
        "stats": None if weights.stats is None else weights.stats.as_dict(),
        "encoder_kind": weights.encoder_kind,
        "names": sorted(weights.params.keys()),
        "bank_size": len(weights.bank),
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        def put(name, data: bytes):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, data)

        put("meta.json", json.dumps(meta, sort_keys=True).encode())
        for name in meta["names"]:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, weights.params[name], version=(1, 0))
            put(f"params/{name}.npy", buf.getvalue())
        for i, (feat, triple) in enumerate(weights.bank):
            for tag, arr in (("feat", feat), ("triple", triple)):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arr, dtype=np.float64),
                                          version=(1, 0))
                put(f"bank/{i:05d}.{tag}.npy", buf.getvalue())


def load_weights(path) -> ModelWeights:
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta["format_version"] != 1:
            raise ValueError(f"unsupported weight format {meta['format_version']}")
        params = {}
        for name in meta["names"]:
            params[name] = np.lib.format.read_array(io.BytesIO(zf.read(f"params/{name}.npy")))
        bank = []
        for i in range(meta.get("bank_size", 0)):
            feat = np.lib.format.read_array(io.BytesIO(zf.read(f"bank/{i:05d}.feat.npy")))
            triple = np.lib.format.read_array(io.BytesIO(zf.read(f"bank/{i:05d}.triple.npy")))
            bank.append((feat, triple))
    stats = None if meta["stats"] is None else NormStats.from_dict(meta["stats"])
    return ModelWeights(params, NetConfig.from_dict(meta["config"]), stats,
                        meta.get("encoder_kind", "none"), bank)
