"""Training loop (Adam, teacher forcing, epoch selection on a held-out
split) and the sampling procedures used at generation time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import encode_depth, encoder_backward, init_encoder_params, nn_retrieve
from .network import (
    ForwardRecord,
    MixtureParams,
    ModelWeights,
    NetConfig,
    backward_sequence,
    forward_sequence,
    init_weights,
    lstm_step,
    LSTMState,
    mdn_head,
    rotation_heads,
)
from .tokens import IDX_A, IDX_E, IDX_R, IDX_S, IDX_T, TOKEN_DIM, NormStats, TokenSequence

GRAD_CLIP_NORM = 5.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.95      # the first-moment decay
    adam_beta2: float = 0.999
    adam_eps: float = 1e-6
    batch_size: int = 50
    max_epochs: int = 200
    validation_fraction: float = 0.15
    seed: int = 0
    sampling_mode: str = "top2"   # "top2" | "all" | "greedy"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must lie in [0, 1)")


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the last good weights."""

    def __init__(self, message, weights):
        super().__init__(message)
        self.weights = weights


class AdamOptimizer:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2, eps = self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps
        lr = self.cfg.learning_rate
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * (g * g)
            params[k] -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + eps)


def clip_gradients(grads: dict, max_norm: float = GRAD_CLIP_NORM) -> float:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def _prepare_example(weights, example):
    """(token array, conditioning vector, encoder cache) for a dataset entry.

    An entry is (TokenSequence | (T,5) array, depth image | feature | None).
    64x64 arrays are treated as depth images and run through the encoder.
    """
    tokens, cond = example
    arr = tokens.as_array() if hasattr(tokens, "as_array") else np.asarray(tokens)
    if cond is None:
        return arr, None, None
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape == (64, 64):
        cache = {}
        d = encode_depth(cond, weights.params, weights.encoder_kind, cache=cache)
        return arr, d, cache
    return arr, cond.reshape(weights.config.cond_size), None


def _batch_pass(weights, dataset, indices, train: bool):
    """Mean loss over the given examples; accumulates gradients when training."""
    grads = {k: np.zeros_like(v) for k, v in weights.params.items()} if train else None
    total = 0.0
    for i in indices:
        arr, d, enc_cache = _prepare_example(weights, dataset[i])
        rec = forward_sequence(weights, arr, d)
        total += rec.loss
        if train:
            _, dd = backward_sequence(weights, rec, grads)
            if enc_cache is not None:
                encoder_backward(dd, weights.params, weights.encoder_kind,
                                 enc_cache, grads)
    n = max(1, len(indices))
    if train:
        for k in grads:
            grads[k] /= n
    return total / n, grads


def _run_epochs(weights, dataset, train_idx, val_idx, cfg, n_epochs, rng):
    """Train for n_epochs; returns per-epoch validation (or train) losses."""
    opt = AdamOptimizer(weights.params, cfg)
    history = []
    last_good = weights.copy()
    for epoch in range(n_epochs):
        order = rng.permutation(len(train_idx))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_idx[j] for j in order[start:start + cfg.batch_size]]
            loss, grads = _batch_pass(weights, dataset, batch, train=True)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", last_good)
            clip_gradients(grads)
            opt.step(weights.params, grads)
        monitor = val_idx if val_idx else train_idx
        mloss, _ = _batch_pass(weights, dataset, monitor, train=False)
        if not np.isfinite(mloss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", last_good)
        history.append(float(mloss))
        last_good = weights.copy()
    return history


def train(dataset, cfg: TrainConfig, net_config: NetConfig = None,
          stats: NormStats = None, encoder_kind: str = None,
          epochs_override: int = None):
    """Fit the generator on (tokens, conditioning) pairs.

    Protocol: hold out a validation fraction to pick the epoch count by the
    best validation loss, then retrain on the full dataset for that many
    epochs.  Deterministic for a fixed config.  Returns (weights, history).
    """
    dataset = list(dataset)
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if cfg.validation_fraction > 0 and len(dataset) < 2:
        raise ValueError("need at least 2 sequences to hold out validation data")
    if encoder_kind is None:
        encoder_kind = "none"
        for _, cond in dataset:
            if cond is not None and np.asarray(cond).shape == (64, 64):
                encoder_kind = "tiny"
                break
    net_config = net_config or NetConfig()
    if stats is None:
        first = dataset[0][0]
        stats = first.stats if isinstance(first, TokenSequence) or hasattr(first, "stats") else None

    def fresh_weights():
        w = init_weights(net_config, seed=cfg.seed, stats=stats)
        w.encoder_kind = encoder_kind
        if encoder_kind != "none":
            w.params.update(init_encoder_params(encoder_kind, seed=cfg.seed + 1))
        return w

    rng = np.random.default_rng(cfg.seed)
    if epochs_override is not None:
        best_epochs = int(epochs_override)
        history = []
    elif cfg.validation_fraction > 0 and len(dataset) >= 2:
        n_val = max(1, int(round(cfg.validation_fraction * len(dataset))))
        perm = rng.permutation(len(dataset))
        val_idx = [int(i) for i in perm[:n_val]]
        train_idx = [int(i) for i in perm[n_val:]]
        if not train_idx:
            train_idx, val_idx = val_idx, []
        probe = fresh_weights()
        history = _run_epochs(probe, dataset, train_idx, val_idx, cfg,
                              cfg.max_epochs, np.random.default_rng(cfg.seed + 2))
        best_epochs = int(np.argmin(history)) + 1
    else:
        best_epochs = cfg.max_epochs
        history = []

    weights = fresh_weights()
    final_history = _run_epochs(weights, dataset, list(range(len(dataset))), [],
                                cfg, best_epochs, np.random.default_rng(cfg.seed + 2))
    # retrieval bank: encoded feature of each conditioned example plus the
    # first three tokens (first primitive) of its sequence
    bank = []
    for tokens, cond in dataset:
        arr = tokens.as_array() if hasattr(tokens, "as_array") else np.asarray(tokens)
        if cond is None or len(arr) < 3:
            continue
        cond = np.asarray(cond, dtype=np.float64)
        feat = (encode_depth(cond, weights.params, weights.encoder_kind)
                if cond.shape == (64, 64) else cond.reshape(net_config.cond_size))
        bank.append((feat, arr[:3].copy()))
    weights.bank = bank
    return weights, {"selection": history, "final": final_history,
                     "epochs": best_epochs}


def sample_next(params: MixtureParams, mode: str, rng: np.random.Generator):
    """Draw (s, t, e_flag) from the mixture head output.

    train mode samples the component from the full mixture; test mode
    renormalizes over the two heaviest components first; greedy takes the
    most probable component's mean and thresholds the stop probability.
    """
    if mode == "greedy":
        k = int(np.argmax(params.pi))
        return float(params.mu[k, 0]), float(params.mu[k, 1]), int(params.e > 0.5)
    if mode == "top2":
        order = np.argsort(-params.pi, kind="stable")[:2]
        probs = params.pi[order]
        probs = probs / probs.sum()
        k = int(order[rng.choice(len(order), p=probs)])
    elif mode == "all":
        k = int(rng.choice(len(params.pi), p=params.pi / params.pi.sum()))
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    z1, z2 = rng.standard_normal(2)
    s1, s2 = params.sigma[k]
    rho = params.rho[k]
    x1 = params.mu[k, 0] + s1 * z1
    x2 = params.mu[k, 1] + s2 * (rho * z1 + np.sqrt(1.0 - rho * rho) * z2)
    e_flag = int(rng.random() < params.e)
    return float(x1), float(x2), e_flag


def generate(weights: ModelWeights, init_token: np.ndarray, d: np.ndarray = None,
             max_steps: int = 60, mode: str = "top2", seed: int = 0) -> np.ndarray:
    """Roll the model forward from an initial token; returns a (T, 5) array
    whose length is a multiple of 3 (trailing partial primitive dropped).

    The initial token is kept as the first element of the output sequence.
    `d` may be a 64x64 depth image, a feature vector, or None.
    """
    if max_steps < 3:
        raise ValueError("max_steps must be >= 3")
    cfg = weights.config
    rng = np.random.default_rng(seed)
    if d is not None:
        d = np.asarray(d, dtype=np.float64)
        if d.shape == (64, 64):
            d = encode_depth(d, weights.params, weights.encoder_kind)
        else:
            d = d.reshape(cfg.cond_size)
    state = LSTMState.zeros(cfg)
    tokens = [np.asarray(init_token, dtype=np.float64).reshape(cfg.token_dim)]
    while len(tokens) < max_steps:
        y, state = lstm_step(tokens[-1], d, state, weights)
        mix = mdn_head(y, weights)
        r, a_prob = rotation_heads(y, weights)
        s_val, t_val, e_flag = sample_next(mix, mode, rng)
        if mode == "greedy":
            a_flag = int(a_prob > 0.5)
        else:
            a_flag = int(rng.random() < a_prob)
        tokens.append(np.array([s_val, t_val, float(e_flag), r, float(a_flag)]))
        if e_flag == 1:
            break
    arr = np.stack(tokens)
    return arr[: 3 * (len(arr) // 3)]


def draw_init_token(weights: ModelWeights, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw of a first-primitive x-step token from the training bank."""
    if not weights.bank:
        raise ValueError("weights carry no retrieval bank to draw inits from")
    i = int(rng.integers(len(weights.bank)))
    return weights.bank[i][1][0].copy()


def retrieve_init_token(weights: ModelWeights, depth_image) -> np.ndarray:
    """Nearest-neighbor init: encode the image, look up the bank, return the
    retrieved first primitive's x-step token."""
    feat = encode_depth(depth_image, weights.params, weights.encoder_kind)
    triple = nn_retrieve(feat, weights.bank)
    return np.asarray(triple, dtype=np.float64)[0].copy()
