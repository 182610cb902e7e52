"""Axis-step token encoding of primitive sets for the sequence generator.

A primitive becomes three consecutive tokens, one per spatial axis in the
fixed order x (width), y (length), z (height).  Each token carries that
axis's normalized scale and translation, a stop flag that is 1 only on the
last token of the whole sequence, plus the normalized rotation value and the
binary rotation-axis flag for the same axis.

Primitives are ordered by decreasing center height before encoding, and for
shapes with a detected symmetry plane only the half with the smaller
x-center is kept (the decoder mirrors it back).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Primitive, mirror_primitive

AXIS_NAMES = ("x", "y", "z")

# token vector layout used by the network
TOKEN_DIM = 5
IDX_S, IDX_T, IDX_E, IDX_R, IDX_A = range(5)


@dataclass(frozen=True)
class Token:
    s: float
    t: float
    e: int
    r: float
    a: int
    axis_index: int

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.t, float(self.e), self.r, float(self.a)])


@dataclass(frozen=True)
class NormStats:
    """Per-family normalization: mean and standard deviation for the scale,
    translation and rotation parameter families (pooled over axes)."""

    scale_mean: float
    scale_std: float
    trans_mean: float
    trans_std: float
    rot_mean: float
    rot_std: float

    def __post_init__(self):
        for name in ("scale_std", "trans_std", "rot_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def as_dict(self) -> dict:
        return {
            "scale_mean": self.scale_mean, "scale_std": self.scale_std,
            "trans_mean": self.trans_mean, "trans_std": self.trans_std,
            "rot_mean": self.rot_mean, "rot_std": self.rot_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: float(d[k]) for k in
                      ("scale_mean", "scale_std", "trans_mean", "trans_std",
                       "rot_mean", "rot_std")})


@dataclass
class TokenSequence:
    tokens: list
    stats: NormStats

    def __len__(self) -> int:
        return len(self.tokens)

    def as_array(self) -> np.ndarray:
        if not self.tokens:
            return np.zeros((0, TOKEN_DIM))
        return np.stack([t.as_array() for t in self.tokens])

    @classmethod
    def from_array(cls, arr: np.ndarray, stats: NormStats) -> "TokenSequence":
        toks = [Token(float(r[IDX_S]), float(r[IDX_T]), int(round(r[IDX_E])),
                      float(r[IDX_R]), int(round(r[IDX_A])), i % 3)
                for i, r in enumerate(np.asarray(arr, dtype=np.float64))]
        return cls(toks, stats)

    def to_json(self) -> str:
        return json.dumps({"tokens": self.as_array().tolist(),
                           "stats": self.stats.as_dict()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TokenSequence":
        d = json.loads(text)
        return cls.from_array(np.array(d["tokens"], dtype=np.float64).reshape(-1, TOKEN_DIM),
                              NormStats.from_dict(d["stats"]))


def compute_stats(primitive_sets) -> NormStats:
    """Pooled mean/std per parameter family over every primitive of every set.

    A constant family (e.g. all rotations zero) gets std 1.0 so its
    normalized values are exactly mean-centered zeros.
    """
    scales, trans, rots = [], [], []
    for prims in primitive_sets:
        for p in prims:
            scales.append(p.scale)
            trans.append(p.translation)
            rots.append(p.rotation)
    if not scales:
        raise ValueError("no primitives to compute stats over")
    scales = np.concatenate(scales)
    trans = np.concatenate(trans)
    rots = np.concatenate(rots)

    def _std(x):
        s = float(np.std(x))
        return s if s > 1e-9 else 1.0

    return NormStats(float(np.mean(scales)), _std(scales),
                     float(np.mean(trans)), _std(trans),
                     float(np.mean(rots)), _std(rots))


def _sorted_kept_primitives(prims, symmetry_plane):
    """Height sort (decreasing z-center) after dropping mirror partners."""
    kept = list(prims)
    if symmetry_plane is not None:
        kept = [p for p in kept
                if not (p.symmetric and p.translation[0] > symmetry_plane + 1e-9)]
    order = sorted(range(len(kept)),
                   key=lambda i: (-kept[i].translation[2], i))
    return [kept[i] for i in order]


def tokenize(prims, stats: NormStats, symmetry_plane: float = None) -> TokenSequence:
    """Encode a primitive set as an axis-step token sequence."""
    prims = list(prims)
    if not prims:
        raise ValueError("empty primitive set")
    kept = _sorted_kept_primitives(prims, symmetry_plane)
    tokens = []
    for p in kept:
        for axis in range(3):
            tokens.append(Token(
                s=(float(p.scale[axis]) - stats.scale_mean) / stats.scale_std,
                t=(float(p.translation[axis]) - stats.trans_mean) / stats.trans_std,
                e=0,
                r=(float(p.rotation[axis]) - stats.rot_mean) / stats.rot_std,
                a=int(p.axis_flags[axis]),
                axis_index=axis,
            ))
    tokens[-1] = Token(tokens[-1].s, tokens[-1].t, 1, tokens[-1].r,
                       tokens[-1].a, tokens[-1].axis_index)
    return TokenSequence(tokens, stats)


_SCALE_FLOOR = 1e-6


def detokenize(seq: TokenSequence, stats: NormStats = None,
               symmetry_plane: float = None):
    """Rebuild primitives from tokens; mirrors off-plane primitives when a
    symmetry plane is given.  A trailing partial primitive is dropped."""
    stats = stats if stats is not None else seq.stats
    arr = seq.as_array()
    n_full = len(arr) // 3
    if len(arr) % 3 != 0:
        warnings.warn(f"discarding trailing partial primitive ({len(arr) % 3} tokens)")
    prims = []
    for g in range(n_full):
        rows = arr[3 * g : 3 * g + 3]
        scale = np.maximum(rows[:, IDX_S] * stats.scale_std + stats.scale_mean, _SCALE_FLOOR)
        trans = rows[:, IDX_T] * stats.trans_std + stats.trans_mean
        flags = (rows[:, IDX_A] > 0.5).astype(np.int64)
        rot = np.where(flags == 1, rows[:, IDX_R] * stats.rot_std + stats.rot_mean, 0.0)
        prims.append(Primitive(scale, trans, rot, axis_flags=flags))
    if symmetry_plane is not None:
        mirrored = []
        for p in prims:
            if abs(p.translation[0] - symmetry_plane) > 1e-9:
                src = replace(p, symmetric=True)
                mirrored.append(src)
                mirrored.append(mirror_primitive(src, 0, symmetry_plane))
            else:
                mirrored.append(p)
        prims = mirrored
    return prims
