"""Fold batch normalization + sign into one integer comparison per channel.

For a binary layer with match count ``y`` (see :func:`bitcore.compensate`),
``Binarize(BN(2y - cnum))`` reduces to ``y >= c`` (gamma > 0) or ``y <= c``
(gamma < 0) with ``c = round((cnum + mu - beta * sqrt(var + eps) / gamma) / 2)``.
The first layer works on a true dot product, so there ``c`` drops the
``cnum`` offset and the halving.
"""
import enum
from dataclasses import dataclass

import numpy as np


class Direction(enum.IntEnum):
    GE = 0
    LE = 1
    CONST_ONE = 2
    CONST_ZERO = 3


def round_half_away(x):
    """Round to nearest integer, ties away from zero (exact for doubles)."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    r = np.floor(a)
    r = r + (a - r >= 0.5)
    return (np.sign(x) * r).astype(np.int64)


@dataclass(frozen=True, eq=False)
class BatchNormParams:
    """Per-channel inference-time batch-norm constants.

    Scalars broadcast; every field ends up a 1-D float64 array of the
    same length (the channel count).
    """

    mu: np.ndarray
    sigma2: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 1e-4

    def __post_init__(self):
        arrs = np.broadcast_arrays(*(np.atleast_1d(np.asarray(getattr(self, f), dtype=np.float64))
                                     for f in ("mu", "sigma2", "gamma", "beta")))
        if arrs[0].ndim != 1:
            raise ValueError("batch-norm parameters must be scalars or 1-D")
        for name, a in zip(("mu", "sigma2", "gamma", "beta"), arrs):
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        eps = float(self.epsilon)
        object.__setattr__(self, "epsilon", eps)
        if not np.all(np.isfinite(arrs)) or not np.isfinite(eps):
            raise ValueError("batch-norm parameters must be finite")
        if np.any(self.sigma2 < 0):
            raise ValueError("sigma2 must be >= 0")
        if eps <= 0:
            raise ValueError("epsilon must be > 0")

    def __len__(self):
        return self.mu.size

    @property
    def std(self):
        return np.sqrt(self.sigma2 + self.epsilon)

    @classmethod
    def identity(cls, channels):
        """Parameters for which the affine map is the identity."""
        return cls(np.zeros(channels), np.zeros(channels), np.ones(channels),
                   np.zeros(channels), epsilon=1.0)

    def channel(self, i):
        return BatchNormParams(self.mu[i], self.sigma2[i], self.gamma[i], self.beta[i],
                               self.epsilon)


@dataclass(frozen=True, eq=False)
class FoldedThreshold:
    """Per-channel threshold ``c`` and comparison direction."""

    c: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=np.int64))
        d = np.atleast_1d(np.asarray(self.direction, dtype=np.uint8))
        if c.shape != d.shape or c.ndim != 1:
            raise ValueError("c and direction must be 1-D and equal length")
        if np.any(d > Direction.CONST_ZERO):
            raise ValueError("unknown direction code")
        if np.any(np.abs(c) > 2**31 - 1):
            raise ValueError("threshold does not fit in int32")
        c.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "direction", d)

    def __len__(self):
        return self.c.size

    def __eq__(self, other):
        if not isinstance(other, FoldedThreshold):
            return NotImplemented
        return np.array_equal(self.c, other.c) and np.array_equal(self.direction, other.direction)

    def apply(self, y):
        """Evaluate the comparison; ``y`` has channels on its last axis."""
        y = np.asarray(y)
        if y.shape[-1] != len(self):
            raise ValueError(f"{y.shape[-1]} channels but {len(self)} thresholds")
        d = self.direction
        return np.where(d == Direction.GE, y >= self.c,
                        np.where(d == Direction.LE, y <= self.c,
                                 d == Direction.CONST_ONE)).astype(np.uint8)


def _fold(p, offset, scale):
    gamma = p.gamma
    nz = gamma != 0
    safe = np.where(nz, gamma, 1.0)
    real = (offset + p.mu - p.beta * p.std / safe) * scale
    c = np.where(nz, round_half_away(np.where(nz, real, 0.0)), 0)
    direction = np.where(gamma > 0, Direction.GE,
                         np.where(gamma < 0, Direction.LE,
                                  np.where(p.beta >= 0, Direction.CONST_ONE, Direction.CONST_ZERO)))
    return FoldedThreshold(c, direction)


def real_threshold(p, cnum=None):
    """Unrounded threshold; NaN where gamma == 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if cnum is None:
            return p.mu - p.beta * p.std / p.gamma
        return (cnum + p.mu - p.beta * p.std / p.gamma) * 0.5


def fold_binary_layer(p, cnum):
    if cnum <= 0:
        raise ValueError("cnum must be positive")
    return _fold(p, cnum, 0.5)


def fold_first_layer(p):
    return _fold(p, 0.0, 1.0)


def final_layer_affine(y, cnum, p):
    """Batch-norm of the compensated output-layer value ``2y - cnum``."""
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y > cnum):
        raise ValueError(f"match count outside [0, {cnum}]")
    return ((2 * y - cnum) - p.mu) / p.std * p.gamma + p.beta
