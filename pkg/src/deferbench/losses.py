"""Deferral surrogate losses and plain cross-entropy, with analytic gradients.

All losses operate on logit rows over the extended label space: ``n`` real
classes followed by one deferral class at index ``n`` (0-based). They return
per-sample values; reduction (we use the batch mean) happens in the trainer.
Everything is stabilized by subtracting the row max before exponentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deferbench.errors import ConfigError, LabelError, NumericError


@dataclass(frozen=True)
class LabelSpace:
    """Real label space of ``n`` classes, optionally extended by a deferral class.

    The deferral class sits at index ``n`` (0-based). Real targets must never
    equal it.
    """

    n: int
    extended: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"need at least 2 real classes, got n={self.n}")

    @property
    def defer_index(self) -> int:
        if not self.extended:
            raise ConfigError("label space has no deferral class")
        return self.n

    @property
    def width(self) -> int:
        return self.n + 1 if self.extended else self.n


@dataclass(frozen=True)
class OneStageCost:
    """Cost of non-deferral for the one-stage surrogate; alpha in (0, 1]."""

    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class TwoStageCost:
    """Deferral cost for the two-stage surrogate; beta >= 0."""

    beta: float

    def __post_init__(self):
        if not self.beta >= 0.0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")


def _as_batch(logits):
    logits = np.asarray(logits, dtype=np.float64)
    squeeze = logits.ndim == 1
    if squeeze:
        logits = logits[None, :]
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise NumericError(f"logits must be (B, >=2) rows, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    return logits, squeeze


def _as_targets(targets, batch, width, allow_defer=False):
    targets = np.asarray(targets, dtype=np.int64)
    squeeze = targets.ndim == 0
    targets = np.atleast_1d(targets)
    if targets.shape != (batch,):
        raise LabelError(f"expected {batch} targets, got shape {targets.shape}")
    hi = width if allow_defer else width - 1
    if np.any(targets < 0) or np.any(targets >= hi):
        raise LabelError(f"targets must lie in [0, {hi}), got {targets}")
    return targets, squeeze


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    """Row-wise stabilized softmax."""
    logits, squeeze = _as_batch(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if squeeze else p


def loss_cross_entropy(logits, targets) -> np.ndarray:
    """Negative log softmax of the target class."""
    logits, squeeze = _as_batch(logits)
    targets, _ = _as_targets(targets, logits.shape[0], logits.shape[1], allow_defer=True)
    logp = _log_softmax(logits)
    out = -logp[np.arange(logits.shape[0]), targets]
    return out[0] if squeeze else out


def loss_one_stage(logits, targets, alpha: float) -> np.ndarray:
    """One-stage deferral surrogate over ``n`` real classes plus a deferral class.

    Per row with target y, deferral index d and softmax log-probabilities
    ``logp``::

        -alpha * logp[y] - (1 - alpha) * log(p[y] + p[d])

    where the second term is evaluated as a stabilized two-logit log-sum-exp
    minus the full log-sum-exp. At alpha=1 this is plain cross-entropy over
    the extended space.
    """
    OneStageCost(alpha)
    logits, squeeze = _as_batch(logits)
    b, width = logits.shape
    targets, _ = _as_targets(targets, b, width)
    rows = np.arange(b)
    d = width - 1

    zmax = logits.max(axis=1, keepdims=True)
    shifted = logits - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))  # log-sum-exp minus row max
    z_y = shifted[rows, targets]
    z_d = shifted[:, d]
    pair_lse = np.logaddexp(z_y, z_d)
    out = -alpha * (z_y - lse) - (1.0 - alpha) * (pair_lse - lse)
    return out[0] if squeeze else out


def loss_two_stage(logits, targets, beta: float) -> np.ndarray:
    """Two-stage deferral surrogate: cross-entropy plus beta-weighted deferral term.

    Per row: ``-logp[y] - beta * logp[d]`` with d the deferral index.
    """
    TwoStageCost(beta)
    logits, squeeze = _as_batch(logits)
    b, width = logits.shape
    targets, _ = _as_targets(targets, b, width)
    logp = _log_softmax(logits)
    rows = np.arange(b)
    out = -logp[rows, targets] - beta * logp[:, width - 1]
    return out[0] if squeeze else out


def grad_cross_entropy(logits, targets) -> np.ndarray:
    """d loss / d logits for ``loss_cross_entropy``: softmax minus one-hot."""
    logits, squeeze = _as_batch(logits)
    targets, _ = _as_targets(targets, logits.shape[0], logits.shape[1], allow_defer=True)
    g = softmax(logits)
    g[np.arange(logits.shape[0]), targets] -= 1.0
    return g[0] if squeeze else g


def grad_one_stage(logits, targets, alpha: float) -> np.ndarray:
    """d loss / d logits for ``loss_one_stage``.

    Equals ``p - alpha * onehot(y) - (1 - alpha) * q`` where q is the softmax
    restricted to {y, d} (zero elsewhere).
    """
    OneStageCost(alpha)
    logits, squeeze = _as_batch(logits)
    b, width = logits.shape
    targets, _ = _as_targets(targets, b, width)
    rows = np.arange(b)
    d = width - 1

    g = softmax(logits)
    g[rows, targets] -= alpha

    z_y = logits[rows, targets]
    z_d = logits[:, d]
    m = np.maximum(z_y, z_d)
    e_y = np.exp(z_y - m)
    e_d = np.exp(z_d - m)
    denom = e_y + e_d
    g[rows, targets] -= (1.0 - alpha) * e_y / denom
    g[rows, d] -= (1.0 - alpha) * e_d / denom
    return g[0] if squeeze else g


def grad_two_stage(logits, targets, beta: float) -> np.ndarray:
    """d loss / d logits for ``loss_two_stage``: ``(1+beta) p - onehot(y) - beta onehot(d)``."""
    TwoStageCost(beta)
    logits, squeeze = _as_batch(logits)
    b, width = logits.shape
    targets, _ = _as_targets(targets, b, width)
    rows = np.arange(b)
    g = (1.0 + beta) * softmax(logits)
    g[rows, targets] -= 1.0
    g[:, width - 1] -= beta
    return g[0] if squeeze else g


@dataclass(frozen=True)
class LossSpec:
    """Named loss with its cost parameter, as consumed by the trainer.

    kind: one of ``cross_entropy``, ``one_stage``, ``two_stage``.
    """

    kind: str
    alpha: float = 1.0
    beta: float = 0.0

    _KINDS = ("cross_entropy", "one_stage", "two_stage")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == "one_stage":
            OneStageCost(self.alpha)
        if self.kind == "two_stage":
            TwoStageCost(self.beta)

    def loss(self, logits, targets) -> np.ndarray:
        if self.kind == "cross_entropy":
            return loss_cross_entropy(logits, targets)
        if self.kind == "one_stage":
            return loss_one_stage(logits, targets, self.alpha)
        return loss_two_stage(logits, targets, self.beta)

    def grad(self, logits, targets) -> np.ndarray:
        if self.kind == "cross_entropy":
            return grad_cross_entropy(logits, targets)
        if self.kind == "one_stage":
            return grad_one_stage(logits, targets, self.alpha)
        return grad_two_stage(logits, targets, self.beta)
