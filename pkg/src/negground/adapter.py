"""Low-rank adapters with a rectifier between the down- and up-projection.

``forward(x) = W x + alpha * B relu(A x)`` with ``W`` frozen. The module also
carries the block placement schemes and the attention-by-word-class
diagnostic used to see where negation cues lose attention.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .exceptions import DimensionMismatch, NonFiniteInput, RowNotNormalized, ShapeMismatch, UnknownScheme

DEFAULT_RANK = 4
DEFAULT_ALPHA = 1.0

PLACEMENTS = {
    "shallow": (0, 1, 2),
    "strided": (1, 3, 5),
    "deep": (3, 4, 5),
}


def relu(z):
    return np.maximum(z, 0.0)


def relu_grad(z):
    # subgradient at exactly 0 is taken as 0
    return (z > 0).astype(z.dtype)


class LoraLinear:
    """Frozen square projection ``W`` plus a trainable ReLU low-rank branch.

    ``W`` is stored read-only; training code only ever touches ``A`` and ``B``.
    """

    def __init__(self, W, A, B, alpha=DEFAULT_ALPHA):
        W = np.array(W, dtype=np.float64)
        A = np.array(A, dtype=np.float64)
        B = np.array(B, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionMismatch(f"W must be square, got {W.shape}")
        d = W.shape[0]
        if A.ndim != 2 or A.shape[1] != d or B.shape != (d, A.shape[0]):
            raise DimensionMismatch(f"expected A (r, {d}) and B ({d}, r), got {A.shape} and {B.shape}")
        if A.shape[0] < 1 or A.shape[0] > d:
            raise DimensionMismatch(f"rank must satisfy 1 <= r <= d, got r={A.shape[0]}, d={d}")
        for name, m in (("W", W), ("A", A), ("B", B)):
            if not np.isfinite(m).all():
                raise NonFiniteInput(f"{name} contains NaN or Inf")
        W.flags.writeable = False
        self.W, self.A, self.B = W, A, B
        self.alpha = float(alpha)

    @classmethod
    def init(cls, W, r=DEFAULT_RANK, alpha=DEFAULT_ALPHA, random_state=None) -> "LoraLinear":
        """Uniform ``A`` scaled by ``1/sqrt(d)`` and zero ``B`` (no-op at init)."""
        W = np.asarray(W, dtype=np.float64)
        d = W.shape[0]
        rng = check_random_state(random_state)
        bound = 1.0 / np.sqrt(d)
        A = rng.uniform(-bound, bound, size=(r, d))
        return cls(W, A, np.zeros((d, r)), alpha)

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def r(self) -> int:
        return self.A.shape[0]

    def _check_x(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d or x.ndim not in (1, 2):
            raise DimensionMismatch(f"input has shape {x.shape}, expected (..., {self.d})")
        if not np.isfinite(x).all():
            raise NonFiniteInput("input contains NaN or Inf")
        return x

    def forward(self, x):
        """Apply the layer to one vector ``(d,)`` or a batch ``(N, d)``."""
        x = self._check_x(x)
        if x.ndim == 1:
            return self.W @ x + self.alpha * (self.B @ relu(self.A @ x))
        return x @ self.W.T + self.alpha * (relu(x @ self.A.T) @ self.B.T)

    __call__ = forward

    def backward(self, x, grad_out):
        """Gradients of ``sum(grad_out * forward(x))`` w.r.t. ``A`` and ``B``.

        Batched inputs are summed over the batch axis. ``W`` gets nothing.
        """
        x = self._check_x(x)
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != x.shape:
            raise DimensionMismatch(f"upstream gradient has shape {g.shape}, expected {x.shape}")
        X2, G2 = np.atleast_2d(x), np.atleast_2d(g)
        pre = X2 @ self.A.T                      # (N, r)
        grad_B = self.alpha * G2.T @ relu(pre)   # (d, r)
        grad_A = self.alpha * ((G2 @ self.B) * relu_grad(pre)).T @ X2  # (r, d)
        return grad_A, grad_B

    def step(self, grad_A, grad_B, learning_rate):
        self.A -= learning_rate * grad_A
        self.B -= learning_rate * grad_B

    def copy(self) -> "LoraLinear":
        return LoraLinear(self.W.copy(), self.A.copy(), self.B.copy(), self.alpha)

    def __repr__(self):
        return f"LoraLinear(d={self.d}, r={self.r}, alpha={self.alpha})"


# ------------------------------------------------------------ gradient check

def numerical_gradients(layer: LoraLinear, x, grad_out, eps=1e-5):
    """Central finite differences of ``sum(grad_out * forward(x))``."""
    g = np.asarray(grad_out, dtype=np.float64)

    def loss():
        return float(np.sum(g * layer.forward(x)))

    grads = []
    for param in (layer.A, layer.B):
        num = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + eps
            plus = loss()
            param[idx] = orig - eps
            minus = loss()
            param[idx] = orig
            num[idx] = (plus - minus) / (2 * eps)
        grads.append(num)
    return tuple(grads)


def relative_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def random_layer(d, r, rng, alpha=None) -> LoraLinear:
    """A layer with every parameter random (non-zero ``B``), for checks."""
    alpha = rng.uniform(0.5, 2.0) if alpha is None else alpha
    return LoraLinear(rng.normal(size=(d, d)), rng.normal(size=(r, d)), rng.normal(size=(d, r)), alpha)


def gradient_check(n_layers=50, max_d=8, max_r=4, eps=1e-5, kink_margin=1e-6, seed=0) -> dict:
    """Compare analytic and finite-difference gradients on random layers.

    Inputs whose rectifier pre-activations sit closer to zero than the
    perturbation can move them are resampled.
    """
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_layers):
        d = int(rng.integers(1, max_d + 1))
        r = int(rng.integers(1, min(max_r, d) + 1))
        layer = random_layer(d, r, rng)
        while True:
            x = rng.normal(size=d)
            margin = max(kink_margin, 2 * eps * np.abs(x).max())
            if np.abs(layer.A @ x).min() > margin:
                break
        g = rng.normal(size=d)
        ana = layer.backward(x, g)
        num = numerical_gradients(layer, x, g, eps)
        errors.append(max(relative_error(ana[0], num[0]), relative_error(ana[1], num[1])))
    return {"n_layers": n_layers, "max_relative_error": max(errors), "errors": errors}


# ------------------------------------------------------------------ placement

@dataclass(frozen=True)
class PlacementConfig:
    scheme: str = "deep"
    block_indices: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "block_indices", placement(self.scheme))


def placement(scheme: str) -> tuple:
    """Decoder block indices that receive adapters under a placement scheme."""
    try:
        return PLACEMENTS[scheme]
    except KeyError:
        raise UnknownScheme(f"unknown placement {scheme!r}; choose from {sorted(PLACEMENTS)}") from None


# ---------------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class AttentionDiagnostics:
    per_class: dict
    per_block: list

    def to_dict(self) -> dict:
        return {"per_class": dict(self.per_class), "per_block": [dict(b) for b in self.per_block]}


def attention_by_class(attn: Sequence, classes: Sequence[str], atol=1e-4) -> AttentionDiagnostics:
    """Mean attention weight received by each word class, per block and overall.

    ``attn`` holds one matrix per block, shaped ``(queries, tokens)`` or
    ``(heads, queries, tokens)``; heads and queries are averaged together.
    Classes with no tokens are left out rather than reported as zero.
    """
    classes = list(classes)
    labels = sorted(set(classes))
    members = {c: np.array([i for i, k in enumerate(classes) if k == c]) for c in labels}
    per_block = []
    totals = {c: 0.0 for c in labels}
    counts = {c: 0 for c in labels}
    for b, block in enumerate(attn):
        a = np.asarray(block, dtype=np.float64)
        if a.ndim not in (2, 3) or a.shape[-1] != len(classes):
            raise ShapeMismatch(f"block {b}: shape {a.shape} does not match {len(classes)} tokens")
        if not np.isfinite(a).all():
            raise NonFiniteInput(f"block {b} contains NaN or Inf")
        if not np.allclose(a.sum(axis=-1), 1.0, rtol=0, atol=atol):
            raise RowNotNormalized(f"block {b}: attention rows must sum to 1")
        rows = a.reshape(-1, a.shape[-1])
        stats = {}
        for c in labels:
            sub = rows[:, members[c]]
            stats[c] = float(sub.mean())
            totals[c] += float(sub.sum())
            counts[c] += sub.size
        per_block.append(stats)
    per_class = {c: totals[c] / counts[c] for c in labels if counts[c]}
    return AttentionDiagnostics(per_class, per_block)


# ------------------------------------------------------------------ estimator

class LoraAdapter(BaseEstimator, RegressorMixin):
    """Fit the low-rank branch of a frozen linear map to target projections.

    The objective is mean squared error between ``forward(X)`` and ``Y``,
    minimized with full-batch gradient descent on ``A`` and ``B`` only.

    Parameters
    ----------
    base_weight : array of shape (d, d), optional
        Frozen projection. Identity when omitted.
    rank, alpha : int, float
        Adapter rank and update scale.
    learning_rate, max_iter, tol : float, int, float
        Gradient descent settings; stops early when the loss improves by
        less than ``tol``.
    random_state : int, RandomState or None
    """

    def __init__(self, base_weight=None, rank=DEFAULT_RANK, alpha=DEFAULT_ALPHA,
                 learning_rate=0.05, max_iter=500, tol=1e-10, random_state=None):
        self.base_weight = base_weight
        self.rank = rank
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, Y):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.ndim != 2 or Y.shape != X.shape:
            raise DimensionMismatch(f"X and Y must both be (N, d); got {X.shape} and {Y.shape}")
        d = X.shape[1]
        W = np.eye(d) if self.base_weight is None else np.asarray(self.base_weight, dtype=np.float64)
        self.layer_ = LoraLinear.init(W, self.rank, self.alpha, self.random_state)
        # B = 0 kills the gradient of A on step one; B moves first, then A follows
        n = X.shape[0]
        losses = []
        for it in range(self.max_iter):
            resid = self.layer_.forward(X) - Y
            losses.append(0.5 * float(np.sum(resid ** 2)) / n)
            if it and losses[-2] - losses[-1] < self.tol:
                break
            gA, gB = self.layer_.backward(X, resid / n)
            self.layer_.step(gA, gB, self.learning_rate)
        self.loss_curve_ = losses
        self.n_iter_ = len(losses)
        return self

    def predict(self, X):
        check_is_fitted(self, "layer_")
        return self.layer_.forward(X)
