"""Objective terms for gradient inversion.

The recovery objective is

    total(x) = D(g'(x), g) + lambda_as * R_as(x) + lambda_tv * R_tv(x)

where g'(x) is the gradient the classifier would share if x were its batch,
D is cosine distance or squared error over the whole gradient vector,
R_as is the autoencoder reconstruction error (anomaly score) and R_tv the
squared total variation.  Everything here returns graph tensors so the
attack can differentiate through the inner gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ArgumentError, ConfigurationError, DimensionError
from .nn import AutoEncoderParams, ClassifierParams, forward_autoencoder, forward_classifier
from .tensor import GradientVector, Tensor

MATCHING_KINDS = ("cosine", "mse")
REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the two image priors in the total objective."""

    lambda_as: float = 1e-4
    lambda_tv: float = 1e-2

    def __post_init__(self):
        if self.lambda_as < 0 or self.lambda_tv < 0:
            raise ConfigurationError(f"loss weights must be >= 0, got {self}")


def _check_pair(pred: GradientVector, target: GradientVector) -> None:
    if not pred.tensors or not target.tensors:
        raise ArgumentError("gradient vectors must be non-empty")
    if pred.names != target.names:
        raise ArgumentError(f"gradient segments differ: {pred.names} vs {target.names}")
    for n, p, t in zip(pred.names, pred.tensors, target.tensors):
        if p.shape != t.shape:
            raise DimensionError(f"segment '{n}': shapes {p.shape} vs {t.shape}")


def gradient_matching(pred: GradientVector, target: GradientVector,
                      kind: str = "cosine") -> Tensor:
    """Distance between two gradient vectors, as a scalar graph tensor.

    'cosine' is 1 - <g', g> / (|g'| |g|) over the concatenation of all
    segments; 'mse' is the plain sum of squared differences.  Segments are
    reduced independently and accumulated, which is algebraically identical
    to flattening first.

    A zero-norm prediction would make the cosine undefined; the guard
    returns the neutral distance 1 as a detached constant (zero gradient),
    so a degenerate iterate stalls instead of going NaN.  A zero-norm
    target is a caller bug and raises.
    """
    _check_pair(pred, target)
    if kind == "mse":
        total = None
        for p, t in zip(pred.tensors, target.tensors):
            d = tt.sub(p, t)
            s = tt.mul(d, d).sum()
            total = s if total is None else tt.add(total, s)
        return total
    if kind == "cosine":
        dot = n_pred = n_tgt = None
        for p, t in zip(pred.tensors, target.tensors):
            d = tt.mul(p, t).sum()
            a = tt.mul(p, p).sum()
            b = tt.mul(t, t).sum()
            dot = d if dot is None else tt.add(dot, d)
            n_pred = a if n_pred is None else tt.add(n_pred, a)
            n_tgt = b if n_tgt is None else tt.add(n_tgt, b)
        if float(n_tgt.data) == 0.0:
            raise ArgumentError("cosine matching against a zero-norm target")
        if float(n_pred.data) == 0.0:
            return tt.constant(1.0)
        return tt.sub(1.0, tt.div(dot, tt.sqrt(tt.mul(n_pred, n_tgt))))
    raise ArgumentError(f"unknown matching kind '{kind}', expected one of {MATCHING_KINDS}")


def tv_loss(x: Tensor, reduction: str = "sum") -> Tensor:
    """Squared total variation: sum of squared neighbor differences.

    Only valid neighbor pairs count (no wrap-around), both axes:
    sum_ij |x[i, j+1] - x[i, j]|^2 + |x[i+1, j] - x[i, j]|^2.
    """
    if not isinstance(x, Tensor):
        x = tt.constant(x)
    if x.ndim != 4:
        raise DimensionError(f"tv_loss expects NCHW, got rank {x.ndim}")
    if reduction not in REDUCTIONS:
        raise ArgumentError(f"unknown reduction '{reduction}'")
    n, c, h, w = x.shape
    dx = tt.sub(tt.slice_hw(x, 0, h, 1, w), tt.slice_hw(x, 0, h, 0, w - 1))
    dy = tt.sub(tt.slice_hw(x, 1, h, 0, w), tt.slice_hw(x, 0, h - 1, 0, w))
    total = tt.add(tt.mul(dx, dx).sum(), tt.mul(dy, dy).sum())
    if reduction == "mean":
        return tt.mul(total, 1.0 / x.size)
    return total


def as_loss(x: Tensor, theta_a: AutoEncoderParams, reduction: str = "sum") -> Tensor:
    """Anomaly score of the batch: reconstruction error under the prior.

    The residual is reduced per image first and the per-image scores are
    then summed, so the batch loss is exactly the sum of anomaly scores.
    """
    if reduction not in REDUCTIONS:
        raise ArgumentError(f"unknown reduction '{reduction}'")
    recon = forward_autoencoder(theta_a, x)
    r = tt.sub(recon, x)
    n = x.shape[0]
    per_image = tt.sum_to(tt.mul(r, r), (n, 1, 1, 1))
    total = per_image.sum()
    if reduction == "mean":
        return tt.mul(total, 1.0 / x.size)
    return total


def classifier_gradient(theta_g: ClassifierParams, x: Tensor, labels,
                        create_graph: bool = False) -> GradientVector:
    """Gradient of the batch-mean cross-entropy wrt every model parameter."""
    ce = tt.softmax_cross_entropy(forward_classifier(theta_g, x), labels)
    grads = tt.grad(ce, theta_g.tensors, create_graph=create_graph)
    return GradientVector(theta_g.names, tuple(grads))


def total_objective(x: Tensor,
                    theta_g: ClassifierParams,
                    labels,
                    target: GradientVector,
                    weights: LossWeights,
                    theta_a: AutoEncoderParams | None = None,
                    matching: str = "cosine",
                    reduction: str = "sum") -> tuple[Tensor, dict[str, float]]:
    """Full recovery objective and its per-term breakdown.

    A zero weight skips its term entirely (no graph nodes), so a gipip run
    with lambda_as=0 follows bit-for-bit the same trajectory as ig.  The
    breakdown dict holds raw (unweighted) term values plus the total; terms
    recombine to the total exactly when accumulated in grad, as, tv order.
    """
    pred = classifier_gradient(theta_g, x, labels, create_graph=True)
    total = gradient_matching(pred, target, kind=matching)
    parts = {"grad": float(total.data), "as": 0.0, "tv": 0.0}
    if weights.lambda_as > 0:
        if theta_a is None:
            raise ArgumentError("lambda_as > 0 needs autoencoder parameters")
        a = as_loss(x, theta_a, reduction=reduction)
        parts["as"] = float(a.data)
        total = tt.add(total, tt.mul(a, weights.lambda_as))
    if weights.lambda_tv > 0:
        t = tv_loss(x, reduction=reduction)
        parts["tv"] = float(t.data)
        total = tt.add(total, tt.mul(t, weights.lambda_tv))
    parts["total"] = float(total.data)
    return total, parts
