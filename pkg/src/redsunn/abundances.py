"""Abundances in a softmax basis and their learned random-walk dynamics.

Abundance vectors live on the unit simplex.  Internally each pixel carries
an unconstrained vector c with a = softmax(c); the extra degree of freedom
along the all-ones direction is pinned by the centered inverse map.  The
temporal model is a Gaussian random walk on c whose (scalar, per pixel)
step size is produced by a small dense network from the previous state,
letting the walk widen where the scene changed.

The Dirichlet-to-Gaussian Laplace bridge (``dirichlet_laplace_softmax``)
maps Dirichlet concentrations to a Gaussian over c; it is kept as a
validation oracle for the softmax-basis geometry and is not part of the
training path.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor

DIRICHLET_TIGHTNESS = 0.1  # epsilon of the g() factor pinning the ones direction


def softmax_pi(c, axis: int = -1) -> Tensor:
    """Map unconstrained coordinates to the simplex, rows summing to one."""
    return ad.softmax(c, axis=axis)


def pi_inverse(a, axis: int = -1) -> Tensor:
    """Centered inverse of softmax_pi: log a minus its mean over ``axis``.

    Entries are floored at the log clamp, so inputs slightly off the
    simplex (or with exact zeros) stay finite.  softmax(pi_inverse(a)) == a
    for strictly positive simplex points.
    """
    logs = ad.log(a)
    return ad.sub(logs, ad.mean(logs, axis=axis, keepdims=True))


def dirichlet_laplace_softmax(alpha: Array,
                              eps: float = DIRICHLET_TIGHTNESS) -> tuple[Array, Array]:
    """Laplace approximation of a Dirichlet in the softmax basis.

    Returns the mode mu (the centered log concentrations) and the
    covariance, the inverse of the negative log-density Hessian

        H = S (diag(p) - p p^T) + eps 11^T,  p = alpha / S,  S = sum(alpha).

    The eps term regularizes the ones direction that softmax ignores.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("Dirichlet concentrations must be positive")
    mu = np.log(alpha) - np.log(alpha).mean()
    s = alpha.sum()
    p = alpha / s
    h = s * (np.diag(p) - np.outer(p, p)) + eps * np.ones((alpha.size, alpha.size))
    return mu, np.linalg.inv(h)


def dirichlet_softmax_logpdf(c: Array, alpha: Array,
                             eps: float = DIRICHLET_TIGHTNESS) -> float:
    """Unnormalized log-density whose Laplace fit is the pair above.

    log q(c) = sum_i alpha_i log softmax(c)_i - eps (sum c)^2 / 2 + const.
    """
    c = np.asarray(c, dtype=np.float64)
    shifted = c - c.max()
    logpi = shifted - np.log(np.exp(shifted).sum())
    return float(np.dot(alpha, logpi) - 0.5 * eps * c.sum() ** 2)


def sigma_a_forward(c_prev, weights: list, biases: list) -> Tensor:
    """Per-pixel transition spread from the previous coordinates.

    A stack of dense p -> p layers with ReLU between them, closed by a
    parameter-free head sigma = exp(mean(z)); output shape (B, 1), always
    positive.
    """
    z = ad.wrap(c_prev)
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = ad.linear(z, w, b)
        if i != last:
            z = ad.relu(z)
    return ad.exp(ad.mean(z, axis=-1, keepdims=True))


def c_transition_params(c_prev, weights: list, biases: list):
    """Random-walk prior on c: mean c_prev, spread sigma_a(c_prev) per pixel."""
    return c_prev, sigma_a_forward(c_prev, weights, biases)
