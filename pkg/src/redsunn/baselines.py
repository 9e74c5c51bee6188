"""Classical unmixing baselines: VCA endmember extraction and FCLS.

The endmember extractor follows the vertex component analysis recipe: an
SNR estimate decides between a projective projection (high SNR) and a
lifted mean-removed subspace (low SNR), then p iterations pick the pixel
most orthogonal to the simplex spanned so far.

The abundance solver is fully constrained least squares, run as an
accelerated projected-gradient method over the unit simplex for all
pixels at once, with a KKT-residual stopping rule.
"""

from __future__ import annotations

import logging

import numpy as np

from .posterior import simplex_project_np

Array = np.ndarray

logger = logging.getLogger(__name__)

FCLS_MAX_ITERS = 2000
FCLS_KKT_TOL = 1e-9


def estimate_snr(y: Array, y_mean: Array, x_proj: Array) -> float:
    """SNR (dB) of mixed data given its projection onto the signal subspace."""
    bands, n_pix = y.shape
    p = x_proj.shape[0]
    p_y = (y ** 2).sum() / n_pix
    p_x = (x_proj ** 2).sum() / n_pix + (y_mean ** 2).sum()
    num = p_x - (p / bands) * p_y
    den = p_y - p_x
    if den <= 0 or num <= 0:
        return np.inf
    return float(10.0 * np.log10(num / den))


def vca(y: Array, p: int, rng: np.random.Generator,
        snr_input: float | None = None) -> tuple[Array, Array]:
    """Vertex component analysis on (bands, n_pix) data.

    Returns the endmember estimates (bands, p) and the indices of the
    selected pixels.  The only randomness is the direction draw inside the
    iteration, taken from ``rng``.
    """
    if y.ndim != 2:
        raise ValueError("vca expects a (bands, pixels) matrix")
    bands, n_pix = y.shape
    if not 0 < p <= bands:
        raise ValueError("endmember count must be in [1, bands]")

    y_mean = y.mean(axis=1, keepdims=True)
    y_zero = y - y_mean
    u_d = np.linalg.svd((y_zero @ y_zero.T) / n_pix)[0][:, :p]
    x_p = u_d.T @ y_zero
    snr = estimate_snr(y, y_mean, x_p) if snr_input is None else snr_input
    snr_threshold = 15.0 + 10.0 * np.log10(p)
    logger.debug("vca snr %.2f dB (threshold %.2f)", snr, snr_threshold)

    if snr < snr_threshold:
        # mean-removed (p-1)-subspace, lifted by a constant coordinate
        d = p - 1
        u_d = u_d[:, :d]
        y_proj_full = u_d @ x_p[:d, :] + y_mean
        x = x_p[:d, :]
        c = np.sqrt((x ** 2).sum(axis=0).max())
        y_iter = np.vstack([x, c * np.ones((1, n_pix))])
    else:
        # projective projection in the full p-subspace
        u_d = np.linalg.svd((y @ y.T) / n_pix)[0][:, :p]
        x = u_d.T @ y
        y_proj_full = u_d @ x
        u = x.mean(axis=1, keepdims=True)
        y_iter = x / (x * u).sum(axis=0)

    indices = np.zeros(p, dtype=int)
    a = np.zeros((p, p))
    a[-1, 0] = 1.0
    for i in range(p):
        w = rng.random((p, 1))
        f = w - a @ (np.linalg.pinv(a) @ w)
        f = f / np.sqrt((f ** 2).sum())
        v = f.T @ y_iter
        indices[i] = int(np.argmax(np.abs(v)))
        a[:, i] = y_iter[:, indices[i]]
    return y_proj_full[:, indices], indices


def fcls(y: Array, m: Array) -> Array:
    """Fully constrained least squares abundances for rows of ``y``.

    Minimizes ||y_n - M a_n||^2 over the unit simplex for every pixel at
    once, by accelerated projected gradient descent with adaptive restart.
    Stops when every pixel's KKT residual drops below FCLS_KKT_TOL (scaled
    by the data) or after FCLS_MAX_ITERS iterations.
    """
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[None, :]
    n_pix, bands = y.shape
    p = m.shape[1]
    gram = m.T @ m
    ym = y @ m
    step = 1.0 / max(np.linalg.eigvalsh(gram).max(), 1e-12)
    scale = max(float(np.abs(ym).max()), 1.0)

    a = simplex_project_np(np.linalg.solve(gram + 1e-12 * np.eye(p), ym.T).T)
    z = a.copy()
    t_acc = 1.0
    prev_obj = np.inf
    for _ in range(FCLS_MAX_ITERS):
        grad_z = z @ gram - ym
        a_new = simplex_project_np(z - step * grad_z)
        obj = 0.5 * np.einsum("np,pq,nq->", a_new, gram, a_new) - (a_new * ym).sum()
        if obj > prev_obj:
            t_acc = 1.0  # restart momentum when the surrogate overshoots
        prev_obj = obj
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        z = a_new + ((t_acc - 1.0) / t_next) * (a_new - a)
        a = a_new
        t_acc = t_next

        grad = a @ gram - ym
        active = a > 1e-12
        mu = np.where(active, grad, np.inf).min(axis=1, keepdims=True)
        stationarity = np.where(active, np.abs(grad - mu), 0.0).max()
        feasibility = np.maximum(mu - grad, 0.0).max()
        if max(stationarity, feasibility) < FCLS_KKT_TOL * scale:
            break
    return a[0] if squeeze else a


def fcls_cube(data: Array, endmembers: Array) -> Array:
    """Per-instant FCLS: (T, N, bands) data against (T, bands, p) matrices."""
    t_len = data.shape[0]
    return np.stack([fcls(data[t], endmembers[t]) for t in range(t_len)])
