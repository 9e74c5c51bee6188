"""Amortized variational posterior over the latent state sequence.

Each pixel's observation sequence is encoded by two recurrent passes, one
forward and one backward in time; the per-instant code h_t is the average
of the two hidden states.  The posterior is then built recursively: the
abundance-coordinate mean blends the carried previous estimate with a
data-driven regression, gated by a crude abrupt-change detector u, while
the scaling-coefficient mean is a damped carry plus a learned correction.
Spreads are diagonal, produced by linear heads through exp.

The detector and the regression M_prev^+ y_t are deliberately kept off the
tape (treated as constants): they involve sorting and a batched linear
solve, and the model should not shape its parameters to game the detector.
"""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from .abundances import pi_inverse, softmax_pi
from .autodiff import Array, Tensor
from .mixing import EndmemberBasis, unvec_psi
from .params import LstmCell, PosteriorParams

logger = logging.getLogger(__name__)

GRAM_RIDGE = 1e-12
GRAM_WARN_DET = 1e-12
SIMPLEX_FLOOR = 1e-9


def simplex_project_np(x: Array) -> Array:
    """Euclidean projection of each row onto the unit simplex.

    Sort-based exact algorithm: with the row sorted descending, the active
    set is the largest prefix whose running mean stays below its last
    element, and the projection subtracts that mean and clips at zero.
    """
    x = np.asarray(x, dtype=np.float64)
    p = x.shape[-1]
    s = np.sort(x, axis=-1)[..., ::-1]
    running = (np.cumsum(s, axis=-1) - 1.0) / np.arange(1, p + 1)
    rho = np.sum(s > running, axis=-1)
    tau = np.take_along_axis(running, rho[..., None] - 1, axis=-1)
    return np.maximum(x - tau, 0.0)


def simplex_project(x) -> Tensor:
    """Tape-aware simplex projection of rows.

    The projection is piecewise affine; on the active set S of a row the
    Jacobian is I - (1/|S|) 11^T restricted to S, zero elsewhere, which is
    exact wherever the active set is locally constant.
    """
    x = ad.wrap(x)
    value = simplex_project_np(x.data)
    active = value > 0.0

    def vjp(g):
        masked = np.where(active, g, 0.0)
        count = active.sum(axis=-1, keepdims=True)
        mean_on_active = masked.sum(axis=-1, keepdims=True) / np.maximum(count, 1)
        ad.accumulate(x, np.where(active, g - mean_on_active, 0.0))

    return ad.record_op(value, (x,), vjp)


def pseudoinverse_regression(y_t: Array, m: Array) -> tuple[Array, bool]:
    """Least-squares abundances M^+ y per pixel, (B, bands, p) against (B, bands).

    Solves the normal equations with a vanishing ridge for safety; returns
    the coefficients and whether any Gram matrix was nearly singular.
    """
    gram = np.einsum("blp,blq->bpq", m, m)
    rhs = np.einsum("blp,bl->bp", m, y_t)
    with np.errstate(invalid="ignore"):
        dets = np.linalg.det(gram)
    degenerate = bool(np.any(~(np.abs(dets) >= GRAM_WARN_DET)))
    p = gram.shape[-1]
    trace = np.trace(gram, axis1=-2, axis2=-1)[:, None, None] / p
    gram = gram + (GRAM_RIDGE * np.maximum(trace, 1.0)) * np.eye(p)
    return np.linalg.solve(gram, rhs[..., None])[..., 0], degenerate


def change_scores(y_t: Array, a_prev: Array, m_prev: Array,
                  warned: list | None = None) -> tuple[Array, Array]:
    """Abrupt-change score u in [0, 1/p] and the raw regression, per pixel.

    u is the mean absolute difference (halved) between the previous
    abundances and the simplex projection of the regression of y_t onto the
    previous endmembers: two simplex points differ by at most 2 in L1, so
    u = ||.||_1 / (2p) never exceeds 1/p.
    """
    p = a_prev.shape[-1]
    reg, degenerate = pseudoinverse_regression(y_t, m_prev)
    if degenerate and warned is not None and not warned:
        warned.append(True)
        logger.warning("nearly singular endmember Gram matrix in change detector; "
                       "regression regularized")
    u = np.abs(simplex_project_np(reg) - a_prev).sum(axis=-1, keepdims=True) / (2.0 * p)
    return u, reg


def change_detector(y_t: Array, c_prev: Array, psi_prev: Array, m0: Array,
                    basis: EndmemberBasis, warned: list | None = None
                    ) -> tuple[Array, Array]:
    """Change score against the previous latent state (numpy on purpose;
    see the module docstring)."""
    p = c_prev.shape[-1]
    coeff = unvec_psi(psi_prev, p, basis.k)
    scalings = np.einsum("lk,bkp->blp", basis.matrix, coeff)
    m_prev = m0 * (1.0 + scalings)
    shifted = c_prev - c_prev.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    pi_prev = e / e.sum(axis=-1, keepdims=True)
    return change_scores(y_t, pi_prev, m_prev, warned)


def _lstm_pass(y_seq: Array, cell: LstmCell, reverse: bool) -> list[Tensor]:
    """One recurrent direction over (T, B, bands) data; returns h per instant.

    Input projections for all instants are batched into four matmuls;
    only the hidden-to-hidden products stay inside the time loop.  States
    start at zero.
    """
    t_len, batch, bands = y_seq.shape
    hidden = cell.wh_i.data.shape[0]
    flat = ad.Tensor(y_seq.reshape(t_len * batch, bands))
    xz = {}
    for gate in "ifgo":
        z = ad.linear(flat, getattr(cell, f"wx_{gate}"), getattr(cell, f"b_{gate}"))
        xz[gate] = ad.reshape(z, (t_len, batch, hidden))
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    h = ad.Tensor(np.zeros((batch, hidden)))
    state = ad.Tensor(np.zeros((batch, hidden)))
    out: list[Tensor | None] = [None] * t_len
    for t in order:
        gi = ad.sigmoid(ad.add(ad.take0(xz["i"], t), ad.linear(h, cell.wh_i)))
        gf = ad.sigmoid(ad.add(ad.take0(xz["f"], t), ad.linear(h, cell.wh_f)))
        gg = ad.tanh(ad.add(ad.take0(xz["g"], t), ad.linear(h, cell.wh_g)))
        go = ad.sigmoid(ad.add(ad.take0(xz["o"], t), ad.linear(h, cell.wh_o)))
        state = ad.add(ad.mul(gf, state), ad.mul(gi, gg))
        h = ad.mul(go, ad.tanh(state))
        out[t] = h
    return out


def encode_sequence(y_seq: Array, phi: PosteriorParams) -> list[Tensor]:
    """Bidirectional codes h_t = (h_forward + h_backward) / 2, one per instant."""
    fwd = _lstm_pass(y_seq, phi.fwd, reverse=False)
    bwd = _lstm_pass(y_seq, phi.bwd, reverse=True)
    return [ad.mul(ad.add(f, b), 0.5) for f, b in zip(fwd, bwd)]


def initial_posterior_sample(phi: PosteriorParams, p: int, eps0: Array | None,
                             batch: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Sample (or take the mean of) the shared initial posterior.

    Returns (c0, psi0, xi_c, xi_psi); the latent vector is ordered
    abundance coordinates first, scaling coefficients after.
    """
    xi = ad.exp(phi.log_xi)
    dim = phi.zeta.data.shape[0]
    if eps0 is None:
        eps0 = np.zeros((batch, dim))
    z0 = ad.add(phi.zeta, ad.mul(xi, eps0))
    c0 = ad.slice_axis(z0, 1, 0, p)
    psi0 = ad.slice_axis(z0, 1, p, z0.data.shape[1])
    xi_c = ad.slice_axis(xi, 0, 0, p)
    xi_psi = ad.slice_axis(xi, 0, p, xi.data.shape[0])
    return c0, psi0, xi_c, xi_psi


def posterior_step(h_t: Tensor, c_prev: Tensor, psi_prev: Tensor,
                   phi: PosteriorParams, u: Array, regression: Array
                   ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """One recursive update of the variational factor at instant t.

    u (B, 1) and regression (B, p) come from ``change_detector`` evaluated
    on the previous state's values and enter as constants.  Returns
    (mu_c, sigma_c, mu_psi, sigma_psi).
    """
    carried = ad.mul(ad.mul(phi.alpha1, 1.0 - u), softmax_pi(c_prev))
    update = ad.mul(ad.mul(phi.alpha2, u),
                    ad.add(regression, ad.linear(h_t, phi.w_c)))
    # the blend can leave the simplex (negative regression coordinates,
    # unconstrained alphas); project back and keep strictly interior so the
    # centered log stays well scaled
    blend = simplex_project(ad.add(carried, update))
    mu_c = pi_inverse(ad.clamp_min(blend, SIMPLEX_FLOOR))
    mu_psi = ad.add(ad.mul(phi.beta, psi_prev), ad.linear(h_t, phi.w_psi))
    sigma_c = ad.exp(ad.linear(h_t, phi.v_c))
    sigma_psi = ad.exp(ad.linear(h_t, phi.v_psi))
    return mu_c, sigma_c, mu_psi, sigma_psi
