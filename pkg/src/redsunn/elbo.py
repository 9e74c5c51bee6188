"""Evidence lower bound of the state-space model, and the point estimator.

The bound factorizes over pixels and instants:

    ELBO = sum_t sum_n E_q[log p(y | c, psi)]
         - sum_n KL(q(c0, psi0) || p(c0, psi0))
         - sum_t sum_n E_q[ KL(q(c_t, psi_t | .) || p(c_t, psi_t | c_{t-1}, psi_{t-1})) ]

All Gaussians are diagonal, so each KL is closed form; the remaining
expectations are one-sample Monte Carlo with the reparametrization
sample = mu + sigma * eps.  The nested expectation in the transition term
conditions the prior on the sampled previous state.

``elbo_minibatch`` is written against tape tensors and is the exact
function the trainer differentiates.  The change detector values (u and
the regression) are constants; passing ``detector_override`` replays
frozen values so that finite differences perturb exactly the function the
tape differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .abundances import sigma_a_forward, softmax_pi
from .autodiff import Array, Tensor
from .mixing import (EndmemberBasis, SglmmConfig, assemble_endmembers,
                     expand_scalings, measurement_loglik, mix_pixels,
                     unvec_psi)
from .params import GenerativeParams, PosteriorParams
from .posterior import (change_detector, encode_sequence,
                        initial_posterior_sample, posterior_step)


def kl_diag_gaussians(mu1, sigma1, mu2, sigma2) -> Tensor:
    """KL( N(mu1, diag sigma1^2) || N(mu2, diag sigma2^2) ), summed over the
    last axis.  Accepts tensors or arrays; spreads may broadcast."""
    mu1, sigma1 = ad.wrap(mu1), ad.wrap(sigma1)
    mu2, sigma2 = ad.wrap(mu2), ad.wrap(sigma2)
    log_ratio = ad.sub(ad.log(sigma2), ad.log(sigma1))
    num = ad.add(ad.square(sigma1), ad.square(ad.sub(mu1, mu2)))
    quad = ad.div(num, ad.mul(ad.square(sigma2), 2.0))
    return ad.tensor_sum(ad.add(log_ratio, ad.sub(quad, 0.5)), axis=-1)


@dataclass
class EpsDraws:
    """Reparametrization noise for one minibatch, drawn up front.

    Order of generation from the master generator: eps0, then per instant
    eps_c followed by eps_psi.
    """

    eps0: Array                # (B, (k+1)p)
    eps_c: list                # T arrays (B, p)
    eps_psi: list              # T arrays (B, k*p)

    @classmethod
    def draw(cls, rng: np.random.Generator, t_len: int, batch: int,
             p: int, kp: int) -> "EpsDraws":
        eps0 = rng.standard_normal((batch, p + kp))
        eps_c, eps_psi = [], []
        for _ in range(t_len):
            eps_c.append(rng.standard_normal((batch, p)))
            eps_psi.append(rng.standard_normal((batch, kp)))
        return cls(eps0, eps_c, eps_psi)

    @classmethod
    def zeros(cls, t_len: int, batch: int, p: int, kp: int) -> "EpsDraws":
        return cls(np.zeros((batch, p + kp)),
                   [np.zeros((batch, p)) for _ in range(t_len)],
                   [np.zeros((batch, kp)) for _ in range(t_len)])


@dataclass
class ElboBreakdown:
    """Scalar summary of one evaluation (per-pixel means)."""

    elbo: float
    recon_loglik: float
    kl_initial: float
    kl_transitions: float


def elbo_minibatch(y_seq: Array, theta: GenerativeParams, phi: PosteriorParams,
                   cfg: SglmmConfig, basis: EndmemberBasis, eps: EpsDraws,
                   detector_override: list | None = None,
                   warned: list | None = None) -> dict:
    """One-sample ELBO of a (T, B, bands) block, averaged over pixels.

    ``theta`` and ``phi`` must hold tensors (tape leaves for training,
    constants for evaluation).  Returns the objective and its terms as
    tensors plus the detector values used, so callers can freeze them.
    """
    t_len, batch, _ = y_seq.shape
    p, kp = cfg.p, cfg.psi_dim

    h_codes = encode_sequence(y_seq, phi)
    c_prev, psi_prev, xi_c, xi_psi = initial_posterior_sample(
        phi, p, eps.eps0, batch)

    zeta_c = ad.slice_axis(phi.zeta, 0, 0, p)
    zeta_psi = ad.slice_axis(phi.zeta, 0, p, p + kp)
    kl_initial = ad.add(
        kl_diag_gaussians(zeta_c, xi_c, theta.nu0_c, ad.exp(theta.log_gamma0_c)),
        kl_diag_gaussians(zeta_psi, xi_psi, theta.nu0_psi,
                          ad.exp(theta.log_gamma0_psi)))

    m0_value = theta.m0.data
    recon_total = None
    kl_total = None
    detectors_used = []
    for t in range(t_len):
        if detector_override is not None:
            u, reg = detector_override[t]
        else:
            u, reg = change_detector(y_seq[t], c_prev.data, psi_prev.data,
                                     m0_value, basis, warned)
        detectors_used.append((u, reg))

        mu_c, sigma_c, mu_psi, sigma_psi = posterior_step(
            h_codes[t], c_prev, psi_prev, phi, u, reg)
        c_t = ad.add(mu_c, ad.mul(sigma_c, eps.eps_c[t]))
        psi_t = ad.add(mu_psi, ad.mul(sigma_psi, eps.eps_psi[t]))

        sigma_a = sigma_a_forward(c_prev, theta.sigma_a_w, theta.sigma_a_b)
        kl_t = ad.add(
            kl_diag_gaussians(mu_c, sigma_c, c_prev, sigma_a),
            kl_diag_gaussians(mu_psi, sigma_psi, psi_prev, cfg.sigma_psi))

        scalings = expand_scalings(psi_t, basis, p)
        m_t = assemble_endmembers(theta.m0, scalings)
        y_hat = mix_pixels(m_t, softmax_pi(c_t))
        recon = measurement_loglik(y_seq[t], y_hat, theta.log_sigma_r)

        recon_total = recon if recon_total is None else ad.add(recon_total, recon)
        kl_total = kl_t if kl_total is None else ad.add(kl_total, kl_t)
        c_prev, psi_prev = c_t, psi_t

    per_pixel = ad.sub(ad.sub(recon_total, kl_total), kl_initial)
    objective = ad.mean(per_pixel)
    return {
        "objective": objective,
        "per_pixel": per_pixel,
        "recon": ad.mean(recon_total),
        "kl_initial": kl_initial,
        "kl_transitions": ad.mean(kl_total),
        "detectors": detectors_used,
    }


def elbo_pixel(y_series: Array, theta: GenerativeParams, phi: PosteriorParams,
               cfg: SglmmConfig, basis: EndmemberBasis,
               rng: np.random.Generator) -> ElboBreakdown:
    """Single-pixel ELBO estimate on fresh noise; inputs are plain arrays."""
    y_seq = np.asarray(y_series, dtype=np.float64)[:, None, :]
    eps = EpsDraws.draw(rng, y_seq.shape[0], 1, cfg.p, cfg.psi_dim)
    out = elbo_minibatch(y_seq, theta.map(ad.Tensor), phi.map(ad.Tensor),
                         cfg, basis, eps)
    return ElboBreakdown(
        elbo=float(out["objective"].data),
        recon_loglik=float(out["recon"].data),
        kl_initial=float(out["kl_initial"].data),
        kl_transitions=float(out["kl_transitions"].data))


def estimate(data: Array, theta: GenerativeParams, phi: PosteriorParams,
             cfg: SglmmConfig, basis: EndmemberBasis,
             chunk: int = 512) -> tuple[Array, Array]:
    """Deterministic point estimates for every pixel and instant.

    Runs the posterior recursions at their means (all noise zero) on
    constant tensors.  Returns abundances (T, N, p) and the scaling
    coefficients (T, N, k*p); endmember matrices follow as
    m0 * (1 + basis @ unvec(psi)).
    """
    data = np.asarray(data, dtype=np.float64)
    t_len, n_pix, _ = data.shape
    p, kp = cfg.p, cfg.psi_dim
    theta_c = theta.map(ad.Tensor)
    phi_c = phi.map(ad.Tensor)
    abund = np.empty((t_len, n_pix, p))
    psis = np.empty((t_len, n_pix, kp))
    for start in range(0, n_pix, chunk):
        sl = slice(start, min(start + chunk, n_pix))
        y_seq = data[:, sl, :]
        batch = y_seq.shape[1]
        h_codes = encode_sequence(y_seq, phi_c)
        c_prev, psi_prev, _, _ = initial_posterior_sample(phi_c, p, None, batch)
        for t in range(t_len):
            u, reg = change_detector(y_seq[t], c_prev.data, psi_prev.data,
                                     theta_c.m0.data, basis)
            mu_c, _, mu_psi, _ = posterior_step(h_codes[t], c_prev, psi_prev,
                                                phi_c, u, reg)
            abund[t, sl] = softmax_pi(mu_c).data
            psis[t, sl] = mu_psi.data
            c_prev, psi_prev = mu_c, mu_psi
    return abund, psis


def scalings_to_endmembers(m0: Array, psis: Array, basis: EndmemberBasis,
                           p: int) -> Array:
    """Endmember matrices (..., bands, p) from coefficients (..., k*p)."""
    coeff = unvec_psi(psis, p, basis.k)
    return m0 * (1.0 + np.einsum("lk,...kp->...lp", basis.matrix, coeff))
