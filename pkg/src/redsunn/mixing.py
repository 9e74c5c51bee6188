"""Spectral mixing with smooth per-pixel endmember variability.

Observed pixels follow a linear mixture y = M a + noise where the
endmember matrix M varies per pixel and per instant as

    M = M0 * (1 + D unvec(psi)),

an elementwise product of a shared reference matrix M0 (bands x P) with
low-dimensional multiplicative scalings.  D holds the first K orthonormal
DCT-II basis vectors, so each endmember's scaling curve over the bands is
a smooth function with K degrees of freedom; K = 1 reduces to one scalar
scaling per endmember.  psi stacks the K x P coefficient matrix column by
column into a length K*P vector, one column per endmember.

The scaling coefficients follow a Gaussian random walk over time with a
fixed isotropic step size sigma_psi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class SglmmConfig:
    """Dimensions and noise levels of the mixing model.

    p: endmembers, k: smoothness degrees of freedom per endmember,
    bands: spectral bands, sigma_psi: random-walk step of the scaling
    coefficients.
    """

    p: int
    k: int
    bands: int
    sigma_psi: float

    def __post_init__(self):
        if min(self.p, self.k, self.bands) < 1:
            raise ValueError("p, k and bands must be positive")
        if self.k > self.bands:
            raise ValueError("cannot use more basis functions than bands")
        if self.sigma_psi <= 0:
            raise ValueError("sigma_psi must be positive")

    @property
    def psi_dim(self) -> int:
        return self.k * self.p


def build_dct_basis(bands: int, k: int) -> Array:
    """First k orthonormal DCT-II basis vectors as columns of a (bands, k) matrix.

    Column 0 is constant; D.T @ D = I_k.
    """
    n = np.arange(bands)
    d = np.empty((bands, k))
    for j in range(k):
        col = np.cos(np.pi * (2.0 * n + 1.0) * j / (2.0 * bands))
        col *= np.sqrt((1.0 if j == 0 else 2.0) / bands)
        d[:, j] = col
    return d


@dataclass(frozen=True)
class EndmemberBasis:
    """The fixed smoothness dictionary D together with its dimensions."""

    matrix: Array  # (bands, k)

    @classmethod
    def create(cls, bands: int, k: int) -> "EndmemberBasis":
        return cls(build_dct_basis(bands, k))

    @property
    def bands(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]


def unvec_psi(psi: Array, p: int, k: int) -> Array:
    """Column-major unstacking of (..., k*p) coefficients into (..., k, p)."""
    lead = psi.shape[:-1]
    return psi.reshape(lead + (p, k)).swapaxes(-1, -2)


def expand_scalings(psi, basis: EndmemberBasis, p: int) -> Tensor:
    """Map coefficients (B, k*p) to additive scaling curves (B, bands, p)."""
    psi = ad.wrap(psi)
    d = basis.matrix
    k = basis.k
    batch = psi.data.shape[0]
    coeff = unvec_psi(psi.data, p, k)  # (B, k, p)
    value = np.einsum("lk,bkp->blp", d, coeff)

    def vjp(g):
        gc = np.einsum("lk,blp->bkp", d, g)
        ad.accumulate(psi, gc.swapaxes(1, 2).reshape(batch, k * p))

    return ad.record_op(value, (psi,), vjp)


def assemble_endmembers(m0, scalings) -> Tensor:
    """M = m0 * (1 + S), broadcasting m0 (bands, p) over the batch."""
    return ad.mul(m0, ad.add(scalings, 1.0))


def mix_pixels(m, a) -> Tensor:
    """Per-pixel mixture (B, bands, p) x (B, p) -> (B, bands)."""
    m, a = ad.wrap(m), ad.wrap(a)
    value = np.einsum("blp,bp->bl", m.data, a.data)

    def vjp(g):
        ad.accumulate(m, g[:, :, None] * a.data[:, None, :])
        ad.accumulate(a, np.einsum("blp,bl->bp", m.data, g))

    return ad.record_op(value, (m, a), vjp)


def measurement_loglik(y: Array, mu, log_sigma_r) -> Tensor:
    """log N(y; mu, sigma_r^2 I) per pixel, (B, bands) -> (B,).

    sigma_r is carried in log domain so positivity holds by construction.
    """
    bands = y.shape[-1]
    diff = ad.sub(mu, y)
    ss = ad.tensor_sum(ad.square(diff), axis=-1)
    inv_var = ad.exp(ad.mul(log_sigma_r, -2.0))
    const = -0.5 * bands * LOG_2PI
    return ad.add(ad.add(ad.mul(ss, ad.mul(inv_var, -0.5)),
                         ad.mul(log_sigma_r, -float(bands))), const)


def psi_transition_params(psi_prev, cfg: SglmmConfig):
    """Random-walk prior on the scalings: mean psi_prev, isotropic sigma_psi."""
    return psi_prev, cfg.sigma_psi


def gaussian_logpdf_iso(x: Array, mean: Array, sigma: float) -> Array:
    """log N(x; mean, sigma^2 I) over the last axis (numpy, test oracle)."""
    d = x.shape[-1]
    ss = ((x - mean) ** 2).sum(axis=-1)
    return -0.5 * d * LOG_2PI - d * np.log(sigma) - ss / (2.0 * sigma ** 2)
