"""Accuracy metrics, endmember alignment, and parameter accounting.

Estimated materials carry no inherent order, so metrics are computed after
aligning the estimate to the truth with the permutation minimizing the
summed spectral angle, either one global permutation for the whole
sequence or one per instant (useful for per-instant extractors whose
ordering is arbitrary at every t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

Array = np.ndarray


@dataclass
class MetricsReport:
    nrmse_a: float
    nrmse_m: float
    nrmse_y: float
    sam_m: float
    alignment: str = "global"
    nrmse_a_per_t: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"nrmse_a": self.nrmse_a, "nrmse_m": self.nrmse_m,
                "nrmse_y": self.nrmse_y, "sam_m": self.sam_m,
                "alignment": self.alignment,
                "nrmse_a_per_t": self.nrmse_a_per_t}


def nrmse_abundances(a_true: Array, a_est: Array) -> tuple[float, list]:
    """Per-instant normalized errors, root of their mean over time.

    Each instant contributes sum_n ||a - a_hat||^2 / sum_n ||a||^2.
    """
    num = ((a_true - a_est) ** 2).sum(axis=(1, 2))
    den = (a_true ** 2).sum(axis=(1, 2))
    per_t = num / den
    return float(np.sqrt(per_t.mean())), [float(np.sqrt(v)) for v in per_t]


def nrmse_endmembers(m_true: Array, m_est: Array) -> float:
    """Root mean over pixels and instants of per-matrix normalized errors."""
    num = ((m_true - m_est) ** 2).sum(axis=(2, 3))
    den = (m_true ** 2).sum(axis=(2, 3))
    return float(np.sqrt((num / den).mean()))


def nrmse_reconstruction(y: Array, m_est: Array, a_est: Array) -> float:
    """Reconstruction error of m_hat a_hat against the observations."""
    y_hat = np.einsum("tnlp,tnp->tnl", m_est, a_est)
    num = ((y - y_hat) ** 2).sum(axis=(1, 2))
    den = (y ** 2).sum(axis=(1, 2))
    return float(np.sqrt((num / den).mean()))


def sam_endmembers(m_true: Array, m_est: Array) -> float:
    """Mean spectral angle (radians) over instants, pixels, and materials."""
    dots = np.einsum("tnlp,tnlp->tnp", m_true, m_est)
    norms = (np.linalg.norm(m_true, axis=2) * np.linalg.norm(m_est, axis=2))
    cos = np.clip(dots / np.maximum(norms, 1e-12), -1.0, 1.0)
    return float(np.arccos(cos).mean())


def _angle_cost(m_true: Array, m_est: Array) -> Array:
    """Summed spectral angle between est material i and true material j."""
    dots = np.einsum("tnli,tnlj->tnij", m_est, m_true)
    norms = np.einsum("tni,tnj->tnij", np.linalg.norm(m_est, axis=2),
                      np.linalg.norm(m_true, axis=2))
    cos = np.clip(dots / np.maximum(norms, 1e-12), -1.0, 1.0)
    return np.arccos(cos).sum(axis=(0, 1))


def best_permutation(cost: Array) -> tuple[int, ...]:
    """Assignment sigma minimizing sum_j cost[sigma[j], j], by exhaustion.

    Material counts here are tiny (p <= 6 or so), so brute force over p!
    assignments is both exact and fast.
    """
    p = cost.shape[0]
    best, best_val = None, np.inf
    for perm in permutations(range(p)):
        val = sum(cost[perm[j], j] for j in range(p))
        if val < best_val:
            best, best_val = perm, val
    return best


def permutation_align(m_true: Array, m_est: Array, a_est: Array,
                      mode: str = "global") -> tuple[Array, Array, list]:
    """Reorder estimated materials to match the truth.

    mode "global" applies one permutation to the whole sequence; mode
    "per-time" aligns every instant independently.  Returns the aligned
    endmembers, aligned abundances, and the permutation(s) used.
    """
    if mode == "global":
        sigma = best_permutation(_angle_cost(m_true, m_est))
        return m_est[..., sigma], a_est[..., sigma], [list(sigma)]
    if mode == "per-time":
        t_len = m_true.shape[0]
        m_out = np.empty_like(m_est)
        a_out = np.empty_like(a_est)
        sigmas = []
        for t in range(t_len):
            sigma = best_permutation(_angle_cost(m_true[t:t + 1], m_est[t:t + 1]))
            m_out[t] = m_est[t][..., sigma]
            a_out[t] = a_est[t][..., sigma]
            sigmas.append(list(sigma))
        return m_out, a_out, sigmas
    raise ValueError(f"unknown alignment mode {mode!r}")


def evaluate(y: Array, a_true: Array, m_true: Array, a_est: Array,
             m_est: Array, alignment: str = "global") -> MetricsReport:
    """Align the estimate to the truth, then compute all four metrics."""
    m_est, a_est, _ = permutation_align(m_true, m_est, a_est, alignment)
    nrmse_a, per_t = nrmse_abundances(a_true, a_est)
    return MetricsReport(
        nrmse_a=nrmse_a,
        nrmse_m=nrmse_endmembers(m_true, m_est),
        nrmse_y=nrmse_reconstruction(y, m_est, a_est),
        sam_m=sam_endmembers(m_true, m_est),
        alignment=alignment,
        nrmse_a_per_t=per_t)


def count_parameters(p: int, k: int, bands: int, r_sigma_a: int
                     ) -> tuple[int, int]:
    """Closed-form parameter counts (generative, posterior).

    Generative: bands*p reference endmembers, one noise level, r dense
    p->p layers with biases, and 2(k+1)p initial-pdf parameters.
    Posterior: two recurrent cells of width (k+1)p over ``bands`` inputs
    (8 H (H + bands + 1) weights), three scalar gates, the update and
    spread heads, and 2(k+1)p initial-posterior parameters.
    """
    hidden = (k + 1) * p
    theta = bands * p + 1 + p * (p + 1) * r_sigma_a + 2 * hidden
    phi = (8 * hidden * (hidden + bands + 1) + 3
           + 2 * p * p * (k + 1) + 2 * k * p * p * (k + 1) + 2 * hidden)
    return theta, phi
