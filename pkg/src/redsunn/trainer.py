"""Stochastic training of both parameter sets by maximizing the ELBO.

One Adam step per minibatch of pixels, gradients from a fresh tape each
step.  All randomness (init, shuffling, reparametrization noise) comes
from a single seeded generator in a fixed draw order.  Each batch is cut
into fixed 32-row chunks whose partial results are combined in chunk
order; the thread count only decides how many chunks run concurrently, so
results are bit-identical for any --threads value.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .elbo import EpsDraws, elbo_minibatch
from .mixing import EndmemberBasis, SglmmConfig
from .optim import AdamState, adam_step
from .params import (SIGMA_R_FLOOR, GenerativeParams, PosteriorParams,
                     as_dict, collect_grads, init_generative, init_posterior)

logger = logging.getLogger(__name__)

CHUNK_ROWS = 32


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    threads: int = 1
    r_sigma_a: int = 2


class DivergenceError(RuntimeError):
    """Training hit a non-finite objective or gradient.

    Carries the history so far and the last finite parameters so callers
    can persist diagnostics before exiting.
    """

    def __init__(self, message: str, history: list,
                 theta: GenerativeParams | None, phi: PosteriorParams | None):
        super().__init__(message)
        self.history = history
        self.theta = theta
        self.phi = phi


@dataclass
class _ChunkResult:
    rows: int
    objective: float
    recon: float
    kl_initial: float
    kl_transitions: float
    grads: dict = field(default_factory=dict)


def _run_chunk(y_chunk, eps_chunk, theta, phi, cfg, basis, warned) -> _ChunkResult:
    tape = ad.Tape()
    theta_t = theta.tensors(tape)
    phi_t = phi.tensors(tape)
    out = elbo_minibatch(y_chunk, theta_t, phi_t, cfg, basis, eps_chunk,
                         warned=warned)
    res = _ChunkResult(
        rows=y_chunk.shape[1],
        objective=float(out["objective"].data),
        recon=float(out["recon"].data),
        kl_initial=float(out["kl_initial"].data),
        kl_transitions=float(out["kl_transitions"].data))
    if not np.isfinite(res.objective):
        raise DivergenceError(
            "non-finite ELBO: recon={:.6g} kl_initial={:.6g} kl_transitions={:.6g}"
            .format(res.recon, res.kl_initial, res.kl_transitions), [], None, None)
    tape.backward(out["objective"])
    res.grads = collect_grads(theta_t)
    res.grads.update(collect_grads(phi_t))
    return res


def _split_eps(eps: EpsDraws, lo: int, hi: int) -> EpsDraws:
    return EpsDraws(eps.eps0[lo:hi],
                    [e[lo:hi] for e in eps.eps_c],
                    [e[lo:hi] for e in eps.eps_psi])


def train(data: np.ndarray, cfg: SglmmConfig, m0_init: np.ndarray,
          tc: TrainConfig, epoch_callback=None
          ) -> tuple[GenerativeParams, PosteriorParams, list[dict]]:
    """Fit theta and phi to a (T, N, bands) pixel sequence.

    The per-epoch history records size-weighted minibatch means of the
    objective and its terms (an online estimate of the training ELBO),
    the current sigma_r, and wall time.  Raises DivergenceError if the
    objective or any gradient goes non-finite; maximizing the ELBO means
    Adam steps on its negative gradient, implemented by feeding -grad.
    """
    data = np.asarray(data, dtype=np.float64)
    t_len, n_pix, bands = data.shape
    if bands != cfg.bands:
        raise ValueError(f"data has {bands} bands, config says {cfg.bands}")
    rng = np.random.default_rng(tc.seed)
    theta = init_generative(cfg, tc.r_sigma_a, m0_init, rng)
    phi = init_posterior(cfg, rng)
    basis = EndmemberBasis.create(cfg.bands, cfg.k)
    adam = AdamState(lr=tc.learning_rate)
    live = {**as_dict(theta), **as_dict(phi)}
    log_floor = np.log(SIGMA_R_FLOOR)
    warned: list = []
    history: list[dict] = []
    threads = max(1, tc.threads)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(tc.epochs):
            tic = time.perf_counter()
            perm = rng.permutation(n_pix)
            sums = {"elbo": 0.0, "recon": 0.0, "kl_initial": 0.0,
                    "kl_transitions": 0.0}
            seen = 0
            for start in range(0, n_pix, tc.batch_size):
                idx = perm[start:start + tc.batch_size]
                y_batch = data[:, idx, :]
                batch = idx.size
                eps = EpsDraws.draw(rng, t_len, batch, cfg.p, cfg.psi_dim)

                bounds = _chunk_bounds(batch)
                jobs = [(y_batch[:, lo:hi, :], _split_eps(eps, lo, hi))
                        for lo, hi in bounds]
                try:
                    if pool is None:
                        results = [_run_chunk(y, e, theta, phi, cfg, basis, warned)
                                   for y, e in jobs]
                    else:
                        futures = [pool.submit(_run_chunk, y, e, theta, phi,
                                               cfg, basis, warned)
                                   for y, e in jobs]
                        results = [f.result() for f in futures]
                except DivergenceError as err:
                    raise DivergenceError(
                        f"epoch {epoch}: {err}", history, theta, phi) from None

                grads: dict[str, np.ndarray] = {}
                stats = dict.fromkeys(sums, 0.0)
                for res in results:
                    w = res.rows / batch
                    stats["elbo"] += w * res.objective
                    stats["recon"] += w * res.recon
                    stats["kl_initial"] += w * res.kl_initial
                    stats["kl_transitions"] += w * res.kl_transitions
                    for name, g in res.grads.items():
                        contribution = w * g
                        grads[name] = (grads.get(name, 0.0) + contribution)

                # ascend the bound: Adam minimizes, so negate
                neg = {name: -g for name, g in grads.items()}
                try:
                    adam_step(adam, live, neg)
                except FloatingPointError as err:
                    raise DivergenceError(f"epoch {epoch}: {err}",
                                          history, theta, phi) from None
                np.maximum(theta.log_sigma_r, log_floor, out=theta.log_sigma_r)

                for key in sums:
                    sums[key] += stats[key] * batch
                seen += batch

            entry = {"epoch": epoch,
                     **{k: sums[k] / seen for k in sums},
                     "sigma_r": float(np.exp(theta.log_sigma_r)),
                     "wall_time_s": time.perf_counter() - tic}
            history.append(entry)
            logger.info("epoch %d elbo %.4f sigma_r %.3g",
                        epoch, entry["elbo"], entry["sigma_r"])
            if epoch_callback is not None:
                epoch_callback(entry)
    finally:
        if pool is not None:
            pool.shutdown()
    return theta, phi, history


def _chunk_bounds(batch: int) -> list[tuple[int, int]]:
    """Fixed 32-row spans of [0, batch), independent of the thread count."""
    return [(lo, min(lo + CHUNK_ROWS, batch)) for lo in range(0, batch, CHUNK_ROWS)]
