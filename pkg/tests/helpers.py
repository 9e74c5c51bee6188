"""Shared numeric oracles for the test suite.

Finite differences here are the independent route against which analytic
adjoints are judged; keep them dumb and obviously correct.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from redsunn import autodiff as ad


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                 h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one entry at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(op_fn: Callable[..., ad.Tensor], arrays: Sequence[np.ndarray],
              rng: np.random.Generator, h: float = 1e-5,
              tol: float = 1e-6) -> None:
    """Check every input's adjoint of ``sum(op_fn(*xs) * R)`` against FD.

    R is a fixed random projection so that symmetric errors cannot cancel.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]

    probe_out = op_fn(*[ad.Tensor(a) for a in arrays])
    proj = rng.standard_normal(probe_out.data.shape)

    def run(xs):
        tape = ad.Tape()
        leaves = [tape.leaf(x) for x in xs]
        root = ad.tensor_sum(ad.mul(op_fn(*leaves), proj))
        return tape, leaves, root

    tape, leaves, root = run(arrays)
    tape.backward(root)

    for k, base in enumerate(arrays):
        analytic = leaves[k].grad
        if analytic is None:
            analytic = np.zeros_like(base)

        def f(xk, k=k):
            xs = [a.copy() for a in arrays]
            xs[k] = xk
            _, _, r = run(xs)
            return r.item()

        numeric = numeric_grad(f, base, h=h)
        err = rel_err(analytic, numeric)
        assert err < tol, f"input {k}: analytic vs FD rel err {err:.3e} >= {tol}"
