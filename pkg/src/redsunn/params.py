"""Trainable parameter containers for the generative and posterior halves.

Arrays are plain float64 ndarrays; ``named()`` yields (dotted-name, array)
pairs in a fixed canonical order, which defines the Adam state keys, the
npz layout, and the order gradients are applied in.  ``tensors(tape)``
returns a same-shaped container whose fields are tape leaves, so model code
is written once and runs both for training (live tape) and inference
(constants).

Positive quantities (sigma_r, gamma0, xi) are stored as logs; shapes and
counts are unchanged by that choice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autodiff import Array, Tape
from .mixing import SglmmConfig
from .optim import glorot_init

SIGMA_R_INIT = 1e-4
SIGMA_R_FLOOR = 1e-5


@dataclass
class LstmCell:
    """One direction's recurrence weights; gates ordered i, f, g, o.

    Input-to-hidden matrices are (hidden, n_in), hidden-to-hidden are
    (hidden, hidden); biases are zero-initialized.
    """

    wx_i: Array
    wh_i: Array
    b_i: Array
    wx_f: Array
    wh_f: Array
    b_f: Array
    wx_g: Array
    wh_g: Array
    b_g: Array
    wx_o: Array
    wh_o: Array
    b_o: Array

    FIELDS = ("wx_i", "wh_i", "b_i", "wx_f", "wh_f", "b_f",
              "wx_g", "wh_g", "b_g", "wx_o", "wh_o", "b_o")

    @classmethod
    def init(cls, hidden: int, n_in: int, rng: np.random.Generator) -> "LstmCell":
        fields = {}
        for gate in "ifgo":
            fields[f"wx_{gate}"] = glorot_init((hidden, n_in), rng)
            fields[f"wh_{gate}"] = glorot_init((hidden, hidden), rng)
            fields[f"b_{gate}"] = np.zeros(hidden)
        return cls(**fields)

    def named(self, prefix: str) -> Iterator[tuple[str, Array]]:
        for f in self.FIELDS:
            yield f"{prefix}.{f}", getattr(self, f)

    def map(self, fn) -> "LstmCell":
        return LstmCell(**{f: fn(getattr(self, f)) for f in self.FIELDS})


@dataclass
class GenerativeParams:
    """theta: reference endmembers, noise level, walk-width net, initial pdfs."""

    m0: Array                 # (bands, p)
    log_sigma_r: Array        # scalar
    sigma_a_w: list           # r layers of (p, p)
    sigma_a_b: list           # r layers of (p,)
    nu0_c: Array              # (p,)
    nu0_psi: Array            # (k*p,)
    log_gamma0_c: Array       # (p,)
    log_gamma0_psi: Array     # (k*p,)

    def named(self, prefix: str = "theta") -> Iterator[tuple[str, Array]]:
        yield f"{prefix}.m0", self.m0
        yield f"{prefix}.log_sigma_r", self.log_sigma_r
        for i, (w, b) in enumerate(zip(self.sigma_a_w, self.sigma_a_b)):
            yield f"{prefix}.sigma_a.w{i}", w
            yield f"{prefix}.sigma_a.b{i}", b
        yield f"{prefix}.nu0_c", self.nu0_c
        yield f"{prefix}.nu0_psi", self.nu0_psi
        yield f"{prefix}.log_gamma0_c", self.log_gamma0_c
        yield f"{prefix}.log_gamma0_psi", self.log_gamma0_psi

    def map(self, fn) -> "GenerativeParams":
        return GenerativeParams(
            m0=fn(self.m0), log_sigma_r=fn(self.log_sigma_r),
            sigma_a_w=[fn(w) for w in self.sigma_a_w],
            sigma_a_b=[fn(b) for b in self.sigma_a_b],
            nu0_c=fn(self.nu0_c), nu0_psi=fn(self.nu0_psi),
            log_gamma0_c=fn(self.log_gamma0_c),
            log_gamma0_psi=fn(self.log_gamma0_psi))

    def tensors(self, tape: Tape) -> "GenerativeParams":
        return self.map(tape.leaf)

    def copy(self) -> "GenerativeParams":
        return self.map(np.copy)


@dataclass
class PosteriorParams:
    """phi: bidirectional recurrent encoder and the recursive update heads."""

    fwd: LstmCell
    bwd: LstmCell
    alpha1: Array             # scalar gate on the carried abundance
    alpha2: Array             # scalar gate on the data-driven update
    beta: Array               # scalar carry on the scaling coefficients
    w_c: Array                # (p, hidden)
    v_c: Array                # (p, hidden)
    w_psi: Array              # (k*p, hidden)
    v_psi: Array              # (k*p, hidden)
    zeta: Array               # ((k+1)*p,) initial posterior mean
    log_xi: Array             # ((k+1)*p,) initial posterior log spread

    def named(self, prefix: str = "phi") -> Iterator[tuple[str, Array]]:
        yield from self.fwd.named(f"{prefix}.fwd")
        yield from self.bwd.named(f"{prefix}.bwd")
        yield f"{prefix}.alpha1", self.alpha1
        yield f"{prefix}.alpha2", self.alpha2
        yield f"{prefix}.beta", self.beta
        yield f"{prefix}.w_c", self.w_c
        yield f"{prefix}.v_c", self.v_c
        yield f"{prefix}.w_psi", self.w_psi
        yield f"{prefix}.v_psi", self.v_psi
        yield f"{prefix}.zeta", self.zeta
        yield f"{prefix}.log_xi", self.log_xi

    def map(self, fn) -> "PosteriorParams":
        return PosteriorParams(
            fwd=self.fwd.map(fn), bwd=self.bwd.map(fn),
            alpha1=fn(self.alpha1), alpha2=fn(self.alpha2), beta=fn(self.beta),
            w_c=fn(self.w_c), v_c=fn(self.v_c),
            w_psi=fn(self.w_psi), v_psi=fn(self.v_psi),
            zeta=fn(self.zeta), log_xi=fn(self.log_xi))

    def tensors(self, tape: Tape) -> "PosteriorParams":
        return self.map(tape.leaf)

    def copy(self) -> "PosteriorParams":
        return self.map(np.copy)


def hidden_size(cfg: SglmmConfig) -> int:
    """Encoder width: one unit per latent coordinate, (k+1)*p."""
    return (cfg.k + 1) * cfg.p


def init_generative(cfg: SglmmConfig, r_sigma_a: int, m0: Array,
                    rng: np.random.Generator) -> GenerativeParams:
    """theta at its starting point: m0 as given (typically from VCA on the
    stacked sequence), sigma_r = 1e-4, Glorot walk-width layers, standard
    normal initial pdfs (zero means, unit spreads)."""
    p, kp = cfg.p, cfg.psi_dim
    if m0.shape != (cfg.bands, p):
        raise ValueError(f"m0 must be ({cfg.bands}, {p}), got {m0.shape}")
    return GenerativeParams(
        m0=np.array(m0, dtype=np.float64),
        log_sigma_r=np.array(np.log(SIGMA_R_INIT)),
        sigma_a_w=[glorot_init((p, p), rng) for _ in range(r_sigma_a)],
        sigma_a_b=[np.zeros(p) for _ in range(r_sigma_a)],
        nu0_c=np.zeros(p), nu0_psi=np.zeros(kp),
        log_gamma0_c=np.zeros(p), log_gamma0_psi=np.zeros(kp))


def init_posterior(cfg: SglmmConfig, rng: np.random.Generator) -> PosteriorParams:
    """phi at its starting point: Glorot recurrent cells and spread heads,
    zero data-update matrices, unit gates, standard normal initial posterior."""
    p, kp = cfg.p, cfg.psi_dim
    h = hidden_size(cfg)
    return PosteriorParams(
        fwd=LstmCell.init(h, cfg.bands, rng),
        bwd=LstmCell.init(h, cfg.bands, rng),
        alpha1=np.array(1.0), alpha2=np.array(1.0), beta=np.array(1.0),
        w_c=np.zeros((p, h)), v_c=glorot_init((p, h), rng),
        w_psi=np.zeros((kp, h)), v_psi=glorot_init((kp, h), rng),
        zeta=np.zeros(h), log_xi=np.zeros(h))


def param_count(container) -> int:
    return sum(a.size for _, a in container.named())


def as_dict(container, prefix: str | None = None) -> dict[str, Array]:
    if prefix is None:
        return dict(container.named())
    return dict(container.named(prefix))


def collect_grads(tensorized) -> dict[str, Array]:
    """Adjoints of every leaf in a tensorized container (zeros if unused)."""
    out = {}
    for name, leaf in tensorized.named():
        out[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return out


def save_params(path, cfg: SglmmConfig, r_sigma_a: int,
                theta: GenerativeParams, phi: PosteriorParams) -> None:
    arrays = {"meta": np.array([cfg.p, cfg.k, cfg.bands, r_sigma_a], dtype=np.int64),
              "sigma_psi": np.array(cfg.sigma_psi)}
    arrays.update(theta.named())
    arrays.update(phi.named())
    np.savez(path, **arrays)


def load_params(path) -> tuple[SglmmConfig, int, GenerativeParams, PosteriorParams]:
    with np.load(path) as z:
        p, k, bands, r = (int(v) for v in z["meta"])
        cfg = SglmmConfig(p=p, k=k, bands=bands, sigma_psi=float(z["sigma_psi"]))
        rng = np.random.default_rng(0)  # shapes only; values overwritten below
        theta = init_generative(cfg, r, np.zeros((bands, p)), rng)
        phi = init_posterior(cfg, rng)
        for name, _ in list(theta.named()):
            _assign(theta, name, z[name])
        for name, _ in list(phi.named()):
            _assign(phi, name, z[name])
    return cfg, r, theta, phi


def _assign(container, dotted: str, value: Array) -> None:
    parts = dotted.split(".")[1:]  # drop the theta/phi prefix
    value = np.asarray(value, dtype=np.float64)
    if parts[0] == "sigma_a":
        leaf = parts[1]
        idx = int(leaf[1:])
        target = container.sigma_a_w if leaf[0] == "w" else container.sigma_a_b
        target[idx] = value
        return
    obj = container
    for part in parts[:-1]:
        obj = getattr(obj, part)
    setattr(obj, parts[-1], value)
