"""Simplex projection, change detector, recurrent encoder, update heads."""

import logging

import numpy as np

from helpers import gradcheck
from redsunn import autodiff as ad
from redsunn.mixing import EndmemberBasis, SglmmConfig
from redsunn.params import init_posterior
from redsunn.posterior import (_lstm_pass, change_detector, encode_sequence,
                               initial_posterior_sample, posterior_step,
                               simplex_project, simplex_project_np)


def _grid_project_2d(x, n=4001):
    a = np.linspace(0.0, 1.0, n)
    pts = np.stack([a, 1.0 - a], axis=1)
    d = ((pts - x) ** 2).sum(axis=1)
    return pts[np.argmin(d)]


def test_projection_matches_grid_argmin_2d():
    rng = np.random.default_rng(0)
    for _ in range(25):
        x = rng.uniform(-2, 2, size=2)
        got = simplex_project_np(x)
        want = _grid_project_2d(x)
        assert np.max(np.abs(got - want)) < 5e-4


def test_projection_matches_grid_argmin_3d():
    rng = np.random.default_rng(1)
    n = 201
    a = np.linspace(0, 1, n)
    g1, g2 = np.meshgrid(a, a, indexing="ij")
    mask = g1 + g2 <= 1.0 + 1e-12
    pts = np.stack([g1[mask], g2[mask], 1.0 - g1[mask] - g2[mask]], axis=1)
    for _ in range(10):
        x = rng.uniform(-1.5, 1.5, size=3)
        got = simplex_project_np(x)
        want = pts[np.argmin(((pts - x) ** 2).sum(axis=1))]
        assert np.max(np.abs(got - want)) < 1e-2


def test_projection_properties():
    rng = np.random.default_rng(2)
    x = rng.uniform(-3, 3, size=(500, 6))
    p = simplex_project_np(x)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(simplex_project_np(p), p, atol=1e-12)  # idempotent
    onsimplex = rng.dirichlet(np.ones(6), size=50)
    assert np.allclose(simplex_project_np(onsimplex), onsimplex, atol=1e-12)


def test_projection_tape_adjoint():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1.5, 1.5, size=(6, 4))
    # keep clear of active-set boundaries where the map is not differentiable
    proj = simplex_project_np(x)
    margin = np.where(proj > 0, proj, 1.0).min()
    assert margin > 1e-3
    gradcheck(simplex_project, [x], rng)


def test_detector_flags_changed_pixels_not_stable_ones():
    rng = np.random.default_rng(4)
    cfg = SglmmConfig(p=3, k=2, bands=20, sigma_psi=1e-3)
    basis = EndmemberBasis.create(cfg.bands, cfg.k)
    m0 = rng.uniform(0.2, 0.9, size=(cfg.bands, cfg.p))
    batch = 64
    a_prev = rng.dirichlet(np.ones(cfg.p), size=batch)
    c_prev = np.log(a_prev) - np.log(a_prev).mean(axis=1, keepdims=True)
    psi_prev = 0.01 * rng.standard_normal((batch, cfg.psi_dim))
    from redsunn.mixing import unvec_psi
    m_prev = m0 * (1 + np.einsum("lk,bkp->blp", basis.matrix,
                                 unvec_psi(psi_prev, cfg.p, cfg.k)))
    y_stable = np.einsum("blp,bp->bl", m_prev, a_prev)
    a_new = np.roll(a_prev, 1, axis=1)  # an abrupt reshuffle of materials
    y_changed = np.einsum("blp,bp->bl", m_prev, a_new)

    u_stable, _ = change_detector(y_stable, c_prev, psi_prev, m0, basis)
    u_changed, _ = change_detector(y_changed, c_prev, psi_prev, m0, basis)
    assert u_stable.shape == (batch, 1)
    assert np.all(u_stable >= 0) and np.all(u_stable <= 1 / cfg.p + 1e-12)
    assert np.all(u_changed <= 1 / cfg.p + 1e-12)
    assert u_stable.mean() < 1e-6
    assert u_changed.mean() > 10 * u_stable.mean()
    assert u_changed.mean() > 0.05


def test_detector_warns_once_on_degenerate_endmembers(caplog):
    rng = np.random.default_rng(5)
    cfg = SglmmConfig(p=2, k=1, bands=6, sigma_psi=1e-3)
    basis = EndmemberBasis.create(cfg.bands, cfg.k)
    m0 = np.zeros((cfg.bands, cfg.p))  # rank-deficient on purpose
    y = rng.uniform(0, 1, size=(4, cfg.bands))
    c_prev = np.zeros((4, cfg.p))
    psi_prev = np.zeros((4, cfg.psi_dim))
    warned: list = []
    with caplog.at_level(logging.WARNING, logger="redsunn.posterior"):
        u, _ = change_detector(y, c_prev, psi_prev, m0, basis, warned)
        change_detector(y, c_prev, psi_prev, m0, basis, warned)
    assert warned == [True]
    assert sum("singular" in r.message for r in caplog.records) == 1
    assert np.all(np.isfinite(u))


def test_lstm_backward_pass_is_forward_on_reversed_input():
    rng = np.random.default_rng(6)
    cfg = SglmmConfig(p=2, k=1, bands=5, sigma_psi=1e-3)
    phi = init_posterior(cfg, rng).map(ad.Tensor)
    y = rng.standard_normal((4, 3, cfg.bands))
    back = _lstm_pass(y, phi.bwd, reverse=True)
    fwd_on_reversed = _lstm_pass(y[::-1], phi.bwd, reverse=False)
    for t in range(4):
        assert np.allclose(back[t].data, fwd_on_reversed[3 - t].data)


def test_encoder_codes_average_directions():
    rng = np.random.default_rng(7)
    cfg = SglmmConfig(p=2, k=2, bands=5, sigma_psi=1e-3)
    phi = init_posterior(cfg, rng).map(ad.Tensor)
    y = rng.standard_normal((3, 4, cfg.bands))
    codes = encode_sequence(y, phi)
    f = _lstm_pass(y, phi.fwd, reverse=False)
    b = _lstm_pass(y, phi.bwd, reverse=True)
    hidden = (cfg.k + 1) * cfg.p
    for t in range(3):
        assert codes[t].data.shape == (4, hidden)
        assert np.allclose(codes[t].data, 0.5 * (f[t].data + b[t].data))


def test_encoder_gradients():
    rng = np.random.default_rng(8)
    cfg = SglmmConfig(p=1, k=1, bands=3, sigma_psi=1e-3)
    phi = init_posterior(cfg, rng)
    y = rng.standard_normal((2, 2, cfg.bands))

    cell_arrays = [getattr(phi.fwd, f) for f in phi.fwd.FIELDS]

    def run(*arrs):
        from redsunn.params import LstmCell
        cell = LstmCell(*arrs)
        hs = _lstm_pass(y, cell, reverse=False)
        return ad.concat(hs, axis=1)

    gradcheck(run, cell_arrays, rng, tol=1e-5)


def test_posterior_step_carries_state_at_init():
    # with zero data matrices and unit gates, a stable pixel keeps its state
    rng = np.random.default_rng(9)
    cfg = SglmmConfig(p=3, k=2, bands=10, sigma_psi=1e-3)
    phi = init_posterior(cfg, rng).map(ad.Tensor)
    batch = 5
    c_prev = rng.standard_normal((batch, cfg.p))
    c_prev -= c_prev.mean(axis=1, keepdims=True)
    psi_prev = 0.1 * rng.standard_normal((batch, cfg.psi_dim))
    h_t = ad.Tensor(rng.standard_normal((batch, (cfg.k + 1) * cfg.p)))
    u = np.zeros((batch, 1))
    reg = rng.standard_normal((batch, cfg.p))
    mu_c, sigma_c, mu_psi, sigma_psi = posterior_step(
        h_t, ad.Tensor(c_prev), ad.Tensor(psi_prev), phi, u, reg)
    assert np.allclose(mu_c.data, c_prev, atol=1e-9)
    assert np.allclose(mu_psi.data, psi_prev)
    assert np.all(sigma_c.data > 0) and np.all(sigma_psi.data > 0)


def test_posterior_step_follows_regression_when_u_high():
    rng = np.random.default_rng(10)
    cfg = SglmmConfig(p=3, k=1, bands=10, sigma_psi=1e-3)
    phi = init_posterior(cfg, rng).map(ad.Tensor)
    batch = 4
    c_prev = ad.Tensor(rng.standard_normal((batch, cfg.p)))
    psi_prev = ad.Tensor(rng.standard_normal((batch, cfg.psi_dim)))
    h_t = ad.Tensor(np.zeros((batch, (cfg.k + 1) * cfg.p)))
    u = np.full((batch, 1), 1.0 / cfg.p)
    target = rng.dirichlet(np.ones(cfg.p) * 3.0, size=batch)
    mu_c, _, _, _ = posterior_step(h_t, c_prev, psi_prev, phi, u, target)
    got = np.exp(mu_c.data) / np.exp(mu_c.data).sum(axis=1, keepdims=True)
    # the (1-u) carry keeps a share (1 - 1/p); the rest follows the target mix
    blend = (1 - 1.0 / cfg.p) * (np.exp(c_prev.data)
                                 / np.exp(c_prev.data).sum(axis=1, keepdims=True))
    blend += (1.0 / cfg.p) * target
    assert np.allclose(got, blend / blend.sum(axis=1, keepdims=True), atol=1e-9)


def test_initial_posterior_mean_and_sample_paths():
    rng = np.random.default_rng(11)
    cfg = SglmmConfig(p=2, k=2, bands=6, sigma_psi=1e-3)
    phi = init_posterior(cfg, rng)
    phi.zeta = rng.standard_normal(phi.zeta.shape)
    phi.log_xi = 0.3 * rng.standard_normal(phi.log_xi.shape)
    phit = phi.map(ad.Tensor)
    c0m, psi0m, xi_c, xi_psi = initial_posterior_sample(phit, cfg.p, None, 3)
    assert np.allclose(c0m.data, np.tile(phi.zeta[:cfg.p], (3, 1)))
    assert np.allclose(psi0m.data, np.tile(phi.zeta[cfg.p:], (3, 1)))
    eps = rng.standard_normal((3, (cfg.k + 1) * cfg.p))
    c0, psi0, _, _ = initial_posterior_sample(phit, cfg.p, eps, 3)
    xi = np.exp(phi.log_xi)
    z = phi.zeta + xi * eps
    assert np.allclose(c0.data, z[:, :cfg.p])
    assert np.allclose(psi0.data, z[:, cfg.p:])
    assert np.allclose(np.concatenate([xi_c.data, xi_psi.data]), xi)
