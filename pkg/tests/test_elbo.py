"""Closed-form KL, the assembled bound, and the deterministic estimator."""

import numpy as np

from helpers import rel_err
from redsunn import autodiff as ad
from redsunn.elbo import (ElboBreakdown, EpsDraws, elbo_minibatch, elbo_pixel,
                          estimate, kl_diag_gaussians, scalings_to_endmembers)
from redsunn.mixing import EndmemberBasis, SglmmConfig
from redsunn.params import collect_grads, init_generative, init_posterior


def _tiny_setup(seed=0, p=2, k=1, bands=4, t_len=3, batch=6, sigma_psi=1e-2):
    rng = np.random.default_rng(seed)
    cfg = SglmmConfig(p=p, k=k, bands=bands, sigma_psi=sigma_psi)
    basis = EndmemberBasis.create(bands, k)
    m0 = rng.uniform(0.2, 0.9, size=(bands, p))
    theta = init_generative(cfg, 2, m0, rng)
    phi = init_posterior(cfg, rng)
    theta.log_sigma_r[()] = np.log(0.05)
    y = rng.uniform(0.1, 0.9, size=(t_len, batch, bands))
    return rng, cfg, basis, theta, phi, y


def test_kl_zero_for_identical_gaussians():
    mu = np.array([0.3, -1.2, 4.0])
    sigma = np.array([0.5, 2.0, 0.1])
    kl = kl_diag_gaussians(mu, sigma, mu.copy(), sigma.copy())
    assert abs(kl.item()) < 1e-14


def test_kl_hand_case():
    # KL(N(1, 2^2) || N(0, 1)) = log(1/2) + (4 + 1)/2 - 1/2
    kl = kl_diag_gaussians(np.array([1.0]), np.array([2.0]),
                           np.array([0.0]), np.array([1.0]))
    assert np.isclose(kl.item(), -np.log(2.0) + 2.5 - 0.5)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(42)
    d = 4
    mu1, mu2 = rng.standard_normal(d), rng.standard_normal(d)
    s1 = np.abs(rng.standard_normal(d)) + 0.3
    s2 = np.abs(rng.standard_normal(d)) + 0.3
    closed = kl_diag_gaussians(mu1, s1, mu2, s2).item()
    x = mu1 + s1 * rng.standard_normal((200_000, d))
    logq = -0.5 * (((x - mu1) / s1) ** 2).sum(1) - np.log(s1).sum()
    logp = -0.5 * (((x - mu2) / s2) ** 2).sum(1) - np.log(s2).sum()
    mc = (logq - logp).mean()
    assert rel_err(np.array(closed), np.array(mc)) < 0.01


def test_kl_broadcast_spreads():
    # per-pixel scalar spread against per-coordinate spreads
    rng = np.random.default_rng(1)
    mu1 = rng.standard_normal((5, 3))
    s1 = np.abs(rng.standard_normal((5, 3))) + 0.2
    mu2 = rng.standard_normal((5, 3))
    s2 = np.abs(rng.standard_normal((5, 1))) + 0.2
    kl = kl_diag_gaussians(mu1, s1, mu2, s2).data
    assert kl.shape == (5,)
    for i in range(5):
        want = kl_diag_gaussians(mu1[i], s1[i], mu2[i],
                                 np.full(3, s2[i, 0])).item()
        assert np.isclose(kl[i], want)
    # isotropic scalar second argument broadcasts the same way
    kl2 = kl_diag_gaussians(mu1, s1, mu2, 0.7).data
    want2 = kl_diag_gaussians(mu1[2], s1[2], mu2[2], np.full(3, 0.7)).item()
    assert np.isclose(kl2[2], want2)


def test_kl_nonnegative_property():
    rng = np.random.default_rng(2)
    for _ in range(200):
        d = rng.integers(1, 6)
        kl = kl_diag_gaussians(rng.standard_normal(d),
                               np.abs(rng.standard_normal(d)) + 0.05,
                               rng.standard_normal(d),
                               np.abs(rng.standard_normal(d)) + 0.05)
        assert kl.item() >= -1e-10


def test_elbo_terms_are_consistent():
    rng, cfg, basis, theta, phi, y = _tiny_setup()
    eps = EpsDraws.draw(rng, y.shape[0], y.shape[1], cfg.p, cfg.psi_dim)
    out = elbo_minibatch(y, theta.map(ad.Tensor), phi.map(ad.Tensor),
                         cfg, basis, eps)
    obj = out["objective"].item()
    assert np.isfinite(obj)
    per_pixel = out["per_pixel"].data
    assert per_pixel.shape == (y.shape[1],)
    assert np.isclose(obj, per_pixel.mean())
    assert np.isclose(obj, out["recon"].item() - out["kl_transitions"].item()
                      - out["kl_initial"].item())
    assert out["kl_initial"].item() >= -1e-10
    assert len(out["detectors"]) == y.shape[0]


def test_elbo_detector_override_reproduces():
    rng, cfg, basis, theta, phi, y = _tiny_setup(seed=3)
    eps = EpsDraws.draw(rng, y.shape[0], y.shape[1], cfg.p, cfg.psi_dim)
    out1 = elbo_minibatch(y, theta.map(ad.Tensor), phi.map(ad.Tensor),
                          cfg, basis, eps)
    out2 = elbo_minibatch(y, theta.map(ad.Tensor), phi.map(ad.Tensor),
                          cfg, basis, eps, detector_override=out1["detectors"])
    assert out1["objective"].item() == out2["objective"].item()


def test_elbo_gradients_match_fd_spot_checks():
    rng, cfg, basis, theta, phi, y = _tiny_setup(seed=4, batch=2, t_len=2)
    for _, arr in list(theta.named()) + list(phi.named()):
        arr += 0.05 * rng.standard_normal(arr.shape)
    theta.log_sigma_r[()] = np.log(0.05)
    eps = EpsDraws.draw(rng, y.shape[0], y.shape[1], cfg.p, cfg.psi_dim)

    tape = ad.Tape()
    th, ph = theta.tensors(tape), phi.tensors(tape)
    out = elbo_minibatch(y, th, ph, cfg, basis, eps)
    det = out["detectors"]
    tape.backward(out["objective"])
    grads = collect_grads(th)
    grads.update(collect_grads(ph))

    def value():
        o = elbo_minibatch(y, theta.map(ad.Tensor), phi.map(ad.Tensor),
                           cfg, basis, eps, detector_override=det)
        return o["objective"].item()

    h = 1e-5
    arrays = dict(list(theta.named()) + list(phi.named()))
    picks = ["theta.m0", "theta.log_sigma_r", "theta.sigma_a.w0", "phi.fwd.wx_i",
             "phi.alpha1", "phi.beta", "phi.v_c", "phi.w_psi", "phi.zeta",
             "phi.log_xi", "theta.nu0_psi", "theta.log_gamma0_c"]
    check = np.random.default_rng(0)
    for name in picks:
        arr = arrays[name]
        flat_idx = check.integers(0, arr.size, size=min(3, arr.size))
        for i in flat_idx:
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            fp = value()
            arr.flat[i] = orig - h
            fm = value()
            arr.flat[i] = orig
            fd = (fp - fm) / (2 * h)
            an = grads[name].flat[i]
            assert abs(an - fd) <= 1e-3 * max(abs(an), abs(fd), 1e-6), \
                f"{name}[{i}]: analytic {an} vs fd {fd}"


def test_elbo_pixel_breakdown():
    rng, cfg, basis, theta, phi, _ = _tiny_setup(seed=5)
    y_series = rng.uniform(0.2, 0.8, size=(4, cfg.bands))
    bd = elbo_pixel(y_series, theta, phi, cfg, basis, rng)
    assert isinstance(bd, ElboBreakdown)
    assert np.isfinite(bd.elbo)
    assert np.isclose(bd.elbo, bd.recon_loglik - bd.kl_initial - bd.kl_transitions)
    assert bd.kl_initial >= -1e-10 and bd.kl_transitions >= -1e-10


def test_estimate_deterministic_and_on_simplex():
    rng, cfg, basis, theta, phi, _ = _tiny_setup(seed=6)
    data = rng.uniform(0.1, 0.9, size=(3, 25, cfg.bands))
    a1, psi1 = estimate(data, theta, phi, cfg, basis, chunk=7)
    a2, psi2 = estimate(data, theta, phi, cfg, basis, chunk=25)
    assert a1.shape == (3, 25, cfg.p)
    assert psi1.shape == (3, 25, cfg.psi_dim)
    assert np.array_equal(a1, a2)          # chunking cannot change results
    assert np.array_equal(psi1, psi2)
    assert np.all(a1 > 0)
    assert np.allclose(a1.sum(axis=2), 1.0)
    m = scalings_to_endmembers(theta.m0, psi1, basis, cfg.p)
    assert m.shape == (3, 25, cfg.bands, cfg.p)
