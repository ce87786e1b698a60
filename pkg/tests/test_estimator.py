import math

import numpy as np
import pytest

from caged import estimator as est
from caged.graph import graph_from_edges, normalizer, normalizers
from caged.optim import finite_diff_check

from conftest import random_graph


def _affine_chain(x, params, names):
    """Layer-by-layer oracle written with explicit loops over units."""
    h = list(x)
    for n, name in enumerate(names):
        w, b = params[f"{name}.weight"], params[f"{name}.bias"]
        out = [b[j] + sum(h[i] * w[i, j] for i in range(len(h))) for j in range(w.shape[1])]
        if n < len(names) - 1:
            out = [max(v, 0.0) for v in out]
        h = out
    return np.array(h)


def test_layer_shapes():
    p = est.init_params(5, np.random.default_rng(0))
    shapes = {n: p[n].shape for n in p}
    assert shapes["enc0.weight"] == (10, 20)
    assert shapes["enc1.weight"] == (20, 10)
    assert shapes["enc2.weight"] == (10, 10)
    assert shapes["dec0.weight"] == (10, 20)
    assert shapes["dec2.weight"] == (10, 5)
    assert shapes["dec2.bias"] == (5,)


def test_zero_network_encode():
    p = est.init_params(3)
    mu, lv = est.encode(np.zeros(3), np.zeros(3), p)
    assert not mu.any() and not lv.any()
    assert mu.shape == lv.shape == (3,)


@pytest.mark.parametrize("k", [1, 2, 7])
def test_shape_contracts(k):
    p = est.init_params(k, np.random.default_rng(k))
    rng = np.random.default_rng(0)
    mu, lv = est.encode(rng.normal(size=k), rng.normal(size=k), p)
    assert mu.shape == lv.shape == (k,)
    assert est.decode(rng.normal(size=k), rng.normal(size=k), p).shape == (k,)


def test_forward_matches_affine_oracle():
    rng = np.random.default_rng(7)
    k = 3
    p = est.init_params(k, rng)
    for name in p:
        if name.endswith("bias"):
            p[name] = rng.normal(size=p[name].shape) * 0.1
    ex, eu, z = rng.normal(size=(3, k))
    mu, lv = est.encode(ex, eu, p)
    out = _affine_chain(np.concatenate([ex, eu]), p, est.ENCODER)
    np.testing.assert_allclose(mu, out[:k], atol=1e-12)
    np.testing.assert_allclose(lv, np.clip(out[k:], -10, 10), atol=1e-12)
    np.testing.assert_allclose(est.decode(z, eu, p),
                               _affine_chain(np.concatenate([z, eu]), p, est.DECODER), atol=1e-12)


def test_log_var_clamped():
    k = 2
    p = est.init_params(k)
    p["enc2.bias"] = np.array([0.0, 0.0, 50.0, -50.0])
    _, lv = est.encode(np.zeros(k), np.zeros(k), p)
    np.testing.assert_array_equal(lv, [10.0, -10.0])


def test_reparameterize_cases():
    mu = np.array([0.5, -1.0])
    assert np.array_equal(est.reparameterize(mu, np.array([1.0, 2.0]), np.zeros(2)), mu)
    t = np.array([0.3, -2.0])
    np.testing.assert_array_equal(est.reparameterize(np.zeros(2), np.zeros(2), t), t)


def test_reparameterize_monte_carlo_mean():
    rng = np.random.default_rng(11)
    mu = np.array([0.7, -1.2, 0.0])
    lv = np.array([0.5, -1.0, 1.5])
    n = 100_000
    z = est.reparameterize(mu, lv, rng.standard_normal((n, 3)))
    se = np.exp(lv / 2) / math.sqrt(n)
    assert np.all(np.abs(z.mean(axis=0) - mu) <= 3 * se)


def test_kl_values():
    assert est.kl_term(np.zeros(4), np.zeros(4), 1.0) == 0.0
    assert est.kl_term(np.array([1.0]), np.array([0.0]), 1.0) == pytest.approx(0.5, abs=1e-15)
    mu, lv = np.array([0.3, -0.8]), np.array([0.4, -0.2])
    assert est.kl_term(mu, lv, 2.0) == pytest.approx(2 * est.kl_term(mu, lv, 1.0), abs=1e-15)


def test_recon_values():
    ex = np.array([1.0, 0.0])
    assert est.recon_term(ex, ex, 1.0) == 0.0
    assert est.recon_term(ex, np.zeros(2), 0.0) == 0.0
    assert est.recon_term(ex, np.zeros(2), 1.0) == 1.0


def test_elbo_switched_off_and_zero_network():
    rng = np.random.default_rng(2)
    p = est.init_params(4, rng)
    ex, eu, tau = rng.normal(size=(3, 4))
    assert est.elbo_loss(ex, eu, p, tau, 0.0, 0.0).total == 0.0
    t = est.elbo_loss(np.zeros(4), eu, est.init_params(4), tau, 1.0, 1.0)
    assert t.recon == 0.0 and t.kl == 0.0 and t.total == 0.0


def test_elbo_component_sum():
    rng = np.random.default_rng(5)
    p = est.init_params(4, rng)
    ex, eu, tau = rng.normal(size=(3, 4))
    lam, beta = 0.8, 1.2
    t = est.elbo_loss(ex, eu, p, tau, lam, beta)
    mu, lv = est.encode(ex, eu, p)
    x_hat = est.decode(mu + tau * np.exp(lv / 2), eu, p)
    recon = lam * float(np.sum((ex - x_hat) ** 2))
    kl = beta * 0.5 * float(np.sum(mu ** 2 + np.exp(lv) - lv - 1))
    assert t.total == t.recon + t.kl
    assert t.total == pytest.approx(recon + kl, abs=1e-12)
    assert t.recon >= 0 and t.kl >= 0
    batch = est.elbo_batch(ex[None], eu[None], p, tau[None], lam, beta)
    assert batch[0] == pytest.approx(t.total, abs=1e-12)


def _random_edges(rng, b, k):
    return rng.normal(size=(b, k)), rng.normal(size=(b, k)), rng.standard_normal((b, k))


def test_caged_gradient_finite_difference():
    rng = np.random.default_rng(8)
    k = 3
    p = est.init_params(k, rng)
    for name in p:
        if name.endswith("bias"):
            p[name] = rng.normal(size=p[name].shape) * 0.1
    ex, eu, tau = _random_edges(rng, 6, k)
    loss, grads = est.caged_backward(ex, eu, p, tau, 0.7, 1.3)

    def f(store):
        return float(np.mean(est.elbo_batch(ex, eu, store, tau, 0.7, 1.3)))

    assert loss == pytest.approx(f(p), abs=1e-12)
    assert finite_diff_check(f, p, grads, probe_count=80, h=1e-4, seed=1) <= 1e-4


def test_caged_gradient_zero_when_switched_off():
    rng = np.random.default_rng(9)
    p = est.init_params(3, rng)
    _, grads = est.caged_backward(*_random_edges(rng, 5, 3)[:2], p,
                                  rng.standard_normal((5, 3)), 0.0, 0.0)
    assert all(not g.any() for g in grads.values())


def test_kl_gradient_wrt_mu_is_beta_mu():
    # zero network with a bias on mu: d(mean ELBO)/d(mu bias) = beta * mu at sigma = 1
    k, beta = 2, 1.7
    p = est.init_params(k)
    mu = np.array([0.4, -0.9])
    p["enc2.bias"] = np.concatenate([mu, np.zeros(k)])
    _, grads = est.caged_backward(np.zeros((1, k)), np.zeros((1, k)), p, np.zeros((1, k)),
                                  0.0, beta)
    np.testing.assert_allclose(grads["enc2.bias"][:k], beta * mu, atol=1e-15)


def test_kl_closed_form_vs_monte_carlo():
    rng = np.random.default_rng(21)
    n = 100_000
    for _ in range(20):
        k = int(rng.integers(1, 5))
        mu = rng.normal(0, 1, k)
        lv = rng.uniform(-1.5, 1.5, k)
        sigma = np.exp(lv / 2)
        z = est.reparameterize(mu, lv, rng.standard_normal((n, k)))
        log_q = np.sum(-0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma), axis=1)
        log_p = np.sum(-0.5 * z ** 2, axis=1)
        samples = log_q - log_p
        se = samples.std(ddof=1) / math.sqrt(n)
        assert abs(samples.mean() - est.kl_term(mu, lv, 1.0)) <= 3 * se


def test_edge_weight_cases():
    g = graph_from_edges(1, 1, [(0, 0)])
    pooled = np.random.default_rng(0).normal(size=(2, 3))
    zero = est.init_params(3)
    assert est.edge_weight(g, 0, 1, pooled, zero, 0.0, 0.0) == 1.0
    w = est.edge_weight(g, 0, 1, pooled, est.init_params(3, np.random.default_rng(1)), 1.0, 1.0)
    assert 0.0 < w <= 1.0
    with pytest.raises(ValueError):
        est.edge_weight(g, 0, 0, pooled, zero, 1.0, 1.0)


def test_edge_weight_zero_network_single_edge():
    g = graph_from_edges(1, 1, [(0, 0)])
    pooled = np.zeros((2, 3))
    assert est.edge_weight(g, 0, 1, pooled, est.init_params(3), 1.0, 1.0) == 1.0


def test_weight_matrix_bounds_and_pattern():
    rng = np.random.default_rng(4)
    for _ in range(10):
        g, _ = random_graph(rng, 6, 6, 0.5)
        pooled = rng.normal(size=(g.num_nodes, 3))
        p = est.init_params(3, rng)
        w = est.generate_weight_matrix(g, pooled, p, 1.0, 1.0)
        f = normalizers(g)[g.edge_rows]
        assert np.array_equal(w.indices, g.indices) and np.array_equal(w.indptr, g.indptr)
        assert np.all(w.data > 0) and np.all(w.data <= f)
        off = est.generate_weight_matrix(g, pooled, p, 0.0, 0.0)
        np.testing.assert_array_equal(off.data, f)
        np.testing.assert_allclose(off.row_sums()[g.degrees > 0],
                                   (g.degrees * normalizers(g))[g.degrees > 0], atol=1e-12)
        again = est.generate_weight_matrix(g, pooled, p, 1.0, 1.0)
        np.testing.assert_array_equal(again.data, w.data)
        v = int(g.edge_rows[0])
        x = int(g.indices[0])
        assert w.data[0] == pytest.approx(est.edge_weight(g, v, x, pooled, p, 1.0, 1.0),
                                          rel=1e-12)
        assert normalizer(g, v) == pytest.approx(f[0])


def test_elbo_upper_bounds_gaussian_nll():
    """Jensen bound on a toy with tractable marginal likelihood.

    Toy model: z ~ N(0, 1), x | z ~ N(a z, s2), so x ~ N(0, a^2 + s2). For any
    Gaussian q(z), E_q[-log p(x|z)] + KL(q || p) >= -log p(x); equality at the
    exact posterior.
    """
    rng = np.random.default_rng(3)
    a, s2 = 1.3, 0.5
    n = 100_000
    for x in (-1.0, 0.2, 2.5):
        nll = 0.5 * (math.log(2 * math.pi * (a * a + s2)) + x * x / (a * a + s2))
        post_var = 1.0 / (1.0 + a * a / s2)
        post_mu = post_var * a * x / s2
        for mu, lv in ((post_mu, math.log(post_var)), (0.0, 0.0), (post_mu + 0.5, -1.0)):
            z = est.reparameterize(mu, lv, rng.standard_normal(n))
            rec = 0.5 * (np.log(2 * math.pi * s2) + (x - a * z) ** 2 / s2)
            neg_elbo = rec + est.kl_term(np.array([mu]), np.array([lv]), 1.0)
            se = rec.std(ddof=1) / math.sqrt(n)
            assert neg_elbo.mean() >= nll - 3 * se
