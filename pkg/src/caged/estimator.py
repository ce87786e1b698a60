"""Variational encoder-decoder that scores edges by their ELBO.

The encoder maps ``[e_x, e_u]`` (2K) through 4K and 2K hidden units to
``[mu, log_var]`` (2K). The decoder maps ``[z, e_u]`` (2K) through 4K and 2K
hidden units to the reconstruction ``x_hat`` (K). An edge (v -> x) gets the
aggregation weight ``F(v) * exp(-elbo)`` computed at the mean latent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AggregationMatrix, InteractionGraph, normalizer, normalizers
from .optim import ParamStore

LOG_VAR_MIN, LOG_VAR_MAX = -10.0, 10.0

ENCODER = ("enc0", "enc1", "enc2")
DECODER = ("dec0", "dec1", "dec2")


def layer_dims(dim: int) -> dict[str, tuple[int, int]]:
    k = dim
    return {
        "enc0": (2 * k, 4 * k), "enc1": (4 * k, 2 * k), "enc2": (2 * k, 2 * k),
        "dec0": (2 * k, 4 * k), "dec1": (4 * k, 2 * k), "dec2": (2 * k, k),
    }


def init_params(dim: int, rng: np.random.Generator | None = None, scale: float = 1.0) -> ParamStore:
    """Normal weights with std ``scale / sqrt(fan_in)`` and zero biases; ``rng=None`` gives all zeros."""
    store = ParamStore()
    for name, (fan_in, fan_out) in layer_dims(dim).items():
        if rng is None:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))
        store.register(f"{name}.weight", w)
        store.register(f"{name}.bias", np.zeros(fan_out))
    return store


@dataclass(frozen=True)
class ElboTerms:
    recon: float
    kl: float

    @property
    def total(self) -> float:
        return self.recon + self.kl


def _mlp(x, params, names):
    """Forward through affine layers with ReLU between them; returns output and cache."""
    cache = []
    h = x
    for n, name in enumerate(names):
        cache.append(h)
        h = h @ params[f"{name}.weight"] + params[f"{name}.bias"]
        if n < len(names) - 1:
            h = np.maximum(h, 0.0)
    return h, cache


def _mlp_backward(g_out, params, names, cache, grads):
    """Accumulate parameter grads into ``grads``; returns gradient w.r.t. the MLP input."""
    g = g_out
    for n in reversed(range(len(names))):
        name = names[n]
        h_in = cache[n]
        grads[f"{name}.weight"] += h_in.T @ g
        grads[f"{name}.bias"] += g.sum(axis=0)
        g = g @ params[f"{name}.weight"].T
        if n > 0:
            g = g * (cache[n] > 0.0)
    return g


def encode_batch(e_x, e_u, params):
    out, cache = _mlp(np.concatenate([e_x, e_u], axis=-1), params, ENCODER)
    k = e_x.shape[-1]
    return out[..., :k], out[..., k:], cache


def encode(e_x, e_u, params) -> tuple[np.ndarray, np.ndarray]:
    """(mu, log_var) of the latent posterior, log_var clamped to [-10, 10]."""
    mu, raw, _ = encode_batch(np.atleast_2d(e_x), np.atleast_2d(e_u), params)
    mu, lv = mu[0], np.clip(raw[0], LOG_VAR_MIN, LOG_VAR_MAX)
    return mu, lv


def reparameterize(mu, log_var, tau):
    return mu + tau * np.exp(0.5 * np.asarray(log_var))


def decode(z, e_u, params) -> np.ndarray:
    out, _ = _mlp(np.concatenate([np.atleast_2d(z), np.atleast_2d(e_u)], axis=-1), params, DECODER)
    return out[0] if np.ndim(z) == 1 else out


def kl_term(mu, log_var, beta: float):
    """beta * sum_k 0.5 (mu^2 + sigma^2 - log sigma^2 - 1), summed over the last axis."""
    mu = np.asarray(mu)
    lv = np.asarray(log_var)
    return beta * 0.5 * np.sum(mu * mu + np.exp(lv) - lv - 1.0, axis=-1)


def recon_term(e_x, x_hat, lam: float):
    d = np.asarray(e_x) - np.asarray(x_hat)
    return lam * np.sum(d * d, axis=-1)


def elbo_loss(e_x, e_u, params, tau, lam: float, beta: float) -> ElboTerms:
    mu, lv = encode(e_x, e_u, params)
    z = reparameterize(mu, lv, tau)
    x_hat = decode(z, e_u, params)
    return ElboTerms(recon=float(recon_term(e_x, x_hat, lam)), kl=float(kl_term(mu, lv, beta)))


def elbo_batch(e_x, e_u, params, tau, lam: float, beta: float) -> np.ndarray:
    """Per-row ELBO totals for a batch of (neighbor, center) embedding rows."""
    mu, raw, _ = encode_batch(e_x, e_u, params)
    lv = np.clip(raw, LOG_VAR_MIN, LOG_VAR_MAX)
    z = mu if tau is None else reparameterize(mu, lv, tau)
    x_hat, _ = _mlp(np.concatenate([z, e_u], axis=1), params, DECODER)
    return recon_term(e_x, x_hat, lam) + kl_term(mu, lv, beta)


def caged_backward(e_x, e_u, params: ParamStore, tau, lam: float, beta: float):
    """Mean ELBO over a batch of edges and its gradient w.r.t. encoder/decoder parameters.

    ``e_x`` are neighbor rows, ``e_u`` center rows; both are constants here.
    """
    b, k = e_x.shape
    mu, raw, enc_cache = encode_batch(e_x, e_u, params)
    lv = np.clip(raw, LOG_VAR_MIN, LOG_VAR_MAX)
    std = np.exp(0.5 * lv)
    z = mu + tau * std
    x_hat, dec_cache = _mlp(np.concatenate([z, e_u], axis=1), params, DECODER)
    diff = e_x - x_hat
    per_edge = lam * np.sum(diff * diff, axis=1) + kl_term(mu, lv, beta)
    loss = float(per_edge.mean())

    grads = params.zeros_like()
    g_xhat = (-2.0 * lam / b) * diff
    g_dec_in = _mlp_backward(g_xhat, params, DECODER, dec_cache, grads)
    g_z = g_dec_in[:, :k]
    g_mu = g_z + (beta / b) * mu
    g_lv = g_z * tau * 0.5 * std + (beta / b) * 0.5 * (np.exp(lv) - 1.0)
    g_lv = g_lv * ((raw > LOG_VAR_MIN) & (raw < LOG_VAR_MAX))
    _mlp_backward(np.concatenate([g_mu, g_lv], axis=1), params, ENCODER, enc_cache, grads)
    return loss, grads


def edge_weight(graph: InteractionGraph, center: int, neighbor: int, pooled: np.ndarray,
                params: ParamStore, lam: float, beta: float) -> float:
    if neighbor not in set(graph.neighbors(center).tolist()):
        raise ValueError(f"node {neighbor} is not a neighbor of {center}")
    f = normalizer(graph, center)
    k = pooled.shape[1]
    terms = elbo_loss(pooled[neighbor], pooled[center], params, np.zeros(k), lam, beta)
    return f * float(np.exp(-terms.total))


def generate_weight_matrix(graph: InteractionGraph, pooled: np.ndarray, params: ParamStore,
                           lam: float, beta: float, batch_size: int = 8192) -> AggregationMatrix:
    """CAGED weights on every directed edge (center row -> neighbor column), mean latent."""
    centers = graph.edge_rows
    nbrs = graph.indices
    total = np.empty(len(nbrs))
    for lo in range(0, len(nbrs), batch_size):
        hi = lo + batch_size
        total[lo:hi] = elbo_batch(pooled[nbrs[lo:hi]], pooled[centers[lo:hi]], params, None,
                                  lam, beta)
    f = normalizers(graph)[centers]
    # keep entries strictly positive when the ELBO is large enough to underflow exp
    w = f * np.maximum(np.exp(-total), np.finfo(np.float64).tiny)
    return AggregationMatrix(graph.num_users, graph.num_items, graph.indptr, graph.indices, w)
