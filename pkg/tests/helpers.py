"""Finite-difference gradient checking shared by the test modules."""

import numpy as np

from anp import autodiff as ad

FD_STEP = 1e-5
REL_TOL = 1e-4
# absolute floor on the relative-error denominator; central differences at
# step 1e-5 carry ~1e-10 absolute error
DENOM_FLOOR = 1e-6


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), DENOM_FLOOR)


def central_difference(loss_fn, p, idx, step=FD_STEP, refinements=2):
    """Central difference along one coordinate.

    If the one-sided slopes disagree, a relu kink lies inside the stencil and
    the difference is not an estimate of the derivative there; the step is
    shrunk tenfold (at most ``refinements`` times) until the stencil is smooth.
    """
    old = p.data[idx]
    base = float(loss_fn().data)
    for _ in range(refinements + 1):
        p.data[idx] = old + step
        up = float(loss_fn().data)
        p.data[idx] = old - step
        down = float(loss_fn().data)
        p.data[idx] = old
        forward, backward = (up - base) / step, (base - down) / step
        if abs(forward - backward) <= 1e-2 * max(abs(forward), abs(backward), DENOM_FLOOR):
            break
        step /= 10
    return (up - down) / (2 * step)


def check_gradients(loss_fn, params, rng, coords=10, step=FD_STEP):
    """Compare backward() with central differences at random parameter coordinates.

    Returns the list of relative errors.
    """
    loss = loss_fn()
    grads = ad.grad(loss, params)
    names = list(params)
    errors = []
    for _ in range(coords):
        name = names[rng.integers(len(names))]
        p = params[name]
        idx = tuple(int(rng.integers(s)) for s in p.data.shape)
        numeric = central_difference(loss_fn, p, idx, step)
        errors.append(relative_error(float(grads[name][idx]), numeric))
    return errors


# plain-numpy reference forward pass, written without the autodiff module --------

def np_mlp(params, prefix, x, n_layers):
    for i in range(n_layers):
        x = x @ params[f"{prefix}/{i}/W"].data + params[f"{prefix}/{i}/b"].data
        if i < n_layers - 1:
            x = np.maximum(x, 0.0)
    return x


def np_softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def np_softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def np_multihead(params, prefix, q, k, v, heads):
    wq, wk, wv, wo = (params[f"{prefix}/{n}"].data for n in ("Wq", "Wk", "Wv", "Wo"))
    dh = wq.shape[1] // heads
    out = []
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q @ wq[:, cols], k @ wk[:, cols], v @ wv[:, cols]
        out.append(np_softmax(qh @ kh.T / np.sqrt(dh)) @ vh)
    return np.concatenate(out, axis=-1) @ wo


def np_cross(config, params, q, k, v):
    if config.attention == "uniform":
        return np.repeat(v.mean(axis=0, keepdims=True), len(q), axis=0)
    if config.attention == "laplace":
        dist = np.abs(q[:, None, :] - k[None, :, :]).sum(-1)
        return np_softmax(-dist) @ v
    if config.attention == "dot_product":
        return np_softmax(q @ k.T / np.sqrt(q.shape[-1])) @ v
    return np_multihead(params, "det/cross", q, k, v, config.heads)


def np_self_attention(params, prefix, x, layers, heads):
    for i in range(layers):
        x = x + np_multihead(params, f"{prefix}/{i}/mha", x, x, x, heads)
        x = x + np_mlp(params, f"{prefix}/{i}/ff", x, 2)
    return x


def np_latent(config, params, x, y):
    h = np_mlp(params, "latent/pair", np.hstack([x, y]), config.latent_layers)
    h = np_self_attention(params, "latent/self", h, config.self_attention_layers, config.heads)
    out = np_mlp(params, "latent/head", h.mean(axis=0), config.latent_head_layers)
    d = config.d
    return out[:d], 0.1 + 0.9 / (1.0 + np.exp(-out[d:]))


def np_forward(config, params, xc, yc, xt, eps):
    """Single-episode predictive mean and std for latent noise ``eps``."""
    values = np_mlp(params, "det/pair", np.hstack([xc, yc]), config.det_layers)
    values = np_self_attention(params, "det/self", values, config.self_attention_layers, config.heads)
    if config.attention in ("dot_product", "multihead"):
        keys = np_mlp(params, "det/key", xc, config.key_layers)
        queries = np_mlp(params, "det/key", xt, config.key_layers)
    else:
        keys, queries = xc, xt
    r = np_cross(config, params, queries, keys, values)
    mu_z, sigma_z = np_latent(config, params, xc, yc)
    z = mu_z + sigma_z * eps
    inp = np.hstack([xt, r, np.repeat(z[None, :], len(xt), axis=0)])
    out = np_mlp(params, "decoder", inp, config.decoder_hidden_layers + 1)
    dy = config.d_y
    return out[:, :dy], 0.1 + 0.9 * np_softplus(out[:, dy:])


def np_loss(config, params, xc, yc, xt, yt, eps):
    """Single-episode negative ELBO with the target posterior sampled by ``eps``."""
    mu_t, s_t = np_latent(config, params, xt, yt)
    mu_c, s_c = np_latent(config, params, xc, yc)
    z = mu_t + s_t * eps
    values = np_mlp(params, "det/pair", np.hstack([xc, yc]), config.det_layers)
    values = np_self_attention(params, "det/self", values, config.self_attention_layers, config.heads)
    if config.attention in ("dot_product", "multihead"):
        keys = np_mlp(params, "det/key", xc, config.key_layers)
        queries = np_mlp(params, "det/key", xt, config.key_layers)
    else:
        keys, queries = xc, xt
    r = np_cross(config, params, queries, keys, values)
    out = np_mlp(params, "decoder", np.hstack([xt, r, np.repeat(z[None, :], len(xt), axis=0)]), config.decoder_hidden_layers + 1)
    dy = config.d_y
    mu, sigma = out[:, :dy], 0.1 + 0.9 * np_softplus(out[:, dy:])
    nll = np.mean(0.5 * np.log(2 * np.pi) + np.log(sigma) + 0.5 * ((yt - mu) / sigma) ** 2)
    kl = np.sum(np.log(s_c / s_t) + (s_t**2 + (mu_t - mu_c) ** 2) / (2 * s_c**2) - 0.5)
    return nll + kl / len(xt)
