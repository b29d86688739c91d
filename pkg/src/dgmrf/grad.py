"""Hand-derived reverse-mode gradients of the ELBO.

Each layer contributes a vector-Jacobian product (through the PReLU, the
convolution and the channel permutation) and an analytic derivative of its
log-determinant.  Gradients are returned in the layout of
``flatten_model`` followed by the variational parameters.
"""
from __future__ import annotations

import numpy as np

from .conv import conv_weight_grad
from .errors import DimensionError
from .model import TREND_PRECISION, _plus_logdet_rho, _plus_taps_jac, PLUS_POSITIONS, \
    flatten_model, forward_g, activation_logdet, model_logdet, seq_base_mask, unorient


def _bank_to_params(layer, dbank):
    """Chain a gradient w.r.t. the filter bank back to ``filt`` and ``cross``."""
    c = layer.channels
    dfilt = np.zeros_like(layer.filt)
    for i in range(c):
        k = dbank[i, i]
        if layer.kind == "seq":
            base = unorient(k, layer.orientation)
            r = layer.radius
            dfilt[i, 0] = base[r, r] * np.exp(layer.filt[i, 0])
            dfilt[i, 1:] = base[seq_base_mask(r)]
        elif layer.param == "rho":
            dtaps = np.array([k[rc] for rc in PLUS_POSITIONS])
            jac = _plus_taps_jac(layer.filt[i])[1]
            dfilt[i] = jac.T @ dtaps
        else:
            dfilt[i] = [k[rc] for rc in PLUS_POSITIONS]
    dcross = np.array(dbank)
    for i in range(c):
        dcross[i, i] = 0.0
    return dfilt, dcross


def layer_vjp(layer, z_in, h, upstream):
    """Pull back a cotangent of the layer output ``psi(h)``.

    Parameters
    ----------
    z_in : (..., H, W, C) input of the layer
    h : (..., H, W, C) its pre-activation
    upstream : cotangent with the shape of the layer output

    Returns
    -------
    dz_in : cotangent of the input
    grads : dict with ``filt``, ``cross``, ``bias`` and ``log_alpha``
    """
    if upstream.shape != h.shape or z_in.shape != h.shape:
        raise DimensionError("input, pre-activation and cotangent shapes must agree")
    grads = {}
    if layer.log_alpha is None:
        dh = upstream
        grads["log_alpha"] = 0.0
    else:
        neg = h < 0.0
        dh = np.where(neg, layer.alpha * upstream, upstream)
        grads["log_alpha"] = float(np.sum(upstream * h * neg)) * layer.alpha
    bank = layer.bank()
    zp = z_in[..., list(layer.perm)]
    dbank = conv_weight_grad(zp, dh, layer.size, support=layer.support())
    grads["filt"], grads["cross"] = _bank_to_params(layer, dbank)
    grads["bias"] = np.sum(dh.reshape(-1, layer.channels), axis=0)
    dz_in = layer.linear_adjoint(dh, bank)
    return dz_in, grads


def logdet_grad(layer, height, width):
    """Gradient of the layer's ``log|det|`` with respect to ``filt``."""
    dfilt = np.zeros_like(layer.filt)
    if layer.fixed:
        return dfilt
    for i in range(layer.channels):
        if layer.kind == "seq":
            dfilt[i, 0] = height * width
        else:
            dfilt[i] = _plus_logdet_rho(layer.filt[i], height, width)[1]
    return dfilt


def model_vjp(model, x, cot):
    """Backpropagate ``cot`` (cotangent of ``z = g(x)``) through the model.

    ``cot`` may be an array or a callable mapping ``z`` to the cotangent.
    Returns ``(z, hs, dx, layer_grads)``.
    """
    z, hs = forward_g(model, x)
    if callable(cot):
        cot = cot(z)
    inputs = [np.asarray(x, dtype=float)] + [layer.activate(h) for layer, h in zip(model.layers[:-1], hs[:-1])]
    layer_grads = [None] * len(model.layers)
    u = cot
    for i in reversed(range(len(model.layers))):
        u, layer_grads[i] = layer_vjp(model.layers[i], inputs[i], hs[i], u)
    return z, hs, u, layer_grads


def _elbo_and_grad(model, q, data, eps):
    """ELBO estimate, its term breakdown and gradient for fixed noise ``eps``."""
    h, w, c = data.shape
    n = h * w * c
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    n_q = eps.shape[0]
    trend = data.F is not None
    p = data.F.shape[1] if trend else 0
    if eps.shape[1] != n + p:
        raise DimensionError(f"noise has {eps.shape[1]} columns, expected {n + p}")

    s = np.exp(q.log_s)
    e_x = eps[:, :n]
    x = (q.nu + s * e_x).reshape(n_q, h, w, c)
    mask = data.mask[:, :, None].astype(float)
    with np.errstate(over="ignore"):
        # overflow to inf is reported by the training loop as a diverged term
        inv_var = float(np.exp(-2.0 * model.log_sigma))

    z, hs, dx, layer_grads = model_vjp(model, x, lambda z: -z / n_q)
    fitted = x
    if trend:
        s_b = np.exp(q.log_s_beta)
        e_b = eps[:, n:]
        beta = q.nu_beta + s_b * e_b
        fitted = x + (beta @ data.F.T).reshape(n_q, h, w, c)
    resid = mask * (data.y - fitted)
    m_entries = data.n_observed_entries

    terms = {
        "entropy": float(np.sum(q.log_s)),
        "noise": -m_entries * model.log_sigma,
        "logdet": model_logdet(model, (h, w)),
        "activation": float(np.mean(activation_logdet(model, hs))) if not model.is_linear else 0.0,
        "prior_quad": -0.5 * float(np.sum(z * z)) / n_q,
        "data_quad": -0.5 * inv_var * float(np.sum(resid * resid)) / n_q,
    }
    dx = dx + resid * inv_var / n_q
    dx_flat = dx.reshape(n_q, n)
    g_nu = dx_flat.sum(axis=0)
    g_log_s = (dx_flat * e_x).sum(axis=0) * s + 1.0

    for layer, grads, h_l in zip(model.layers, layer_grads, hs):
        grads["filt"] = grads["filt"] + logdet_grad(layer, h, w)
        if layer.log_alpha is not None:
            grads["log_alpha"] += float(np.mean(np.sum(h_l < 0.0, axis=(-3, -2, -1))))
    g_theta = flatten_model(model, {
        "layers": layer_grads,
        "log_sigma": -m_entries + inv_var * float(np.sum(resid * resid)) / n_q,
    })
    parts = [g_theta, g_nu, g_log_s]

    if trend:
        v2 = TREND_PRECISION ** 2
        terms["trend_entropy"] = float(np.sum(q.log_s_beta))
        terms["trend_prior"] = -0.5 * v2 * float(np.sum(beta * beta)) / n_q
        d_beta = (resid.reshape(n_q, h * w) * inv_var) @ data.F / n_q - v2 * beta / n_q
        parts += [d_beta.sum(axis=0), (d_beta * e_b).sum(axis=0) * s_b + 1.0]

    elbo = float(sum(terms.values()))
    return elbo, terms, np.concatenate(parts)


def elbo_grad(model, q, data, eps):
    """ELBO estimate and its exact gradient for the given standard-normal draws.

    ``eps`` has shape ``(N_q, N)`` (``(N_q, N + p)`` with a trend).  The
    gradient is ordered as ``flatten_model(model)`` then ``nu``, ``log_s``
    and, with a trend, ``nu_beta``, ``log_s_beta``.
    """
    elbo, _, grad = _elbo_and_grad(model, q, data, eps)
    return elbo, grad
