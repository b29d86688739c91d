"""Deep GMRF layers, log-determinants and the prior density.

A model maps a latent field ``x`` to ``z = g(x)`` through ``L`` layers

    h_l = conv(z_{l-1}[..., perm_l], w_l) + b_l,    z_l = psi_l(h_l)

where ``psi_l`` is either the identity or a PReLU with slope ``alpha_l`` for
negative inputs.  Every layer's filter bank is lower block triangular over
channels, and each diagonal block is a ``plus`` or ``seq`` filter whose
determinant has a closed form.

Raw parameters are unconstrained.  ``plus`` filters use six values
``rho_1..rho_6`` mapped to taps ``a_1..a_5``:

    a_1 = softplus(rho_1) + softplus(rho_2)
    s_h = softplus(rho_1) tanh(rho_3) / 2,  a_2 = s_h exp(-rho_4/2),  a_4 = s_h exp(rho_4/2)
    s_v = softplus(rho_2) tanh(rho_5) / 2,  a_3 = s_v exp(-rho_6/2),  a_5 = s_v exp(rho_6/2)

so ``a_2 a_4 = s_h^2`` and ``a_3 a_5 = s_v^2`` are non-negative and every
eigenvalue ``a_1 + 2 s_v cos(.) + 2 s_h cos(.)`` is strictly positive.
``seq`` filters use ``eta`` (``a_1 = exp(eta)``) followed by free
off-centre taps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .conv import conv_adjoint, conv_same
from .errors import DimensionError, ParseError, UnsupportedModelError

LOG_2PI = math.log(2.0 * math.pi)
# prior precision (inverse sd) of the trend coefficients
TREND_PRECISION = 1e-4

# positions of a_1..a_5 in a 3x3 plus filter (cross-correlation layout)
PLUS_POSITIONS = ((1, 1), (1, 0), (0, 1), (1, 2), (2, 1))
PLUS_SUPPORT = np.zeros((3, 3), dtype=bool)
for _r, _c in PLUS_POSITIONS:
    PLUS_SUPPORT[_r, _c] = True
PLUS_SUPPORT.setflags(write=False)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


# ----------------------------------------------------------------------------
# plus filters


def plus_taps(rho):
    """Map ``rho_1..rho_6`` to the taps ``a_1..a_5``."""
    return _plus_taps_jac(rho)[0]


def _plus_taps_jac(rho):
    r1, r2, r3, r4, r5, r6 = np.asarray(rho, dtype=float)
    sp1, sp2 = softplus(r1), softplus(r2)
    sg1, sg2 = sigmoid(r1), sigmoid(r2)
    t3, t5 = np.tanh(r3), np.tanh(r5)
    sh = sp1 * t3 / 2.0
    sv = sp2 * t5 / 2.0
    e4m, e4p = math.exp(-r4 / 2.0), math.exp(r4 / 2.0)
    e6m, e6p = math.exp(-r6 / 2.0), math.exp(r6 / 2.0)
    taps = np.array([sp1 + sp2, sh * e4m, sv * e6m, sh * e4p, sv * e6p])
    dsh = np.array([sg1 * t3 / 2.0, 0.0, sp1 * (1.0 - t3 * t3) / 2.0, 0.0, 0.0, 0.0])
    dsv = np.array([0.0, sg2 * t5 / 2.0, 0.0, 0.0, sp2 * (1.0 - t5 * t5) / 2.0, 0.0])
    jac = np.zeros((5, 6))
    jac[0, 0], jac[0, 1] = sg1, sg2
    jac[1] = dsh * e4m
    jac[1, 3] = -taps[1] / 2.0
    jac[3] = dsh * e4p
    jac[3, 3] = taps[3] / 2.0
    jac[2] = dsv * e6m
    jac[2, 5] = -taps[2] / 2.0
    jac[4] = dsv * e6p
    jac[4, 5] = taps[4] / 2.0
    return taps, jac, sh, sv, dsh, dsv


def plus_rho_from_taps(a1, horizontal, vertical, ratio_h=1.0, ratio_v=1.0):
    """Inverse map for taps with ``a_2 a_4 = horizontal^2`` (sign kept) etc.

    The centre is split equally between ``softplus(rho_1)`` and
    ``softplus(rho_2)``; requires ``2|horizontal| + 2|vertical| < a_1``
    strictly split as ``|horizontal| < a_1/4`` and ``|vertical| < a_1/4``.
    """
    half = a1 / 2.0
    if abs(horizontal) >= half / 2.0 or abs(vertical) >= half / 2.0:
        raise ValueError("taps are outside the positive-eigenvalue parameterization")
    r1 = r2 = float(inverse_softplus(half))
    r3 = math.atanh(2.0 * horizontal / half)
    r5 = math.atanh(2.0 * vertical / half)
    return np.array([r1, r2, r3, math.log(ratio_h), r5, math.log(ratio_v)])


def plus_eigenvalues(taps, height, width):
    """Eigenvalues of the same-convolution matrix of a plus filter (complex)."""
    a1, a2, a3, a4, a5 = (complex(a) for a in taps)
    ci = np.cos(np.pi * np.arange(1, height + 1) / (height + 1))
    cj = np.cos(np.pi * np.arange(1, width + 1) / (width + 1))
    rv = np.sqrt(a3 * a5)
    rh = np.sqrt(a2 * a4)
    return a1 + 2.0 * rv * ci[:, None] + 2.0 * rh * cj[None, :]


def logdet_plus(taps, height, width):
    """``log|det G_+|`` for a plus filter with taps ``a_1..a_5`` on an H x W grid.

    Square roots of negative products are taken as imaginary, so arbitrary
    real taps are accepted.  O(HW).
    """
    lam = plus_eigenvalues(taps, height, width)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(np.abs(lam))))


def _plus_logdet_rho(rho, height, width):
    """Log-determinant and its gradient with respect to ``rho``.

    Uses the signed roots ``s_h``/``s_v`` directly: the cosine grid is
    symmetric, so the eigenvalue set does not depend on the root's sign,
    and the expression stays smooth through ``s_h = 0``.
    """
    taps, _, sh, sv, dsh, dsv = _plus_taps_jac(rho)
    rho = np.asarray(rho, dtype=float)
    ci = np.cos(np.pi * np.arange(1, height + 1) / (height + 1))
    cj = np.cos(np.pi * np.arange(1, width + 1) / (width + 1))
    lam = taps[0] + 2.0 * sv * ci[:, None] + 2.0 * sh * cj[None, :]
    inv = 1.0 / lam
    value = float(np.sum(np.log(lam)))
    d_a1 = inv.sum()
    d_sv = 2.0 * (inv * ci[:, None]).sum()
    d_sh = 2.0 * (inv * cj[None, :]).sum()
    grad = d_sh * dsh + d_sv * dsv
    grad[0] += d_a1 * sigmoid(rho[0])
    grad[1] += d_a1 * sigmoid(rho[1])
    return value, grad


# ----------------------------------------------------------------------------
# seq filters


def seq_base_mask(radius):
    """Off-centre support of an un-rotated seq filter: right of centre, and all rows below."""
    k = 2 * radius + 1
    m = np.zeros((k, k), dtype=bool)
    m[radius, radius + 1:] = True
    m[radius + 1:, :] = True
    return m


def seq_n_params(radius):
    return 1 + int(seq_base_mask(radius).sum())


def orient(a, orientation):
    """Apply one of the eight rotations/mirrors to the trailing two axes."""
    if not 0 <= orientation < 8:
        raise ValueError("orientation must be in 0..7")
    out = np.rot90(a, orientation % 4, axes=(-2, -1))
    if orientation >= 4:
        out = out[..., ::-1]
    return out


def unorient(a, orientation):
    out = a[..., ::-1] if orientation >= 4 else a
    return np.rot90(out, -(orientation % 4), axes=(-2, -1))


def seq_kernel(params, radius, orientation):
    base = np.zeros((2 * radius + 1, 2 * radius + 1))
    base[radius, radius] = math.exp(params[0])
    base[seq_base_mask(radius)] = params[1:]
    return np.ascontiguousarray(orient(base, orientation))


def logdet_seq(a1, n):
    """``log|det G_seq| = N log|a_1|``; off-centre taps and orientation do not enter."""
    return n * math.log(abs(a1))


# ----------------------------------------------------------------------------
# layers


@dataclass(frozen=True, eq=False)
class Layer:
    """One convolutional layer, optionally followed by a PReLU.

    Attributes
    ----------
    kind : {"plus", "seq"}
    filt : (C, P) array
        Raw parameters of the diagonal filters, one row per channel.  For
        ``param="rho"`` plus layers P = 6, for ``param="taps"`` plus layers
        the row holds ``a_1..a_5`` directly, for seq layers P = 1 + #taps.
    cross : (C, C, k, k) array
        Cross-channel taps; only the strictly lower blocks (out > in) are used.
    bias : (C,) array
    log_alpha : float or None
        Log of the PReLU negative slope; None for a linear layer.
    perm : tuple
        Input channel order; ``h = conv(z[..., perm])``.
    fixed : bool
        Fixed layers have no trainable parameters (used for Matérn priors).
    """

    kind: str
    filt: np.ndarray
    cross: np.ndarray
    bias: np.ndarray
    radius: int = 1
    orientation: int = 0
    log_alpha: Optional[float] = None
    perm: tuple = ()
    param: str = "rho"
    fixed: bool = False

    def __post_init__(self):
        filt = np.array(self.filt, dtype=float, ndmin=2)
        c = filt.shape[0]
        k = 2 * self.radius + 1
        cross = np.zeros((c, c, k, k)) if self.cross is None else np.array(self.cross, dtype=float)
        bias = np.zeros(c) if self.bias is None else np.array(self.bias, dtype=float).reshape(c)
        perm = tuple(self.perm) if self.perm else tuple(range(c))
        if self.kind == "plus":
            if self.radius != 1:
                raise ValueError("plus filters are 3x3")
            want = 6 if self.param == "rho" else 5
            if self.param == "taps" and not self.fixed:
                raise ValueError("tap-parameterized plus layers must be fixed")
        elif self.kind == "seq":
            if self.radius not in (1, 2, 3):
                raise ValueError("seq filters have radius 1, 2 or 3")
            want = seq_n_params(self.radius)
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if filt.shape[1] != want:
            raise ValueError(f"{self.kind} layer expects {want} parameters per channel, got {filt.shape[1]}")
        if cross.shape != (c, c, k, k) or sorted(perm) != list(range(c)):
            raise DimensionError("cross taps or permutation inconsistent with channel count")
        for name, val in (("filt", filt), ("cross", cross), ("bias", bias)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "perm", perm)

    @property
    def channels(self) -> int:
        return self.filt.shape[0]

    @property
    def size(self) -> int:
        return 2 * self.radius + 1

    @property
    def is_linear(self) -> bool:
        return self.log_alpha is None

    @property
    def alpha(self) -> float:
        return 1.0 if self.log_alpha is None else math.exp(self.log_alpha)

    def diag_kernel(self, c):
        if self.kind == "seq":
            return seq_kernel(self.filt[c], self.radius, self.orientation)
        taps = plus_taps(self.filt[c]) if self.param == "rho" else self.filt[c]
        k = np.zeros((3, 3))
        for a, (r, col) in zip(taps, PLUS_POSITIONS):
            k[r, col] = a
        return k

    def bank(self):
        c = self.channels
        bank = self.cross * cross_mask(c, self.size)
        for i in range(c):
            bank[i, i] = self.diag_kernel(i)
        return bank

    def support(self):
        if self.channels > 1:
            return np.ones((self.size, self.size), dtype=bool)
        if self.kind == "plus":
            return PLUS_SUPPORT
        s = orient(seq_base_mask(self.radius), self.orientation).copy()
        s[self.radius, self.radius] = True
        return s

    def logdet(self, height, width):
        """``log|det|`` of the layer's linear part (permutations have |det| = 1)."""
        total = 0.0
        for c in range(self.channels):
            if self.kind == "seq":
                total += height * width * self.filt[c, 0]
            elif self.param == "rho":
                total += _plus_logdet_rho(self.filt[c], height, width)[0]
            else:
                total += logdet_plus(self.filt[c], height, width)
        return total

    def linear(self, z, bank=None):
        """``conv(z[..., perm], w)`` without bias or activation."""
        bank = self.bank() if bank is None else bank
        return conv_same(z[..., list(self.perm)], bank, support=self.support())

    def linear_adjoint(self, v, bank=None):
        bank = self.bank() if bank is None else bank
        u = conv_adjoint(v, bank, support=self.support())
        out = np.empty_like(u)
        out[..., list(self.perm)] = u
        return out

    def activate(self, h):
        if self.log_alpha is None:
            return h
        return np.where(h >= 0.0, h, self.alpha * h)

    def inverse_activate(self, z):
        if self.log_alpha is None:
            return z
        return np.where(z >= 0.0, z, z / self.alpha)


def cross_mask(channels, k):
    m = np.tril(np.ones((channels, channels), dtype=bool), -1)
    return np.broadcast_to(m[:, :, None, None], (channels, channels, k, k)).copy()


def identity_layer(channels=1):
    filt = np.tile([1.0, 0.0, 0.0, 0.0, 0.0], (channels, 1))
    return Layer("plus", filt, None, None, param="taps", fixed=True)


# ----------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class DgmrfModel:
    """Ordered layers plus the observation noise ``sigma = exp(log_sigma)``."""

    layers: tuple
    log_sigma: float = math.log(1e-3)
    train_sigma: bool = False
    train_bias: bool = True
    seed: Optional[int] = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a model needs at least one layer")
        c = layers[0].channels
        if any(layer.channels != c for layer in layers):
            raise DimensionError("all layers must share one channel count")
        object.__setattr__(self, "layers", layers)

    @property
    def channels(self) -> int:
        return self.layers[0].channels

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)

    @property
    def is_linear(self) -> bool:
        return all(layer.is_linear for layer in self.layers)

    @property
    def receptive_radius(self) -> int:
        return sum(layer.radius for layer in self.layers)

    def apply_linear(self, x):
        """``G x`` (composite linear part, no biases); linear models only."""
        if not self.is_linear:
            raise UnsupportedModelError("G is only defined for linear models")
        z = np.asarray(x, dtype=float)
        for layer in self.layers:
            z = layer.linear(z)
        return z

    def apply_linear_adjoint(self, v):
        if not self.is_linear:
            raise UnsupportedModelError("G is only defined for linear models")
        u = np.asarray(v, dtype=float)
        for layer in reversed(self.layers):
            u = layer.linear_adjoint(u)
        return u


def _check_input(model, x):
    x = np.asarray(x, dtype=float)
    if x.ndim < 3 or x.shape[-1] != model.channels:
        raise DimensionError(f"input shape {x.shape} does not match a {model.channels}-channel model")
    return x


def forward_g(model, x):
    """Return ``(z, hs)`` with ``z = g(x)`` and the pre-activations of every layer."""
    z = _check_input(model, x)
    hs = []
    for layer in model.layers:
        h = layer.linear(z) + layer.bias
        hs.append(h)
        z = layer.activate(h)
    return z, hs


def inverse_g(model, z, tol=1e-12):
    """Invert ``g`` layer by layer (CG on the normal equations of each filter)."""
    from .linalg import cg

    x = _check_input(model, z)
    shape = x.shape
    for layer in reversed(model.layers):
        h = layer.inverse_activate(x) - layer.bias
        bank = layer.bank()
        rhs = layer.linear_adjoint(h, bank).reshape(-1)

        def normal(u, layer=layer, bank=bank):
            v = layer.linear(u.reshape(shape), bank)
            return layer.linear_adjoint(v, bank).reshape(u.shape)

        x = cg(normal, rhs, tol=tol, max_iter=10 * rhs.size + 100).x.reshape(shape)
    return x


def model_bias(model, shape):
    """``b = g(0)`` as a grid of the given ``(H, W, C)`` shape."""
    if not model.is_linear:
        raise UnsupportedModelError("the bias vector b is only defined for linear models")
    return forward_g(model, np.zeros(shape))[0]


def model_logdet(model, shape):
    """Sum of per-layer ``log|det G_l|`` on an ``(H, W)`` or ``(H, W, C)`` grid.

    For non-linear models this is the linear part only; the activation
    contribution depends on ``x`` and is added by ``log_prior_density``.
    """
    h, w = shape[0], shape[1]
    return float(sum(layer.logdet(h, w) for layer in model.layers))


def activation_logdet(model, hs):
    """``sum_l sum_i log psi_l'(h_{l,i})`` per leading batch element."""
    total = 0.0
    for layer, h in zip(model.layers, hs):
        if layer.log_alpha is not None:
            n_neg = np.sum(h < 0.0, axis=(-3, -2, -1))
            total = total + n_neg * layer.log_alpha
    return total


def log_prior_density(model, x):
    """``log p(x)`` including all normalizing constants."""
    x = _check_input(model, x)
    z, hs = forward_g(model, x)
    n = int(np.prod(x.shape[-3:]))
    quad = np.sum(z * z, axis=(-3, -2, -1))
    return model_logdet(model, x.shape[-3:]) + activation_logdet(model, hs) - 0.5 * n * LOG_2PI - 0.5 * quad


def matern_layers(kappa2, tau, gamma, n_layers=None, log_sigma=math.log(1e-3)):
    """Linear model equal to the lattice SPDE operator ``tau (kappa^2 I + G)^gamma``.

    ``gamma`` fixed plus layers carry ``a_1 = (4 + kappa^2) t`` and
    ``a_2..a_5 = -t`` with ``t = tau^(1/gamma)``; the remaining layers are
    identities.
    """
    n_layers = gamma if n_layers is None else n_layers
    if gamma < 1 or n_layers < gamma:
        raise ValueError("need gamma >= 1 and n_layers >= gamma")
    if kappa2 < 0 or tau <= 0:
        raise ValueError("need kappa2 >= 0 and tau > 0")
    t = tau ** (1.0 / gamma)
    taps = np.array([[(4.0 + kappa2) * t, -t, -t, -t, -t]])
    layers = [Layer("plus", taps, None, None, param="taps", fixed=True) for _ in range(gamma)]
    layers += [identity_layer() for _ in range(n_layers - gamma)]
    return DgmrfModel(tuple(layers), log_sigma=log_sigma, train_sigma=False, train_bias=False)


def init_model(
    filter="plus",
    n_layers=1,
    radius=1,
    channels=1,
    nonlinear=False,
    sigma=1e-3,
    train_sigma=False,
    train_bias=True,
    seed=0,
    orientations: Optional[Sequence[int]] = None,
    init_scale=0.1,
):
    """Random initialization near the identity map.

    Raw parameters get N(0, init_scale^2) offsets around the identity layer;
    biases start at 0.  Seq orientations are drawn uniformly unless given.
    Non-linear models put a PReLU (alpha = 1 initially) after every layer but
    the last.  Channel orders cycle by one position per layer.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for idx in range(n_layers):
        if filter == "plus":
            base = np.array([inverse_softplus(0.5)] * 2 + [0.0] * 4)
            filt = base + init_scale * rng.standard_normal((channels, 6))
            orientation = 0
            rad = 1
        elif filter == "seq":
            p = seq_n_params(radius)
            filt = init_scale * rng.standard_normal((channels, p))
            orientation = int(rng.integers(8)) if orientations is None else int(orientations[idx])
            rad = radius
        else:
            raise ValueError(f"unknown filter type {filter!r}")
        kk = 2 * rad + 1
        cross = np.zeros((channels, channels, kk, kk))
        if channels > 1:
            cross = init_scale * rng.standard_normal(cross.shape) * cross_mask(channels, kk)
        perm = tuple(np.roll(np.arange(channels), idx).tolist())
        log_alpha = 0.0 if (nonlinear and idx < n_layers - 1) else None
        layers.append(Layer(filter, filt, cross, np.zeros(channels), radius=rad,
                            orientation=orientation, log_alpha=log_alpha, perm=perm))
    return DgmrfModel(tuple(layers), log_sigma=math.log(sigma), train_sigma=train_sigma,
                      train_bias=train_bias, seed=seed)


# ----------------------------------------------------------------------------
# trainable parameter vector


def _layer_slots(layer, train_bias):
    if layer.fixed:
        return []
    slots = [("filt", None)]
    if layer.channels > 1:
        slots.append(("cross", cross_mask(layer.channels, layer.size)))
    if train_bias:
        slots.append(("bias", None))
    if layer.log_alpha is not None:
        slots.append(("log_alpha", None))
    return slots


def _slot_value(source, name):
    v = source[name] if isinstance(source, dict) else getattr(source, name)
    return np.atleast_1d(np.asarray(v, dtype=float))


def flatten_model(model, source=None):
    """Trainable parameters of ``model`` as one vector.

    With ``source`` (a list of per-layer dicts plus optional ``"log_sigma"``
    entry, as produced by the gradient code) the same layout is filled from
    those arrays instead.
    """
    parts = []
    for i, layer in enumerate(model.layers):
        src = layer if source is None else source["layers"][i]
        for name, mask in _layer_slots(layer, model.train_bias):
            val = _slot_value(src, name)
            parts.append(val[mask] if mask is not None else val.ravel())
    if model.train_sigma:
        parts.append(np.atleast_1d(model.log_sigma if source is None else source["log_sigma"]))
    return np.concatenate(parts) if parts else np.zeros(0)


def parameter_names(model):
    names = []
    for i, layer in enumerate(model.layers):
        for name, mask in _layer_slots(layer, model.train_bias):
            n = int(mask.sum()) if mask is not None else _slot_value(layer, name).size
            names += [f"layer{i}.{name}[{j}]" for j in range(n)]
    if model.train_sigma:
        names.append("log_sigma")
    return names


def unflatten_model(model, vec):
    """Copy of ``model`` with trainable parameters taken from ``vec``."""
    vec = np.asarray(vec, dtype=float)
    want = flatten_model(model).size
    if vec.ndim != 1 or vec.size != want:
        raise DimensionError(f"parameter vector has {vec.size} entries, model needs {want}")
    pos = 0
    layers = []
    for layer in model.layers:
        updates = {}
        for name, mask in _layer_slots(layer, model.train_bias):
            cur = _slot_value(layer, name)
            n = int(mask.sum()) if mask is not None else cur.size
            chunk = vec[pos:pos + n]
            pos += n
            if mask is not None:
                new = np.array(cur)
                new[mask] = chunk
            else:
                new = chunk.reshape(cur.shape)
            updates[name] = float(new[0]) if name == "log_alpha" else new
        layers.append(replace(layer, **updates) if updates else layer)
    log_sigma = model.log_sigma
    if model.train_sigma:
        log_sigma = float(vec[pos])
        pos += 1
    return replace(model, layers=tuple(layers), log_sigma=log_sigma)


# ----------------------------------------------------------------------------
# text manifest


def _fmt(values):
    return " ".join(repr(float(v)) for v in np.ravel(values))


def model_to_text(model):
    """Serialize to a line-based manifest; floats use 17 significant digits."""
    lines = [
        "dgmrf-model 1",
        f"layers {len(model.layers)}",
        f"channels {model.channels}",
        f"log_sigma {float(model.log_sigma)!r}",
        f"train_sigma {int(model.train_sigma)}",
        f"train_bias {int(model.train_bias)}",
        f"seed {'none' if model.seed is None else int(model.seed)}",
    ]
    for layer in model.layers:
        alpha = "none" if layer.log_alpha is None else repr(float(layer.log_alpha))
        lines.append(
            f"layer kind={layer.kind} param={layer.param} radius={layer.radius} "
            f"orientation={layer.orientation} fixed={int(layer.fixed)} "
            f"perm={','.join(map(str, layer.perm))} log_alpha={alpha}"
        )
        lines.append(f"filt {layer.filt.shape[0]} {layer.filt.shape[1]} {_fmt(layer.filt)}")
        lines.append(f"cross {_fmt(layer.cross)}")
        lines.append(f"bias {_fmt(layer.bias)}")
    return "\n".join(lines) + "\n"


def model_from_lines(lines):
    """Parse a manifest (iterable of lines); returns ``(model, n_lines_consumed)``."""
    it = iter(enumerate(lines, 1))

    def take(key):
        try:
            no, line = next(it)
        except StopIteration:
            raise ParseError(f"unexpected end of model manifest, expected {key!r}")
        parts = line.split()
        if not parts or parts[0] != key:
            raise ParseError(f"line {no}: expected {key!r}, got {line.strip()!r}")
        return no, parts[1:]

    def floats(no, tokens):
        try:
            return np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise ParseError(f"line {no}: {exc}")

    try:
        no, head = take("dgmrf-model")
        if head != ["1"]:
            raise ParseError(f"line {no}: unsupported manifest version {head}")
        _, (n_layers,) = take("layers")
        _, (channels,) = take("channels")
        no, (log_sigma,) = take("log_sigma")
        log_sigma = float(log_sigma)
        _, (train_sigma,) = take("train_sigma")
        _, (train_bias,) = take("train_bias")
        _, (seed,) = take("seed")
        c = int(channels)
        layers = []
        for _ in range(int(n_layers)):
            no, attrs = take("layer")
            kv = dict(a.split("=", 1) for a in attrs)
            radius = int(kv["radius"])
            k = 2 * radius + 1
            no, tok = take("filt")
            rows, cols = int(tok[0]), int(tok[1])
            filt = floats(no, tok[2:]).reshape(rows, cols)
            no, tok = take("cross")
            cross = floats(no, tok).reshape(c, c, k, k)
            no, tok = take("bias")
            bias = floats(no, tok)
            alpha = None if kv["log_alpha"] == "none" else float(kv["log_alpha"])
            layers.append(Layer(kv["kind"], filt, cross, bias, radius=radius,
                                orientation=int(kv["orientation"]), log_alpha=alpha,
                                perm=tuple(int(p) for p in kv["perm"].split(",")),
                                param=kv["param"], fixed=bool(int(kv["fixed"]))))
        model = DgmrfModel(tuple(layers), log_sigma=log_sigma, train_sigma=bool(int(train_sigma)),
                           train_bias=bool(int(train_bias)),
                           seed=None if seed == "none" else int(seed))
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed model manifest: {exc}")
    consumed = 7 + 4 * len(model.layers)
    return model, consumed


def model_from_text(text):
    return model_from_lines(text.splitlines())[0]
