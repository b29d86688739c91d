"""Same convolution with zero padding, its adjoint, and impulse probing.

Filters are stored as banks of shape ``(C_out, C_in, k, k)`` with odd ``k``
and are applied as cross-correlations (the deep learning convention):

    out[r, c, i] = sum_j sum_{dr, dc} w[i, j, dr, dc] * z[r + dr - R, c + dc - R, j]

with taps that fall outside the image reading zero.  This makes the
single-channel ``w_G`` filter produce exactly the matrix with 4 on the
diagonal and -1 between lattice neighbours.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, UnsupportedModelError

DENSE_LIMIT = 4096


def _check_bank(bank):
    bank = np.asarray(bank, dtype=float)
    if bank.ndim != 4 or bank.shape[2] != bank.shape[3] or bank.shape[2] % 2 == 0:
        raise DimensionError(f"filter bank must be (C_out, C_in, k, k) with odd k, got {bank.shape}")
    return bank


def _tap_list(bank, support):
    if support is None:
        support = np.any(bank != 0, axis=(0, 1))
    k = bank.shape[2]
    return [(dr, dc) for dr in range(k) for dc in range(k) if support[dr, dc]]


def _pad(z, radius):
    pad = [(0, 0)] * (z.ndim - 3) + [(radius, radius), (radius, radius), (0, 0)]
    return np.pad(z, pad)


def conv_same(z, bank, bias=None, support=None):
    """Multichannel same convolution ``conv(z, bank) + bias``.

    ``support`` optionally restricts the taps visited to a boolean ``(k, k)``
    pattern; taps outside it must be zero.  The summation order is fixed
    (row-major over taps) so results are reproducible bit for bit.
    """
    z = np.asarray(z, dtype=float)
    bank = _check_bank(bank)
    if z.ndim < 3 or z.shape[-1] != bank.shape[1]:
        raise DimensionError(f"input shape {z.shape} does not match bank with {bank.shape[1]} input channels")
    k = bank.shape[2]
    r = k // 2
    h, w = z.shape[-3], z.shape[-2]
    taps = _tap_list(bank, support)
    if bank.shape[0] == 1 and bank.shape[1] == 1:
        # single channel: drop the unit axis so inner loops run along rows
        zp = _pad(z, r)[..., 0]
        out = np.zeros(z.shape)
        acc = out[..., 0]
        for dr, dc in taps:
            acc += bank[0, 0, dr, dc] * zp[..., dr:dr + h, dc:dc + w]
    else:
        zp = _pad(z, r)
        out = np.zeros(z.shape[:-1] + (bank.shape[0],))
        for dr, dc in taps:
            out += zp[..., dr:dr + h, dc:dc + w, :] @ bank[:, :, dr, dc].T
    if bias is not None:
        out += np.asarray(bias, dtype=float)
    return out


def flip_bank(bank):
    """Bank whose same convolution is the transpose of ``bank``'s."""
    bank = _check_bank(bank)
    return np.ascontiguousarray(bank[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def conv_adjoint(v, bank, support=None):
    """Apply ``G^T`` where ``G`` is the linear map of ``conv_same`` with zero bias."""
    flipped = flip_bank(bank)
    if support is not None:
        support = np.asarray(support)[::-1, ::-1]
    return conv_same(v, flipped, support=support)


def conv_weight_grad(z, u, k, support=None):
    """Gradient of ``<u, conv_same(z, w)>`` with respect to the taps ``w``.

    Sums over any leading batch axes.  Returns a ``(C_out, C_in, k, k)`` array;
    entries outside ``support`` are left at zero.
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    if z.shape[:-1] != u.shape[:-1]:
        raise DimensionError(f"input {z.shape} and cotangent {u.shape} disagree")
    c_in, c_out = z.shape[-1], u.shape[-1]
    r = k // 2
    h, w = z.shape[-3], z.shape[-2]
    zp = _pad(z, r)
    if support is None:
        support = np.ones((k, k), dtype=bool)
    grad = np.zeros((c_out, c_in, k, k))
    if c_in == 1 and c_out == 1:
        u2, zp2 = u[..., 0], zp[..., 0]
        for dr in range(k):
            for dc in range(k):
                if support[dr, dc]:
                    grad[0, 0, dr, dc] = np.sum(u2 * zp2[..., dr:dr + h, dc:dc + w])
        return grad
    uf = u.reshape(-1, c_out)
    for dr in range(k):
        for dc in range(k):
            if support[dr, dc]:
                window = zp[..., dr:dr + h, dc:dc + w, :].reshape(-1, c_in)
                grad[:, :, dr, dc] = uf.T @ window
    return grad


def assemble_dense(op, height, width, channels=1):
    """Dense ``N x N`` matrix of a linear grid operator, column by column.

    Intended as a test oracle; refuses grids with more than 4096 entries.
    """
    n = height * width * channels
    if n > DENSE_LIMIT:
        raise DimensionError(f"refusing to assemble a dense {n} x {n} matrix (limit {DENSE_LIMIT})")
    mat = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        col = np.asarray(op(e.reshape(height, width, channels)), dtype=float)
        mat[:, j] = col.reshape(-1)
    return mat


def gram_diagonal(stack, shape, windowed=True, batch=64):
    """Diagonal of ``G^T G``, i.e. ``||G e_i||^2`` for every canonical basis grid.

    ``stack`` is any object exposing ``is_linear``, ``receptive_radius`` and
    ``apply_linear(x)`` for batched inputs (a ``DgmrfModel`` qualifies).

    With ``windowed=True`` impulses are placed on a lattice with spacing
    ``2R + 1`` (R the composite receptive radius), so their responses never
    overlap and each response is binned back to its own impulse.  This costs
    ``C (2R+1)^2`` operator applications.  ``windowed=False`` probes every
    basis vector separately and is meant for validation on small grids.
    """
    if not getattr(stack, "is_linear", False):
        raise UnsupportedModelError("gram_diagonal requires a linear layer stack")
    h, w, c = shape
    n = h * w * c
    if not windowed:
        out = np.zeros(n)
        for start in range(0, n, batch):
            idx = np.arange(start, min(start + batch, n))
            probes = np.zeros((idx.size, n))
            probes[np.arange(idx.size), idx] = 1.0
            resp = stack.apply_linear(probes.reshape(-1, h, w, c))
            out[idx] = np.sum(resp.reshape(idx.size, -1) ** 2, axis=1)
        return out

    radius = int(stack.receptive_radius)
    s = 2 * radius + 1
    rows, cols = np.arange(h), np.arange(w)
    jobs = [(ch, p, q) for ch in range(c) for p in range(min(s, h)) for q in range(min(s, w))]
    diag = np.zeros((h, w, c))
    for start in range(0, len(jobs), batch):
        chunk = jobs[start:start + batch]
        probes = np.zeros((len(chunk), h, w, c))
        for b, (ch, p, q) in enumerate(chunk):
            probes[b, p::s, q::s, ch] = 1.0
        energy = np.sum(stack.apply_linear(probes) ** 2, axis=-1)
        for b, (ch, p, q) in enumerate(chunk):
            # owning impulse of each output pixel: nearest lattice point with offset (p, q)
            r0 = p + s * np.round((rows - p) / s).astype(int)
            c0 = q + s * np.round((cols - q) / s).astype(int)
            r0 = np.clip(r0, p, None)
            c0 = np.clip(c0, q, None)
            valid_r = (r0 < h) & (np.abs(rows - r0) <= radius)
            valid_c = (c0 < w) & (np.abs(cols - c0) <= radius)
            rr, cc = np.meshgrid(np.flatnonzero(valid_r), np.flatnonzero(valid_c), indexing="ij")
            np.add.at(diag[:, :, ch], (r0[rr], c0[cc]), energy[b][rr, cc])
    return diag.reshape(-1)
