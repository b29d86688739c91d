"""Matrix-free conjugate gradients over batches of right-hand sides."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: np.ndarray  # relative residual per right-hand side


def default_max_iter(n):
    return int(10 * math.sqrt(n) + 100)


def cg(matvec, c, tol=1e-7, max_iter=None, x0=None, inv_diag=None):
    """Solve ``A x = c`` for symmetric positive-definite ``A``.

    ``c`` may be ``(n,)`` or ``(B, n)``; each row is an independent system
    sharing the operator.  ``matvec`` must accept arrays of the same shape.
    Iterates until ``||A x - c|| / ||c|| <= tol`` (recursive residual) for
    every row, freezing rows as they converge.  ``inv_diag`` (length ``n``)
    switches on Jacobi preconditioning; the stopping rule is unchanged.

    Raises
    ------
    ConvergenceError
        If some row has not converged after ``max_iter`` iterations
        (default ``10 sqrt(n) + 100``).
    """
    c = np.asarray(c, dtype=float)
    single = c.ndim == 1
    b = c[None, :] if single else c
    if b.ndim != 2:
        raise DimensionError("right-hand side must be a vector or a (B, n) batch")
    n = b.shape[1]
    max_iter = default_max_iter(n) if max_iter is None else int(max_iter)

    def mv(v):
        return np.asarray(matvec(v[0] if single else v), dtype=float).reshape(v.shape)

    cnorm = np.linalg.norm(b, axis=1)
    safe = np.where(cnorm > 0, cnorm, 1.0)
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float).reshape(b.shape)
        r = b - mv(x)
    if inv_diag is not None:
        inv_diag = np.asarray(inv_diag, dtype=float).reshape(n)
    def prec(v):
        return v if inv_diag is None else v * inv_diag

    zr = prec(r)
    p = zr.copy()
    rr = np.einsum("ij,ij->i", r, r)
    rz = np.einsum("ij,ij->i", r, zr)
    active = np.sqrt(rr) / safe > tol
    active &= cnorm > 0
    x[cnorm == 0] = 0.0
    it = 0
    while active.any():
        if it >= max_iter:
            rel = np.sqrt(rr) / safe
            raise ConvergenceError(
                f"CG did not reach relative residual {tol:g} in {max_iter} iterations "
                f"(worst {rel.max():.3e})", iterations=it, residual=rel)
        ap = mv(p)
        pap = np.einsum("ij,ij->i", p, ap)
        alpha = np.where(active, rz / np.where(active, pap, 1.0), 0.0)
        x += alpha[:, None] * p
        r -= alpha[:, None] * ap
        zr = prec(r)
        rr = np.einsum("ij,ij->i", r, r)
        rz_new = np.einsum("ij,ij->i", r, zr)
        beta = np.where(active, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = np.where(active[:, None], zr + beta[:, None] * p, p)
        rz = rz_new
        active &= np.sqrt(rr) / safe > tol
        it += 1
    rel = np.sqrt(rr) / safe
    return CGResult(x[0] if single else x, it, rel[0] if single else rel)
