"""Numba kernels for the preconditioned CG used by RTV smoothing.

The single-channel system is ``A s = b`` with

    A = I + alpha * (Dh^T Wh Dh + Dv^T Wv Dv)

applied as a five-point stencil, so ``A`` is never assembled.  The
preconditioner is a zero-fill modified incomplete Cholesky factorisation in
row-major order: ``relax = 0`` gives plain IC(0), ``relax = 1`` full MIC(0).
"""

import numba
import numpy as np

# No reassociation and no FMA contraction: both let the vectorised and scalar
# parts of a loop round differently, so results would depend on array
# alignment and change from run to run.
FASTMATH = {"nnan", "ninf", "nsz", "arcp", "afn"}


@numba.njit(cache=True, fastmath=FASTMATH)
def apply_system(s, wh, wv, alpha, out):
    h, w = s.shape
    for i in range(h):
        for j in range(w):
            sij = s[i, j]
            acc = 0.0
            if j < w - 1:
                acc += wh[i, j] * (sij - s[i, j + 1])
            if j > 0:
                acc += wh[i, j - 1] * (sij - s[i, j - 1])
            if i < h - 1:
                acc += wv[i, j] * (sij - s[i + 1, j])
            if i > 0:
                acc += wv[i - 1, j] * (sij - s[i - 1, j])
            out[i, j] = sij + alpha * acc


@numba.njit(cache=True, fastmath=FASTMATH)
def factorize(wh, wv, alpha, relax):
    """Sweep coefficients of the incomplete factor ``(P + L) P^-1 (P + L^T)``.

    Returns ``(inv, gh, gv, fh, fv)``: reciprocal pivots and the couplings
    divided by the pivot, for the forward (``g``) and backward (``f``) sweeps.
    """
    h, w = wh.shape
    inv = np.empty_like(wh)
    gh = np.zeros_like(wh)
    gv = np.zeros_like(wh)
    fh = np.zeros_like(wh)
    fv = np.zeros_like(wh)
    for i in range(h):
        for j in range(w):
            ch = alpha * wh[i, j] if j < w - 1 else 0.0
            cv = alpha * wv[i, j] if i < h - 1 else 0.0
            cl = alpha * wh[i, j - 1] if j > 0 else 0.0
            cu = alpha * wv[i - 1, j] if i > 0 else 0.0
            diag = 1.0 + ch + cv + cl + cu
            v = diag
            if j > 0:
                cvl = alpha * wv[i, j - 1] if i < h - 1 else 0.0
                v -= cl * (cl + relax * cvl) * inv[i, j - 1]
            if i > 0:
                chu = alpha * wh[i - 1, j] if j < w - 1 else 0.0
                v -= cu * (cu + relax * chu) * inv[i - 1, j]
            # Breakdown guard; cannot trigger for relax <= 1 since A is an M-matrix.
            if not v > 1e-12 * diag:
                v = diag
            inv[i, j] = 1.0 / v
            gh[i, j] = cl / v
            gv[i, j] = cu / v
            fh[i, j] = ch / v
            fv[i, j] = cv / v
    return inv, gh, gv, fh, fv


@numba.njit(cache=True, fastmath=FASTMATH)
def precondition(r, inv, gh, gv, fh, fv, u, z):
    """``z = M^-1 r``; the row recurrences are split out of the stencil loop."""
    h, w = r.shape
    for i in range(h):
        for j in range(w):
            v = r[i, j] * inv[i, j]
            if i > 0:
                v += gv[i, j] * u[i - 1, j]
            u[i, j] = v
        for j in range(1, w):
            u[i, j] += gh[i, j] * u[i, j - 1]
    for i in range(h - 1, -1, -1):
        for j in range(w):
            v = u[i, j]
            if i < h - 1:
                v += fv[i, j] * z[i + 1, j]
            z[i, j] = v
        for j in range(w - 2, -1, -1):
            z[i, j] += fh[i, j] * z[i, j + 1]


@numba.njit(cache=True, fastmath=FASTMATH)
def pcg(b, x0, wh, wv, alpha, tol, maxiter, relax):
    """Solve from ``x0`` until ``||b - A x|| <= tol * ||b||``.

    Returns ``(x, iterations)``.
    """
    h, w = b.shape
    inv, gh, gv, fh, fv = factorize(wh, wv, alpha, relax)
    x = x0.copy()
    ap = np.empty_like(b)
    u = np.empty_like(b)
    z = np.empty_like(b)
    apply_system(x, wh, wv, alpha, ap)
    r = b - ap
    precondition(r, inv, gh, gv, fh, fv, u, z)
    p = z.copy()
    rz = 0.0
    rr = 0.0
    bb = 0.0
    for i in range(h):
        for j in range(w):
            rz += r[i, j] * z[i, j]
            rr += r[i, j] * r[i, j]
            bb += b[i, j] * b[i, j]
    target = tol * tol * bb
    it = 0
    while rr > target and it < maxiter:
        it += 1
        apply_system(p, wh, wv, alpha, ap)
        pap = 0.0
        for i in range(h):
            for j in range(w):
                pap += p[i, j] * ap[i, j]
        step = rz / pap
        rr = 0.0
        for i in range(h):
            for j in range(w):
                x[i, j] += step * p[i, j]
                rv = r[i, j] - step * ap[i, j]
                r[i, j] = rv
                rr += rv * rv
        precondition(r, inv, gh, gv, fh, fv, u, z)
        rz_new = 0.0
        for i in range(h):
            for j in range(w):
                rz_new += r[i, j] * z[i, j]
        beta = rz_new / rz
        rz = rz_new
        for i in range(h):
            for j in range(w):
                p[i, j] = z[i, j] + beta * p[i, j]
    return x, it
