"""Vectorized numpy backend.

Each function mirrors the Cython loop in ``_core_cy.pyx`` operation for
operation so both backends produce identical bits. Keep the per-pixel
arithmetic order in sync when editing either file.
"""
import numpy as np


def inversion_fill(lam, p0, u, out):
    """Poisson inversion by sequential search, rates < 10.

    ``p0`` is exp(-lam) precomputed by the caller; ``u`` one uniform per
    pixel. Runs all pixels in lockstep rounds: round k applies
    p *= lam / k; F += p to every still-searching pixel.
    """
    out.fill(0.0)
    p = p0.copy()
    f = p0.copy()
    idx = np.flatnonzero(u > f)
    k = 0.0
    while idx.size:
        k += 1.0
        pi = p[idx] * (lam[idx] / k)
        p[idx] = pi
        fi = f[idx] + pi
        f[idx] = fi
        out[idx] = k
        # cap guards against float saturation of F just below u; the true
        # tail mass past k=1000 at rate < 10 is far below 1e-300
        if k >= 1000.0:
            break
        idx = idx[u[idx] > fi]


def warp_bilinear(frame, u, v, out, inb):
    h, w = frame.shape
    gy, gx = np.mgrid[0.0:h, 0.0:w]
    sx = gx - u
    sy = gy - v
    ok = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
    # clip keeps gather indices legal; in-bounds samples are unaffected
    sxc = np.clip(sx, 0.0, w - 1.0)
    syc = np.clip(sy, 0.0, h - 1.0)
    ix = np.floor(sxc)
    iy = np.floor(syc)
    fx = sxc - ix
    fy = syc - iy
    ix0 = ix.astype(np.intp)
    iy0 = iy.astype(np.intp)
    ix1 = np.minimum(ix0 + 1, w - 1)
    iy1 = np.minimum(iy0 + 1, h - 1)
    v00 = frame[iy0, ix0]
    v01 = frame[iy0, ix1]
    v10 = frame[iy1, ix0]
    v11 = frame[iy1, ix1]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    val = (1.0 - fy) * top + fy * bot
    out[:, :] = np.where(ok, val, 0.0)
    inb[:, :] = ok.astype(np.uint8)
