"""Integer-reversible 8x8 DCT-II.

The orthonormal DCT-II matrix is factored into plane (Givens) rotations and a
diagonal of signs. Each rotation is applied as three lifting steps with
rounding, so the forward transform maps integers to integers and
``inverse(forward(x)) == x`` exactly, while the coefficients stay within a few
units of the floating-point DCT.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.fft import dct

N = 8


def dct_matrix(n: int = N) -> np.ndarray:
    return dct(np.eye(n), type=2, norm="ortho", axis=0)


@lru_cache(maxsize=None)
def _lifting_plan(n: int = N):
    """Return (signs, steps) such that applying them reproduces ``dct_matrix(n) @ x``.

    ``steps`` is a list of (p, q, negate, a, b): optionally negate components p
    and q, then lift x_p += a*x_q, x_q += b*x_p, x_p += a*x_q.
    """
    q_mat = dct_matrix(n)
    work = q_mat.copy()
    rotations = []
    for j in range(n - 1):
        for i in range(n - 1, j, -1):
            x, y = work[j, j], work[i, j]
            if abs(y) < 1e-15:
                continue
            r = math.hypot(x, y)
            c, s = x / r, y / r
            g = np.array([[c, s], [-s, c]])
            work[[j, i], :] = g @ work[[j, i], :]
            work[i, j] = 0.0
            rotations.append((j, i, c, s))
    signs = np.sign(np.diag(work))
    if not np.allclose(work, np.diag(signs), atol=1e-12):
        raise AssertionError("Givens elimination did not reach a signed identity")
    # work = G_m ... G_1 Q  =>  Q = G_1^T ... G_m^T diag(signs): apply signs, then G_m^T first.
    steps = []
    for p, q, c, s in reversed(rotations):
        # G^T acts on (x_p, x_q) as [[c, -s], [s, c]], a rotation by theta.
        theta = math.atan2(s, c)
        negate = abs(theta) > math.pi / 2
        if negate:
            theta = theta - math.copysign(math.pi, theta)
        if theta == 0.0:
            a = b = 0.0
        else:
            a = -math.tan(theta / 2)
            b = math.sin(theta)
        steps.append((p, q, negate, a, b))
    return tuple(signs.tolist()), tuple(steps)


def _rnd(v):
    return np.floor(v + 0.5)


def _forward_1d(x: np.ndarray) -> np.ndarray:
    """Transform along axis 0 of a C-contiguous array, in place.

    Rows are contiguous, which sidesteps strided in-place ufunc writes.
    """
    signs, steps = _lifting_plan()
    for k, sign in enumerate(signs):
        if sign < 0:
            x[k] *= -1.0
    for p, q, negate, a, b in steps:
        xp, xq = x[p], x[q]
        if negate:
            xp *= -1.0
            xq *= -1.0
        xp += _rnd(a * xq)
        xq += _rnd(b * xp)
        xp += _rnd(a * xq)
    return x


def _inverse_1d(x: np.ndarray) -> np.ndarray:
    signs, steps = _lifting_plan()
    for p, q, negate, a, b in reversed(steps):
        xp, xq = x[p], x[q]
        xp -= _rnd(a * xq)
        xq -= _rnd(b * xp)
        xp -= _rnd(a * xq)
        if negate:
            xp *= -1.0
            xq *= -1.0
    for k, sign in enumerate(signs):
        if sign < 0:
            x[k] *= -1.0
    return x


def _along(x, axis, fn):
    moved = np.ascontiguousarray(np.moveaxis(x, axis, 0))
    return np.moveaxis(fn(moved), 0, axis)


def forward(blocks: np.ndarray) -> np.ndarray:
    """Integer 2-D DCT of ``blocks`` shaped (..., 8, 8). Returns float64 holding integers."""
    x = np.array(blocks, dtype=np.float64)
    x = _along(x, -1, _forward_1d)
    x = _along(x, -2, _forward_1d)
    return np.ascontiguousarray(x)


def inverse(coeffs: np.ndarray) -> np.ndarray:
    x = np.array(coeffs, dtype=np.float64)
    x = _along(x, -2, _inverse_1d)
    x = _along(x, -1, _inverse_1d)
    return np.ascontiguousarray(x)
