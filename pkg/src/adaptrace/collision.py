"""Oriented-rectangle overlap tests (separating axis theorem).

Overlap is closed: rectangles that merely touch count as overlapping.
All functions are vectorized over leading batch dimensions.
"""

from __future__ import annotations

import numpy as np


def rect_corners(cx, cy, psi, length, width):
    """Corner coordinates of oriented rectangles, shape (..., 4, 2)."""
    cx, cy, psi = np.broadcast_arrays(cx, cy, psi)
    hl, hw = length / 2.0, width / 2.0
    c, s = np.cos(psi), np.sin(psi)
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    gx = cx[..., None] + local[:, 0] * c[..., None] - local[:, 1] * s[..., None]
    gy = cy[..., None] + local[:, 0] * s[..., None] + local[:, 1] * c[..., None]
    return np.stack([gx, gy], axis=-1)


def rects_overlap(cx1, cy1, psi1, l1, w1, cx2, cy2, psi2, l2, w2):
    """True where two oriented rectangles overlap (boundary contact counts).

    Scalar inputs return a bool; array inputs return a bool array.
    """
    corners1 = rect_corners(cx1, cy1, psi1, l1, w1)
    corners2 = rect_corners(cx2, cy2, psi2, l2, w2)
    psi1a, psi2a = np.broadcast_arrays(np.asarray(psi1, float),
                                       np.asarray(psi2, float))
    sep = np.zeros(psi1a.shape, dtype=bool)
    for psi in (psi1a, psi2a):
        for extra in (0.0, np.pi / 2.0):
            ax = np.stack([np.cos(psi + extra), np.sin(psi + extra)], axis=-1)
            p1 = np.einsum("...ki,...i->...k", corners1, ax)
            p2 = np.einsum("...ki,...i->...k", corners2, ax)
            sep |= (p1.max(-1) < p2.min(-1)) | (p2.max(-1) < p1.min(-1))
    out = ~sep
    return bool(out) if out.ndim == 0 else out
