"""Pure-Python/numpy implementations of the hot kernels.

Selected automatically when the compiled ``_ckernels`` extension is missing,
or forced with ``DEPTHVISION_PURE=1``.  Results are identical to the
compiled path.
"""

import numpy as np


def rasterize_min(cu, cv, depth, width, height):
    """Z-buffer ``depth`` into a ``height x width`` grid at integer cells.

    Returns ``(grid, valid)``; invalid cells hold 0.
    """
    cu = np.asarray(cu, dtype=np.int64)
    cv = np.asarray(cv, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    grid = np.zeros(height * width, dtype=np.float64)
    valid = np.zeros(height * width, dtype=bool)
    if depth.size:
        cell = cv * width + cu
        order = np.lexsort((depth, cell))
        cell_sorted = cell[order]
        first = np.ones(cell_sorted.size, dtype=bool)
        first[1:] = cell_sorted[1:] != cell_sorted[:-1]
        grid[cell_sorted[first]] = depth[order][first]
        valid[cell_sorted[first]] = True
    return grid.reshape(height, width), valid.reshape(height, width)


def column_nearest(valid):
    """Per column, the nearest valid row for every pixel (ties to the upper row).

    Returns ``(g, srow)`` with ``g`` the squared row distance (-1 where the
    column is empty) and ``srow`` the chosen row.
    """
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    rows = np.arange(h)[:, None]
    idx_above = np.where(valid, rows, -1)
    above = np.maximum.accumulate(idx_above, axis=0)
    idx_below = np.where(valid, rows, h)
    below = np.minimum.accumulate(idx_below[::-1], axis=0)[::-1]
    has_above = above >= 0
    has_below = below < h
    take_above = has_above & (~has_below | ((rows - above) <= (below - rows)))
    srow = np.where(take_above, above, below)
    empty = ~(has_above | has_below)
    g = np.where(empty, -1, (rows - srow) ** 2)
    srow = np.where(empty, -1, srow)
    return g.astype(np.int64), srow.astype(np.int64)


def _gt_x(x, a, b, d):
    # x > (a + eps*b) / d for an infinitesimal eps > 0, d > 0
    t = x * d - a
    return t > 0 or (t == 0 and b < 0)


def _le(a1, b1, d1, a2, b2, d2):
    # (a1 + eps*b1)/d1 <= (a2 + eps*b2)/d2
    l, r = a1 * d2, a2 * d1
    if l != r:
        return l < r
    return b1 * d2 <= b2 * d1


def nearest_site(valid):
    """Exact nearest valid pixel for every pixel of a boolean mask.

    Minimises ``(squared distance, site row, site column)`` lexicographically.
    Two passes: per-column nearest rows, then a lower envelope of parabolas
    per row whose heights carry an infinitesimal tie-break key, compared with
    exact integer arithmetic.
    """
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    if not valid.any():
        raise ValueError("empty sparse map")
    g, srow = column_nearest(valid)
    out_r = np.empty((h, w), dtype=np.int64)
    out_c = np.empty((h, w), dtype=np.int64)
    g_list = g.tolist()
    s_list = srow.tolist()
    for r in range(h):
        gr = g_list[r]
        sr = s_list[r]
        v = []
        za, zb, zd = [], [], []
        for q in range(w):
            hq = gr[q]
            if hq < 0:
                continue
            kq = sr[q] * w + q
            while v:
                p = v[-1]
                a = (hq + q * q) - (gr[p] + p * p)
                b = kq - (sr[p] * w + p)
                d = 2 * (q - p)
                if zd[-1] == 0 or not _le(a, b, d, za[-1], zb[-1], zd[-1]):
                    break
                v.pop()
                za.pop(); zb.pop(); zd.pop()
            if not v:
                v.append(q)
                # zd == 0 marks the -inf sentinel
                za.append(0); zb.append(0); zd.append(0)
            else:
                v.append(q)
                za.append(a); zb.append(b); zd.append(d)
        k = 0
        n = len(v)
        row_r = out_r[r]
        row_c = out_c[r]
        for x in range(w):
            while k + 1 < n and _gt_x(x, za[k + 1], zb[k + 1], zd[k + 1]):
                k += 1
            q = v[k]
            row_r[x] = sr[q]
            row_c[x] = q
    return out_r, out_c
