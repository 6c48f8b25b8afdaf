"""Shared test helpers."""

import numpy as np


def reference_filter_mask(points, conf, p):
    """Independent single-pass reference of the three-stage point filter."""
    points = np.asarray(points, float)
    conf = np.asarray(conf, float)
    n = len(conf)

    def nr(vals, q):
        vals = np.sort(vals)
        rank = max(1, int(np.ceil(q / 100.0 * len(vals))))
        return vals[rank - 1]

    mask = conf >= nr(conf, p.rho_conf)
    for axis in (0, 2):
        vals = points[mask, axis]
        lo, hi = nr(vals, p.rho_xz), nr(vals, 100.0 - p.rho_xz)
        keep = np.zeros(n, bool)
        keep[mask] = (points[mask, axis] >= lo) & (points[mask, axis] <= hi)
        mask = mask & keep
    ys = points[mask, 1]
    lo, hi = nr(ys, p.rho_y_min), nr(ys, p.rho_y_max)
    keep = np.zeros(n, bool)
    keep[mask] = (points[mask, 1] >= lo) & (points[mask, 1] <= hi)
    return mask & keep
