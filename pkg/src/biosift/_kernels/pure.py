"""Pure NumPy implementations of the numeric kernels.

These are the fallback used when the compiled extension is unavailable
and the reference the extension is tested against. Semantics of the two
implementations are identical; only the constant factor differs.
"""

import numpy as np


def poisson_binomial_pmf(p):
    """Distribution of the number of successes among independent Bernoulli
    trials with probabilities ``p``.

    Computed by convolving one trial at a time: if ``f`` is the pmf after
    ``i`` trials, adding a trial with success probability ``q`` gives
    ``f'[k] = f[k] * (1 - q) + f[k - 1] * q``. Cost is O(n^2) and exact up
    to float rounding, unlike the 2^n subset expansion it equals.
    """
    p = np.asarray(p, dtype=np.float64)
    pmf = np.zeros(p.size + 1)
    pmf[0] = 1.0
    for i in range(p.size):
        q = p[i]
        hi = i + 2
        pmf[1:hi] = pmf[1:hi] * (1.0 - q) + pmf[: hi - 1] * q
        pmf[0] *= 1.0 - q
    return pmf


def _clip_by_edge(poly, ax, ay, bx, by):
    # keep the half-plane to the left of the directed edge (a -> b);
    # "left or on" so tangency keeps boundary points
    ex, ey = bx - ax, by - ay
    out = []
    n = len(poly)
    for i in range(n):
        sx, sy = poly[i - 1]
        px, py = poly[i]
        ds = ex * (sy - ay) - ey * (sx - ax)
        dp = ex * (py - ay) - ey * (px - ax)
        if dp >= 0.0:
            if ds < 0.0:
                t = ds / (ds - dp)
                out.append((sx + t * (px - sx), sy + t * (py - sy)))
            out.append((px, py))
        elif ds >= 0.0:
            t = ds / (ds - dp)
            out.append((sx + t * (px - sx), sy + t * (py - sy)))
    return out


def quad_intersection_area(quad_a, quad_b):
    """Area of the intersection of two convex quadrilaterals.

    Both quads are (4, 2) arrays of corners in counter-clockwise order.
    Sutherland-Hodgman clipping of A against B's edges, then the shoelace
    formula on the clipped polygon.
    """
    a = np.asarray(quad_a, dtype=np.float64)
    b = np.asarray(quad_b, dtype=np.float64)
    poly = [(a[i, 0], a[i, 1]) for i in range(4)]
    for i in range(4):
        j = (i + 1) % 4
        poly = _clip_by_edge(poly, b[i, 0], b[i, 1], b[j, 0], b[j, 1])
        if not poly:
            return 0.0
    area = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i - 1]
        x1, y1 = poly[i]
        area += x0 * y1 - x1 * y0
    return max(0.5 * area, 0.0)


def fused_scores_batch(
    site_scores,
    tank_scores,
    tank_start,
    tank_count,
    pile_scores,
    pile_start,
    pile_count,
    prior_table,
):
    """Part-evidence fused score for every site in a flattened batch.

    Per site: the count pmfs of its tank and pile detection scores are
    combined with the count-prior weight table,
    ``score = p_site * sum_ij pmf_tank[i] * pmf_pile[j] * table[i, j]``,
    with both sums truncated at the table edge.
    """
    site_scores = np.asarray(site_scores, dtype=np.float64)
    prior_table = np.asarray(prior_table, dtype=np.float64)
    cap_t = prior_table.shape[0] - 1
    cap_p = prior_table.shape[1] - 1
    out = np.empty(site_scores.size)
    for s in range(site_scores.size):
        t0 = tank_start[s]
        pmf_t = poisson_binomial_pmf(tank_scores[t0 : t0 + tank_count[s]])
        p0 = pile_start[s]
        pmf_p = poisson_binomial_pmf(pile_scores[p0 : p0 + pile_count[s]])
        nt = min(pmf_t.size - 1, cap_t)
        npi = min(pmf_p.size - 1, cap_p)
        acc = pmf_t[: nt + 1] @ prior_table[: nt + 1, : npi + 1] @ pmf_p[: npi + 1]
        out[s] = site_scores[s] * acc
    return out
