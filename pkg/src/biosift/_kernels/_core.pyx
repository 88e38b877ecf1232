# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels.

Mirrors ``biosift._kernels.pure`` exactly; the test suite asserts the two
implementations agree to the last bit on random inputs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef void _pb_inplace(const double* p, Py_ssize_t n, double* pmf) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double q
    pmf[0] = 1.0
    for k in range(1, n + 1):
        pmf[k] = 0.0
    for i in range(n):
        q = p[i]
        for k in range(i + 1, 0, -1):
            pmf[k] = pmf[k] * (1.0 - q) + pmf[k - 1] * q
        pmf[0] *= 1.0 - q


def poisson_binomial_pmf(p):
    """Success-count pmf of independent Bernoulli trials (O(n^2) convolution)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pa = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n = pa.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pmf = np.empty(n + 1, dtype=np.float64)
    _pb_inplace(<const double*> pa.data, n, <double*> pmf.data)
    return pmf


cdef Py_ssize_t _clip_by_edge(double* xs, double* ys, Py_ssize_t n,
                              double ax, double ay, double bx, double by,
                              double* ox, double* oy) noexcept nogil:
    # keep points left of (or on) the directed edge (a -> b)
    cdef double ex = bx - ax
    cdef double ey = by - ay
    cdef Py_ssize_t i, m = 0
    cdef double sx, sy, px, py, ds, dp, t
    for i in range(n):
        sx = xs[(i + n - 1) % n]
        sy = ys[(i + n - 1) % n]
        px = xs[i]
        py = ys[i]
        ds = ex * (sy - ay) - ey * (sx - ax)
        dp = ex * (py - ay) - ey * (px - ax)
        if dp >= 0.0:
            if ds < 0.0:
                t = ds / (ds - dp)
                ox[m] = sx + t * (px - sx)
                oy[m] = sy + t * (py - sy)
                m += 1
            ox[m] = px
            oy[m] = py
            m += 1
        elif ds >= 0.0:
            t = ds / (ds - dp)
            ox[m] = sx + t * (px - sx)
            oy[m] = sy + t * (py - sy)
            m += 1
    return m


def quad_intersection_area(quad_a, quad_b):
    """Intersection area of two convex CCW quadrilaterals ((4, 2) arrays)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(quad_a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(quad_b, dtype=np.float64)
    # sequential clipping against 4 half-planes at most doubles the vertex
    # count once per plane: 4 -> at most 8 vertices
    cdef double bufx[16]
    cdef double bufy[16]
    cdef double tmpx[16]
    cdef double tmpy[16]
    cdef Py_ssize_t i, j, n = 4
    cdef double area = 0.0
    for i in range(4):
        bufx[i] = a[i, 0]
        bufy[i] = a[i, 1]
    for i in range(4):
        j = (i + 1) % 4
        n = _clip_by_edge(bufx, bufy, n, b[i, 0], b[i, 1], b[j, 0], b[j, 1], tmpx, tmpy)
        if n == 0:
            return 0.0
        for j in range(n):
            bufx[j] = tmpx[j]
            bufy[j] = tmpy[j]
    for i in range(n):
        j = (i + n - 1) % n
        area += bufx[j] * bufy[i] - bufx[i] * bufy[j]
    area *= 0.5
    if area < 0.0:
        area = 0.0
    return area


def fused_scores_batch(site_scores, tank_scores, tank_start, tank_count,
                       pile_scores, pile_start, pile_count, prior_table):
    """Part-evidence fused score for every site in a flattened batch."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ss = np.ascontiguousarray(site_scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ts = np.ascontiguousarray(tank_scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] t0 = np.ascontiguousarray(tank_start, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tc = np.ascontiguousarray(tank_count, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ps = np.ascontiguousarray(pile_scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] p0 = np.ascontiguousarray(pile_start, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pc = np.ascontiguousarray(pile_count, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] table = np.ascontiguousarray(prior_table, dtype=np.float64)
    cdef Py_ssize_t n_sites = ss.shape[0]
    cdef Py_ssize_t cap_t = table.shape[0] - 1
    cdef Py_ssize_t cap_p = table.shape[1] - 1
    cdef Py_ssize_t stride = table.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n_sites, dtype=np.float64)

    cdef Py_ssize_t max_n = 0
    cdef Py_ssize_t s
    for s in range(n_sites):
        if tc[s] > max_n:
            max_n = tc[s]
        if pc[s] > max_n:
            max_n = pc[s]

    cdef cnp.ndarray[cnp.float64_t, ndim=1] pmf_t = np.empty(max_n + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pmf_p = np.empty(max_n + 1, dtype=np.float64)
    cdef double* pt = <double*> pmf_t.data
    cdef double* pp = <double*> pmf_p.data
    cdef const double* tab = <const double*> table.data
    cdef Py_ssize_t nt, npi, i, j
    cdef double acc, row

    with nogil:
        for s in range(n_sites):
            _pb_inplace(<const double*> ts.data + t0[s], tc[s], pt)
            _pb_inplace(<const double*> ps.data + p0[s], pc[s], pp)
            nt = tc[s] if tc[s] < cap_t else cap_t
            npi = pc[s] if pc[s] < cap_p else cap_p
            acc = 0.0
            for i in range(nt + 1):
                row = 0.0
                for j in range(npi + 1):
                    row += tab[i * stride + j] * pp[j]
                acc += pt[i] * row
            out[s] = ss[s] * acc
    return out
