# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled kernels for graph construction.

Must stay bit-identical to flowmoe._kernels_py: same interning order and
the same float accumulation order (all source endpoints, then all
destination endpoints).
"""

import numpy as np

BACKEND_NAME = "compiled"


def intern_pairs(list src, list dst):
    """Map endpoint strings to dense indices in first-appearance order."""
    cdef Py_ssize_t n = len(src)
    cdef dict table = {}
    cdef list ips = []
    u_arr = np.empty(n, dtype=np.int32)
    v_arr = np.empty(n, dtype=np.int32)
    cdef int[::1] u = u_arr
    cdef int[::1] v = v_arr
    cdef Py_ssize_t i
    cdef object s, d, hit
    cdef int next_idx = 0
    for i in range(n):
        s = src[i]
        hit = table.get(s)
        if hit is None:
            table[s] = next_idx
            ips.append(s)
            u[i] = next_idx
            next_idx += 1
        else:
            u[i] = <int> hit
        d = dst[i]
        hit = table.get(d)
        if hit is None:
            table[d] = next_idx
            ips.append(d)
            v[i] = next_idx
            next_idx += 1
        else:
            v[i] = <int> hit
    return u_arr, v_arr, ips


def accumulate_node_features(u, v, features, Py_ssize_t n_nodes):
    """Per-node incident-feature sums and degree counts (self-loops twice).

    Source and destination contributions accumulate into separate buffers
    that are added at the end, matching the fallback's bincount-plus-
    bincount float ordering exactly.
    """
    cdef const int[::1] uu = u
    cdef const int[::1] vv = v
    cdef const double[:, ::1] f = np.ascontiguousarray(features, dtype=np.float64)
    cdef Py_ssize_t n_edges = uu.shape[0]
    cdef Py_ssize_t d = f.shape[1]
    sums_u_arr = np.zeros((n_nodes, d), dtype=np.float64)
    sums_v_arr = np.zeros((n_nodes, d), dtype=np.float64)
    deg_arr = np.zeros(n_nodes, dtype=np.float64)
    cdef double[:, ::1] sums_u = sums_u_arr
    cdef double[:, ::1] sums_v = sums_v_arr
    cdef double[::1] deg = deg_arr
    cdef Py_ssize_t i, j, node
    for i in range(n_edges):
        node = uu[i]
        deg[node] += 1.0
        for j in range(d):
            sums_u[node, j] += f[i, j]
    for i in range(n_edges):
        node = vv[i]
        deg[node] += 1.0
        for j in range(d):
            sums_v[node, j] += f[i, j]
    return sums_u_arr + sums_v_arr, deg_arr
