# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops for gaze heatmap smoothing and component labeling.

Semantics match :mod:`gazefocal._kernels_py` exactly; see that module for
the reference description.
"""

import numpy as np


def correlate_rows(const double[:, ::1] padded, const double[::1] kernel):
    cdef Py_ssize_t rows = padded.shape[0]
    cdef Py_ssize_t taps = kernel.shape[0]
    cdef Py_ssize_t cols = padded.shape[1] - taps + 1
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(rows):
            for j in range(cols):
                acc = 0.0
                for k in range(taps):
                    acc = acc + padded[i, j + k] * kernel[k]
                out[i, j] = acc
    return out_arr


cdef inline int _find(int[::1] parent, int x) noexcept nogil:
    cdef int root = x, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


cdef inline void _union(int[::1] parent, int a, int b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label_components(const unsigned char[:, ::1] mask, int connectivity=8):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] labels = labels_arr
    parent_arr = np.zeros(h * w + 1, dtype=np.int32)
    cdef int[::1] parent = parent_arr
    remap_arr = np.zeros(h * w + 1, dtype=np.int32)
    cdef int[::1] remap = remap_arr
    cdef int next_label = 1, count = 0, lab, root
    cdef Py_ssize_t i, j
    cdef bint diag = connectivity == 8
    with nogil:
        for i in range(h):
            for j in range(w):
                if not mask[i, j]:
                    continue
                lab = 0
                if i > 0 and labels[i - 1, j]:
                    lab = labels[i - 1, j]
                if j > 0 and labels[i, j - 1]:
                    if lab:
                        _union(parent, lab, labels[i, j - 1])
                    else:
                        lab = labels[i, j - 1]
                if diag and i > 0:
                    if j > 0 and labels[i - 1, j - 1]:
                        if lab:
                            _union(parent, lab, labels[i - 1, j - 1])
                        else:
                            lab = labels[i - 1, j - 1]
                    if j + 1 < w and labels[i - 1, j + 1]:
                        if lab:
                            _union(parent, lab, labels[i - 1, j + 1])
                        else:
                            lab = labels[i - 1, j + 1]
                if not lab:
                    lab = next_label
                    parent[lab] = lab
                    next_label += 1
                labels[i, j] = lab
        for i in range(h):
            for j in range(w):
                lab = labels[i, j]
                if lab:
                    root = _find(parent, lab)
                    if remap[root] == 0:
                        count += 1
                        remap[root] = count
                    labels[i, j] = remap[root]
    return labels_arr, count
