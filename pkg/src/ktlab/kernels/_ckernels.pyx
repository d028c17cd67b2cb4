# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: periodic Catmull-Rom interpolation and trig mode sums.

Semantics match ``ktlab.kernels.pykernels`` exactly.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport cos, floor, sin

cnp.import_array()


cdef inline void cr_weights(double t, double* w) nogil:
    cdef double t2 = t * t
    cdef double t3 = t2 * t
    w[0] = 0.5 * (-t + 2.0 * t2 - t3)
    w[1] = 0.5 * (2.0 - 5.0 * t2 + 3.0 * t3)
    w[2] = 0.5 * (t + 4.0 * t2 - 3.0 * t3)
    w[3] = 0.5 * (-t2 + t3)


cdef inline Py_ssize_t wrap(long i, long n) nogil:
    cdef long r = i % n
    if r < 0:
        r += n
    return <Py_ssize_t> r


def interp_cubic_periodic(values, points, bint clip=False):
    values = np.ascontiguousarray(values, dtype=np.float64)
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    cdef int d = values.ndim
    if pts.shape[1] != d:
        raise ValueError(f"points have dimension {pts.shape[1]}, grid has {d}")
    if d == 1:
        return _interp1(values, pts, clip)
    if d == 2:
        return _interp2(values, pts, clip)
    if d == 3:
        return _interp3(values, pts, clip)
    raise ValueError("only d in {1,2,3} supported")


def _interp1(double[:] v, double[:, :] pts, bint clip):
    cdef Py_ssize_t npts = pts.shape[0], n = v.shape[0], p, a
    cdef long b0
    cdef double t, acc, lo, hi, val
    cdef double w0[4]
    out_arr = np.empty(npts)
    cdef double[:] out = out_arr
    with nogil:
        for p in range(npts):
            b0 = <long> floor(pts[p, 0])
            t = pts[p, 0] - b0
            cr_weights(t, w0)
            acc = 0.0
            for a in range(4):
                acc += w0[a] * v[wrap(b0 - 1 + a, n)]
            if clip:
                lo = v[wrap(b0, n)]
                hi = lo
                val = v[wrap(b0 + 1, n)]
                if val < lo: lo = val
                if val > hi: hi = val
                if acc < lo: acc = lo
                if acc > hi: acc = hi
            out[p] = acc
    return out_arr


def _interp2(double[:, :] v, double[:, :] pts, bint clip):
    cdef Py_ssize_t npts = pts.shape[0], n0 = v.shape[0], n1 = v.shape[1]
    cdef Py_ssize_t p, a, b
    cdef long b0, b1
    cdef double t0, t1, acc, row, lo, hi, val
    cdef double w0[4]
    cdef double w1[4]
    cdef Py_ssize_t i0[4]
    cdef Py_ssize_t i1[4]
    out_arr = np.empty(npts)
    cdef double[:] out = out_arr
    with nogil:
        for p in range(npts):
            b0 = <long> floor(pts[p, 0]); t0 = pts[p, 0] - b0
            b1 = <long> floor(pts[p, 1]); t1 = pts[p, 1] - b1
            cr_weights(t0, w0); cr_weights(t1, w1)
            for a in range(4):
                i0[a] = wrap(b0 - 1 + a, n0)
                i1[a] = wrap(b1 - 1 + a, n1)
            acc = 0.0
            for a in range(4):
                row = 0.0
                for b in range(4):
                    row += w1[b] * v[i0[a], i1[b]]
                acc += w0[a] * row
            if clip:
                lo = v[i0[1], i1[1]]; hi = lo
                for a in range(1, 3):
                    for b in range(1, 3):
                        val = v[i0[a], i1[b]]
                        if val < lo: lo = val
                        if val > hi: hi = val
                if acc < lo: acc = lo
                if acc > hi: acc = hi
            out[p] = acc
    return out_arr


def _interp3(double[:, :, :] v, double[:, :] pts, bint clip):
    cdef Py_ssize_t npts = pts.shape[0]
    cdef Py_ssize_t n0 = v.shape[0], n1 = v.shape[1], n2 = v.shape[2]
    cdef Py_ssize_t p, a, b, c
    cdef long b0, b1, b2
    cdef double t0, t1, t2, acc, plane, row, lo, hi, val
    cdef double w0[4]
    cdef double w1[4]
    cdef double w2[4]
    cdef Py_ssize_t i0[4]
    cdef Py_ssize_t i1[4]
    cdef Py_ssize_t i2[4]
    out_arr = np.empty(npts)
    cdef double[:] out = out_arr
    with nogil:
        for p in range(npts):
            b0 = <long> floor(pts[p, 0]); t0 = pts[p, 0] - b0
            b1 = <long> floor(pts[p, 1]); t1 = pts[p, 1] - b1
            b2 = <long> floor(pts[p, 2]); t2 = pts[p, 2] - b2
            cr_weights(t0, w0); cr_weights(t1, w1); cr_weights(t2, w2)
            for a in range(4):
                i0[a] = wrap(b0 - 1 + a, n0)
                i1[a] = wrap(b1 - 1 + a, n1)
                i2[a] = wrap(b2 - 1 + a, n2)
            acc = 0.0
            for a in range(4):
                plane = 0.0
                for b in range(4):
                    row = 0.0
                    for c in range(4):
                        row += w2[c] * v[i0[a], i1[b], i2[c]]
                    plane += w1[b] * row
                acc += w0[a] * plane
            if clip:
                lo = v[i0[1], i1[1], i2[1]]; hi = lo
                for a in range(1, 3):
                    for b in range(1, 3):
                        for c in range(1, 3):
                            val = v[i0[a], i1[b], i2[c]]
                            if val < lo: lo = val
                            if val > hi: hi = val
                if acc < lo: acc = lo
                if acc > hi: acc = hi
            out[p] = acc
    return out_arr


def eval_trig_modes(points, kvecs, cos_amps, sin_amps, chunk=8192):
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    kv = np.ascontiguousarray(kvecs, dtype=np.float64)
    ca = np.ascontiguousarray(cos_amps, dtype=np.float64)
    sa = np.ascontiguousarray(sin_amps, dtype=np.float64)
    return _trig(pts, kv, ca, sa)


def _trig(double[:, :] pts, double[:, :] kv, double[:, :] ca, double[:, :] sa):
    cdef Py_ssize_t npts = pts.shape[0], m = kv.shape[0]
    cdef Py_ssize_t d = pts.shape[1], dv = ca.shape[1]
    cdef Py_ssize_t p, j, ax
    cdef double phase, cp, sp
    out_arr = np.zeros((npts, dv))
    cdef double[:, :] out = out_arr
    with nogil:
        for p in range(npts):
            for j in range(m):
                phase = 0.0
                for ax in range(d):
                    phase += pts[p, ax] * kv[j, ax]
                cp = cos(phase)
                sp = sin(phase)
                for ax in range(dv):
                    out[p, ax] += cp * ca[j, ax] + sp * sa[j, ax]
    return out_arr
