# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: cyclic Jacobi, greedy group search, bit packing.

Semantics match ``_kernels_py`` exactly; see that module for documentation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.string cimport memset

cnp.import_array()

NAME = "cython"


cdef double _off_norm(double[:, ::1] A, Py_ssize_t n) noexcept nogil:
    cdef double total = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if i != j:
                total += A[i, j] * A[i, j]
    return sqrt(total)


def jacobi_eigh(a, double tol=1e-12, int max_sweeps=100):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A_arr = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = A_arr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] V_arr = np.eye(n)
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] V = V_arr
    cdef int sweeps = 0
    cdef Py_ssize_t p, q, k
    cdef double apq, theta, t, c, s, xp, xq
    cdef double off
    with nogil:
        off = _off_norm(A, n)
        while off > tol and sweeps < max_sweeps:
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                    c = 1.0 / sqrt(t * t + 1.0)
                    s = t * c
                    for k in range(n):
                        xp = A[k, p]
                        xq = A[k, q]
                        A[k, p] = c * xp - s * xq
                        A[k, q] = s * xp + c * xq
                    for k in range(n):
                        xp = A[p, k]
                        xq = A[q, k]
                        A[p, k] = c * xp - s * xq
                        A[q, k] = s * xp + c * xq
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    for k in range(n):
                        xp = V[k, p]
                        xq = V[k, q]
                        V[k, p] = c * xp - s * xq
                        V[k, q] = s * xp + c * xq
            sweeps += 1
            off = _off_norm(A, n)
    return np.diag(A_arr).copy(), V_arr, sweeps, off


def greedy_groups(mags, double C, double ternary_float_bits, double ternary_symbol_bits,
                  double sparse_unit_bits):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mags_arr = np.ascontiguousarray(mags, dtype=np.float64)
    cdef Py_ssize_t r = mags_arr.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] group_arr = np.zeros(r, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rem_arr = np.arange(r, dtype=np.int64)
    cdef double[::1] mv = mags_arr
    cdef cnp.int64_t[::1] group = group_arr
    cdef cnp.int64_t[::1] rem = rem_arr
    cdef Py_ssize_t m = r
    cdef Py_ssize_t jj, lo, hi, best_lo, best_hi, best_size, size, i, shift
    cdef double a, b
    cdef long long ops = 0
    cdef long long ngroups = 0
    cdef double ternary_cost
    anchors = []
    while m > 0:
        best_size = 0
        best_lo = 0
        best_hi = -1
        lo = 0
        hi = 0
        with nogil:
            for jj in range(m):
                b = mv[rem[jj]]
                if b < mv[rem[lo]]:
                    lo = jj
                if hi < jj:
                    hi = jj
                while hi + 1 < m:
                    a = mv[rem[hi + 1]]
                    ops += 1
                    if (b - a) * C < a:
                        hi += 1
                    else:
                        break
                ops += 1
                size = hi - lo + 1
                if size > best_size:
                    best_size = size
                    best_lo = lo
                    best_hi = hi
        ternary_cost = ternary_float_bits + ternary_symbol_bits * (best_size - 1)
        if not ternary_cost < sparse_unit_bits * best_size:
            break
        ngroups += 1
        anchors.append(int(rem[best_lo]))
        for i in range(best_lo, best_hi + 1):
            group[rem[i]] = ngroups
        shift = best_hi + 1 - best_lo
        for i in range(best_hi + 1, m):
            rem[i - shift] = rem[i]
        m -= shift
    return group_arr, anchors, int(ops)


cdef class BitWriter:
    cdef bytearray _buf
    cdef public Py_ssize_t nbits

    def __init__(self):
        self._buf = bytearray()
        self.nbits = 0

    def write(self, value, int width):
        if width == 0:
            return
        if value < 0 or (value >> width):
            raise ValueError(f"value {value} does not fit in {width} bits")
        cdef unsigned long long v
        cdef int i, bit
        cdef Py_ssize_t pos
        if width <= 64:
            v = value
            needed = (self.nbits + width + 7) // 8
            if needed > len(self._buf):
                self._buf.extend(b"\x00" * (needed - len(self._buf)))
            pos = self.nbits
            for i in range(width - 1, -1, -1):
                bit = (v >> i) & 1
                if bit:
                    self._buf[pos >> 3] |= 0x80 >> (pos & 7)
                pos += 1
            self.nbits = pos
        else:
            # wide fields: split into 64-bit chunks, most significant first
            high_width = width - 64
            self.write(value >> 64, high_width)
            self.write(value & 0xFFFFFFFFFFFFFFFF, 64)

    def getvalue(self):
        return bytes(self._buf)


cdef class BitReader:
    cdef bytes _data
    cdef const unsigned char* _ptr
    cdef public Py_ssize_t nbits
    cdef public Py_ssize_t pos

    def __init__(self, data, Py_ssize_t nbits):
        if nbits > 8 * len(data):
            raise ValueError("nbits exceeds buffer length")
        self._data = bytes(data)
        self._ptr = self._data
        self.nbits = nbits
        self.pos = 0

    def read(self, int width):
        if width == 0:
            return 0
        if self.pos + width > self.nbits:
            raise EOFError(self.pos)
        if width > 64:
            high = self.read(width - 64)
            return (high << 64) | self.read(64)
        cdef unsigned long long v = 0
        cdef Py_ssize_t pos = self.pos
        cdef int i
        for i in range(width):
            v = (v << 1) | ((self._ptr[pos >> 3] >> (7 - (pos & 7))) & 1)
            pos += 1
        self.pos = pos
        return v
