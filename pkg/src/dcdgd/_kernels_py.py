"""Pure-Python reference kernels.

These mirror ``_kernels.pyx`` function for function and are used whenever the
compiled extension is missing or ``DCDGD_PURE_PYTHON`` is set.  Both backends
must return identical results (including operation counts); the parity tests
in ``tests/test_kernels.py`` enforce this.
"""
import math

import numpy as np

NAME = "python"


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi eigen-decomposition of a dense symmetric matrix.

    Parameters
    ----------
    a : ndarray, shape (n, n)
        Symmetric input; not modified.
    tol : float
        Stop once the Frobenius norm of the off-diagonal part is <= tol.
    max_sweeps : int
        Cap on full cyclic sweeps.

    Returns
    -------
    w : ndarray, shape (n,)
        Unsorted eigenvalues (the final diagonal).
    v : ndarray, shape (n, n)
        Eigenvectors as columns.
    sweeps : int
        Sweeps performed.
    off : float
        Off-diagonal Frobenius norm reached.
    """
    A = np.array(a, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    sweeps = 0
    off = _off_norm(A)
    while off > tol and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q]
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :]
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = 0.0
                A[q, p] = 0.0
                v_p = V[:, p].copy()
                v_q = V[:, q]
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q
        sweeps += 1
        off = _off_norm(A)
    return np.diag(A).copy(), V, sweeps, off


def _off_norm(A):
    off = A.copy()
    np.fill_diagonal(off, 0.0)
    return math.sqrt(float(np.sum(off * off)))


def greedy_groups(mags, C, ternary_float_bits, ternary_symbol_bits, sparse_unit_bits):
    """Greedy anchor/group search over magnitudes sorted in descending order.

    ``mags`` must be strictly positive and non-increasing.  Each round scans
    the remaining elements with two pointers: for anchor candidate ``j`` the
    admissible set is every remaining ``k`` with ``|z_k| <= |z_j|`` and
    ``|z_k| (|z_j| - |z_k|) < z_k**2 / C`` (evaluated as ``(|z_j| - |z_k|) C < |z_k|``
    so tiny magnitudes do not underflow), which is a contiguous window of the
    remaining (still sorted) elements.  The largest window wins (ties go to
    the larger anchor, i.e. the earlier position).  The window is accepted as
    a ternary group when ``c1 + c0t (s - 1) < unit * s``; otherwise the
    search stops.

    Returns
    -------
    group : ndarray of int64
        Per sorted position: 0 for the sparsified residue, g >= 1 for the
        g-th accepted group.
    anchors : list of int
        Sorted position of each group's anchor, in acceptance order.
    ops : int
        Predicate evaluations plus window scans, for complexity checks.
    """
    mags = np.asarray(mags, dtype=np.float64)
    r = mags.shape[0]
    group = np.zeros(r, dtype=np.int64)
    anchors = []
    remaining = np.arange(r, dtype=np.int64)
    ops = 0
    while remaining.shape[0] > 0:
        m = remaining.shape[0]
        vals = mags[remaining].tolist()
        best_size = 0
        best_lo = 0
        best_hi = -1
        lo = 0
        hi = 0
        for jj in range(m):
            b = vals[jj]
            if b < vals[lo]:
                lo = jj
            if hi < jj:
                hi = jj
            while hi + 1 < m:
                a = vals[hi + 1]
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
        members = remaining[best_lo:best_hi + 1]
        group[members] = len(anchors) + 1
        anchors.append(int(remaining[best_lo]))
        remaining = np.concatenate([remaining[:best_lo], remaining[best_hi + 1:]])
    return group, anchors, ops


class BitWriter:
    """Append-only MSB-first bit sink."""

    def __init__(self):
        self._chunks = []
        self.nbits = 0

    def write(self, value, width):
        if width == 0:
            return
        if value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        self._chunks.append(format(value, f"0{width}b"))
        self.nbits += width

    def getvalue(self):
        bits = "".join(self._chunks)
        pad = (-len(bits)) % 8
        bits += "0" * pad
        if not bits:
            return b""
        return int(bits, 2).to_bytes(len(bits) // 8, "big")


class BitReader:
    """Sequential MSB-first reader over ``nbits`` bits of ``data``."""

    def __init__(self, data, nbits):
        if nbits > 8 * len(data):
            raise ValueError("nbits exceeds buffer length")
        self.nbits = nbits
        self.pos = 0
        if data:
            self._bits = format(int.from_bytes(data, "big"), f"0{8 * len(data)}b")[:nbits]
        else:
            self._bits = ""

    def read(self, width):
        if width == 0:
            return 0
        end = self.pos + width
        if end > self.nbits:
            raise EOFError(self.pos)
        value = int(self._bits[self.pos:end], 2)
        self.pos = end
        return value
