"""Extended-precision dense linear algebra on top of gmpy2.

Matrices are numpy object arrays holding ``gmpy2.mpfr`` (or Python int) entries.
Operations that would be prohibitively slow entrywise (products with a
196 x 4096 matrix) go through an exact fixed-point route: both operands are
scaled to integers, split into 20-bit limbs, and the limb products are formed
with ordinary float64 BLAS, which is exact as long as every partial sum stays
below 2**53.
"""
import math
from contextlib import contextmanager

import gmpy2
import numpy as np
from gmpy2 import mpfr

LOG2_10 = math.log2(10)


def digits_to_bits(digits):
    return int(math.ceil(digits * LOG2_10)) + 8


@contextmanager
def working_precision(bits):
    with gmpy2.context(gmpy2.get_context(), precision=int(bits)):
        yield


_to_mpfr = np.frompyfunc(mpfr, 1, 1)
_to_float = np.frompyfunc(float, 1, 1)


def as_mpfr(a):
    """Entrywise conversion to mpfr at the active context precision (exact for float64)."""
    return _to_mpfr(np.asarray(a)).astype(object)


def to_float(a):
    return _to_float(np.asarray(a, dtype=object)).astype(float)


def identity(n):
    eye = np.empty((n, n), dtype=object)
    eye[...] = mpfr(0)
    for i in range(n):
        eye[i, i] = mpfr(1)
    return eye


def exact_frac_bits(a):
    """Fraction bits at which every entry of a float64 array is an exact integer multiple."""
    a = np.asarray(a, dtype=float)
    nz = a[a != 0]
    if nz.size == 0:
        return 0
    # a float64 m * 2**e with 53-bit m needs 53 - e fraction bits
    return max(0, int(53 - np.frexp(nz)[1].min()))


def _scale_to_int(x, frac_bits):
    return int(gmpy2.rint(gmpy2.mul_2exp(mpfr(x), frac_bits)))


def to_fixed(a, frac_bits):
    """Round ``a * 2**frac_bits`` to Python ints.  Exact for float64 input when
    ``frac_bits >= exact_frac_bits(a)``."""
    a = np.asarray(a)
    if a.dtype != object:
        flat = [_float_fixed(float(v), frac_bits) for v in a.ravel()]
        out = np.empty(len(flat), dtype=object)
        out[:] = flat
        return out.reshape(a.shape)
    out = np.frompyfunc(lambda v: _scale_to_int(v, frac_bits), 1, 1)(a)
    return out.astype(object)


def _float_fixed(v, frac_bits):
    num, den = v.as_integer_ratio()
    num <<= frac_bits
    q, r = divmod(num, den)
    # round half to even on the rare inexact case
    if 2 * r > den or (2 * r == den and q & 1):
        q += 1
    return q


def from_fixed(ints, frac_bits):
    f = np.frompyfunc(lambda v: gmpy2.mul_2exp(mpfr(v), -frac_bits), 1, 1)
    return f(np.asarray(ints, dtype=object)).astype(object)


def _limbs(ints, limb_bits):
    """Split signed integers into float64 limbs of ``limb_bits`` bits, most significant last."""
    ints = np.asarray(ints, dtype=object)
    neg = np.frompyfunc(lambda v: v < 0, 1, 1)(ints).astype(bool)
    mag = np.frompyfunc(abs, 1, 1)(ints)
    width = max((int(v).bit_length() for v in mag.ravel()), default=0)
    n = max(1, -(-width // limb_bits))
    mask = (1 << limb_bits) - 1
    sign = np.where(neg, -1.0, 1.0)
    out = []
    for k in range(n):
        part = np.frompyfunc(lambda v, s=limb_bits * k: (v >> s) & mask, 1, 1)(mag)
        out.append(part.astype(np.float64) * sign)
    return out


def int_matmul(X, Y, limb_bits=None):
    """Exact product of two integer matrices (Python-int object arrays)."""
    X = np.asarray(X, dtype=object)
    Y = np.asarray(Y, dtype=object)
    inner = X.shape[-1]
    if limb_bits is None:
        limb_bits = max(1, (53 - int(math.ceil(math.log2(max(inner, 2))))) // 2)
    if 2 * limb_bits + math.log2(max(inner, 1)) > 53:
        raise ValueError("limb size too large for exact float64 accumulation")
    xl = _limbs(X, limb_bits)
    yl = _limbs(Y, limb_bits)
    levels = {}
    for a, xa in enumerate(xl):
        for b, yb in enumerate(yl):
            p = (xa @ yb).astype(np.int64)
            if a + b in levels:
                levels[a + b] += p
            else:
                levels[a + b] = p
    # carry-normalize in int64 so each level holds a limb digit, then assemble
    top = max(levels)
    mask = (1 << limb_bits) - 1
    digits = []
    carry = np.zeros_like(levels[0])
    for lv in range(top + 1):
        cur = levels.get(lv, 0) + carry
        if lv < top:
            carry = cur >> limb_bits
            digits.append(cur & mask)
        else:
            digits.append(cur)
    out = digits[top].astype(object)
    for lv in range(top - 1, -1, -1):
        out = out * (1 << limb_bits) + digits[lv].astype(object)
    return out


def fixed_matmul(X, Y, x_bits, y_bits):
    """``X @ Y`` through fixed-point integers with the given fraction bits.

    Returns mpfr entries rounded to the active precision.  The only error is
    the initial rounding of each operand to its fixed-point grid.
    """
    P = int_matmul(to_fixed(X, x_bits), to_fixed(Y, y_bits))
    return from_fixed(P, x_bits + y_bits)


def exact_gram(A):
    """``A @ A.T`` for a float64 matrix, exact, as Python-int numerators over ``2**(2*frac)``."""
    frac = exact_frac_bits(A)
    Ai = to_fixed(A, frac)
    return int_matmul(Ai, Ai.T), 2 * frac


def dot(X, Y):
    """Plain object-array product for small operands (stays in mpfr)."""
    return np.asarray(X, dtype=object).dot(np.asarray(Y, dtype=object))


def frob(X):
    X = np.asarray(X, dtype=object)
    return gmpy2.sqrt(sum(v * v for v in X.ravel()))


def max_abs(X):
    return max((abs(v) for v in np.asarray(X, dtype=object).ravel()), default=mpfr(0))


def _householder_tridiag(B):
    n = B.shape[0]
    B = B.copy()
    reflectors = []
    for k in range(n - 2):
        x = B[k + 1:, k]
        nx = gmpy2.sqrt(sum(x * x))
        if nx == 0:
            reflectors.append(None)
            continue
        alpha = -nx if x[0] >= 0 else nx
        v = x.copy()
        v[0] = v[0] - alpha
        v = v / gmpy2.sqrt(sum(v * v))
        S = B[k + 1:, k + 1:]
        p = 2 * S.dot(v)
        w = p - v.dot(p) * v
        B[k + 1:, k + 1:] = S - np.outer(v, w) - np.outer(w, v)
        B[k + 1, k] = B[k, k + 1] = alpha
        B[k + 2:, k] = mpfr(0)
        B[k, k + 2:] = mpfr(0)
        reflectors.append(v)
    d = np.array([B[i, i] for i in range(n)], dtype=object)
    e = np.array([B[i + 1, i] for i in range(n - 1)] + [mpfr(0)], dtype=object)
    Q = identity(n)
    for k in reversed(range(n - 2)):
        v = reflectors[k]
        if v is None:
            continue
        sub = Q[k + 1:, :]
        Q[k + 1:, :] = sub - 2 * np.outer(v, v.dot(sub))
    return d, e, Q


def _implicit_ql(d, e, Q, eps, max_sweeps=60):
    """Eigen-decompose the tridiagonal (d, e) in place, accumulating rotations into Q."""
    n = len(d)
    Zt = np.ascontiguousarray(Q.T)  # rows are eigenvector candidates
    one = mpfr(1)
    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                if abs(e[m]) <= eps * (abs(d[m]) + abs(d[m + 1])):
                    break
                m += 1
            if m == l:
                break
            sweeps += 1
            if sweeps > max_sweeps:
                raise ArithmeticError(f"eigenvalue {l} did not converge")
            g = (d[l + 1] - d[l]) / (2 * e[l])
            r = gmpy2.hypot(g, one)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0 else -r))
            s = c = one
            p = mpfr(0)
            deflated = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = gmpy2.hypot(f, g)
                e[i + 1] = r
                if r == 0:
                    d[i + 1] -= p
                    e[m] = mpfr(0)
                    deflated = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                upper = Zt[i + 1].copy()
                lower = Zt[i].copy()
                Zt[i + 1] = s * lower + c * upper
                Zt[i] = c * lower - s * upper
            if deflated:
                continue
            d[l] = d[l] - p
            e[l] = g
            e[m] = mpfr(0)
    return d, Zt.T


def eigh(B):
    """Symmetric eigendecomposition at the active precision, eigenvalues ascending.

    Returns ``(w, Z)`` with ``B = Z diag(w) Z^T``.  Raises ArithmeticError when the
    QL iteration fails to converge.
    """
    B = np.asarray(B, dtype=object)
    n = B.shape[0]
    if B.shape != (n, n):
        raise ValueError("eigh needs a square matrix")
    B = as_mpfr(B) if n else B
    if n == 0:
        return np.empty(0, dtype=object), np.empty((0, 0), dtype=object)
    eps = gmpy2.mul_2exp(mpfr(1), -gmpy2.get_context().precision)
    d, e, Q = _householder_tridiag(B)
    w, Z = _implicit_ql(d, e, Q, eps)
    order = sorted(range(n), key=lambda i: w[i])
    return w[order], Z[:, order]


def cholesky_solve(H, rhs):
    """Solve ``H X = rhs`` for symmetric positive definite ``H`` (mpfr object arrays).

    Raises ArithmeticError when a pivot is not positive.
    """
    H = np.asarray(H, dtype=object)
    n = H.shape[0]
    L = np.empty((n, n), dtype=object)
    L[...] = mpfr(0)
    for j in range(n):
        row = L[j, :j]
        pivot = H[j, j] - row.dot(row) if j else H[j, j]
        if not pivot > 0:
            raise ArithmeticError(f"matrix is not positive definite at pivot {j}")
        L[j, j] = gmpy2.sqrt(pivot)
        if j + 1 < n:
            below = H[j + 1:, j] - (L[j + 1:, :j].dot(row) if j else 0)
            L[j + 1:, j] = below / L[j, j]
    X = np.array(rhs, dtype=object)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    for i in range(n):
        if i:
            X[i] = X[i] - L[i, :i].dot(X[:i])
        X[i] = X[i] / L[i, i]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            X[i] = X[i] - L[i + 1:, i].dot(X[i + 1:])
        X[i] = X[i] / L[i, i]
    return X[:, 0] if squeeze else X
