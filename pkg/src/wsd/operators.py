"""Row-orthonormalizing operator of a measurement matrix and its factorization.

With ``G = A A^T = P diag(lam) P^T`` the symmetric choice of orthonormalized
rows is ``A_o = G^(-1/2) A``, so the operator is ``T = P diag(lam^(-1/2)) P^T``.
Its singular values are the reciprocals of those of ``A`` and ``U = V = P``.

``G`` is formed exactly from the float64 entries of ``A`` and decomposed in
gmpy2 arithmetic.  The working precision is the requested number of
significant digits plus guard digits covering ``log10(cond(G))``, since the
orthonormality residual of ``A_o`` scales like ``cond(G)`` times the unit
roundoff.
"""
import hashlib
import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np
from gmpy2 import mpfr

from . import xprec

MIN_DIGITS = 40


class FactorizationError(ArithmeticError):
    """The matrix is rank deficient or the decomposition did not converge."""


class PrecisionError(ArithmeticError):
    """The configured precision cannot resolve the operator's conditioning."""


@dataclass(frozen=True)
class PrecisionConfig:
    """``significant_decimal_digits`` is the accuracy target; ``guard_digits`` of
    None means "derive from the conditioning"."""

    significant_decimal_digits: int = MIN_DIGITS
    guard_digits: int = None

    def __post_init__(self):
        if int(self.significant_decimal_digits) < MIN_DIGITS:
            raise ValueError(
                f"significant_decimal_digits must be >= {MIN_DIGITS}, "
                f"got {self.significant_decimal_digits}")
        if self.guard_digits is not None and self.guard_digits < 0:
            raise ValueError("guard_digits must be non-negative")

    def working_digits(self, log10_cond_gram):
        guard = self.guard_digits
        if guard is None:
            guard = int(math.ceil(max(log10_cond_gram, 0.0))) + 6
        return self.significant_decimal_digits + guard


@dataclass(frozen=True)
class WorkingMaps:
    """Float64 projections consumed by the denoiser.

    ``forward`` is ``diag(s) V^T`` and ``inverse`` is ``V diag(1/s)``.
    """

    forward: np.ndarray
    inverse: np.ndarray
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray
    digits: int = MIN_DIGITS

    @property
    def M(self):
        return self.forward.shape[0]

    @classmethod
    def from_factors(cls, U, s, V, inverse_map, digits=MIN_DIGITS):
        """Rebuild from float64 factors (the cache file payload)."""
        s = np.asarray(s, dtype=float)
        V = np.asarray(V, dtype=float)
        forward = s[:, None] * V.T
        return cls(forward, np.asarray(inverse_map, dtype=float),
                   np.asarray(U, dtype=float), s, V, int(digits))

    def project(self, y):
        return self.forward @ y

    def unproject(self, z):
        return self.inverse @ z


@dataclass(frozen=True)
class OperatorBundle:
    T: np.ndarray
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray
    inverse_map: np.ndarray
    digits: int
    working_bits: int
    maps: WorkingMaps = field(default=None, repr=False, compare=False)

    @property
    def M(self):
        return self.T.shape[0]

    def precision(self):
        return xprec.working_precision(self.working_bits)


@dataclass(frozen=True)
class GramEigensystem:
    eigenvalues: np.ndarray  # ascending, mpfr
    eigenvectors: np.ndarray
    working_bits: int
    working_digits: int


_EIG_CACHE = {}


def _entries(A):
    return np.ascontiguousarray(A.entries if hasattr(A, "entries") else A, dtype=float)


def _log10_cond_estimate(a):
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0:
        return 0.0
    tiny = sv[-1] if sv[-1] > 0 else sv[0] * 1e-17
    # float64 cannot see past ~1e16; the post-check retries if this undershoots
    return 2 * min(math.log10(sv[0] / tiny), 16.0)


def gram_eigensystem(A, prec=None):
    """Eigen-decomposition of the exact Gram matrix ``A A^T`` at guarded precision."""
    prec = prec or PrecisionConfig()
    a = _entries(A)
    if a.ndim != 2 or a.shape[0] > a.shape[1]:
        raise FactorizationError(f"need a wide matrix with M <= N, got {a.shape}")
    key = (hashlib.sha1(a.tobytes()).hexdigest(), a.shape, prec)
    if key in _EIG_CACHE:
        return _EIG_CACHE[key]
    G_int, frac = xprec.exact_gram(a)
    log_cond = _log10_cond_estimate(a)
    for _ in range(3):
        digits = prec.working_digits(log_cond)
        bits = xprec.digits_to_bits(digits)
        with xprec.working_precision(bits):
            G = xprec.from_fixed(G_int, frac)
            try:
                lam, P = xprec.eigh(G)
            except ArithmeticError as exc:
                raise FactorizationError(str(exc)) from exc
            lam_max = max(lam[-1], mpfr(0))
            floor = lam_max * mpfr(10) ** (-(digits - 8))
            for i, v in enumerate(lam):
                if v <= floor:
                    # A's singular values are indexed descending, 1-based
                    raise FactorizationError(
                        f"A is rank deficient: singular value {len(lam) - i} of "
                        f"{len(lam)} vanishes at {digits} working digits")
            actual = float(gmpy2.log10(lam_max / lam[0]))
        if digits >= prec.significant_decimal_digits + actual + 4:
            break
        if prec.guard_digits is not None:
            raise PrecisionError(
                f"cond(A A^T) ~ 1e{actual:.1f} needs at least "
                f"{int(math.ceil(actual)) + 4} guard digits; increase digits or guard_digits")
        log_cond = actual
    else:
        raise PrecisionError("conditioning estimate did not stabilise")
    eig = GramEigensystem(lam, P, bits, digits)
    _EIG_CACHE[key] = eig
    return eig


def row_orthonormalize(A, prec=None):
    """Symmetric row-orthonormalization ``A_o = (A A^T)^(-1/2) A`` at extended precision.

    Evaluated as ``P (lam^(-1/2) (P^T A))`` so that it is computed independently
    of the assembled operator.
    """
    eig = gram_eigensystem(A, prec)
    a = _entries(A)
    with xprec.working_precision(eig.working_bits):
        Pt = eig.eigenvectors.T.copy()
        stage = xprec.fixed_matmul(Pt, a, eig.working_bits, xprec.exact_frac_bits(a))
        scale = np.array([1 / gmpy2.sqrt(v) for v in eig.eigenvalues], dtype=object)
        stage = stage * scale[:, None]
        frac = eig.working_bits - _log2_magnitude(stage)
        return xprec.fixed_matmul(eig.eigenvectors, stage, eig.working_bits, frac)


def _log2_magnitude(X):
    m = xprec.max_abs(X)
    return int(gmpy2.ceil(gmpy2.log2(m))) if m > 0 else 0


def compute_operator(A, A_o=None, prec=None):
    """Operator ``T`` with ``T A = A_o``, i.e. ``A_o A^T (A A^T)^(-1)``.

    Without ``A_o`` (or with the symmetric choice) this is ``(A A^T)^(-1/2)``,
    assembled from the Gram eigensystem.
    """
    eig = gram_eigensystem(A, prec)
    P, lam = eig.eigenvectors, eig.eigenvalues
    with xprec.working_precision(eig.working_bits):
        if A_o is None:
            s = np.array([1 / gmpy2.sqrt(v) for v in lam], dtype=object)
            return xprec.dot(P * s[None, :], P.T)
        a = _entries(A)
        frac = eig.working_bits - _log2_magnitude(A_o)
        cross = xprec.fixed_matmul(A_o, a.T, frac, xprec.exact_frac_bits(a))
        inv = np.array([1 / v for v in lam], dtype=object)
        G_inv = xprec.dot(P * inv[None, :], P.T)
        return xprec.dot(cross, G_inv)


def _descending(s, V, U):
    order = sorted(range(len(s)), key=lambda i: -s[i])
    return s[order], V[:, order], U[:, order]


def factor_operator(T, prec=None):
    """Full SVD ``T = U diag(s) V^T`` with descending ``s`` at extended precision."""
    prec = prec or PrecisionConfig()
    T = np.asarray(T, dtype=object)
    n = T.shape[0]
    if T.shape != (n, n) or n == 0:
        raise FactorizationError(f"operator must be square and non-empty, got {T.shape}")
    Tf = xprec.to_float(T)
    if not np.all(np.isfinite(Tf)):
        raise FactorizationError("operator has non-finite entries")
    log_cond = _log10_cond_estimate(Tf)
    digits = prec.working_digits(log_cond)
    bits = xprec.digits_to_bits(digits)
    with xprec.working_precision(bits):
        T = xprec.as_mpfr(T)
        scale = xprec.max_abs(T)
        if scale == 0:
            raise FactorizationError("operator is identically zero")
        tol = scale * gmpy2.mul_2exp(mpfr(1), -(bits - 16))
        symmetric = xprec.max_abs(T - T.T) <= tol
        try:
            if symmetric:
                w, Z = xprec.eigh(T)
                sign = np.array([mpfr(1) if v >= 0 else mpfr(-1) for v in w], dtype=object)
                s = np.array([abs(v) for v in w], dtype=object)
                U = Z * sign[None, :]
                V = Z
            else:
                w, V = xprec.eigh(xprec.dot(T.T, T))
                s = np.array([gmpy2.sqrt(max(v, mpfr(0))) for v in w], dtype=object)
                U = None
        except ArithmeticError as exc:
            raise FactorizationError(f"SVD did not converge: {exc}") from exc
        if U is None:
            s, V, _ = _descending(s, V, V)
        else:
            s, V, U = _descending(s, V, U)
        floor = s[0] * mpfr(10) ** (-(digits - 8))
        for i, v in enumerate(s):
            if v <= floor:
                raise FactorizationError(f"operator is singular at index {i + 1}")
        if U is None:
            U = xprec.dot(T, V) / s[None, :]
        inverse_map = V / s[None, :]
        bundle = OperatorBundle(T, U, s, V, inverse_map, prec.significant_decimal_digits, bits)
    return _with_maps(bundle)


def build_operator_bundle(A, prec=None):
    """Operator bundle of the symmetric orthonormalization, straight from the Gram eigensystem."""
    prec = prec or PrecisionConfig()
    eig = gram_eigensystem(A, prec)
    with xprec.working_precision(eig.working_bits):
        # ascending Gram eigenvalues give descending s = lam^(-1/2)
        s = np.array([1 / gmpy2.sqrt(v) for v in eig.eigenvalues], dtype=object)
        P = eig.eigenvectors
        T = xprec.dot(P * s[None, :], P.T)
        inverse_map = P / s[None, :]
        bundle = OperatorBundle(T, P, s, P, inverse_map,
                                prec.significant_decimal_digits, eig.working_bits)
    return _with_maps(bundle)


def _with_maps(bundle):
    object.__setattr__(bundle, "maps", emit_working_precision(bundle))
    return bundle


def emit_working_precision(bundle):
    """Round the extended-precision projections to float64."""
    if bundle.maps is not None:
        return bundle.maps
    with bundle.precision():
        forward = bundle.V.T * bundle.singular_values[:, None]
        return WorkingMaps(xprec.to_float(forward), xprec.to_float(bundle.inverse_map),
                           xprec.to_float(bundle.U), xprec.to_float(bundle.singular_values),
                           xprec.to_float(bundle.V), bundle.digits)


def working_maps(obj):
    """Accept a bundle or ready-made maps."""
    if isinstance(obj, WorkingMaps):
        return obj
    if isinstance(obj, OperatorBundle):
        return emit_working_precision(obj)
    raise TypeError(f"expected OperatorBundle or WorkingMaps, got {type(obj).__name__}")
