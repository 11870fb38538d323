"""Independent reference computations used by the tests.

None of these share code with the package: PSF columns come from math.erf
pixel by pixel, spectra from mpmath, eigenvalue brackets from LDL^T inertia
counts, and small sparse-recovery problems from exhaustive support
enumeration.
"""
import itertools
import math

import gmpy2
import mpmath
import numpy as np


def erf_column(geometry, grid_row, grid_col):
    """Raw frame (rows x cols) of a unit emitter at grid cell (grid_row, grid_col)."""
    rows, cols = geometry.raw_dims
    up = geometry.upsample_factor
    sigma = geometry.psf_sigma_grids
    mr = (geometry.grid_dims[0] - rows * up) // 2
    mc = (geometry.grid_dims[1] - cols * up) // 2
    cy, cx = grid_row + 0.5, grid_col + 0.5

    def mass(lo, hi, c):
        s = sigma * math.sqrt(2)
        return 0.5 * (math.erf((hi - c) / s) - math.erf((lo - c) / s))

    out = np.zeros((rows, cols))
    for r in range(rows):
        my = mass(mr + up * r, mr + up * (r + 1), cy)
        for c in range(cols):
            out[r, c] = my * mass(mc + up * c, mc + up * (c + 1), cx)
    return out


def mp_singular_values(a, dps=60):
    """Singular values of a small float matrix, descending, as decimal strings via mpmath."""
    with mpmath.workdps(dps):
        s = mpmath.svd_r(mpmath.matrix(np.asarray(a, dtype=float).tolist()), compute_uv=False)
        vals = sorted((s[i] for i in range(len(s))), reverse=True)
        return [mpmath.nstr(v, dps - 5) for v in vals]


def lognormal_mode_sd(mu, sigma):
    s2 = sigma * sigma
    return math.exp(mu - s2), math.sqrt(math.expm1(s2) * math.exp(2 * mu + s2))


def brute_force_cs(phi, w, y, radius):
    """Exact optimum of  min w.x  s.t. ||phi x - y|| <= radius, x >= 0  for tiny problems.

    Every optimum sits on some support S with linearly independent columns.
    On S the problem without the sign constraint has the closed-form solution
    ``x = x_ls - t H^-1 w`` (H = phi_S^T phi_S) with the ball active, or any
    zero-cost fit inside the ball.  Each candidate that is nonnegative and
    feasible is an upper bound, and the one on the optimal support attains
    the optimum.
    """
    phi = np.asarray(phi, dtype=float)
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    M, N = phi.shape
    if np.linalg.norm(y) <= radius:
        return 0.0, np.zeros(N)
    best, best_x = math.inf, None
    for size in range(1, min(M, N) + 1):
        for S in itertools.combinations(range(N), size):
            S = list(S)
            P = phi[:, S]
            if np.linalg.matrix_rank(P) < size:
                continue
            H = P.T @ P
            x_ls = np.linalg.solve(H, P.T @ y)
            res2 = float(np.sum((P @ x_ls - y) ** 2))
            if res2 > radius ** 2 * (1 + 1e-12):
                continue
            ws = w[S]
            hw = np.linalg.solve(H, ws)
            q = float(ws @ hw)
            if q <= 0:
                xs = x_ls
            else:
                t = math.sqrt(max(radius ** 2 - res2, 0.0) / q)
                xs = x_ls - t * hw
            if np.any(xs < -1e-10):
                continue
            xs = np.maximum(xs, 0.0)
            x = np.zeros(N)
            x[S] = xs
            if np.linalg.norm(phi @ x - y) > radius * (1 + 1e-9):
                continue
            obj = float(w @ x)
            if obj < best:
                best, best_x = obj, x
    return best, best_x


def inertia_below(G, shift, bits=600):
    """Eigenvalues of the symmetric matrix G (gmpy2/int object array) below ``shift``.

    Counts negative pivots of the LDL^T factorization of G - shift I.
    """
    with gmpy2.context(gmpy2.get_context(), precision=bits):
        n = G.shape[0]
        H = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                H[i, j] = gmpy2.mpfr(G[i, j]) - (shift if i == j else 0)
        L = np.empty((n, n), dtype=object)
        L[...] = gmpy2.mpfr(0)
        D = np.empty(n, dtype=object)
        for j in range(n):
            ld = L[j, :j] * D[:j]
            d = H[j, j] - (L[j, :j].dot(ld) if j else 0)
            D[j] = d
            if j + 1 < n:
                col = H[j + 1:, j] - (L[j + 1:, :j].dot(ld) if j else 0)
                L[j + 1:, j] = col / d
        return int(sum(1 for d in D if d < 0))
