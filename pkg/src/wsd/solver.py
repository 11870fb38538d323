"""Weighted-L1 sparse recovery under an L2-ball data constraint.

    minimize   w^T x
    subject to ||Phi x - y||_2 <= eps * sqrt(sum(max(y, 0))),   x >= 0

solved with ADMM on the splitting ``x = z`` (orthant plus linear cost) and
``u = Phi x`` (the ball around ``y``).  Columns are rescaled by their weights
so every molecule column costs one unit; zero-weight columns (the background)
are left alone.  The x-update is a projection onto the graph of ``Phi``,
done with a cached Cholesky factor of ``I + B B^T`` through the Woodbury
identity.  Stopping uses a feasible dual point built from the scaled
multiplier, so the reported gap is a certificate.
"""
import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np
from gmpy2 import mpfr
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import nnls

from . import xprec

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"
NUMERICAL_FAILURE = "numerical_failure"


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-6
    max_iter: int = 50_000
    rho: float = 1.0
    relax: float = 1.6
    check_every: int = 10
    refine_every: int = 500
    refine_gap: float = 1e-3
    refine_steps: int = 400

    def __post_init__(self):
        if not self.tol > 0 or self.max_iter < 1 or not self.rho > 0:
            raise ProblemError("tol, max_iter and rho must be positive")
        if not 0 < self.relax < 2:
            raise ProblemError("relax must lie in (0, 2)")


@dataclass(frozen=True)
class CsProblem:
    phi: np.ndarray
    weights: np.ndarray
    y: np.ndarray
    epsilon: float = 2.1
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        phi = np.asarray(getattr(self.phi, "entries", self.phi), dtype=float)
        w = np.asarray(self.weights, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "y", y)
        if phi.ndim != 2 or w.shape != (phi.shape[1],) or y.shape != (phi.shape[0],):
            raise ProblemError(f"inconsistent shapes phi {phi.shape}, weights {w.shape}, y {y.shape}")
        if not self.epsilon > 0:
            raise ProblemError("epsilon must be positive")
        if np.any(w < 0):
            raise ProblemError("weights must be non-negative")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(w))):
            raise ProblemError("phi and weights must be finite")

    @classmethod
    def from_augmented(cls, phi, y, epsilon=2.1, settings=None):
        return cls(phi.entries, phi.column_weights, y, epsilon, settings or SolverSettings())

    @property
    def radius(self):
        return self.epsilon * math.sqrt(float(np.sum(np.maximum(self.y, 0))))


@dataclass(frozen=True)
class CsSolution:
    x: np.ndarray
    objective: float
    feasibility_residual: float
    status: str
    iterations: int
    radius: float
    gap: float = math.nan

    @property
    def ok(self):
        return self.status == OPTIMAL


def _finish(problem, x, status, iterations, gap):
    x = np.where(np.isfinite(x), x, 0.0)
    x = np.maximum(x, 0.0)
    res = float(np.linalg.norm(problem.phi @ x - problem.y))
    obj = float(problem.weights @ x)
    if not math.isfinite(gap):
        gap = math.inf
    return CsSolution(x, obj, res, status, iterations, problem.radius, gap)


def _refit_free(phi, free, x, y):
    """Re-optimize the zero-cost columns for the residual (cannot raise the objective)."""
    if not free.any():
        return x
    x = x.copy()
    rest = phi[:, ~free] @ x[~free]
    x[free] = nnls(phi[:, free], y - rest)[0]
    return x


def _restore_feasibility(B, z, y, r, free):
    """Move a slightly infeasible iterate into the ball along the segment towards
    the least-squares fit on its own support.  Returns None when that fit is
    itself outside the ball."""
    support = (z > 0) | free
    if not support.any():
        return None
    fit = np.zeros_like(z)
    fit[support] = nnls(B[:, support], y)[0]
    e0 = B @ z - y
    e1 = B @ fit - y
    if np.dot(e1, e1) >= r * r:
        return None
    # smallest theta with ||(1 - theta) e0 + theta e1|| = r
    d = e1 - e0
    qa, qb, qc = d @ d, 2 * (e0 @ d), e0 @ e0 - r * r
    if qc <= 0:
        return z
    # f(0) > 0 > f(1) for a convex quadratic: the crossing is the smaller root
    theta = (-qb - math.sqrt(max(qb * qb - 4 * qa * qc, 0.0))) / (2 * qa)
    # step a hair past the boundary so rounding cannot leave us outside
    theta = min(max(theta * (1 + 1e-9) + 1e-15, 0.0), 1.0)
    return (1 - theta) * z + theta * fit


class _RestrictedKkt:
    """Exact optimum of the problem restricted to a column subset, signs ignored.

    With ``H = B_S^T B_S`` and least-squares fit ``x_ls`` the ball constraint is
    active at ``x_ls - t H^-1 w_S`` with ``t = sqrt((r^2 - |res_ls|^2) / w_S^T H^-1 w_S)``.
    Adjacent PSF columns make ``H`` numerically singular in float64, so it is
    formed exactly and solved in extended precision.
    """

    def __init__(self, B, y, w, r, bits):
        self.B, self.y, self.w, self.r, self.bits = B, y, w, r, bits

    def solve(self, cols):
        C = np.column_stack([self.B[:, cols], self.y])
        gram_int, frac = xprec.exact_gram(C.T)
        with xprec.working_precision(self.bits):
            gram = xprec.from_fixed(gram_int, frac)
            n = len(cols)
            H, By, yy = gram[:n, :n], gram[:n, n], gram[n, n]
            ws = xprec.as_mpfr(self.w[cols])
            try:
                sol = xprec.cholesky_solve(H, np.column_stack([By, ws]))
            except ArithmeticError:
                return None
            x_ls, h_w = sol[:, 0], sol[:, 1]
            res2 = yy - By.dot(x_ls)
            whw = ws.dot(h_w)
            slack = mpfr(self.r) ** 2 - res2
            if slack < 0:
                return None
            if whw <= 0:
                return xprec.to_float(x_ls), 0.0
            t = gmpy2.sqrt(slack / whw)
            return xprec.to_float(x_ls - t * h_w), float(t)


def _active_set_refine(B, wn, yn, rn, z, free, max_steps, bits=256):
    """Primal active-set descent from a feasible ``z`` to a certified optimum.

    Each step moves towards the restricted optimum of the current support,
    dropping the first coordinate that reaches zero, and adds the most
    dual-infeasible column once the restricted optimum is non-negative.
    Returns the refined point or None when a restricted problem degenerates.
    """
    kkt = _RestrictedKkt(B, yn, wn, rn, bits)
    x = z.copy()
    support = (x > 0) | free
    for _ in range(max_steps):
        cols = np.flatnonzero(support)
        if len(cols) > B.shape[0]:
            return None
        out = kkt.solve(cols)
        if out is None:
            return None
        target, t = out
        current = x[cols]
        if np.any(target < 0):
            step = target - current
            shrinking = (step < 0) & ~free[cols]
            ratios = np.where(shrinking, current / np.where(shrinking, -step, 1), np.inf)
            alpha = min(float(ratios.min()), 1.0)
            x[cols] = np.maximum(current + alpha * step, 0.0)
            blocked = cols[(ratios <= alpha) & shrinking]
            x[blocked] = 0.0
            support[blocked] = False
            # negative free entries cannot be dropped; give up on this support
            if np.any(x[cols][free[cols]] < 0):
                return None
            continue
        x[:] = 0.0
        x[cols] = target
        if t == 0:
            return x
        g = wn + (B.T @ (B @ x - yn)) / t
        g[support] = np.inf
        j = int(np.argmin(g))
        if g[j] >= -1e-12 * max(1.0, float(np.abs(wn).max())):
            return x
        support[j] = True
    return None


def _nonneg_residual(problem):
    return nnls(problem.phi, problem.y, maxiter=50 * problem.phi.shape[1])[1]


class _Certificate:
    """Relative duality gap from a dual candidate repaired towards a strictly feasible point."""

    def __init__(self, B, wn, yn, rn):
        self.B, self.wn, self.yn, self.rn = B, wn, yn, rn
        self.nu0 = np.full(len(yn), 1e-3 * rn)
        self.f0 = wn + B.T @ self.nu0
        if np.any(self.f0 <= 0):
            self.nu0 = np.zeros(len(yn))
            self.f0 = wn.copy()

    def dual(self, nu):
        f1 = self.wn + self.B.T @ nu
        theta = 1.0
        neg = f1 < 0
        if neg.any():
            theta = min(1.0, float(np.min(self.f0[neg] / (self.f0[neg] - f1[neg]))))
        nu = theta * nu + (1 - theta) * self.nu0
        return -float(nu @ self.yn) - self.rn * float(np.linalg.norm(nu))

    def gap(self, x, nu):
        primal = float(self.wn @ x)
        dual = self.dual(nu)
        return (primal - dual) / max(abs(primal), abs(dual), 1e-12)


def solve_cs(problem):
    s = problem.settings
    y = problem.y
    phi, w = problem.phi, problem.weights
    M, N = phi.shape
    r = problem.radius
    if not np.all(np.isfinite(y)):
        return _finish(problem, np.zeros(N), NUMERICAL_FAILURE, 0, math.inf)
    t = float(np.linalg.norm(y))
    if t <= r:
        return _finish(problem, np.zeros(N), OPTIMAL, 0, 0.0)

    free = w == 0
    yn, rn = y / t, r / t
    scale = np.where(free, 1.0, w)
    B = phi / scale
    wn = np.where(free, 0.0, 1.0)
    G = B @ B.T
    chol = cho_factor(np.eye(M) + G)
    cert = _Certificate(B, wn, yn, rn)

    def accept(cand):
        res = float(np.linalg.norm(B @ cand - yn))
        if res > rn * (1 + s.tol) and res <= rn * (1 + 1e-3):
            fixed = _restore_feasibility(B, cand, yn, rn, free)
            if fixed is not None:
                cand = fixed
                res = float(np.linalg.norm(B @ cand - yn))
        return cand, res <= rn * (1 + s.tol)

    rho = s.rho
    z = np.zeros(N)
    u = np.zeros(M)
    a = np.zeros(N)
    b = np.zeros(M)
    last_good = z
    gap = math.inf
    status = MAX_ITERATIONS
    next_refine = s.refine_every
    k = 0
    for k in range(1, s.max_iter + 1):
        sv = u - b
        vz = z - a
        h = cho_solve(chol, B @ vz + G @ sv)
        x = vz + B.T @ (sv - h)
        xh = s.relax * x + (1 - s.relax) * z
        Bxh = s.relax * h + (1 - s.relax) * u
        z_old, u_old = z, u
        z = np.maximum(xh + a - wn / rho, 0.0)
        v = Bxh + b - yn
        nv = np.linalg.norm(v)
        u = yn + (v if nv <= rn else v * (rn / nv))
        a = a + xh - z
        b = b + Bxh - u
        if k % s.check_every:
            continue
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(b))):
            status = NUMERICAL_FAILURE
            z = last_good
            break
        last_good = z
        zp, feasible = accept(_refit_free(B, free, z, yn))
        gap = cert.gap(zp, rho * b)
        if feasible and gap < s.tol:
            z = zp
            status = OPTIMAL
            break
        if feasible and s.refine_every and k >= next_refine and gap < s.refine_gap:
            next_refine = k + s.refine_every
            refined = _active_set_refine(B, wn, yn, rn, zp, free, s.refine_steps)
            if refined is not None:
                cand, ok = accept(refined)
                e = B @ cand - yn
                # the multiplier of the ball constraint points along the residual
                nu = e * _residual_multiplier(B, wn, e, free)
                g2 = cert.gap(cand, nu)
                if ok and g2 < s.tol:
                    z, gap = cand, g2
                    status = OPTIMAL
                    break
        if k % (5 * s.check_every) == 0:
            rp = math.sqrt(float(np.sum((x - z) ** 2) + np.sum((h - u) ** 2)))
            sd = rho * float(np.linalg.norm((z - z_old) + B.T @ (u - u_old)))
            if rp > 10 * sd:
                rho *= 2
                a /= 2
                b /= 2
            elif sd > 10 * rp:
                rho /= 2
                a *= 2
                b *= 2

    x = z / scale * t
    if status == MAX_ITERATIONS:
        x = _refit_free(phi, free, x, y)
        if np.linalg.norm(phi @ x - y) > r * (1 + s.tol) and _nonneg_residual(problem) > r:
            status = INFEASIBLE
    return _finish(problem, x, status, k, gap)


def _residual_multiplier(B, wn, e, free):
    """Largest mu with wn + mu B^T e >= 0 on the priced columns."""
    g = B.T @ e
    priced = ~free & (g < 0)
    if not priced.any():
        return 0.0
    return float(np.min(wn[priced] / -g[priced]))


@dataclass(frozen=True)
class MergedImage:
    image: np.ndarray
    used: int
    skipped_count: int


def merge_reconstructions(solutions, grid_dims):
    """Sum the molecule parts of per-frame solutions on the grid.

    Entries may be CsSolution objects (non-optimal ones are skipped) or plain
    vectors of length N or N + 1 (always used).
    """
    solutions = list(solutions)
    if not solutions:
        raise ProblemError("no reconstructions to merge")
    n = grid_dims[0] * grid_dims[1]
    total = np.zeros(n)
    skipped = 0
    for sol in solutions:
        if isinstance(sol, CsSolution):
            if not sol.ok:
                skipped += 1
                continue
            x = sol.x
        else:
            x = np.asarray(sol, dtype=float)
        if x.size not in (n, n + 1):
            raise ProblemError(f"solution of length {x.size} does not fit grid {grid_dims}")
        total += x[:n]
    return MergedImage(total.reshape(tuple(grid_dims), order="F"), len(solutions) - skipped, skipped)


def log_visualize(image):
    return np.log1p(np.maximum(np.asarray(image, dtype=float), 0.0))
