"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set).

Solves::

    minimize    0.5 x^T G x + a^T x
    subject to  C x >= b

for positive definite ``G``. The method starts at the unconstrained minimum
and adds violated constraints one at a time, dropping constraints whose
multipliers would turn negative. Iterates stay dual feasible, so hitting
the iteration cap leaves a point that is optimal for a relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class QPResult:
    x: np.ndarray
    status: str
    active: list[int]
    multipliers: np.ndarray
    iterations: int
    objective: float


def solve_qp(G, a, C=None, b=None, max_iter: int = 500, tol: float = 1e-9) -> QPResult:
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    n = a.size
    if C is None or len(C) == 0:
        C = np.zeros((0, n))
        b = np.zeros(0)
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)

    # Row scaling improves the violation test on mixed-unit constraints.
    norms = np.linalg.norm(C, axis=1)
    keep = norms > 0
    if np.any(~keep & (b > tol)):
        return QPResult(np.zeros(n), INFEASIBLE, [], np.zeros(0), 0, np.inf)
    idx_map = np.nonzero(keep)[0]
    C = C[keep] / norms[keep, None]
    b = b[keep] / norms[keep]

    L = np.linalg.cholesky(G)
    Ginv = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(n)))
    x = -Ginv @ a
    active: list[int] = []
    u = np.zeros(0)
    it = 0

    def objective(z):
        return float(0.5 * z @ G @ z + a @ z)

    def result(x, status, active, u):
        # Multipliers refer to the caller's (unscaled) rows.
        rows = [int(idx_map[i]) for i in active]
        mult = np.asarray(u, dtype=float) / norms[rows] if rows else np.zeros(0)
        return QPResult(x, status, rows, mult, it, objective(x))

    while True:
        s = C @ x - b
        viol = np.nonzero(s < -tol)[0]
        if viol.size == 0:
            return result(x, OPTIMAL, active, u)
        p = int(viol[np.argmin(s[viol])])
        n_p = C[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                return result(x, MAX_ITER, active, u)
            if active:
                N = C[active].T  # (n, q)
                GiN = Ginv @ N
                M = N.T @ GiN
                try:
                    Nstar = np.linalg.solve(M, GiN.T)  # (q, n)
                except np.linalg.LinAlgError:
                    Nstar = np.linalg.lstsq(M, GiN.T, rcond=None)[0]
                H = Ginv - GiN @ Nstar
                z = H @ n_p
                r = Nstar @ n_p
            else:
                z = Ginv @ n_p
                r = np.zeros(0)

            # partial (dual) step length
            t1 = np.inf
            l_drop = -1
            for j in range(len(active)):
                if r[j] > tol:
                    tj = u_plus[j] / r[j]
                    if tj < t1:
                        t1, l_drop = tj, j
            # full (primal) step length
            zn = float(z @ n_p)
            if abs(zn) <= 1e-14 or np.linalg.norm(z) <= 1e-14:
                t2 = np.inf
            else:
                t2 = -(float(n_p @ x) - b[p]) / zn

            if not np.isfinite(t1) and not np.isfinite(t2):
                return result(x, INFEASIBLE, active, u[: len(active)])
            if not np.isfinite(t2):
                u_plus[:-1] -= t1 * r
                u_plus[-1] += t1
                del active[l_drop]
                u_plus = np.delete(u_plus, l_drop)
                continue
            t = min(t1, t2)
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                u = u_plus
                break
            del active[l_drop]
            u_plus = np.delete(u_plus, l_drop)
