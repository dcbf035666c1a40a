"""Primal active-set solver for small dense convex QPs.

    minimize    0.5 x^T H x + f^T x
    subject to  A x <= b,  lb <= x <= ub

Bound constraints are handled by fixing variables, so a variable on an active
bound sits exactly on it. Constraint indices reported in ``active_set`` are
numbered ``0..m-1`` for the rows of ``A``, ``m + j`` for ``x_j >= lb_j`` and
``m + n + j`` for ``x_j <= ub_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import linprog

JITTER = 1e-12


@dataclass
class QPResult:
    x: np.ndarray
    active_set: tuple[int, ...]
    iterations: int
    multipliers: np.ndarray  # length m + 2n, >= 0
    converged: bool = True

    @property
    def degraded(self) -> bool:
        return not self.converged


def _phase_one(A, b, lb, ub, x0):
    """A feasible starting point; tries the clipped guess before solving an LP."""
    x = np.clip(x0, lb, ub)
    # round-off on an active row (typical for a warm start) is not a reason to move
    if A.shape[0] == 0 or np.all(A @ x <= b + 1e-12 * (1.0 + np.abs(b))):
        return x
    margin = 1e-9 * (1.0 + np.abs(b))
    for rhs in (b - margin, b):
        res = linprog(np.zeros(len(x)), A_ub=A, b_ub=rhs, bounds=list(zip(lb, ub)), method="highs")
        if res.status == 0:
            return np.clip(res.x, lb, ub)
    raise ValueError("QP feasible region is empty")


def solve_qp(
    H,
    f,
    A_in=None,
    b_in=None,
    lb=None,
    ub=None,
    *,
    max_iter: int = 50,
    tol: float = 1e-8,
    x0=None,
    working_set=None,
) -> QPResult:
    """Solve a convex QP with the primal active-set method.

    ``x0`` and ``working_set`` warm-start the iteration. If the iteration limit is
    hit, the last (feasible) iterate is returned with ``converged=False``.
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    A = np.zeros((0, n)) if A_in is None else np.atleast_2d(np.asarray(A_in, dtype=float))
    b = np.zeros(0) if b_in is None else np.atleast_1d(np.asarray(b_in, dtype=float))
    m = A.shape[0]
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    if np.any(lb > ub):
        raise ValueError("infeasible box: lb > ub")
    Hj = H + JITTER * np.eye(n)

    if x0 is None:
        x0 = np.linalg.solve(Hj, -f)
    x = _phase_one(A, b, lb, ub, np.asarray(x0, dtype=float))

    # at_bound[j]: 0 free, -1 held at lb, +1 held at ub
    at_bound = np.zeros(n, dtype=int)
    at_bound[lb == ub] = -1
    x[lb == ub] = lb[lb == ub]
    rows: list[int] = []
    if working_set is not None:
        for k in sorted(working_set):
            j = (k - m) % n if k >= m else -1
            if m <= k < m + n and at_bound[j] == 0 and x[j] - lb[j] <= 1e-10:
                x[j] = lb[j]
                at_bound[j] = -1
            elif k >= m + n and at_bound[j] == 0 and ub[j] - x[j] <= 1e-10:
                x[j] = ub[j]
                at_bound[j] = 1
        for k in sorted(working_set):
            if k < m and abs(A[k] @ x - b[k]) <= 1e-10 and _independent(A, rows + [k], at_bound):
                rows.append(k)

    rows_arr = np.full(max(m, 1), -1, dtype=np.int64)
    rows_arr[: len(rows)] = rows
    x, at_bound, rows_arr, mu_w, it, converged = _iterate(
        H, Hj, f, A, b, lb, ub, x, at_bound, rows_arr, len(rows), max_iter
    )
    rows = [int(k) for k in rows_arr if k >= 0]
    mu = np.zeros(m)
    if converged:
        mu[rows] = mu_w[: len(rows)]
    nu_full = _bound_multipliers(H, f, A, mu, x, at_bound, lb, ub) if converged else np.zeros(2 * n)
    active = tuple(rows) + tuple(
        int(m + j) if at_bound[j] == -1 else int(m + n + j) for j in np.flatnonzero(at_bound)
    )
    return QPResult(
        x=x,
        active_set=tuple(sorted(active)),
        iterations=int(it),
        multipliers=np.concatenate([mu, nu_full]),
        converged=bool(converged),
    )


def _independent(A, rows, at_bound) -> bool:
    free = at_bound == 0
    if not rows:
        return True
    sub = A[np.ix_(rows, np.flatnonzero(free))]
    return sub.size > 0 and np.linalg.matrix_rank(sub) == len(rows)


@njit(cache=True)
def _rank_ok(A, rows, n_rows, at_bound):
    """True if the working rows restricted to the free variables have full row rank."""
    if n_rows == 0:
        return True
    n_free = 0
    for j in range(at_bound.size):
        if at_bound[j] == 0:
            n_free += 1
    if n_free < n_rows:
        return False
    sub = np.empty((n_rows, n_free))
    for i in range(n_rows):
        c = 0
        for j in range(at_bound.size):
            if at_bound[j] == 0:
                sub[i, c] = A[rows[i], j]
                c += 1
    return np.linalg.matrix_rank(sub) == n_rows


@njit(cache=True)
def _iterate(H, Hj, f, A, b, lb, ub, x, at_bound, rows, n_rows, max_iter):
    """Primal active-set iterations from a feasible ``x``.

    ``rows[:n_rows]`` holds the working rows of ``A``; ``at_bound`` marks fixed variables.
    """
    n = x.size
    m = A.shape[0]
    x = x.copy()
    at_bound = at_bound.copy()
    rows = rows.copy()
    mu_w = np.zeros(max(m, 1))
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        g = H @ x + f
        p, mu_w = _eqp_step(Hj, g, A, rows, n_rows, at_bound)
        xmax = 0.0
        pmax = 0.0
        for j in range(n):
            xmax = max(xmax, abs(x[j]))
            pmax = max(pmax, abs(p[j]))
        if pmax <= 1e-12 * (1.0 + xmax):
            grad = g.copy()
            for i in range(n_rows):
                grad += mu_w[i] * A[rows[i]]
            # most negative multiplier; rows win ties over bounds, then lower index
            best = np.inf
            best_kind = -1
            best_idx = -1
            for i in range(n_rows):
                if mu_w[i] < best or (mu_w[i] == best and rows[i] < best_idx and best_kind == 0):
                    best, best_kind, best_idx = mu_w[i], 0, rows[i]
            for j in range(n):
                if at_bound[j] == 0 or lb[j] == ub[j]:
                    continue
                nu = grad[j] if at_bound[j] == -1 else -grad[j]
                if nu < best:
                    best, best_kind, best_idx = nu, 1, j
            gmax = 0.0
            for j in range(n):
                gmax = max(gmax, abs(g[j]))
            if best_kind == -1 or best >= -1e-10 * (1.0 + gmax):
                converged = True
                break
            if best_kind == 0:
                k = 0
                while rows[k] != best_idx:
                    k += 1
                for i in range(k, n_rows - 1):
                    rows[i] = rows[i + 1]
                    mu_w[i] = mu_w[i + 1]
                n_rows -= 1
                rows[n_rows] = -1
            else:
                at_bound[best_idx] = 0
            continue
        # step to the first blocking constraint
        alpha = 1.0
        kind = 0  # 0 none, 1 lower, 2 upper, 3 row
        blk = -1
        for j in range(n):
            if at_bound[j] != 0:
                continue
            if p[j] < 0 and np.isfinite(lb[j]):
                a = (lb[j] - x[j]) / p[j]
                if a < alpha:
                    alpha, kind, blk = a, 1, j
            elif p[j] > 0 and np.isfinite(ub[j]):
                a = (ub[j] - x[j]) / p[j]
                if a < alpha:
                    alpha, kind, blk = a, 2, j
        for k in range(m):
            in_ws = False
            for i in range(n_rows):
                if rows[i] == k:
                    in_ws = True
            if in_ws:
                continue
            ap = A[k] @ p
            if ap > 1e-14:
                a = max(b[k] - A[k] @ x, 0.0) / ap
                if a < alpha:
                    alpha, kind, blk = a, 3, k
        x = x + alpha * p
        if kind == 1:
            x[blk] = lb[blk]
            at_bound[blk] = -1
        elif kind == 2:
            x[blk] = ub[blk]
            at_bound[blk] = 1
        if kind == 1 or kind == 2:
            # drop working rows made dependent by the newly fixed variable
            kept = 0
            for i in range(n_rows):
                rows[kept] = rows[i]
                if _rank_ok(A, rows, kept + 1, at_bound):
                    kept += 1
            for i in range(kept, n_rows):
                rows[i] = -1
            n_rows = kept
        elif kind == 3:
            rows[n_rows] = blk
            n_rows += 1
        for j in range(n):
            if at_bound[j] == 0:
                x[j] = min(max(x[j], lb[j]), ub[j])
    return x, at_bound, rows, mu_w, it, converged


@njit(cache=True)
def _eqp_step(Hj, g, A, rows, n_rows, at_bound):
    """Equality-constrained step on the free variables and the working-row multipliers."""
    n = g.size
    p = np.zeros(n)
    mu = np.zeros(max(A.shape[0], 1))
    idx = np.flatnonzero(at_bound == 0)
    nf = idx.size
    if nf == 0:
        return p, mu
    K = np.zeros((nf + n_rows, nf + n_rows))
    rhs = np.zeros(nf + n_rows)
    for a in range(nf):
        rhs[a] = -g[idx[a]]
        for c in range(nf):
            K[a, c] = Hj[idx[a], idx[c]]
        for i in range(n_rows):
            K[a, nf + i] = A[rows[i], idx[a]]
            K[nf + i, a] = A[rows[i], idx[a]]
    if np.linalg.cond(K) < 1e14:
        sol = np.linalg.solve(K, rhs)
    else:
        sol = np.linalg.lstsq(K, rhs)[0]
    for a in range(nf):
        p[idx[a]] = sol[a]
    for i in range(n_rows):
        mu[i] = sol[nf + i]
    return p, mu


def _bound_multipliers(H, f, A, mu, x, at_bound, lb, ub):
    n = len(x)
    grad = H @ x + f + A.T @ mu
    nu_lo = np.zeros(n)
    nu_hi = np.zeros(n)
    for j in np.flatnonzero(at_bound):
        if lb[j] == ub[j]:
            # fixed variable: split the multiplier onto whichever side makes it non-negative
            if grad[j] >= 0:
                nu_lo[j] = grad[j]
            else:
                nu_hi[j] = -grad[j]
        elif at_bound[j] == -1:
            nu_lo[j] = max(grad[j], 0.0)
        else:
            nu_hi[j] = max(-grad[j], 0.0)
    return np.concatenate([nu_lo, nu_hi])


def kkt_residual(H, f, A, b, lb, ub, x, multipliers) -> float:
    """Largest violation among stationarity, primal/dual feasibility and complementarity.

    Stationarity and complementarity are scaled by ``max(1, |H|*|x|, |f|)`` so the
    measure is insensitive to the overall magnitude of the objective.
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    n = len(f)
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    return float(_kkt(H, f, A, b, lb, ub, np.asarray(x, dtype=float), np.asarray(multipliers, dtype=float)))


@njit(cache=True)
def _kkt(H, f, A, b, lb, ub, x, lam):
    n = f.size
    m = A.shape[0]
    mu, nu_lo, nu_hi = lam[:m], lam[m : m + n], lam[m + n :]
    scale = max(1.0, np.abs(H).max() * np.abs(x).max(), np.abs(f).max())
    stat = H @ x + f - nu_lo + nu_hi
    if m:
        stat += A.T @ mu
    worst = np.abs(stat).max() / scale
    worst = max(worst, max(-lam.min(), 0.0) / scale)
    for k in range(m):
        slack = b[k] - A[k] @ x
        worst = max(worst, -slack, abs(mu[k] * slack) / scale)
    for j in range(n):
        if np.isfinite(lb[j]):
            worst = max(worst, lb[j] - x[j], abs(nu_lo[j] * (x[j] - lb[j])) / scale)
        if np.isfinite(ub[j]):
            worst = max(worst, x[j] - ub[j], abs(nu_hi[j] * (ub[j] - x[j])) / scale)
    return worst
