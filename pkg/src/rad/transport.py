"""Entropic optimal transport under the asymmetric cost ``c(x, y) = (y - x)_+``.

Moving mass from a source particle ``x`` to a target ``y`` is free when
``x >= y`` and costs the shortfall otherwise, so the unregularized problem on
equal-weight sorted particles is solved by the quantile coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

# Below this regularization the Gibbs kernel is not formed explicitly.
LOG_DOMAIN_BELOW = 0.05
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    a: np.ndarray
    b: np.ndarray
    chi: float
    iterations_used: int
    marginal_violation: float
    # dual potentials f, g with P_ij = exp((f_i + g_j - C_ij) / chi)
    f: np.ndarray
    g: np.ndarray


def fsd_cost_matrix(x, y) -> CostMatrix:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("particle sets must be non-empty")
    return CostMatrix(np.maximum(y[None, :] - x[:, None], 0.0), x, y)


def _entries(C):
    return C.entries if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)


def _check_marginal(m, n, name):
    m = np.full(n, 1.0 / n) if m is None else np.asarray(m, dtype=float).ravel()
    if m.size != n:
        raise ValueError(f"marginal {name} has length {m.size}, expected {n}")
    if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
        raise ValueError(f"marginal {name} must be a probability vector")
    return m


def _lse_rows(M):
    mx = M.max(axis=1)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return mx + np.log(np.exp(M - mx[:, None]).sum(axis=1))


def sinkhorn(C, a=None, b=None, chi=0.01, tol=1e-9, max_iter=10_000) -> TransportPlan:
    """Solve the entropic transport problem ``min <P, C> - chi * H(P)``.

    Parameters
    ----------
    C : CostMatrix or array, shape (N, M)
    a, b : array-like, optional
        Row and column marginals; uniform when omitted.
    chi : float
        Entropic regularization strength.
    tol : float
        Stop once the max-norm marginal residual is at most ``tol``
        (checked every 10 iterations).
    max_iter : int

    Returns
    -------
    TransportPlan

    Raises
    ------
    ConvergenceError
        If the residual is still above ``tol`` after ``max_iter`` iterations.
    """
    K_cost = _entries(C)
    if K_cost.ndim != 2:
        raise ValueError("cost matrix must be two-dimensional")
    n, m = K_cost.shape
    a = _check_marginal(a, n, "a")
    b = _check_marginal(b, m, "b")
    if not chi > 0:
        raise ValueError("chi must be positive")

    if n == 1 or m == 1:
        # the only feasible coupling
        P = a[:, None] * b[None, :]
        f = np.zeros(n)
        g = np.zeros(m)
        return TransportPlan(P, a, b, float(chi), 0, 0.0, f, g)

    scaled = K_cost / chi
    use_log = chi < LOG_DOMAIN_BELOW or scaled.max() > -np.log(_TINY) / 2
    if use_log:
        P, f, g, it, res = _sinkhorn_log(scaled, a, b, tol, max_iter)
    else:
        P, f, g, it, res = _sinkhorn_scaling(scaled, a, b, tol, max_iter)
    if not res <= tol:
        raise ConvergenceError(
            f"sinkhorn did not converge: residual {res:.3e} after {it} iterations",
            iterations=it,
            residual=res,
        )
    return TransportPlan(P, a, b, float(chi), it, res, f * chi, g * chi)


def _residual(P, a, b):
    return max(np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max())


def _sinkhorn_log(S, a, b, tol, max_iter):
    """Log-domain solve of the dual on ``S = C / chi``.

    Runs a ladder of decreasing temperatures (factor 4 per rung) ending at the
    target, each warm-started from the previous rung. On every rung a
    log-domain Sinkhorn sweep is followed by damped Newton steps on the same
    concave dual; the fixed point is the one of plain Sinkhorn, reached in
    tens of steps instead of tens of thousands at small ``chi``.
    """
    span = float(S.max() - S.min())
    temps = [1.0]
    while temps[-1] * _LADDER < max(span, 1.0):
        temps.append(temps[-1] * _LADDER)
    temps.reverse()
    f = np.zeros(S.shape[0])
    g = np.zeros(S.shape[1])
    total = 0
    prev = temps[0]
    for t in temps:
        f *= prev / t
        g *= prev / t
        prev = t
        last = t == 1.0
        f, g, it = _dual_stage(S / t, f, g, a, b, tol if last else _RUNG_TOL, max_iter - total)
        total += it
        if total >= max_iter:
            break
    P = np.exp(f[:, None] + g[None, :] - S)
    return P, f, g, total, _residual(P, a, b)


_LADDER = 4.0
_RUNG_TOL = 1e-3
_SWEEPS = 5


def _dual(f, g, S, a, b):
    with np.errstate(over="ignore"):
        return f @ a + g @ b - np.exp(f[:, None] + g[None, :] - S).sum()


def _dual_stage(S, f, g, a, b, tol, budget):
    log_a = np.log(np.maximum(a, _TINY))
    log_b = np.log(np.maximum(b, _TINY))
    n, m = S.shape
    it = 0
    while it < budget:
        if it < _SWEEPS:
            f = log_a - _lse_rows(g[None, :] - S)
            g = log_b - _lse_rows((f[:, None] - S).T)
            it += 1
            continue
        P = np.exp(f[:, None] + g[None, :] - S)
        row = P.sum(axis=1)
        col = P.sum(axis=0)
        r = a - row
        c = b - col
        res = max(np.abs(r).max(), np.abs(c).max())
        if res <= tol:
            break
        step = 0.0
        for ridge in (0.0, res):
            df, dg = _newton_direction(P, row, col, r, c, ridge)
            step = _line_search(S, a, b, f, g, df, dg, row.sum(), r, c)
            if step > 0.0:
                break
        if step > 0.0:
            f = f + step * df
            g = g + step * dg
        else:
            f = log_a - _lse_rows(g[None, :] - S)
            g = log_b - _lse_rows((f[:, None] - S).T)
        it += 1
    return f, g, it


def _newton_direction(P, row, col, r, c, ridge):
    # Newton system on (f, g[:-1]); g[-1] is pinned to remove the gauge
    # freedom. A ridge is only used when underflow disconnects the support
    # of P and the plain system is singular.
    n, m = P.shape
    H = np.empty((n + m - 1, n + m - 1))
    H[:n, :n] = np.diag(row + ridge)
    H[:n, n:] = P[:, :-1]
    H[n:, :n] = P[:, :-1].T
    H[n:, n:] = np.diag(col[:-1] + ridge)
    rhs = np.concatenate([r, c[:-1]])
    try:
        d = np.linalg.solve(H, rhs)
    except np.linalg.LinAlgError:
        d = np.full(n + m - 1, np.nan)
    return d[:n], np.append(d[n:], 0.0)


def _line_search(S, a, b, f, g, df, dg, mass, r, c):
    """Armijo backtracking on the dual; returns 0.0 when no step is accepted."""
    if not (np.all(np.isfinite(df)) and np.all(np.isfinite(dg))):
        return 0.0
    d0 = f @ a + g @ b - mass
    slope = df @ r + dg @ c
    # rounding allowance: near the optimum the ascent is below float noise
    noise = 1e-13 * (abs(f) @ a + abs(g) @ b + 1.0)
    step = 1.0
    while step > 1e-5:
        if _dual(f + step * df, g + step * dg, S, a, b) >= d0 + 1e-4 * step * slope - noise:
            return step
        step *= 0.5
    return 0.0


def _sinkhorn_scaling(S, a, b, tol, max_iter):
    """Plain Sinkhorn on the Gibbs kernel.

    Linear convergence can crawl on badly conditioned kernels, so after
    ``_SCALING_SWEEPS`` sweeps the remaining budget goes to the Newton dual
    stage, warm-started from ``log u, log v``.
    """
    K = np.exp(-S)
    u = np.ones(S.shape[0])
    v = np.ones(S.shape[1])
    res = np.inf
    it = 0
    limit = min(max_iter, _SCALING_SWEEPS)
    while it < limit:
        u = a / (K @ v)
        v = b / (K.T @ u)
        it += 1
        if it % 10 == 0 or it == limit:
            res = np.abs(u * (K @ v) - a).max()
            if res <= tol:
                break
    with np.errstate(divide="ignore"):
        f = np.log(u)
        g = np.log(v)
    if res > tol and it < max_iter:
        f, g, extra = _dual_stage(S, f, g, a, b, tol, max_iter - it)
        it += extra
    P = np.exp(f[:, None] + g[None, :] - S)
    return P, f, g, it, _residual(P, a, b)


_SCALING_SWEEPS = 500


def plan_cost(P, C) -> float:
    """Transport cost ``<P, C>``."""
    plan = P.plan if isinstance(P, TransportPlan) else np.asarray(P, dtype=float)
    entries = _entries(C)
    if plan.shape != entries.shape:
        raise ValueError("plan and cost matrix shapes differ")
    return float(np.sum(plan * entries))


def entropy(P) -> float:
    plan = P.plan if isinstance(P, TransportPlan) else np.asarray(P, dtype=float)
    nz = plan[plan > 0]
    return float(-np.sum(nz * np.log(nz)))


def entropic_value(P, C, chi) -> float:
    """Regularized objective ``<P, C> - chi * H(P)`` with ``0 log 0 = 0``."""
    return plan_cost(P, C) - chi * entropy(P)


def exact_fsd(x, y) -> float:
    """Unregularized transport value for equal-size sorted particle sets.

    Equals ``(1/N) * sum_i (y_i - x_i)_+`` under the quantile coupling.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size == 0:
        raise ValueError("exact_fsd needs two non-empty particle sets of equal size")
    if np.any(np.diff(x) < 0) or np.any(np.diff(y) < 0):
        raise ValueError("exact_fsd needs sorted particles")
    return float(np.sum(np.maximum(y - x, 0.0)) / x.size)


def particle_gradient(P, x, y) -> np.ndarray:
    """Derivative of the entropic value with respect to each source particle.

    By the envelope theorem only the explicit dependence of ``C`` on ``x``
    matters: ``g_i = -sum_j P_ij * 1[y_j > x_i]``. At ``y_j == x_i`` the
    right derivative (zero) is used.
    """
    plan = P.plan if isinstance(P, TransportPlan) else np.asarray(P, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if plan.shape != (x.size, y.size):
        raise ValueError("plan shape does not match particle counts")
    active = y[None, :] > x[:, None]
    return -np.sum(plan * active, axis=1)
