"""Discrete optimal transport between preference distributions.

Two solvers share one interface:

* :func:`solve_exact` runs the transportation simplex (MODI pivoting on a
  spanning-tree basis) and returns an optimal plan with its LP duals.
* :func:`solve_sinkhorn` runs log-domain Sinkhorn iterations for the
  entropically regularized problem.

:func:`w1_line_oracle` computes W1 for a cost built from scalar rewards by
integrating the CDF gap along the reward line.  It shares no code with the
solvers and is used to check them.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DimensionMismatch, InfeasibleInput, NoConvergence, ValidationError
from .preference import CategorySchema, as_probs

MARGINAL_ATOL = 1e-9
LOG_FLOOR = 1e-30
NEWTON_STEP_CAP = 20.0


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"cost matrix must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValidationError("cost entries must be finite and non-negative")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def is_symmetric(self, atol=0.0) -> bool:
        return bool(np.allclose(self.entries, self.entries.T, rtol=0, atol=atol))


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    cost: float
    n_iter: int = 0
    residual: float = 0.0
    stop_reason: str = "optimal"

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.tolist(),
            "cost": float(self.cost),
            "n_iter": int(self.n_iter),
            "residual": float(self.residual),
            "stop_reason": self.stop_reason,
        }


@dataclass(frozen=True)
class DualPotentials:
    f: np.ndarray
    g: np.ndarray
    # Sinkhorn only: potentials of the KL(plan | mu x nu) regularized problem,
    # which are the exact gradients of its optimal value.
    f_kl: np.ndarray | None = field(default=None, repr=False)
    g_kl: np.ndarray | None = field(default=None, repr=False)

    def objective(self, mu, nu) -> float:
        return float(as_probs(mu) @ self.f + as_probs(nu) @ self.g)

    def to_dict(self) -> dict:
        return {"f": self.f.tolist(), "g": self.g.tolist()}


def plan_to_json(plan: TransportPlan, duals: DualPotentials) -> str:
    return json.dumps({"plan": plan.to_dict(), "duals": duals.to_dict()})


def build_cost_matrix(schema: CategorySchema) -> CostMatrix:
    r = schema.rewards
    return CostMatrix(np.abs(r[:, None] - r[None, :]))


def index_cost_matrix(d: int) -> CostMatrix:
    """Ground metric ``|i - j|`` on category indices."""
    k = np.arange(d, dtype=float)
    return CostMatrix(np.abs(k[:, None] - k[None, :]))


def _cost_array(M) -> np.ndarray:
    return M.entries if isinstance(M, CostMatrix) else CostMatrix(M).entries


def _check_marginals(mu, nu, M: np.ndarray):
    a = np.asarray(as_probs(mu), dtype=float).reshape(-1)
    b = np.asarray(as_probs(nu), dtype=float).reshape(-1)
    if a.size != M.shape[0] or b.size != M.shape[1]:
        raise DimensionMismatch(f"marginals of size {a.size}, {b.size} do not fit cost {M.shape}")
    for name, x in (("source", a), ("target", b)):
        if not np.all(np.isfinite(x)) or np.any(x < -MARGINAL_ATOL) or abs(x.sum() - 1.0) > MARGINAL_ATOL:
            raise InfeasibleInput(f"{name} marginal is not on the simplex: {x}")
    return np.clip(a, 0.0, None), np.clip(b, 0.0, None)


# ---------------------------------------------------------------------------
# exact solver


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    m, n = a.size, b.size
    ra, rb = a.copy(), b.copy()
    x = {}
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        x[(i, j)] = max(q, 0.0)
        ra[i] -= q
        rb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        # Advance exactly one index per step so the basis has m + n - 1 cells.
        if j == n - 1 or (i < m - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1
    return x


def _potentials(basis, C: np.ndarray, m: int, n: int):
    rows = [[] for _ in range(m)]
    cols = [[] for _ in range(n)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        kind, k = queue.popleft()
        if kind == "r":
            for j in rows[k]:
                if np.isnan(v[j]):
                    v[j] = C[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in cols[k]:
                if np.isnan(u[i]):
                    u[i] = C[i, k] - v[k]
                    queue.append(("r", i))
    return u, v, rows, cols


def _tree_path(rows, cols, start_row: int, end_col: int):
    """Basis cells on the tree path from row node ``start_row`` to column node ``end_col``."""
    parent = {("r", start_row): None}
    queue = deque([("r", start_row)])
    while queue:
        node = queue.popleft()
        if node == ("c", end_col):
            break
        kind, k = node
        nbrs = [("c", j) for j in rows[k]] if kind == "r" else [("r", i) for i in cols[k]]
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    cells = []
    node = ("c", end_col)
    while parent[node] is not None:
        prev = parent[node]
        cells.append((prev[1], node[1]) if prev[0] == "r" else (node[1], prev[1]))
        node = prev
    return cells  # ordered from end_col back to start_row


def solve_exact(mu, nu, M, max_pivots: int | None = None):
    """Optimal plan and duals of the transportation LP.

    Dantzig pricing, switching to Bland's rule after ``4 * m * n`` pivots to
    rule out cycling on degenerate bases.
    """
    C = _cost_array(M)
    a, b = _check_marginals(mu, nu, C)
    m, n = C.shape
    x = _northwest_corner(a, b)
    scale = max(1.0, float(np.abs(C).max()))
    tol = 1e-12 * scale
    max_pivots = max_pivots or 200 * m * n
    pivots = 0
    while True:
        u, v, rows, cols = _potentials(x.keys(), C, m, n)
        red = C - u[:, None] - v[None, :]
        for cell in x:
            red[cell] = 0.0
        if red.min() >= -tol:
            break
        if pivots > 4 * m * n:
            neg = np.argwhere(red < -tol)
            ei, ej = (int(k) for k in neg[0])
        else:
            ei, ej = (int(k) for k in np.unravel_index(np.argmin(red), red.shape))
        path = _tree_path(rows, cols, ei, ej)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(x[c] for c in minus)
        leaving = min((c for c in minus if x[c] <= theta), key=lambda c: (c[0], c[1]))
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        del x[leaving]
        x[(ei, ej)] = theta
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("transportation simplex exceeded its pivot budget")
    T = np.zeros((m, n))
    for (i, j), q in x.items():
        T[i, j] = max(q, 0.0)
    cost = float((T * C).sum())
    return TransportPlan(T, cost, n_iter=pivots, residual=_residual(T, a, b)), DualPotentials(u, v)


def _residual(T, a, b) -> float:
    return float(max(np.abs(T.sum(axis=1) - a).max(), np.abs(T.sum(axis=0) - b).max()))


def ot_cost(mu, nu, M) -> float:
    return solve_exact(mu, nu, M)[0].cost


def wasserstein_p(mu, nu, M, p: float = 1.0) -> float:
    """``(min <T, M**p>)**(1/p)``."""
    if p < 1:
        raise ValidationError(f"p must be >= 1, got {p}")
    C = _cost_array(M)
    cost = solve_exact(mu, nu, C if p == 1 else C**p)[0].cost
    return cost if p == 1 else max(cost, 0.0) ** (1.0 / p)


# ---------------------------------------------------------------------------
# Sinkhorn


@numba.njit(cache=True)
def _sinkhorn_loop(logK, loga, logb, f, g, eps, tol, max_iter):  # pragma: no cover - jitted
    n, m = logK.shape
    a = np.exp(loga)
    err = np.inf
    for it in range(max_iter):
        for i in range(n):
            mx = -np.inf
            for j in range(m):
                t = logK[i, j] + g[j] / eps
                if t > mx:
                    mx = t
            s = 0.0
            for j in range(m):
                s += np.exp(logK[i, j] + g[j] / eps - mx)
            f[i] = eps * (loga[i] - mx - np.log(s))
        for j in range(m):
            mx = -np.inf
            for i in range(n):
                t = logK[i, j] + f[i] / eps
                if t > mx:
                    mx = t
            s = 0.0
            for i in range(n):
                s += np.exp(logK[i, j] + f[i] / eps - mx)
            g[j] = eps * (logb[j] - mx - np.log(s))
        # Columns are exact after the g-update; only rows can be off.
        err = 0.0
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += np.exp(logK[i, j] + (f[i] + g[j]) / eps)
            r = abs(s - a[i])
            if r > err:
                err = r
        if err < tol:
            return it + 1, err
    return max_iter, err


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    mx = x.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(x - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def _newton_polish(C, loga, logb, b, g, eps, tol, max_steps):
    """Damped Newton ascent on the semi-dual in ``g`` (rows solved exactly).

    Sinkhorn stalls when a vanishing amount of mass has to cross a wide cost
    gap; Newton removes that plateau in a handful of steps.
    """
    a = np.exp(loga)
    keep = np.arange(C.shape[1]) != int(np.argmax(b))  # gauge: pin the heaviest column

    def state(g):
        z = (g[None, :] - C) / eps
        lse = _lse(z, axis=1)
        f = eps * (loga - lse)
        S = np.exp(z - lse[:, None])
        P = a[:, None] * S
        return f, S, P, float(a @ f + b @ g)

    f, S, P, F = state(g)
    err = np.inf
    for step in range(max_steps):
        grad = b - P.sum(axis=0)
        err = float(np.abs(grad).max())
        if err < tol:
            return f, g, step, err
        H = (np.diag(P.sum(axis=0)) - S.T @ P) / eps
        Hk = H[np.ix_(keep, keep)]
        # small ridge keeps near-null modes solvable; the step cap below bounds them
        Hk = Hk + (1e-12 * float(np.trace(Hk)) / max(Hk.shape[0], 1) + 1e-300) * np.eye(Hk.shape[0])
        d = np.zeros_like(g)
        try:
            d[keep] = np.linalg.solve(Hk, grad[keep])
        except np.linalg.LinAlgError:
            d[keep] = grad[keep]
        if not np.all(np.isfinite(d)):
            break
        # Near-disconnected plans give near-null Hessian modes; cap the step so
        # no plan entry changes by more than a factor exp(NEWTON_STEP_CAP).
        d *= min(1.0, NEWTON_STEP_CAP * eps / max(float(np.abs(d).max()), 1e-300))
        t, accepted = 1.0, None
        while t > 1e-12:
            cand = state(g + t * d)
            if cand[3] >= F + 1e-4 * t * (grad @ d):
                accepted = cand
                break
            t *= 0.5
        if accepted is None:
            break
        g = g + t * d
        f, S, P, F = accepted
    grad = b - P.sum(axis=0)
    return f, g, max_steps, float(np.abs(grad).max())


def solve_sinkhorn(
    mu,
    nu,
    M,
    eps: float,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    strict: bool = True,
    newton_after: int = 2_000,
):
    """Entropic OT plan ``diag(u) K diag(v)`` with ``K = exp(-M / eps)``.

    Returns ``(TransportPlan, DualPotentials)``; the plan's ``cost`` is the
    transport cost ``<plan, M>``.  ``f, g`` are the log-domain scalings
    ``eps * log u`` and ``eps * log v``.  The problem is solved on the support
    of both marginals; for zero entries the reported ``f, g`` use a 1e-30
    floor inside the logarithm.

    Plain Sinkhorn sweeps run first; after ``newton_after`` sweeps without
    convergence the dual is finished by Newton steps (each counted as one
    iteration).  If ``max_iter`` is hit, raises :class:`NoConvergence` when
    ``strict``, else returns the last iterate with ``stop_reason == "max_iter"``.
    """
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    C = _cost_array(M)
    a, b = _check_marginals(mu, nu, C)
    # Zero-mass rows and columns carry no plan mass; solve on the support only.
    rows, cols = a > 0, b > 0
    Cs = C[np.ix_(rows, cols)]
    loga, logb = np.log(a[rows]), np.log(b[cols])
    f = np.zeros(Cs.shape[0])
    g = np.zeros(Cs.shape[1])
    logK = -Cs / eps
    budget = min(int(max_iter), int(newton_after)) if newton_after else int(max_iter)
    n_iter, err = _sinkhorn_loop(logK, loga, logb, f, g, float(eps), float(tol), budget)
    if err >= tol and n_iter < max_iter:
        f2, g2, steps, err2 = _newton_polish(Cs, loga, logb, b[cols], g.copy(), eps, tol, 200)
        if err2 < tol:
            f, g, err = f2, g2, err2
            n_iter += steps
        else:
            more, err = _sinkhorn_loop(logK, loga, logb, f, g, float(eps), float(tol), int(max_iter) - n_iter)
            n_iter += more
    T = np.zeros_like(C)
    T[np.ix_(rows, cols)] = np.exp((f[:, None] + g[None, :] - Cs) / eps)
    # KL-form potentials; off-support entries get their c-transform, which is
    # the one-sided derivative of the loss in that marginal entry.
    g_kl = np.empty(C.shape[1])
    g_kl[cols] = g - eps * logb
    f_kl = -eps * _lse((g_kl[cols][None, :] - C[:, cols]) / eps + logb[None, :], axis=1)
    f_kl[rows] = f - eps * loga
    g_kl[~cols] = -eps * _lse((f_kl[rows][:, None] - C[rows][:, ~cols]) / eps + loga[:, None], axis=0)
    f_full = f_kl + eps * np.log(np.maximum(a, LOG_FLOOR))
    g_full = g_kl + eps * np.log(np.maximum(b, LOG_FLOOR))
    converged = err < tol
    plan = TransportPlan(
        T,
        float((T * C).sum()),
        n_iter=int(n_iter),
        residual=_residual(T, a, b),
        stop_reason="tolerance" if converged else "max_iter",
    )
    duals = DualPotentials(f_full, g_full, f_kl=f_kl, g_kl=g_kl)
    if not converged and strict:
        raise NoConvergence(max_iter, float(err), (plan, duals))
    return plan, duals


def sinkhorn_loss(mu, nu, M, eps: float, **kw) -> float:
    """Optimal value of ``<T, M> + eps * KL(T | mu nu^T)``.

    Bounded below by the exact OT cost and differentiable in ``mu`` with
    gradient equal to the ``f_kl`` potential.
    """
    plan, duals = solve_sinkhorn(mu, nu, M, eps, **kw)
    return duals.f_kl @ as_probs(mu) + duals.g_kl @ as_probs(nu)


def ot_value_and_grad(mu, nu, M, mode: str = "sinkhorn", eps: float = 0.05, **kw):
    """Loss value and mean-centred source gradient.

    ``mode="exact-dual"`` gives the exact cost and a subgradient (the optimal
    dual ``f``); ``mode="sinkhorn"`` gives :func:`sinkhorn_loss` and its exact
    gradient.
    """
    if mode == "exact-dual":
        plan, duals = solve_exact(mu, nu, M)
        value, grad = plan.cost, duals.f
    elif mode == "sinkhorn":
        kw.setdefault("tol", 1e-12)
        _, duals = solve_sinkhorn(mu, nu, M, eps, **kw)
        value = float(duals.f_kl @ as_probs(mu) + duals.g_kl @ as_probs(nu))
        grad = duals.f_kl
    else:
        raise ValidationError(f"unknown gradient mode {mode!r}")
    return value, grad - grad.mean()


def ot_grad_source(mu, nu, M, mode: str = "sinkhorn", eps: float = 0.05, **kw) -> np.ndarray:
    return ot_value_and_grad(mu, nu, M, mode=mode, eps=eps, **kw)[1]


# ---------------------------------------------------------------------------
# independent 1-D oracle


def w1_line_oracle(mu, nu, schema: CategorySchema) -> float:
    """W1 under ``|r_i - r_j|`` via the area between CDFs on the reward line."""
    r = schema.rewards
    diff = as_probs(mu) - as_probs(nu)
    positions = np.unique(r)  # sorted, ties merged
    mass = np.array([diff[r == x].sum() for x in positions])
    cdf = np.cumsum(mass)[:-1]
    return float(np.sum(np.abs(cdf) * np.diff(positions)))
