"""Optimal transport on the half-line for laws of scalar paths (D = 1).

Couplings are indexed ``[i, j]`` with ``i`` over the atoms of the source
``mu`` and ``j`` over the target ``nu``; the cost of moving ``x_i`` to
``y_j`` is ``t * xi*((y_j - x_i) / t)``.
"""

from collections import deque

import numpy as np
from scipy.optimize import linprog

from .cascade import PsiGridConfig, default_bound, psi_grid
from .cone import conjugate_xi, psd_tol
from .paths import DiscreteMeasure, StepPath, merge_edges, quantile_path
from .variational import _conjugate_closed

__all__ = [
    "DiscreteMeasure", "CouplingMatrix", "w2", "transport_cost_monotone", "transport_cost_lp",
    "kantorovich_dual", "kantorovich_dual_gap", "concavity_probe", "totally_ordered_support",
    "mixture",
]

MARGINAL_TOL = 1e-10


class TransportError(ValueError):
    pass


class CouplingMatrix(np.ndarray):
    """A nonnegative matrix whose row and column sums are the two marginals."""

    def __new__(cls, matrix, mu, nu):
        obj = np.asarray(matrix, dtype=float).view(cls)
        if obj.shape != (len(mu.weights), len(nu.weights)) or np.any(obj < -MARGINAL_TOL):
            raise TransportError("coupling must be nonnegative with shape (|mu|, |nu|)")
        if (np.max(np.abs(obj.sum(axis=1) - mu.weights)) > MARGINAL_TOL
                or np.max(np.abs(obj.sum(axis=0) - nu.weights)) > MARGINAL_TOL):
            raise TransportError("coupling marginals do not match")
        return obj


def _scalar(mu):
    a = np.asarray(mu.atoms, dtype=float)
    if a.ndim > 1 and a.size != len(mu.weights):
        raise TransportError("scalar (D = 1) atoms required")
    return a.reshape(-1)


def _quantile(mu):
    """Sorted atoms and cumulative weight breakpoints of the quantile function."""
    x = _scalar(mu)
    keep = mu.weights > 0
    x, w = x[keep], mu.weights[keep]
    if x.size == 0:
        raise TransportError("empty support")
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    return np.concatenate([[0.0], np.cumsum(w)[:-1], [1.0]]), x


def _monotone_pieces(mu, nu):
    e1, x = _quantile(mu)
    e2, y = _quantile(nu)
    edges = merge_edges(e1, e2)
    mids = 0.5 * (edges[:-1] + edges[1:])
    i = np.searchsorted(e1[1:-1], mids, side="right")
    j = np.searchsorted(e2[1:-1], mids, side="right")
    return np.diff(edges), x[i], y[j]


def w2(mu, nu):
    """Quadratic Wasserstein distance through the quantile coupling."""
    lengths, x, y = _monotone_pieces(mu, nu)
    return float(np.sqrt(np.sum(lengths * (y - x) ** 2)))


class _Cost:
    """``t * xi*(d / t)`` with closed forms when available, cached per displacement."""

    def __init__(self, t, model):
        if t <= 0:
            raise TransportError("t must be > 0")
        if model.dim != 1:
            raise TransportError("transport costs are only defined for D = 1")
        self.t, self.model = float(t), model
        self.closed = _conjugate_closed(model)
        self.cache = {}

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        out = np.empty(d.shape)
        for k, v in np.ndenumerate(d):
            if v not in self.cache:
                y = np.array([[v / self.t]])
                if self.closed is not None:
                    b = self.closed(y)
                    val = float(np.sum(y * b) - self.model.value(b))
                else:
                    val = conjugate_xi(self.model, y).value
                self.cache[v] = self.t * val
            out[k] = self.cache[v]
        return out


def transport_cost_monotone(t, mu, nu, model):
    """``int_0^1 t xi*((q'(u) - q(u)) / t) du`` with ``q, q'`` the quantile paths of ``mu, nu``."""
    lengths, x, y = _monotone_pieces(mu, nu)
    return float(np.sum(lengths * _Cost(t, model)(y - x)))


def _northwest(supply, demand):
    m, n = len(supply), len(demand)
    s, d = supply.copy(), demand.copy()
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while i < m and j < n:
        x = min(s[i], d[j])
        flow[i, j] = x
        s[i] -= x
        d[j] -= x
        basis.append((i, j))
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif s[i] <= d[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost, basis, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    adj_r = [[] for _ in range(m)]
    adj_c = [[] for _ in range(n)]
    for i, j in basis:
        adj_r[i].append(j)
        adj_c[j].append(i)
    u[0] = 0.0
    todo = deque([("r", 0)])
    while todo:
        kind, k = todo.popleft()
        if kind == "r":
            for j in adj_r[k]:
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    todo.append(("c", j))
        else:
            for i in adj_c[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    todo.append(("r", i))
    return u, v


def _tree_path(basis, m, start_row, end_col):
    """Cells on the basis-tree path from row node ``start_row`` to column node ``end_col``."""
    adj = {}
    for i, j in basis:
        adj.setdefault(("r", i), []).append(("c", j))
        adj.setdefault(("c", j), []).append(("r", i))
    prev = {("r", start_row): None}
    todo = deque([("r", start_row)])
    while todo:
        node = todo.popleft()
        if node == ("c", end_col):
            break
        for nxt in adj.get(node, []):
            if nxt not in prev:
                prev[nxt] = node
                todo.append(nxt)
    cells = []
    node = ("c", end_col)
    while prev[node] is not None:
        a, b = prev[node], node
        cells.append((a[1], b[1]) if a[0] == "r" else (b[1], a[1]))
        node = a
    return cells[::-1]


def transportation_simplex(cost, supply, demand, tol=1e-12, max_iter=100_000):
    """Exact transportation simplex (u-v method) on a dense cost matrix."""
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    flow, basis = _northwest(np.asarray(supply, float), np.asarray(demand, float))
    scale = 1.0 + np.max(np.abs(cost))
    for _ in range(max_iter):
        u, v = _potentials(cost, basis, m, n)
        red = cost - u[:, None] - v[None, :]
        for i, j in basis:
            red[i, j] = 0.0
        k = int(np.argmin(red))
        i0, j0 = divmod(k, n)
        if red[i0, j0] >= -tol * scale:
            return flow, basis, u, v
        # the cycle: entering cell (+), then the tree path from column j0 back to row i0
        path = _tree_path(basis, m, i0, j0)
        cycle = [(i0, j0)] + path[::-1]
        minus = cycle[1::2]
        theta_cell = min(minus, key=lambda c: (flow[c], c))
        theta = flow[theta_cell]
        for pos, c in enumerate(cycle):
            flow[c] += theta if pos % 2 == 0 else -theta
        flow[theta_cell] = 0.0
        basis.remove(theta_cell)
        basis.append((i0, j0))
    raise TransportError("transportation simplex did not terminate")


def _cost_matrix(t, mu, nu, model):
    x, y = _scalar(mu), _scalar(nu)
    return _Cost(t, model)(y[None, :] - x[:, None])


def transport_cost_lp(t, mu, nu, model):
    """Optimal coupling and cost by the exact transportation simplex."""
    if len(mu.weights) * len(nu.weights) > 10_000:
        raise TransportError("support product exceeds 10^4")
    cost = _cost_matrix(t, mu, nu, model)
    flow, *_ = transportation_simplex(cost, mu.weights, nu.weights)
    flow = np.clip(flow, 0.0, None)
    return float(np.sum(flow * cost)), CouplingMatrix(flow, mu, nu)


def kantorovich_dual(t, mu, nu, model, potentials=None):
    """Dual value ``int chi' dnu - int chi dmu`` over ``chi'_j - chi_i <= c_ij``.

    Without ``potentials`` the dual LP is solved (HiGHS) and polished by a
    c-transform; given potentials ``(chi, chi')`` are made feasible by the
    same c-transform and evaluated.
    """
    cost = _cost_matrix(t, mu, nu, model)
    m, n = cost.shape
    if potentials is None:
        a_ub = np.zeros((m * n, m + n))
        rows = np.arange(m * n)
        a_ub[rows, np.repeat(np.arange(m), n)] = -1.0
        a_ub[rows, m + np.tile(np.arange(n), m)] = 1.0
        obj = np.concatenate([mu.weights, -nu.weights])
        bounds = [(0.0, 0.0)] + [(None, None)] * (m + n - 1)
        res = linprog(obj, A_ub=a_ub, b_ub=cost.ravel(), bounds=bounds, method="highs")
        if res.status != 0:
            raise TransportError(f"dual LP failed: {res.message}")
        chi = res.x[:m]
    else:
        chi = np.asarray(potentials[0], dtype=float)
    chi_p = np.min(cost + chi[:, None], axis=0)
    dual = float(nu.weights @ chi_p - mu.weights @ chi)
    primal, _ = transport_cost_lp(t, mu, nu, model)
    return {"primal": primal, "dual": dual, "gap": primal - dual, "chi": chi, "chi_prime": chi_p}


def kantorovich_dual_gap(t, mu, nu, model, potentials=None):
    return kantorovich_dual(t, mu, nu, model, potentials)["gap"]


def mixture(mu0, mu1, lam):
    atoms = np.concatenate([_scalar(mu0), _scalar(mu1)])
    weights = np.concatenate([(1.0 - lam) * mu0.weights, lam * mu1.weights])
    keep = weights > 0
    w = weights[keep]
    return DiscreteMeasure(atoms[keep], w / w.sum())


def concavity_probe(mu0, mu1, lambdas, P1, cfg=None):
    """Check ``psi(G^-1(lam mu1 + (1-lam) mu0)) >= lam psi(G^-1 mu1) + (1-lam) psi(G^-1 mu0)``.

    The psi grid is frozen to the largest atom so that every mixture is
    evaluated on the same grid.
    """
    lambdas = sorted(set(float(x) for x in lambdas) | {0.5})
    if any(not 0 <= x <= 1 for x in lambdas):
        raise TransportError("mixture weights must lie in [0, 1]")
    top = max(_scalar(mu0).max(), _scalar(mu1).max())
    if min(_scalar(mu0).min(), _scalar(mu1).min()) < 0:
        raise TransportError("atoms must lie in [0, inf)")
    cfg = cfg or PsiGridConfig()
    if cfg.bound is None:
        from dataclasses import replace
        cfg = replace(cfg, bound=default_bound(np.array([[top]])))

    def psi_of(mu):
        return psi_grid(quantile_path(mu), P1, cfg)

    p0, p1 = psi_of(mu0), psi_of(mu1)
    rows = []
    for lam in lambdas:
        lhs = psi_of(mixture(mu0, mu1, lam)) if 0 < lam < 1 else (p0 if lam == 0 else p1)
        rhs = lam * p1 + (1.0 - lam) * p0
        rows.append({"lambda": lam, "lhs": lhs, "rhs": rhs, "margin": lhs - rhs})
    worst = min(r["margin"] for r in rows)
    mid = next(r["margin"] for r in rows if r["lambda"] == 0.5)
    return {"rows": rows, "holds": worst >= -1e-6, "worst_margin": worst, "midpoint_margin": mid}


def totally_ordered_support(mu):
    """``(True, None)`` when every pair of matrix atoms is comparable, else ``(False, (a, b))``."""
    atoms = np.asarray(mu.atoms, dtype=float)
    atoms = atoms[np.asarray(mu.weights) > 0] if len(atoms) == len(mu.weights) else atoms
    if atoms.ndim == 1:
        return True, None
    for i in range(len(atoms)):
        for j in range(i + 1, len(atoms)):
            d = atoms[j] - atoms[i]
            lam = np.linalg.eigvalsh(d)
            tol = psd_tol(d)
            if not (lam[0] >= -tol or lam[-1] <= tol):
                return False, (atoms[i], atoms[j])
    return True, None


def coupling_csv(coupling):
    return "\n".join(",".join(f"{v:.17g}" for v in row) for row in np.asarray(coupling)) + "\n"


def step_law_support(q: StepPath):
    return DiscreteMeasure(q.values, q.lengths)
