"""Parisi and Hopf-Lax variational problems, the critical-point system, and probes.

Controls are step paths on the uniform grid ``k/K``. A ramp ``q`` is replaced
by its cell averages on the working cells (the control grid merged with the
path's own breakpoints), so both variational problems see the same discrete
``q``. Optimization runs over PSD increments of the control with spectral
projected gradient steps; gradients are analytic (grid gradient of psi
composed with Hessian-vector products of xi).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import stream
from .cascade import PsiGridConfig, default_bound, psi_cells
from .cone import ConeError, conjugate_xi, frob, psd_project
from .paths import (
    LipschitzPath,
    PathError,
    StepPath,
    merge_edges,
    perturb_and_check,
    ramp_slope,
    step_part,
    uniform_edges,
    uparrow_certificate,
)

CLUSTER_VALUE_TOL = 1e-4
CLUSTER_DIAM_TOL = 1e-3
# below 2^-20 of the projected step the gradient is treated as inconsistent with the values
MAX_HALVINGS = 20


class VariationalError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# feasible sets


def _chain_norm(delta):
    return float(np.sqrt(np.sum(np.sum(delta, axis=0) ** 2)))


def _project_simplex_1d(x, radius):
    """Euclidean projection onto ``{x >= 0, sum x <= radius}``."""
    y = np.maximum(x, 0.0)
    if y.sum() <= radius:
        return y
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - radius
    k = np.nonzero(u - css / np.arange(1, len(u) + 1) > 0)[0][-1]
    return np.maximum(x - css[k] / (k + 1), 0.0)


def project_chain(delta, radius=1.0, tol=1e-14, max_iter=2000):
    """Project increments onto ``{delta_k PSD, |sum delta|_F <= radius}``.

    D = 1 is a capped simplex projection; otherwise Dykstra's algorithm
    alternates between the product of PSD cones and the norm constraint on
    the sum, followed by a final feasibility clean-up.
    """
    delta = np.asarray(delta, dtype=float)
    delta = 0.5 * (delta + np.swapaxes(delta, -1, -2))
    if delta.shape[-1] == 1:
        return _project_simplex_1d(delta[:, 0, 0], radius)[:, None, None]
    n = len(delta)
    x = delta.copy()
    p_inc = np.zeros_like(x)
    q_inc = np.zeros_like(x)
    for _ in range(max_iter):
        y = psd_project(x + p_inc)
        p_inc = x + p_inc - y
        s = np.sum(y + q_inc, axis=0)
        ns = frob(s)
        shift = (s - s * (radius / ns)) / n if ns > radius else 0.0
        x_new = y + q_inc - shift
        q_inc = y + q_inc - x_new
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x = x_new
    x = psd_project(x)
    nrm = _chain_norm(x)
    return x * (radius / nrm) if nrm > radius else x


def _increments(values):
    return np.concatenate([values[:1], np.diff(values, axis=0)])


def _is_chain(values, radius=1.0, tol=1e-9):
    inc = _increments(values)
    lam = np.linalg.eigvalsh(inc)[:, 0]
    return bool(np.all(lam >= -tol) and frob(values[-1]) <= radius + tol)


@dataclass(frozen=True, eq=False)
class DiscretizedControl:
    """Monotone PSD chain ``p_0 <= ... <= p_{K-1}`` with ``|p_k|_F <= 1`` on cells ``[k/K, (k+1)/K)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1, 1)
        v = 0.5 * (v + np.swapaxes(v, -1, -2))
        if not _is_chain(v):
            raise VariationalError("control must be a nondecreasing PSD chain with |p|_F <= 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def feasible(cls, values):
        """Project arbitrary values onto the feasible chain (in increment coordinates)."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1, 1)
        return cls(np.cumsum(project_chain(_increments(v)), axis=0))

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def edges(self):
        return uniform_edges(self.K)

    def to_path(self):
        return StepPath.from_edges(self.edges, self.values)

    def __call__(self, u):
        return self.values[np.minimum((np.asarray(u) * self.K).astype(int), self.K - 1)]

    def to_dict(self):
        return {"K": self.K, "values": self.values.tolist()}


# ---------------------------------------------------------------------------
# model helpers


def hess_vec(model, p, v):
    """``D^2 xi(p)[v]`` on batches; exact for the quadratic kinds."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if model.kind in ("entrywise_quadratic", "frobenius_square"):
        return model.gradient(v)
    if model.kind == "scalar_mixed_pspin":
        x = p[..., 0, 0]
        h = sum(k * (k - 1) * c * x ** (k - 2) for k, c in model.coefficients.items() if k >= 2)
        return np.asarray(h, dtype=float)[..., None, None] * v
    nv = np.sqrt(np.sum(v**2, axis=(-1, -2), keepdims=True))
    step = 1e-5 * (1.0 + np.sqrt(np.sum(p**2, axis=(-1, -2), keepdims=True)))
    u = v / np.where(nv > 0, nv, 1.0)
    d = (model.gradient(p + step * u) - model.gradient(p - step * u)) / (2.0 * step)
    return d * nv


def grad_sup(model, n=256, seed=0):
    """Upper estimate of ``sup |grad xi(a)|_F`` over PSD ``a`` with ``|a|_F <= 1``."""
    dim = model.dim
    rng = stream(seed, "grad-sup", dim)
    g = rng.standard_normal((n, dim, dim))
    a = g @ np.swapaxes(g, -1, -2)
    extra = [np.eye(dim) / np.sqrt(dim)] + [np.outer(e, e) for e in np.eye(dim)]
    a = np.concatenate([a, np.array(extra)])
    a /= np.sqrt(np.sum(a**2, axis=(-1, -2)))[:, None, None]
    return 1.05 * float(np.max(np.sqrt(np.sum(model.gradient(a) ** 2, axis=(-1, -2)))))


def theta_batch(model, p):
    return np.sum(p * model.gradient(p), axis=(-1, -2)) - model.value(p)


def _conjugate_closed(model):
    if model.kind == "frobenius_square":
        c = model.coefficients
        return lambda y: psd_project(y) / (2.0 * c)
    if model.kind == "scalar_mixed_pspin" and set(model.coefficients) == {2}:
        b2 = model.coefficients[2]
        return lambda y: np.maximum(y, 0.0) / (2.0 * b2)
    return None


class _Conjugates:
    """Cell-wise ``xi*`` with closed forms where known and warm-started ascent otherwise."""

    def __init__(self, model, n_cells):
        self.model = model
        self.closed = _conjugate_closed(model)
        self.warm = [None] * n_cells

    def __call__(self, y):
        if self.closed is not None:
            b = self.closed(y)
            return np.sum(y * b, axis=(-1, -2)) - self.model.value(b), b
        vals, args = np.empty(len(y)), np.empty_like(y)
        for c, yc in enumerate(y):
            warm = self.warm[c]
            r = conjugate_xi(self.model, yc, x0=warm, n_starts=1 if warm is not None else 16)
            self.warm[c] = r.argmax
            vals[c], args[c] = r.value, r.argmax
        return vals, args


def _cell_values(path, edges):
    """Exact cell averages of a step or ramp+step path."""
    mids = 0.5 * (edges[:-1] + edges[1:])
    sp = step_part(path)
    return sp(mids) + (ramp_slope(path) * mids)[:, None, None] * np.eye(sp.dim)


def _check_model(model, dim):
    if model.dim != dim:
        raise VariationalError("model and path dimensions differ")
    if not model.certified:
        raise ConeError("monomial_sum model must pass check_model before use")


# ---------------------------------------------------------------------------
# discrete problems


class _Problem:
    """Working cells, discretized ``q``, control map and a frozen psi grid."""

    def __init__(self, t, q, model, P1, ctrl_edges, cfg=None, bound_margin=0.0):
        if t < 0:
            raise VariationalError("t must be >= 0")
        _check_model(model, q.dim)
        self.t, self.q, self.model, self.P1 = float(t), q, model, P1
        self.ctrl_edges = np.asarray(ctrl_edges, dtype=float)
        self.edges = merge_edges(self.ctrl_edges, step_part(q).breakpoints)
        self.lengths = np.diff(self.edges)
        mids = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.idx = np.searchsorted(self.ctrl_edges[1:-1], mids, side="right")
        self.K = len(self.ctrl_edges) - 1
        self.ctrl_lengths = np.diff(self.ctrl_edges)
        self.qc = _cell_values(q, self.edges)
        self.dim = q.dim
        cfg = cfg or PsiGridConfig()
        if cfg.bound is None:
            top = np.diag(self.qc[-1]) + self.t * grad_sup(model) + bound_margin
            cfg = replace(cfg, bound=default_bound(np.diag(top)))
        self.cfg = cfg

    def to_ctrl(self, cell_arr):
        """Sum of ``lengths * cell values`` within each control cell."""
        out = np.zeros((self.K,) + cell_arr.shape[1:])
        np.add.at(out, self.idx, self.lengths[:, None, None] * cell_arr)
        return out

    def ctrl_l2(self, a, b):
        return float(np.sqrt(np.sum(self.ctrl_lengths * np.sum((a - b) ** 2, axis=(1, 2)))))

    # Parisi ------------------------------------------------------------
    def qprime(self, p):
        return self.qc + self.t * self.model.gradient(p[self.idx])

    def parisi(self, p, grad=False):
        pc = p[self.idx]
        r = psi_cells(self.edges, self.qprime(p), self.P1, self.cfg, grad=grad)
        value = r.value - self.t * float(np.sum(self.lengths * theta_batch(self.model, pc)))
        if not grad:
            return value, None, r
        gbar = self.to_ctrl(r.gradient)
        g = self.t * hess_vec(self.model, p, gbar - self.ctrl_lengths[:, None, None] * p)
        return value, g, r

    # Hopf-Lax ----------------------------------------------------------
    def hopflax(self, qp, conj, grad=False):
        if self.t <= 0:
            raise VariationalError("Hopf-Lax needs t > 0")
        y = (qp - self.qc) / self.t
        vals, args = conj(y)
        r = psi_cells(self.edges, qp, self.P1, self.cfg, grad=grad)
        value = r.value - self.t * float(np.sum(self.lengths * vals))
        if not grad:
            return value, None, args
        g = self.lengths[:, None, None] * (r.gradient - args)
        return value, g, args


# ---------------------------------------------------------------------------
# optimizer


def _spg(fun, x0, project, tol=1e-10, max_iter=500, memory=8):
    """Maximize ``fun`` (returning value and gradient) over a convex set.

    Spectral projected gradient: Barzilai-Borwein steps and a non-monotone
    Armijo search against the minimum of the last ``memory`` values.
    """
    x = project(x0)
    f, g = fun(x)
    best = (f, x, g)
    hist = [f]
    pg = np.sqrt(np.sum((project(x + g) - x) ** 2))
    alpha = 1.0 / max(np.max(np.abs(project(x + g) - x)), 1e-12)
    it, evals, status = 0, 1, "max_iter"
    for it in range(1, max_iter + 1):
        if pg <= tol:
            status = "converged"
            break
        d = project(x + alpha * g) - x
        slope = float(np.sum(g * d))
        if slope <= 0:
            status = "stalled"
            break
        ref = min(hist[-memory:])
        lam, accepted = 1.0, False
        for _ in range(MAX_HALVINGS):
            xt = x + lam * d
            ft, gt = fun(xt)
            evals += 1
            if ft >= ref + 1e-4 * lam * slope:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            status = "line_search"
            break
        s, yv = xt - x, gt - g
        curv = -float(np.sum(s * yv))
        alpha = float(np.clip(np.sum(s * s) / curv, 1e-10, 1e10)) if curv > 0 else 1e10
        x, f, g = xt, ft, gt
        hist.append(f)
        if f > best[0]:
            best = (f, x, g)
        pg = np.sqrt(np.sum((project(x + g) - x) ** 2))
    f, x, g = best
    pg = float(np.sqrt(np.sum((project(x + g) - x) ** 2)))
    if status != "converged" and pg <= tol:
        status = "converged"
    return {"x": x, "value": float(f), "iterations": it, "evals": evals, "pg": pg,
            "status": status, "converged": status == "converged" or pg <= 10 * tol}


@dataclass
class VariationalReport:
    """Best value and optimizer over all starts plus cluster statistics."""

    value: float
    optimizer: object
    control: np.ndarray
    starts: list
    cluster_diameter: float
    cluster_size: int
    value_spread: float
    residuals: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "value": self.value,
            "optimizer": self.optimizer.to_dict(),
            "control": np.asarray(self.control).tolist(),
            "cluster_diameter": self.cluster_diameter,
            "cluster_size": self.cluster_size,
            "value_spread": self.value_spread,
            "residuals": self.residuals,
            "flags": self.flags,
            "starts": [{k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
                        for k, v in s.items()} for s in self.starts],
            **{k: v for k, v in self.extra.items()},
        }


def _random_chain(rng, n, dim, radius):
    g = rng.standard_normal((n, dim, dim))
    inc = g @ np.swapaxes(g, -1, -2) * rng.uniform(0.0, 1.0, size=(n, 1, 1))
    scale = radius * rng.uniform(0.1, 1.0) / max(_chain_norm(inc), 1e-300)
    return np.cumsum(inc * scale, axis=0)


def _control_starts(K, dim, n_starts, seed):
    eye = np.eye(dim) / np.sqrt(dim)
    starts = [("zero", np.zeros((K, dim, dim))),
              ("ramp", ((np.arange(K) + 1.0) / K)[:, None, None] * eye)]
    for i in range(max(n_starts - 2, 0)):
        starts.append((f"random{i}", _random_chain(stream(seed, "start", i), K, dim, 1.0)))
    return starts[:max(n_starts, 1)]


def _run_starts(solve_one, starts, threads):
    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(solve_one, starts))
    else:
        results = [solve_one(s) for s in starts]
    return results


def _cluster(results, dist):
    vals = np.array([r["value"] for r in results])
    best = int(np.argmax(vals - 1e-15 * np.arange(len(vals))))  # ties go to the lower start index
    members = [i for i in range(len(results)) if vals[i] >= vals[best] - CLUSTER_VALUE_TOL]
    diam = 0.0
    for a in members:
        for b in members:
            if a < b:
                diam = max(diam, dist(results[a]["control"], results[b]["control"]))
    ok = [i for i, r in enumerate(results) if r["converged"]]
    spread = float(vals[best] - vals[ok].min()) if ok else float("nan")
    return best, members, diam, spread


def parisi_functional(t, q, p, model, P1, cfg=None):
    """``psi(q + t grad xi(p)) - t int theta(p)`` for a step control ``p``."""
    prob = _Problem(t, q, model, P1, p.edges, cfg)
    return prob.parisi(np.asarray(p.values))[0]


def parisi_solve(t, q, model, P1, K=4, n_starts=20, cfg=None, seed=0, tol=1e-10,
                 max_iter=500, threads=1, starts=None, bound_margin=0.0):
    """Maximize the Parisi functional over controls on ``k/K`` from several starts."""
    if t <= 0:
        raise VariationalError("parisi_solve needs t > 0")
    prob = _Problem(t, q, model, P1, uniform_edges(K), cfg, bound_margin)
    dim = q.dim

    def project(delta):
        return project_chain(delta, 1.0)

    def fun(delta):
        p = np.cumsum(delta, axis=0)
        v, g, _ = prob.parisi(p, grad=True)
        return v, np.cumsum(g[::-1], axis=0)[::-1]

    if starts is None:
        starts = _control_starts(K, dim, n_starts, seed)
    else:
        starts = [(f"given{i}", np.asarray(s, dtype=float).reshape(K, dim, dim)) for i, s in enumerate(starts)]

    def solve_one(item):
        kind, p0 = item
        r = _spg(fun, _increments(p0), project, tol, max_iter)
        return {"kind": kind, "value": r["value"], "iterations": r["iterations"], "pg": r["pg"],
                "status": r["status"], "converged": r["converged"],
                "control": np.cumsum(r["x"], axis=0)}

    results = _run_starts(solve_one, starts, threads)
    best, members, diam, spread = _cluster(results, prob.ctrl_l2)
    ctrl = results[best]["control"]
    flags = [] if any(r["converged"] for r in results) else ["no start converged"]
    for i, r in enumerate(results):
        r["index"] = i
    return VariationalReport(
        value=results[best]["value"], optimizer=StepPath.from_edges(prob.ctrl_edges, ctrl),
        control=ctrl, starts=results, cluster_diameter=diam, cluster_size=len(members),
        value_spread=spread, flags=flags,
        extra={"best_start": best, "grid_bound": np.asarray(prob.cfg.bound).tolist()})


def hopflax_functional(t, q, qprime, model, P1, cfg=None):
    """``psi(q') - t int xi*((q' - q)/t)`` on the merged cells of ``q`` and ``q'``."""
    prob = _Problem(t, q, model, P1, step_part(qprime).edges, cfg)
    qp = _cell_values(qprime, prob.edges)
    return prob.hopflax(qp, _Conjugates(model, len(prob.edges) - 1))[0]


def hopflax_box(t, q, model):
    qtop = q(np.array([1.0 - 1e-12]))[0]
    return frob(qtop) + 1.5 * t * grad_sup(model) + 1.0


def hopflax_solve(t, q, model, P1, K=4, n_starts=8, cfg=None, seed=0, tol=1e-10,
                  max_iter=500, threads=1, starts=None, bound_margin=0.0):
    """Maximize the Hopf-Lax functional over nondecreasing ``q'`` on the working cells."""
    if t <= 0:
        raise VariationalError("hopflax_solve needs t > 0")
    prob = _Problem(t, q, model, P1, uniform_edges(K), cfg, bound_margin)
    radius = hopflax_box(t, q, model)
    n_cells = len(prob.lengths)

    def project(delta):
        return project_chain(delta, radius)

    def make_fun(conj):
        def fun(delta):
            v, g, _ = prob.hopflax(np.cumsum(delta, axis=0), conj, grad=True)
            return v, np.cumsum(g[::-1], axis=0)[::-1]
        return fun

    if starts is None:
        seeds = [("identity", prob.qc.copy())]
        for kind, p0 in _control_starts(K, q.dim, max(n_starts - 1, 1), seed):
            seeds.append((kind, prob.qprime(p0)))
        starts = seeds[:max(n_starts, 1)]
    else:
        starts = [(f"given{i}", np.asarray(s, dtype=float).reshape(n_cells, q.dim, q.dim))
                  for i, s in enumerate(starts)]

    def solve_one(item):
        kind, q0 = item
        conj = _Conjugates(model, n_cells)
        r = _spg(make_fun(conj), _increments(q0), project, tol, max_iter)
        qp = np.cumsum(r["x"], axis=0)
        _, _, dual = prob.hopflax(qp, conj)
        return {"kind": kind, "value": r["value"], "iterations": r["iterations"], "pg": r["pg"],
                "status": r["status"], "converged": r["converged"], "control": qp, "dual": dual}

    results = _run_starts(solve_one, starts, threads)

    def dist(a, b):
        return float(np.sqrt(np.sum(prob.lengths * np.sum((a - b) ** 2, axis=(1, 2)))))

    best, members, diam, spread = _cluster(results, dist)
    qp = results[best]["control"]
    for i, r in enumerate(results):
        r["index"] = i
    return VariationalReport(
        value=results[best]["value"], optimizer=StepPath.from_edges(prob.edges, qp), control=qp,
        starts=results, cluster_diameter=diam, cluster_size=len(members), value_spread=spread,
        flags=[] if any(r["converged"] for r in results) else ["no start converged"],
        extra={"best_start": best, "dual": results[best]["dual"].tolist(), "box_radius": radius,
               "grid_bound": np.asarray(prob.cfg.bound).tolist()})


def j_functional(t, q, qprime, p, model, P1, cfg=None):
    """``psi(q') + <p, q - q'>_{L2} + t int xi(p)`` with exact cell-wise integrals."""
    edges = merge_edges(step_part(q).edges, step_part(qprime).edges, step_part(p).edges)
    prob = _Problem(t, q, model, P1, edges, cfg)
    qp = _cell_values(qprime, edges)
    pc = _cell_values(p, edges)
    inner = float(np.sum(prob.lengths * np.sum(pc * (prob.qc - qp), axis=(1, 2))))
    xi_int = float(np.sum(prob.lengths * model.value(pc)))
    return psi_cells(edges, qp, P1, prob.cfg).value + inner + t * xi_int


@dataclass
class CriticalPoint:
    qprime: StepPath
    p: DiscretizedControl
    residuals: dict
    iterations: int
    converged: bool
    history: list

    def to_dict(self):
        return {"qprime": self.qprime.to_dict(), "p": self.p.to_dict(), "residuals": self.residuals,
                "iterations": self.iterations, "converged": self.converged, "history": self.history}


def critical_point_solve(t, q, model, P1, K=4, damping=0.5, tol=1e-6, max_iter=2000, cfg=None,
                         p0=None, bound_margin=0.0):
    """Damped fixed point ``p <- (1 - lam) p + lam Proj(grad psi(q + t grad xi(p)))``.

    The gradient of psi is projected onto the control grid (cell averages);
    residuals are L2 norms on ``[0, 1)``.
    """
    if t <= 0:
        raise VariationalError("critical_point_solve needs t > 0")
    if not 0 < damping <= 1:
        raise VariationalError("damping must lie in (0, 1]")
    prob = _Problem(t, q, model, P1, uniform_edges(K), cfg, bound_margin)
    dim = q.dim
    p = np.zeros((K, dim, dim)) if p0 is None else np.asarray(p0, dtype=float).reshape(K, dim, dim)
    best, history = None, []
    it = 0
    for it in range(1, max_iter + 1):
        r = psi_cells(prob.edges, prob.qprime(p), P1, prob.cfg, grad=True)
        gbar = prob.to_ctrl(r.gradient) / prob.ctrl_lengths[:, None, None]
        res = prob.ctrl_l2(p, gbar)
        history.append(res)
        if best is None or res < best[0]:
            best = (res, p.copy(), gbar)
        if res <= tol:
            break
        target = np.cumsum(project_chain(_increments(gbar), 1.0), axis=0)
        p = (1.0 - damping) * p + damping * target
    res, p, gbar = best
    qp = prob.qprime(p)
    q_res = float(np.sqrt(np.sum(prob.lengths * np.sum(
        (qp - prob.qc - t * model.gradient(p[prob.idx])) ** 2, axis=(1, 2)))))
    proj = np.cumsum(project_chain(_increments(gbar), 1.0), axis=0)
    residuals = {"q_relation": q_res, "p_relation": res, "projection_gap": prob.ctrl_l2(proj, gbar)}
    return CriticalPoint(StepPath.from_edges(prob.edges, qp), DiscretizedControl.feasible(p), residuals,
                         it, res <= tol, history)


# ---------------------------------------------------------------------------
# probes


def _l2_norm_ctrl(ctrl):
    k = len(ctrl)
    return float(np.sqrt(np.sum(np.sum(ctrl**2, axis=(1, 2))) / k))


def uniqueness_probe(t, q, model, P1, K=4, n_starts=20, cfg=None, seed=0, threads=1, **kw):
    """Multistart Parisi solve with a cluster report.

    The uniqueness assertion is only made when ``q`` carries a strictly
    increasing certificate and ``t > 0``; otherwise the report is descriptive.
    """
    if n_starts < 1:
        raise VariationalError("need at least one start")
    cert = uparrow_certificate(q)
    rep = parisi_solve(t, q, model, P1, K, n_starts, cfg, seed, threads=threads, **kw)
    pnorm = _l2_norm_ctrl(rep.control)
    threshold = CLUSTER_DIAM_TOL * (1.0 + pnorm)
    out = {
        "value": rep.value, "p_star": rep.optimizer.to_dict(), "control": rep.control.tolist(),
        "p_norm_l2": pnorm, "cluster_diameter": rep.cluster_diameter, "cluster_size": rep.cluster_size,
        "n_starts": len(rep.starts), "value_spread": rep.value_spread, "threshold": threshold,
        "certificate": {k: v for k, v in cert.items() if k != "witness"}, "flags": rep.flags,
        "starts": [{"kind": s["kind"], "value": s["value"], "status": s["status"],
                    "iterations": s["iterations"]} for s in rep.starts],
    }
    if cert.get("ok") and t > 0:
        passed = rep.cluster_diameter <= threshold and rep.value_spread <= CLUSTER_VALUE_TOL
        out["assertion"] = "passed" if passed else "failed"
    else:
        out["assertion"] = "skipped (q not in Q_uparrow)"
    out["report"] = rep
    return out


def _staircase(prob, extra=None):
    vals = prob.qc if extra is None else prob.qc + extra
    return StepPath.from_edges(prob.edges, vals)


def _warm_value(t, q, model, P1, K, cfg, p_start, tol=1e-12, max_iter=800):
    rep = parisi_solve(t, q, model, P1, K, 1, cfg, starts=[p_start], tol=tol, max_iter=max_iter)
    return rep.value, rep.control


def _richardson(eps, quotients):
    """Richardson table for one-sided quotients with error expansion in powers of eps."""
    table = [list(quotients)]
    for level in range(1, len(quotients)):
        prev = table[-1]
        row = []
        for i in range(len(prev) - 1):
            r = eps[i] / eps[i + level]
            row.append((r**level * prev[i + 1] - prev[i]) / (r**level - 1.0))
        table.append(row)
    return table


def _frozen_cfg(t, q, model, cfg, K, margin):
    prob = _Problem(t, q, model, None, uniform_edges(K), cfg, margin)
    return prob, prob.cfg


def gateaux_fd(t, q, kappa, model, P1, K=4, eps=(0.04, 0.02, 0.01), cfg=None, p_star=None,
               n_starts=4, seed=0):
    """One-sided difference quotients of the computed value along ``kappa``, Richardson-extrapolated.

    Returns the estimate, the table, and ``<p*, kappa>`` on the working cells.
    """
    if not isinstance(kappa, LipschitzPath):
        raise VariationalError("kappa must be a LipschitzPath")
    eps = sorted((float(e) for e in eps), reverse=True)
    for e in eps:
        chk = perturb_and_check(q, kappa, e)
        if not chk["member"]:
            raise PathError(f"q + {e} kappa leaves the strictly increasing class (witness {chk['witness']})")
    kmax = float(np.max(np.abs(kappa.values)))
    prob, cfg = _frozen_cfg(t, q, model, cfg, K, eps[0] * kmax)
    base = _staircase(prob)
    if p_star is None:
        p_star = parisi_solve(t, base, model, P1, K, n_starts, cfg, seed).control
    f0, p_star = _warm_value(t, base, model, P1, K, cfg, p_star)
    kc = kappa.cell_averages(prob.edges)
    quotients = []
    for e in eps:
        fe, _ = _warm_value(t, _staircase(prob, e * kc), model, P1, K, cfg, p_star)
        quotients.append((fe - f0) / e)
    table = _richardson(eps, quotients)
    inner = float(np.sum(prob.lengths * np.sum(p_star[prob.idx] * kc, axis=(1, 2))))
    return {"estimate": table[-1][0], "table": table, "eps": eps, "inner_product": inner,
            "value": f0, "p_star": p_star.tolist()}


def pde_residual(t, q, model, P1, dt=0.05, K=4, cfg=None, p_star=None, n_starts=4, seed=0):
    """``|(f(t + dt) - f(t - dt)) / (2 dt) - int xi(p*)|`` with ``p*`` the optimizer at ``t``."""
    if t - dt <= 0:
        raise VariationalError("need t - dt > 0")
    prob, cfg = _frozen_cfg(t + dt, q, model, cfg, K, 0.0)
    base = _staircase(prob)
    if p_star is None:
        p_star = parisi_solve(t, base, model, P1, K, n_starts, cfg, seed).control
    f0, p_star = _warm_value(t, base, model, P1, K, cfg, p_star)
    fp, _ = _warm_value(t + dt, base, model, P1, K, cfg, p_star)
    fm, _ = _warm_value(t - dt, base, model, P1, K, cfg, p_star)
    dfdt = (fp - fm) / (2 * dt)
    xi_int = float(np.mean(model.value(p_star)))
    inc = _increments(p_star)
    monotone = bool(np.all(np.linalg.eigvalsh(inc)[:, 0] >= -1e-9))
    bounded = bool(np.all(np.sqrt(np.sum(p_star**2, axis=(1, 2))) <= 1 + 1e-9))
    return {"residual": abs(dfdt - xi_int), "dfdt": dfdt, "xi_integral": xi_int, "value": f0,
            "p_monotone": monotone, "p_bounded": bounded, "p_star": p_star.tolist(),
            "values": {"t-dt": fm, "t": f0, "t+dt": fp}}


def random_direction(dim, seed, n=32):
    """A smooth symmetric-matrix direction with ``kappa(0) = 0``."""
    rng = stream(seed, "direction", dim)
    a, b = rng.standard_normal((2, dim, dim))
    a, b = a + a.T, b + b.T
    return LipschitzPath.from_function(lambda u: u * a + np.sin(np.pi * u) * b, n)


def frechet_probe(t, q, model, P1, n_directions=3, K=4, scales=range(2, 9), cfg=None, seed=0,
                  p_star=None, n_starts=4):
    """Remainders ``r_j = |f(q_j) - f(q) - <p*, q_j - q>| / |q_j - q|_{L2}`` with ``|q_j - q| = 2^-j``."""
    scales = list(scales)
    if not scales or min(scales) < 1:
        raise VariationalError("scales must be positive integers")
    cert = uparrow_certificate(q)
    if not cert.get("ok"):
        raise PathError("frechet_probe needs a certified strictly increasing q")
    prob, cfg = _frozen_cfg(t, q, model, cfg, K, 0.5)
    base = _staircase(prob)
    if p_star is None:
        p_star = parisi_solve(t, base, model, P1, K, n_starts, cfg, seed).control
    f0, p_star = _warm_value(t, base, model, P1, K, cfg, p_star)
    rows = []
    for d in range(n_directions):
        kappa = random_direction(q.dim, seed + d)
        kc = kappa.cell_averages(prob.edges)
        norm = float(np.sqrt(np.sum(prob.lengths * np.sum(kc**2, axis=(1, 2)))))
        for j in scales:
            size = 2.0 ** -j
            e = size / norm
            member = perturb_and_check(q, kappa, e)["member"]
            if not member:
                rows.append({"direction": d, "j": j, "member": False})
                continue
            fj, _ = _warm_value(t, _staircase(prob, e * kc), model, P1, K, cfg, p_star)
            lin = float(np.sum(prob.lengths * np.sum(p_star[prob.idx] * e * kc, axis=(1, 2))))
            rows.append({"direction": d, "j": j, "member": True, "remainder": abs(fj - f0 - lin) / size})
    verdicts = []
    for d in range(n_directions):
        r = [row["remainder"] for row in rows if row["direction"] == d and row["member"]]
        verdicts.append(len(r) > 1 and min(r) < 5e-2 and r[1] < r[0])
    # a joint (t, q) direction, reported only
    kappa = random_direction(q.dim, seed + n_directions)
    kc = kappa.cell_averages(prob.edges)
    joint = []
    for j in scales[:4]:
        s = 2.0 ** -j
        fj, _ = _warm_value(t + s, _staircase(prob, s * kc), model, P1, K, cfg, p_star)
        lin = s * float(np.mean(model.value(p_star))) + s * float(
            np.sum(prob.lengths * np.sum(p_star[prob.idx] * kc, axis=(1, 2))))
        joint.append({"j": j, "remainder": abs(fj - f0 - lin) / s})
    return {"rows": rows, "passed": all(verdicts), "per_direction": verdicts, "joint": joint,
            "value": f0, "p_star": p_star.tolist()}

