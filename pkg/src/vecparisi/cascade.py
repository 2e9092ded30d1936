"""Cascade sampling and evaluation of the one-body functional psi.

Two evaluators are provided. ``psi_mc`` samples truncated Poisson-Dirichlet
cascades and Gaussian fields directly. ``psi_grid`` runs the backward
log-moment recursion on a spatial grid with Gauss-Hermite quadrature and
spline interpolation. Both use the sign convention
``psi(q) = -E log sum_a v_a int exp(sqrt2 w(a).s - s.q_K s) dP1(s)``.
"""

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from . import kernels
from ._rng import stream
from .cone import psd_sqrt, psd_tol
from .paths import RampStepPath

MAX_LEAVES = 40_000
MAX_CONFIGS = 65_536


class CascadeError(ValueError):
    pass


class GridError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpinLaw:
    """Finitely supported P1 with atoms in the closed unit ball."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        w = np.asarray(self.weights, dtype=float)
        if a.ndim != 2 or w.shape != (a.shape[0],) or w.size == 0:
            raise CascadeError("atoms must be (n, D) with n weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise CascadeError("spin weights must be >= 0 and sum to 1")
        if np.any(np.linalg.norm(a, axis=1) > 1.0 + 1e-12):
            raise CascadeError("spin atoms must lie in the closed unit ball")
        keep = w > 0
        object.__setattr__(self, "atoms", a[keep])
        object.__setattr__(self, "weights", w[keep])

    @classmethod
    def ising(cls, dim=1):
        """Uniform on ``{-1, 1}^D / sqrt(D)``."""
        a = np.array(list(itertools.product((-1.0, 1.0), repeat=dim))) / np.sqrt(dim)
        return cls(a, np.full(len(a), 1.0 / len(a)))

    @classmethod
    def vertices(cls, dim):
        return cls(np.eye(dim), np.full(dim, 1.0 / dim))

    @property
    def dim(self):
        return self.atoms.shape[1]

    def to_dict(self):
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}


def default_branching(levels, tol=1e-3, max_leaves=2000, m_max=200):
    """Children per level so that the expected truncated mass is about ``tol``.

    The tail of a PD(zeta) process beyond the M-th point carries a fraction of
    order ``M^(1 - 1/zeta)`` of the mass, so the lower (small zeta) levels
    need far fewer children than the top one.
    """
    levels = list(levels)
    if not levels:
        return ()
    ms = []
    for z in levels:
        need = tol ** (1.0 / (1.0 - 1.0 / z)) if z < 1 else m_max
        ms.append(int(np.clip(np.ceil(need), 2, m_max)))
    while np.prod(ms) > max_leaves:
        k = int(np.argmax(ms))
        ms[k] = max(2, int(ms[k] * 0.8))
    return tuple(ms)


@dataclass(frozen=True, eq=False)
class CascadeSpec:
    """Levels ``zeta_1 < ... < zeta_K`` and children kept per node (int or per level)."""

    levels: tuple
    M: object = 200
    seed: int = 0

    def __post_init__(self):
        z = tuple(float(x) for x in np.atleast_1d(np.asarray(self.levels, dtype=float)))
        if any(not 0 < x < 1 for x in z) or any(b <= a for a, b in zip(z, z[1:])):
            raise CascadeError(f"levels must be strictly increasing in (0, 1): {z}")
        m = (int(self.M),) * len(z) if np.isscalar(self.M) else tuple(int(x) for x in self.M)
        if len(m) != len(z) or any(x < 2 for x in m):
            raise CascadeError("need one branching number >= 2 per level")
        if int(np.prod(m, dtype=float)) > MAX_LEAVES:
            raise CascadeError(f"{int(np.prod(m, dtype=float))} leaves exceed the cap {MAX_LEAVES}")
        object.__setattr__(self, "levels", z)
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def for_path(cls, q, M=None, seed=0):
        z = step_of(q).breakpoints
        return cls(tuple(z), default_branching(z) if M is None else M, seed)

    @property
    def K(self):
        return len(self.levels)

    @property
    def n_leaves(self):
        return int(np.prod(self.M, dtype=np.int64))

    def to_dict(self):
        return {"levels": list(self.levels), "M": list(self.M), "seed": self.seed}


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_samples: int
    seed: int

    def to_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "n_samples": self.n_samples, "seed": self.seed}


def step_of(q):
    if isinstance(q, RampStepPath):
        raise CascadeError("cascade evaluation needs a step path; discretize ramps first")
    return q


def _check_levels(spec, q):
    if spec.K != q.K or not np.allclose(spec.levels, q.breakpoints, rtol=0, atol=1e-12):
        raise CascadeError("cascade levels must match the path breakpoints")


def _lse(x, axis=-1):
    """Lean log-sum-exp (scipy's version dominates the sampler's run time)."""
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return np.log(np.sum(e, axis=axis)) + np.squeeze(m, axis=axis)


def _lse_last(x):
    """Log-sum-exp over a short last axis, unrolled to keep reductions contiguous."""
    n = x.shape[-1]
    if n > 16:
        return _lse(x, axis=-1)
    if n == 1:
        return x[..., 0].copy()
    m = np.max([x[..., c] for c in range(n)], axis=0) if n > 2 else np.maximum(x[..., 0], x[..., 1])
    acc = np.zeros_like(m)
    for c in range(n):
        acc += np.exp(x[..., c] - m)
    return np.log(acc) + m


def _log_weights(spec, rng, batch):
    """Log cascade weights, shape (batch, leaves), normalized per row."""
    logw = np.zeros((batch, 1))
    for zeta, m in zip(spec.levels, spec.M):
        gam = np.cumsum(rng.standard_exponential((batch, logw.shape[1], m)), axis=-1)
        logw = (logw[:, :, None] - np.log(gam) / zeta).reshape(batch, -1)
    return logw - _lse(logw, axis=1)[:, None]


def sample_cascade_weights(spec, rng=None):
    """One draw of ``(v_alpha)`` over kept leaves in lexicographic order."""
    rng = stream(spec.seed, "cascade-weights") if rng is None else rng
    return np.exp(_log_weights(spec, rng, 1)[0])


def _fields(spec, q, rng, batch, sites=1):
    """Cumulative fields at the leaves, shape (batch, leaves, sites, D)."""
    vals = q.values
    roots = [psd_sqrt(vals[0])] + [psd_sqrt(vals[k] - vals[k - 1]) for k in range(1, len(vals))]
    dim = q.dim
    y = rng.standard_normal((batch, 1, sites, dim)) @ roots[0].T
    for k, m in enumerate(spec.M, start=1):
        z = rng.standard_normal((batch, y.shape[1] * m, sites, dim)) @ roots[k].T
        y = np.repeat(y, m, axis=1) + z
    return y


def sample_field(spec, q, n_leaves=None, rng=None):
    """Fields ``w^q(alpha)`` for every kept leaf, shape (leaves, D)."""
    q = step_of(q)
    _check_levels(spec, q)
    if n_leaves is not None and n_leaves != spec.n_leaves:
        raise CascadeError(f"spec has {spec.n_leaves} leaves, not {n_leaves}")
    rng = stream(spec.seed, "cascade-field") if rng is None else rng
    return _fields(spec, q, rng, 1)[0, :, 0, :]


def _batch_size(per_sample, budget=400_000):
    return int(max(1, min(4096, budget // max(per_sample, 1))))


def _cascade_logz(spec, q, confs, base, n_samples, rng, disorder=None):
    """Samples of ``log sum_{alpha, sigma} v_alpha exp(base + sqrt2 w.sigma + disorder)``.

    ``confs`` has shape (n_conf, N, D); ``disorder(rng, b)`` returns a
    (b, n_conf) array of extra energies or None.
    """
    n_conf, sites, dim = confs.shape
    flat = confs.reshape(n_conf, sites * dim).T * np.sqrt(2.0)
    batch = _batch_size(spec.n_leaves * n_conf)
    out = np.empty(n_samples)
    done = 0
    while done < n_samples:
        b = min(batch, n_samples - done)
        logv = _log_weights(spec, rng, b)
        y = _fields(spec, q, rng, b, sites).reshape(b, spec.n_leaves, sites * dim)
        energy = y @ flat + base
        if disorder is not None:
            energy = energy + disorder(rng, b)[:, None, :]
        inner = _lse_last(energy)
        out[done:done + b] = _lse(logv + inner, axis=1)
        done += b
    return out


def _estimate(samples, seed):
    n = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(float(samples.mean()), se, int(n), int(seed))


def _quad_form(atoms, a):
    return np.einsum("nd,de,ne->n", atoms, a, atoms)


def psi_mc(q, P1, spec, n_samples):
    """Monte Carlo estimate of psi(q) over cascade and field draws."""
    q = step_of(q)
    _check_levels(spec, q)
    if q.dim != P1.dim:
        raise CascadeError("path and spin law dimensions differ")
    if not np.any(q.values):
        return MCEstimate(0.0, 0.0, int(n_samples), spec.seed)
    base = np.log(P1.weights) - _quad_form(P1.atoms, q.values[-1])
    rng = stream(spec.seed, "psi_mc", *spec.M)
    s = -_cascade_logz(spec, q, P1.atoms[:, None, :], base, int(n_samples), rng)
    return _estimate(s, spec.seed)


def _configurations(P1, n):
    count = len(P1.weights) ** n
    if count > MAX_CONFIGS:
        raise CascadeError(f"{count} configurations exceed the enumeration cap {MAX_CONFIGS}")
    idx = np.array(list(itertools.product(range(len(P1.weights)), repeat=n)), dtype=int).reshape(count, n)
    return P1.atoms[idx], np.log(P1.weights)[idx].sum(axis=1)


def _hamiltonian_factor(model, confs):
    n_conf, n, _ = confs.shape
    overlaps = np.einsum("aid,bie->abde", confs, confs) / n
    cov = n * model.value(overlaps.reshape(-1, *overlaps.shape[2:])).reshape(n_conf, n_conf)
    cov = 0.5 * (cov + cov.T)
    lam, vec = np.linalg.eigh(cov)
    tol = 1e-10 * (1.0 + np.abs(lam).max())
    if lam[0] < -tol:
        raise CascadeError(f"Hamiltonian covariance is not PSD (lambda_min={lam[0]:.3e}); xi is inadmissible")
    return vec * np.sqrt(np.clip(lam, 0.0, None)), np.diag(cov)


def _free_energy_setup(n, t, q, model, P1):
    q = step_of(q)
    if t < 0:
        raise CascadeError("t must be >= 0")
    if q.dim != P1.dim or model.dim != P1.dim:
        raise CascadeError("dimension mismatch between path, model and spin law")
    confs, logp = _configurations(P1, n)
    base = logp - np.einsum("aid,de,aie->a", confs, q.values[-1], confs)
    disorder = None
    if t > 0:
        factor, diag = _hamiltonian_factor(model, confs)
        base = base - t * diag  # N t xi(s s*/N) is the variance of H_N(s)
        scale = np.sqrt(2.0 * t)

        def disorder(rng, b):
            return scale * (rng.standard_normal((b, factor.shape[1])) @ factor.T)
    return q, confs, base, disorder


def mc_free_energy(n, t, q, model, P1, spec, n_samples):
    """Monte Carlo estimate of the enriched free energy ``F_N(t, q)`` by exact enumeration."""
    q, confs, base, disorder = _free_energy_setup(n, t, q, model, P1)
    _check_levels(spec, q)
    rng = stream(spec.seed, "free-energy", n, *spec.M)
    s = -_cascade_logz(spec, q, confs, base, int(n_samples), rng, disorder) / n
    return _estimate(s, spec.seed)


def overlap_samples(n, t, q, model, P1, spec, n_draws):
    """Overlap matrices ``sigma tau^* / N`` of two independent Gibbs replicas, one pair per draw."""
    q, confs, base, disorder = _free_energy_setup(n, t, q, model, P1)
    _check_levels(spec, q)
    rng = stream(spec.seed, "overlaps", n, *spec.M)
    n_conf, sites, dim = confs.shape
    flat = confs.reshape(n_conf, sites * dim).T * np.sqrt(2.0)
    out = np.empty((int(n_draws), dim, dim))
    for d in range(int(n_draws)):
        logv = _log_weights(spec, rng, 1)[0]
        y = _fields(spec, q, rng, 1, sites)[0].reshape(spec.n_leaves, sites * dim)
        energy = logv[:, None] + y @ flat + base
        if disorder is not None:
            energy = energy + disorder(rng, 1)[0][None, :]
        prob = np.exp(energy - logsumexp(energy)).ravel()
        prob /= prob.sum()
        i, j = rng.choice(prob.size, size=2, p=prob) % n_conf
        out[d] = confs[i].T @ confs[j] / sites
    return out


# ---------------------------------------------------------------------------
# grid recursion


@dataclass(frozen=True)
class PsiGridConfig:
    """Quadrature rule and grid per axis; ``None`` picks the dimension default.

    Defaults: D = 1 uses a trapezoid lattice (spacing 0.25 standard
    deviations) on 257 points; D = 2 uses Gauss-Hermite of order 10 per axis
    on 65 x 65 points. ``order`` only applies to the Gauss-Hermite rule. ``bound`` may be a scalar or one value per axis; it is
    derived from ``q_K`` when omitted.
    """

    order: int = None
    resolution: int = None
    bound: object = None
    interpolation: str = "cubic"
    widen: bool = True
    rule: str = None
    spacing: float = None

    def resolved(self, dim):
        order = self.order or (24 if dim == 1 else 10)
        res = self.resolution or (257 if dim == 1 else 65)
        if order < 8:
            raise GridError("Gauss-Hermite order must be >= 8")
        if res % 2 == 0 or res < 5:
            raise GridError("grid resolution must be odd (the grid must contain 0) and >= 5")
        if self.interpolation not in ("cubic", "linear"):
            raise GridError("interpolation must be 'cubic' or 'linear'")
        if dim > 2:
            raise GridError("grid evaluation supports D <= 2")
        if self.rule not in (None, "trapezoid", "hermite"):
            raise GridError("rule must be 'trapezoid' or 'hermite'")
        return order, res

    def nodes(self, cov, dim):
        order, _ = self.resolved(dim)
        rule = self.rule or ("trapezoid" if dim == 1 else "hermite")
        return _gauss_nodes(cov, order, rule, self.spacing or 0.25)

    def to_dict(self):
        b = self.bound
        return {"order": self.order, "resolution": self.resolution,
                "bound": list(np.atleast_1d(b).astype(float)) if b is not None else None,
                "interpolation": self.interpolation, "rule": self.rule, "spacing": self.spacing}


def default_bound(qk, floor=0.05):
    """Per-axis half-width: 8 field standard deviations, floored."""
    return 8.0 * np.sqrt(np.maximum(np.diag(np.atleast_2d(qk)), floor**2 / 64.0))


def _gauss_nodes(cov, order, rule="trapezoid", spacing=0.25):
    """Offsets and log-weights of a tensor quadrature rule for N(0, cov).

    Only directions with positive eigenvalues are integrated over.
    ``trapezoid`` uses a uniform lattice in standard-deviation units, which
    converges geometrically for integrands analytic in a strip and holds up
    far better than Gauss-Hermite when the strip is narrow (large variance).
    """
    lam, vec = np.linalg.eigh(cov)
    pos = lam > psd_tol(cov)
    if not np.any(pos):
        return None, None
    r = int(pos.sum())
    if rule == "hermite":
        x, w = hermgauss(order)
        x, lw1 = x * np.sqrt(2.0), np.log(w) - 0.5 * np.log(np.pi)
    else:
        n = int(np.ceil(8.5 / spacing))
        x = spacing * np.arange(-n, n + 1)
        lw1 = -0.5 * x * x
        lw1 -= logsumexp(lw1)
    grids = np.meshgrid(*([x] * r), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    logw = sum(np.meshgrid(*([lw1] * r), indexing="ij")).ravel()
    if rule != "hermite" and r > 1:
        keep = logw > logw.max() - 40.0
        nodes, logw = nodes[keep], logw[keep] - logsumexp(logw[keep])
    offsets = nodes @ (vec[:, pos] * np.sqrt(lam[pos])).T
    return np.ascontiguousarray(offsets), np.ascontiguousarray(logw)


def _second_derivs(f, h, axis):
    """Natural cubic spline second derivatives along ``axis`` of a uniform grid."""
    f = np.moveaxis(f, axis, 0)
    n = f.shape[0]
    out = np.zeros_like(f)
    rhs = (f[2:] - 2.0 * f[1:-1] + f[:-2]) * (6.0 / (h * h))
    ab = np.zeros((3, n - 2))
    ab[0, 1:] = 1.0
    ab[1, :] = 4.0
    ab[2, :-1] = 1.0
    out[1:-1] = solve_banded((1, 1), ab, rhs.reshape(n - 2, -1)).reshape(rhs.shape)
    return np.ascontiguousarray(np.moveaxis(out, 0, axis))


def _first_derivs(f, m, h, axis):
    """Spline slope at the grid nodes along ``axis``."""
    f = np.moveaxis(f, axis, 0)
    m = np.moveaxis(m, axis, 0)
    d = np.empty_like(f)
    d[:-1] = (f[1:] - f[:-1]) / h - h * (2.0 * m[:-1] + m[1:]) / 6.0
    d[-1] = (f[-1] - f[-2]) / h + h * (m[-2] + 2.0 * m[-1]) / 6.0
    return np.moveaxis(d, 0, axis)


class _Grid:
    def __init__(self, dim, res, bound, cubic):
        self.dim = dim
        self.cubic = cubic
        self.bound = np.broadcast_to(np.asarray(bound, dtype=float), (dim,)).copy()
        self.axes = [np.linspace(-b, b, res) for b in self.bound]
        self.h = [a[1] - a[0] for a in self.axes]
        self.x0 = [a[0] for a in self.axes]

    def points(self):
        if self.dim == 1:
            return self.axes[0][:, None]
        gx, gy = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def coef(self, f):
        f = np.ascontiguousarray(f)
        if self.dim == 1:
            m = _second_derivs(f, self.h[0], 0) if self.cubic else np.zeros_like(f)
            return (f, m)
        if not self.cubic:
            z = np.zeros_like(f)
            return (f, z, z, z)
        fxx = _second_derivs(f, self.h[0], 0)
        fyy = _second_derivs(f, self.h[1], 1)
        return (f, fxx, fyy, _second_derivs(fxx, self.h[1], 1))

    def coef_stack(self, hs):
        cs = [self.coef(h) for h in hs]
        return tuple(np.ascontiguousarray(np.stack(parts)) for parts in zip(*cs))

    def level(self, c, offsets, logw, zeta):
        if self.dim == 1:
            return kernels.level_1d(*c, self.x0[0], self.h[0], offsets[:, 0].copy(), logw, zeta)
        return kernels.level_2d(*c, self.x0[0], self.h[0], self.x0[1], self.h[1], offsets, logw, zeta)

    def tilt(self, c, prev, hc, offsets, logw, zeta):
        if self.dim == 1:
            return kernels.tilt_1d(*c, prev, *hc, self.x0[0], self.h[0], offsets[:, 0].copy(), logw, zeta)
        return kernels.tilt_2d(*c, prev, *hc, self.x0[0], self.h[0], self.x0[1], self.h[1],
                               offsets, logw, zeta)

    def evaluate(self, c, pts):
        pts = np.ascontiguousarray(pts, dtype=float)
        if self.dim == 1:
            return kernels.eval_1d(*c, self.x0[0], self.h[0], pts[:, 0].copy())
        return kernels.eval_2d(*c, self.x0[0], self.h[0], self.x0[1], self.h[1], pts)

    def gradient(self, f, c):
        if self.dim == 1:
            return [_first_derivs(f, c[1], self.h[0], 0)]
        return [_first_derivs(f, c[1], self.h[0], 0), _first_derivs(f, c[2], self.h[1], 1)]


@dataclass
class GridResult:
    value: float
    gradient: np.ndarray = None
    bound: np.ndarray = None
    widened: bool = False
    info: dict = field(default_factory=dict)


def _terminal(grid, P1, qk):
    pts = grid.points()
    energy = np.sqrt(2.0) * pts @ P1.atoms.T + (np.log(P1.weights) - _quad_form(P1.atoms, qk))
    return logsumexp(energy, axis=-1)


def _check_increments(values):
    steps = np.concatenate([values[:1], np.diff(values, axis=0)])
    lam = np.linalg.eigvalsh(steps)[:, 0]
    tol = 1e-10 * (1.0 + np.abs(values).max())
    if np.any(lam < -tol):
        k = int(np.argmax(lam < -tol))
        raise CascadeError(f"non-PSD increment at cell {k} (lambda_min={lam[k]:.3e})")


def psi_cells(edges, values, P1, cfg=None, grad=False):
    """Grid evaluation of psi for the step path with cell ``edges`` and ``values``.

    Consecutive values may coincide (such levels are skipped). With
    ``grad=True`` the L2 gradient density of psi on every cell is returned:
    ``(1/2) E[grad X_k grad X_k^T]`` under the tilted law of the level-k field.
    """
    cfg = cfg or PsiGridConfig()
    values = np.asarray(values, dtype=float)
    edges = np.asarray(edges, dtype=float)
    n_cells, dim = values.shape[0], values.shape[1]
    if dim != P1.dim:
        raise CascadeError("path and spin law dimensions differ")
    order, res = cfg.resolved(dim)
    _check_increments(values)
    qk = values[-1]
    need = default_bound(qk)
    widened = False
    if cfg.bound is None:
        bound = need
    else:
        bound = np.broadcast_to(np.asarray(cfg.bound, dtype=float), (dim,)).copy()
        if np.any(bound < 0.5 * need):
            if not cfg.widen:
                raise GridError(f"grid bound {bound} too small for field scale {need / 8}")
            bound, widened = np.maximum(bound, need), True
    if not grad and not np.any(values):
        return GridResult(0.0, None, bound, widened)
    grid = _Grid(dim, res, bound, cfg.interpolation == "cubic")

    xs = [_terminal(grid, P1, qk)]
    coefs = [grid.coef(xs[0])]
    rules = [None] * n_cells
    for k in range(n_cells - 1, 0, -1):
        rules[k] = cfg.nodes(values[k] - values[k - 1], dim)
        off, lw = rules[k]
        if off is None:
            xs.insert(0, xs[0])
            coefs.insert(0, coefs[0])
            continue
        xs.insert(0, grid.level(coefs[0], off, lw, edges[k]))
        coefs.insert(0, grid.coef(xs[0]))
    if not np.all(np.isfinite(xs[0])):
        raise GridError("non-finite values in the grid recursion")
    rules[0] = cfg.nodes(values[0], dim)
    off0, lw0 = rules[0]
    origin = np.zeros((1, dim))

    def average(c):
        if off0 is None:
            return grid.evaluate(c, origin)[0]
        return float(np.exp(lw0) @ grid.evaluate(c, off0))

    value = -average(coefs[0])
    if not grad:
        return GridResult(float(value), None, bound, widened)

    iu = np.triu_indices(dim)
    stack = None  # components of all cells >= current level, at the current level
    for k in range(n_cells - 1, -1, -1):
        g = grid.gradient(xs[k], coefs[k])
        fresh = np.stack([0.5 * g[a] * g[b] for a, b in zip(*iu)])
        stack = fresh if stack is None else np.concatenate([stack, fresh])
        if k == 0:
            break
        off, lw = rules[k]
        if off is not None:
            stack = grid.tilt(coefs[k], np.ascontiguousarray(xs[k - 1]), grid.coef_stack(stack),
                              off, lw, edges[k])
    hc = grid.coef_stack(stack)
    sums = np.array([average(tuple(part[c] for part in hc)) for c in range(stack.shape[0])])
    ncomp = len(iu[0])
    out = np.zeros((n_cells, dim, dim))
    for pos, k in enumerate(range(n_cells - 1, -1, -1)):
        comp = sums[pos * ncomp:(pos + 1) * ncomp]
        out[k][iu] = comp
        out[k][(iu[1], iu[0])] = comp
    return GridResult(float(value), out, bound, widened)


def psi_grid(q, P1, cfg=None):
    """Deterministic grid value of psi(q) for a step path with D <= 2."""
    q = step_of(q)
    if not np.any(q.values):
        return 0.0
    return psi_cells(q.edges, q.values, P1, cfg).value


def grad_psi(q, P1, cfg=None):
    """L2 gradient density of psi, one symmetric matrix per segment of ``q``."""
    q = step_of(q)
    return psi_cells(q.edges, q.values, P1, cfg, grad=True).gradient


def grad_psi_fd(q, P1, cfg=None, eps=1e-4):
    """Central finite differences of psi_grid per segment value and entry, divided by the segment length."""
    if not 1e-5 <= eps <= 1e-2:
        raise CascadeError("eps must lie in [1e-5, 1e-2]")
    q = step_of(q)
    cfg = cfg or PsiGridConfig()
    if cfg.bound is None:  # freeze the grid across perturbations
        cfg = replace(cfg, bound=default_bound(q.values[-1] + eps * np.eye(q.dim)))
    edges, vals, lengths = q.edges, q.values, q.lengths
    dim = q.dim
    out = np.zeros_like(vals)
    for k in range(len(vals)):
        for a, b in zip(*np.triu_indices(dim)):
            e = np.zeros((dim, dim))
            e[a, b] = e[b, a] = 1.0
            hi, lo = vals.copy(), vals.copy()
            hi[k] += eps * e
            lo[k] -= eps * e
            d = (psi_cells(edges, hi, P1, cfg).value - psi_cells(edges, lo, P1, cfg).value) / (2 * eps)
            d /= lengths[k] * (1.0 if a == b else 2.0)
            out[k, a, b] = out[k, b, a] = d
    return out
