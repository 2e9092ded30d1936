"""Nondecreasing matrix-valued paths on [0, 1).

Paths are stored exactly (breakpoints and values). ``StepPath`` is
piecewise constant and right-continuous; ``RampStepPath`` adds the term
``u * c * Id``; ``LipschitzPath`` is a grid sample used for perturbations.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .cone import ConeError, as_sym, frob, psd_tol

MERGE_RTOL = 1e-12


class PathError(ValueError):
    pass


def _as_values(values, dim=None):
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v.reshape(-1, 1, 1)
    if v.ndim != 3 or v.shape[1] != v.shape[2]:
        raise PathError(f"values must have shape (K+1, D, D), got {v.shape}")
    if dim is not None and v.shape[1] != dim:
        raise PathError("dimension mismatch")
    if not np.all(np.isfinite(v)):
        raise PathError("path values must be finite")
    return 0.5 * (v + np.swapaxes(v, 1, 2))


def _min_eig(a):
    a = np.asarray(a)
    if a.shape[-1] == 1:
        return a[..., 0, 0]
    return np.linalg.eigvalsh(a)[..., 0]


@dataclass(frozen=True, eq=False)
class StepPath:
    """``q = sum_k q_k 1[zeta_k, zeta_{k+1})`` with ``zeta_0 = 0``, ``zeta_{K+1} = 1``.

    ``breakpoints`` holds the interior points ``zeta_1 < ... < zeta_K`` and
    ``values`` the matrices ``q_0 <= q_1 < ... < q_K``. Equal consecutive
    values are merged on construction.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = _as_values(self.values)
        z = np.atleast_1d(np.asarray(self.breakpoints, dtype=float))
        if z.shape != (v.shape[0] - 1,):
            raise PathError(f"{v.shape[0]} values need {v.shape[0] - 1} breakpoints, got {z.size}")
        if z.size and (z[0] <= 0.0 or z[-1] >= 1.0 or np.any(np.diff(z) <= 0)):
            raise PathError(f"breakpoints must be strictly increasing in (0, 1): {z}")
        if _min_eig(v[0]) < -psd_tol(v[0]):
            raise PathError("q_0 must be PSD")
        inc = np.diff(v, axis=0)
        if inc.size:
            lam = _min_eig(inc)
            tol = np.array([psd_tol(v[k + 1]) for k in range(len(inc))])
            bad = np.nonzero(lam < -tol)[0]
            if bad.size:
                k = int(bad[0])
                raise PathError(f"path decreases at breakpoint {z[k]:.6g} (lambda_min of increment {lam[k]:.3e})")
            scale = np.sqrt(np.sum(inc**2, axis=(1, 2)))
            ref = MERGE_RTOL * (1.0 + np.sqrt(np.sum(v[1:] ** 2, axis=(1, 2))))
            keep = scale > ref
            v = np.concatenate([v[:1], v[1:][keep]])
            z = z[keep]
        z.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", z)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, a):
        return cls(np.zeros(0), as_sym(a)[None])

    @classmethod
    def from_edges(cls, edges, values):
        """Build from the full edge list ``0 = e_0 < ... < e_n = 1`` and ``n`` values."""
        edges = np.asarray(edges, dtype=float)
        return cls(edges[1:-1], values)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def K(self):
        return self.breakpoints.size

    @property
    def edges(self):
        return np.concatenate([[0.0], self.breakpoints, [1.0]])

    @property
    def lengths(self):
        return np.diff(self.edges)

    def segment_index(self, u):
        return np.searchsorted(self.breakpoints, u, side="right")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u < 0) | (u >= 1)):
            raise PathError("path argument must lie in [0, 1)")
        return self.values[self.segment_index(u)]

    def to_dict(self):
        return {"type": "step", "breakpoints": self.breakpoints.tolist(),
                "values": self.values.tolist(), "ramp_c": 0.0}


@dataclass(frozen=True, eq=False)
class RampStepPath:
    """``u -> u * c * Id + step(u)`` with ``c >= 0``."""

    c: float
    step: StepPath

    def __post_init__(self):
        if not np.isfinite(self.c) or self.c < 0:
            raise PathError("ramp slope must be >= 0")
        object.__setattr__(self, "c", float(self.c))

    @classmethod
    def ramp(cls, c, dim=1):
        return cls(c, StepPath.constant(np.zeros((dim, dim))))

    @property
    def dim(self):
        return self.step.dim

    @property
    def breakpoints(self):
        return self.step.breakpoints

    @property
    def edges(self):
        return self.step.edges

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        eye = np.eye(self.dim)
        return self.step(u) + (u[..., None, None] * self.c) * eye

    def to_dict(self):
        d = self.step.to_dict()
        d.update(type="ramp_step", ramp_c=self.c)
        return d


@dataclass(frozen=True, eq=False)
class LipschitzPath:
    """Samples of a Lipschitz path on the uniform grid ``u_i = i / n``, ``i = 0..n``.

    Evaluation between grid points is linear, which preserves the Lipschitz
    constant of the samples.
    """

    values: np.ndarray

    def __post_init__(self):
        v = _as_values(self.values)
        if v.shape[0] < 2:
            raise PathError("need at least two grid samples")
        if frob(v[0]) > 1e-14:
            raise PathError("a Lipschitz perturbation must vanish at u = 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fn, n=64):
        u = np.linspace(0.0, 1.0, n + 1)
        return cls(np.array([as_sym(fn(x)) for x in u]))

    @property
    def n(self):
        return self.values.shape[0] - 1

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def grid(self):
        return np.linspace(0.0, 1.0, self.n + 1)

    @property
    def lipschitz(self):
        d = np.diff(self.values, axis=0)
        return float(np.max(np.sqrt(np.sum(d**2, axis=(1, 2)))) * self.n)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        s = np.clip(u * self.n, 0.0, self.n)
        i = np.minimum(np.floor(s).astype(int), self.n - 1)
        w = (s - i)[..., None, None]
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def cell_averages(self, edges):
        """Exact averages of the piecewise-linear path over ``[e_k, e_{k+1})``."""
        edges = np.asarray(edges, dtype=float)
        pts = np.union1d(edges, self.grid)
        mids = 0.5 * (pts[:-1] + pts[1:])
        piece = self(mids) * np.diff(pts)[:, None, None]  # midpoint rule is exact on linear pieces
        cell = np.searchsorted(edges, mids, side="right") - 1
        out = np.zeros((len(edges) - 1, self.dim, self.dim))
        np.add.at(out, cell, piece)
        return out / np.diff(edges)[:, None, None]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """A finitely supported probability measure on scalars or matrices."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if a.shape[:1] != w.shape or w.size == 0:
            raise PathError("atoms and weights must be non-empty and aligned")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 or not np.all(np.isfinite(a)):
            raise PathError("weights must be >= 0 and sum to 1; atoms finite")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    @property
    def scalar_atoms(self):
        return self.atoms.reshape(len(self.weights), -1)[:, 0] if self.atoms.ndim > 1 else self.atoms

    def to_dict(self):
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}


def merge_edges(*edge_lists):
    e = np.unique(np.concatenate([np.asarray(x, dtype=float) for x in edge_lists] + [[0.0, 1.0]]))
    keep = np.concatenate([[True], np.diff(e) > 1e-13])
    return e[keep]


def uniform_edges(n):
    return np.linspace(0.0, 1.0, int(n) + 1)


def path_edges(path):
    return path.edges


def step_part(path):
    return path.step if isinstance(path, RampStepPath) else path


def ramp_slope(path):
    return path.c if isinstance(path, RampStepPath) else 0.0


def path_eval(path, u):
    u = float(u)
    if not 0.0 <= u < 1.0:
        raise PathError("path argument must lie in [0, 1)")
    return path(u)


def to_step(path, edges):
    """Cell averages of ``path`` on ``edges`` as a StepPath (the L2 projection).

    ``edges`` must contain every breakpoint of the path's step part.
    """
    edges = np.asarray(edges, dtype=float)
    sp = step_part(path)
    missing = np.setdiff1d(sp.breakpoints, edges)
    if missing.size and np.min(np.abs(edges[:, None] - missing[None, :]), axis=0).max() > 1e-13:
        raise PathError("discretization edges must include the path's breakpoints")
    mids = 0.5 * (edges[:-1] + edges[1:])
    vals = sp(mids) + (ramp_slope(path) * mids)[:, None, None] * np.eye(sp.dim)
    return StepPath.from_edges(edges, vals)


def lp_distance(p1, p2, order=2):
    """``(int_0^1 |p1(u) - p2(u)|_F^order du)^(1/order)`` computed piecewise."""
    if order not in (1, 2):
        raise PathError("order must be 1 or 2")
    if p1.dim != p2.dim:
        raise PathError("dimension mismatch")
    edges = merge_edges(path_edges(p1), path_edges(p2))
    mids = 0.5 * (edges[:-1] + edges[1:])
    a = step_part(p1)(mids) - step_part(p2)(mids)
    dc = ramp_slope(p1) - ramp_slope(p2)
    lengths = np.diff(edges)
    if dc == 0.0:
        norms = np.sqrt(np.sum(a**2, axis=(1, 2)))
        return float(np.sum(lengths * norms**order) ** (1.0 / order))
    dim = p1.dim
    total = 0.0
    for k in range(len(lengths)):
        aa, tr = float(np.sum(a[k] ** 2)), float(np.trace(a[k]))
        lo, hi = edges[k], edges[k + 1]
        # |A + u dc Id|^2 = |A|^2 + 2 u dc tr(A) + u^2 dc^2 D
        if order == 2:
            total += (aa * (hi - lo) + dc * tr * (hi**2 - lo**2)
                      + dc**2 * dim * (hi**3 - lo**3) / 3.0)
        else:
            fn = lambda u: np.sqrt(max(aa + 2 * u * dc * tr + u * u * dc * dc * dim, 0.0))
            total += integrate.quad(fn, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return float(total ** (1.0 / order))


def inner_product(p1, p2):
    """``<p1, p2>_{L2}`` for step paths."""
    edges = merge_edges(path_edges(p1), path_edges(p2))
    mids = 0.5 * (edges[:-1] + edges[1:])
    return float(np.sum(np.diff(edges) * np.sum(p1(mids) * p2(mids), axis=(1, 2))))


def _pair_stats(qv, u):
    """min over pairs i<j of lambda_min(inc)/(u_j-u_i) and max Ellipt(inc)."""
    i, j = np.triu_indices(len(u), k=1)
    inc = qv[j] - qv[i]
    du = u[j] - u[i]
    if inc.shape[-1] == 1:
        lam = np.stack([inc[:, 0, 0], inc[:, 0, 0]], axis=1)
    else:
        lam = np.linalg.eigvalsh(inc)
    lmin, lmax = lam[:, 0], lam[:, -1]
    lower = lmin / du
    with np.errstate(divide="ignore", invalid="ignore"):
        ell = np.where(lmin > 0, lmax / lmin, np.inf)
    return i, j, lower, ell


def uparrow_certificate(path, refine=64):
    """Look for ``c > 0`` with ``q(v)-q(u) >= c (v-u) Id`` and ``Ellipt <= 1/c``.

    Returns ``{"ok": True, "c_low": c, ...}`` or ``{"ok": False, "witness": (u, v), ...}``.
    The constant is exact for ramp+step paths: within a segment increments are
    ``c (v-u) Id``; across jumps the worst ellipticity is attained as the
    interval shrinks onto the spanned breakpoints.
    """
    c = ramp_slope(path)
    sp = step_part(path)
    eye_tol = psd_tol(sp.values[0])
    if frob(sp.values[0]) > eye_tol:
        return {"ok": False, "reason": "q(0) != 0", "witness": (0.0, float(sp.edges[1]) / 2)}
    if c <= 0:
        lo, hi = sp.edges[0], sp.edges[1]
        return {"ok": False, "reason": "zero increment inside a constant segment",
                "witness": (float(lo + (hi - lo) / 4), float(lo + (hi - lo) / 2))}
    worst = 1.0
    z = sp.breakpoints
    for a in range(1, sp.K + 1):
        for b in range(a, sp.K + 1):
            jump = sp.values[b] - sp.values[a - 1]
            lam = np.linalg.eigvalsh(jump) if sp.dim > 1 else np.array([jump[0, 0]] * 2)
            span = z[b - 1] - z[a - 1]
            den = c * span + lam[0]
            if den <= 0:
                eta = 1e-9
                return {"ok": False, "reason": "singular jump has unbounded ellipticity",
                        "witness": (float(z[a - 1] - eta), float(z[b - 1]))}
            worst = max(worst, (c * span + lam[-1]) / den)
    c_low = min(c, 1.0 / worst)
    # cross-check on breakpoints plus a uniform refinement of every segment
    u = np.unique(np.concatenate([np.linspace(lo, hi, refine + 1)[:-1]
                                  for lo, hi in zip(sp.edges[:-1], sp.edges[1:])]))
    _, _, lower, ell = _pair_stats(path(u), u)
    verified = bool(np.all(lower >= c_low * (1 - 1e-9)) and np.all(ell <= (1 + 1e-9) / c_low))
    return {"ok": True, "c_low": float(c_low), "max_ellipt": float(worst),
            "grid_verified": verified, "n_pairs": int(lower.size)}


def perturb_and_check(path, kappa, eps):
    """Grid check that ``q + eps * kappa`` stays in the strictly increasing class.

    Returns ``{"member": bool, "c_new": float, "witness": (u, v) | None}``.
    """
    if kappa.dim != path.dim:
        raise PathError("dimension mismatch")
    z = step_part(path).breakpoints
    u = np.unique(np.concatenate([kappa.grid[:-1], z, np.maximum(z - 1e-9, 0.0)]))
    qv = path(u) + eps * kappa(u)
    if frob(qv[0]) > psd_tol(qv[0]):
        return {"member": False, "c_new": 0.0, "witness": (0.0, float(u[1]))}
    i, j, lower, ell = _pair_stats(qv, u)
    score = np.minimum(lower, 1.0 / ell)
    k = int(np.argmin(score))
    c_new = float(min(score[k], 1.0))
    member = c_new > 0
    return {"member": bool(member), "c_new": c_new if member else 0.0,
            "witness": None if member else (float(u[i[k]]), float(u[j[k]]))}


def compose_grad_xi(q, t, p, model):
    """The path ``u -> q(u) + t * grad xi(p(u))`` on the merged breakpoint grid."""
    if t < 0:
        raise PathError("t must be >= 0")
    if p.dim != q.dim or model.dim != q.dim:
        raise PathError("dimension mismatch")
    sp = step_part(q)
    edges = merge_edges(sp.edges, p.edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    vals = sp(mids) + t * model.gradient(p(mids))
    try:
        out = StepPath.from_edges(edges, vals)
    except PathError as exc:
        raise PathError(f"q + t grad xi(p) is not nondecreasing (model not certified?): {exc}") from exc
    return RampStepPath(q.c, out) if isinstance(q, RampStepPath) else out


def law_map(path):
    """Law of ``q(U)`` for ``U`` uniform on [0, 1)."""
    return DiscreteMeasure(path.values.copy(), path.lengths.copy())


def quantile_path(mu):
    """Inverse of :func:`law_map` for measures on the half-line (D = 1)."""
    x = np.asarray(mu.scalar_atoms, dtype=float)
    if np.any(x < 0):
        raise PathError("quantile_path needs atoms in [0, inf)")
    w = mu.weights
    keep = w > 0
    x, w = x[keep], w[keep]
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    ux, inv = np.unique(x, return_inverse=True)
    uw = np.zeros(len(ux))
    np.add.at(uw, inv, w)
    cum = np.cumsum(uw)[:-1]
    keep = np.concatenate([[True], cum < 1.0 - 1e-15])
    ux, cum = ux[keep], np.concatenate([cum, [1.0]])[keep][:-1]
    return StepPath(cum, ux)


def path_from_dict(d):
    step = StepPath(d.get("breakpoints", []), d["values"])
    kind = d.get("type", "step")
    if kind == "step":
        return step
    if kind == "ramp_step":
        return RampStepPath(float(d.get("ramp_c", 0.0)), step)
    raise PathError(f"unknown path type {kind!r}")
