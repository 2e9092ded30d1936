"""Convex calculus for the interaction function on the PSD cone.

Matrices are plain ``(D, D)`` float arrays; batched helpers accept any
leading shape ``(..., D, D)``. The pairing between matrices is the
entrywise (Frobenius) one, ``a . b = sum_ij a_ij b_ij``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._rng import stream

PSD_RTOL = 1e-10

KINDS = ("scalar_mixed_pspin", "entrywise_quadratic", "frobenius_square", "monomial_sum")


class ConeError(ValueError):
    """Raised for inputs outside the domain of a cone operation."""


def frob(a):
    return float(np.sqrt(np.sum(np.asarray(a) ** 2)))


def psd_tol(a):
    return PSD_RTOL * (1.0 + frob(a))


def as_sym(a, dim=None):
    """Validate and symmetrize a square matrix.

    Scalars are promoted to ``1 x 1`` matrices.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConeError(f"expected a square matrix, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ConeError(f"dimension mismatch: matrix is {a.shape[0]}x{a.shape[0]}, model has D={dim}")
    if not np.all(np.isfinite(a)):
        raise ConeError("matrix has non-finite entries")
    return 0.5 * (a + a.T)


def is_psd(a, tol=None):
    a = np.asarray(a, dtype=float)
    tol = psd_tol(a) if tol is None else tol
    return bool(np.linalg.eigvalsh(a)[0] >= -tol)


def check_psd(a, dim=None):
    a = as_sym(a, dim)
    if not is_psd(a):
        raise ConeError(f"matrix is not PSD (lambda_min={np.linalg.eigvalsh(a)[0]:.3e})")
    return a


def psd_project(s):
    """Nearest PSD matrix in Frobenius norm (eigenvalue clipping); batched."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] == 1:
        return np.maximum(s, 0.0)
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    lam, vec = np.linalg.eigh(s)
    lam = np.maximum(lam, 0.0)
    return (vec * lam[..., None, :]) @ np.swapaxes(vec, -1, -2)


def psd_sqrt(a):
    """Symmetric square root of a PSD matrix; negative round-off clipped."""
    lam, vec = np.linalg.eigh(np.asarray(a, dtype=float))
    return (vec * np.sqrt(np.maximum(lam, 0.0))) @ vec.T


def ellipt(a):
    """Ratio of the extreme eigenvalues of a positive definite matrix."""
    a = as_sym(a)
    lam = np.linalg.eigvalsh(a)
    if lam[0] <= psd_tol(a):
        raise ConeError(f"matrix is not positive definite (lambda_min={lam[0]:.3e})")
    return float(lam[-1] / lam[0])


@dataclass(frozen=True, eq=False)
class XiModel:
    """A convex interaction function on ``D x D`` matrices.

    ``kind`` selects the closed form; ``coefficients`` holds its data:

    * ``scalar_mixed_pspin``: ``{p: beta_p^2}``, ``xi(x) = sum beta_p^2 x^p`` (D = 1)
    * ``entrywise_quadratic``: ``Delta^2`` matrix, ``xi(a) = sum Delta^2_ij a_ij^2``
    * ``frobenius_square``: ``c``, ``xi(a) = c |a|_F^2``
    * ``monomial_sum``: ``[(coef, [(i, j), ...]), ...]``, ``xi(a) = sum coef prod a_ij``
    """

    kind: str
    dim: int
    coefficients: object
    certification: dict = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConeError(f"unknown model kind {self.kind!r}")
        if self.kind == "scalar_mixed_pspin":
            if self.dim != 1:
                raise ConeError("scalar_mixed_pspin requires D = 1")
            coeffs = {int(p): float(c) for p, c in dict(self.coefficients).items()}
            if any(p < 1 for p in coeffs) or any(c < 0 for c in coeffs.values()):
                raise ConeError("p-spin coefficients need p >= 1 and beta_p^2 >= 0")
            object.__setattr__(self, "coefficients", coeffs)
        elif self.kind == "entrywise_quadratic":
            d2 = np.array(self.coefficients, dtype=float).reshape(self.dim, self.dim)
            if np.any(d2 < 0) or not np.allclose(d2, d2.T):
                raise ConeError("Delta^2 must be symmetric with nonnegative entries")
            # Schur product theorem: PSD Delta^2 keeps grad xi monotone on the cone
            if np.linalg.eigvalsh(d2)[0] < -psd_tol(d2):
                raise ConeError("Delta^2 must be PSD for xi to be nondecreasing on the cone")
            d2.setflags(write=False)
            object.__setattr__(self, "coefficients", d2)
        elif self.kind == "frobenius_square":
            c = float(self.coefficients)
            if c <= 0:
                raise ConeError("frobenius_square needs c > 0")
            object.__setattr__(self, "coefficients", c)
        else:
            terms = []
            for coef, idx in self.coefficients:
                idx = tuple((int(i), int(j)) for i, j in idx)
                if not idx or any(not (0 <= i < self.dim and 0 <= j < self.dim) for i, j in idx):
                    raise ConeError(f"bad monomial index {idx}")
                terms.append((float(coef), idx))
            object.__setattr__(self, "coefficients", tuple(terms))

    # -- constructors -----------------------------------------------------
    @classmethod
    def sk(cls, beta):
        return cls("scalar_mixed_pspin", 1, {2: beta**2})

    @classmethod
    def pspin(cls, coeffs):
        return cls("scalar_mixed_pspin", 1, coeffs)

    @classmethod
    def entrywise(cls, delta2):
        delta2 = np.asarray(delta2, dtype=float)
        return cls("entrywise_quadratic", delta2.shape[0], delta2)

    @classmethod
    def frobenius(cls, c, dim):
        return cls("frobenius_square", dim, c)

    @classmethod
    def monomials(cls, terms, dim):
        return cls("monomial_sum", dim, terms)

    # -- structural flags -------------------------------------------------
    @property
    def strictly_convex(self):
        if self.kind == "scalar_mixed_pspin":
            return any(p >= 2 and c > 0 for p, c in self.coefficients.items())
        if self.kind == "entrywise_quadratic":
            return bool(np.all(self.coefficients > 0))
        if self.kind == "frobenius_square":
            return True
        cert = self.certification or {}
        return bool(cert.get("convex") and cert.get("strict"))

    @property
    def superlinear(self):
        if self.kind == "scalar_mixed_pspin":
            return any(p >= 2 and c > 0 for p, c in self.coefficients.items())
        if self.kind == "entrywise_quadratic":
            return bool(np.all(np.diag(self.coefficients) > 0))
        if self.kind == "frobenius_square":
            return True
        cert = self.certification or {}
        return bool(cert.get("superlinear"))

    @property
    def certified(self):
        if self.kind != "monomial_sum":
            return True
        cert = self.certification or {}
        return bool(cert.get("passed"))

    # -- batched closed forms ---------------------------------------------
    def value(self, a):
        """xi on a batch ``(..., D, D)``."""
        a = np.asarray(a, dtype=float)
        if self.kind == "scalar_mixed_pspin":
            x = a[..., 0, 0]
            return sum(c * x**p for p, c in self.coefficients.items())
        if self.kind == "entrywise_quadratic":
            return np.sum(self.coefficients * a**2, axis=(-1, -2))
        if self.kind == "frobenius_square":
            return self.coefficients * np.sum(a**2, axis=(-1, -2))
        out = np.zeros(a.shape[:-2])
        for coef, idx in self.coefficients:
            term = np.full(a.shape[:-2], coef)
            for i, j in idx:
                term = term * a[..., i, j]
            out = out + term
        return out

    def gradient(self, a):
        """Entrywise gradient, symmetrized; batched."""
        a = np.asarray(a, dtype=float)
        if self.kind == "scalar_mixed_pspin":
            x = a[..., 0, 0]
            g = sum(p * c * x ** (p - 1) for p, c in self.coefficients.items())
            return np.asarray(g, dtype=float)[..., None, None] * np.ones((1, 1))
        if self.kind == "entrywise_quadratic":
            return 2.0 * self.coefficients * a
        if self.kind == "frobenius_square":
            return 2.0 * self.coefficients * a
        g = np.zeros(a.shape)
        for coef, idx in self.coefficients:
            for pos, (i, j) in enumerate(idx):
                term = np.full(a.shape[:-2], coef)
                for other, (k, l) in enumerate(idx):
                    if other != pos:
                        term = term * a[..., k, l]
                g[..., i, j] += term
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    def sup_unit_ball(self):
        """An upper bound on sup over |a|_F <= 1 of |xi(a)| (exact for the catalogue)."""
        if self.kind == "scalar_mixed_pspin":
            return float(sum(self.coefficients.values()))
        if self.kind == "entrywise_quadratic":
            return float(np.max(self.coefficients))
        if self.kind == "frobenius_square":
            return float(self.coefficients)
        return float(sum(abs(c) for c, _ in self.coefficients))

    def to_dict(self):
        if self.kind == "scalar_mixed_pspin":
            coeffs = {str(p): c for p, c in sorted(self.coefficients.items())}
        elif self.kind == "entrywise_quadratic":
            coeffs = self.coefficients.tolist()
        elif self.kind == "frobenius_square":
            coeffs = self.coefficients
        else:
            coeffs = [[c, [list(ij) for ij in idx]] for c, idx in self.coefficients]
        return {"kind": self.kind, "dim": self.dim, "coefficients": coeffs}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["dim"]), d["coefficients"])


def eval_xi(model, a):
    return float(model.value(as_sym(a, model.dim)))


def grad_xi(model, a):
    return model.gradient(as_sym(a, model.dim))


def theta(model, a):
    """x . grad xi(x) - xi(x) at a PSD matrix."""
    a = check_psd(a, model.dim)
    return float(np.sum(a * model.gradient(a)) - model.value(a))


@dataclass
class ConjugateResult:
    value: float
    argmax: np.ndarray
    iterations: int
    kkt_residual: float
    converged: bool = True
    radius: float = 0.0


def _objective(model, y, b):
    return np.sum(y * b, axis=(-1, -2)) - model.value(b)


def _random_psd(rng, n, dim, radius):
    g = rng.standard_normal((n, dim, dim))
    b = g @ np.swapaxes(g, -1, -2)
    norms = np.sqrt(np.sum(b**2, axis=(-1, -2)))[:, None, None]
    scale = radius * rng.uniform(0.0, 1.0, size=(n, 1, 1))
    return b / np.maximum(norms, 1e-300) * scale


def search_radius(model, y, rng=None, n_rays=64, max_doublings=40):
    """Smallest R in {1, 2, 4, ...} with y.b - xi(b) < 0 on sampled cone rays of norm R."""
    rng = np.random.default_rng(0) if rng is None else rng
    dirs = _random_psd(rng, n_rays, model.dim, 1.0)
    dirs /= np.sqrt(np.sum(dirs**2, axis=(-1, -2)))[:, None, None]
    dirs = np.concatenate([dirs, psd_project(y)[None] / max(frob(psd_project(y)), 1e-300),
                           np.eye(model.dim)[None] / np.sqrt(model.dim)])
    dirs = dirs[np.sqrt(np.sum(dirs**2, axis=(-1, -2))) > 0.5]
    r = 1.0
    for _ in range(max_doublings):
        if np.all(_objective(model, y, r * dirs) < 0):
            return r
        r *= 2.0
    raise ConeError("no finite search radius found; model does not look superlinear")


def conjugate_xi(model, y, tol=1e-10, n_starts=16, seed=0, max_iter=20000, x0=None):
    """sup over b in the PSD cone of y.b - xi(b), by projected gradient ascent.

    Armijo backtracking (sufficient-increase 0.5, shrink 0.8) runs on a batch
    of starts at once; the best start is returned. ``x0`` adds a warm start.
    """
    y = as_sym(y, model.dim)
    if not model.superlinear:
        raise ConeError("conjugate requires a superlinear model (unbounded domain otherwise)")
    if not model.certified:
        raise ConeError("monomial_sum model must pass check_model before use")
    rng = stream(seed, "conjugate")
    radius = search_radius(model, y, rng)
    if x0 is not None and n_starts <= 1:
        b = psd_project(as_sym(x0, model.dim))[None]
    else:
        starts = [np.zeros_like(y), 0.5 * psd_project(y)]
        if x0 is not None:
            starts.append(psd_project(as_sym(x0, model.dim)))
        n_rand = max(n_starts - len(starts), 0)
        b = np.concatenate([np.array(starts), _random_psd(rng, n_rand, model.dim, radius)])
    step = np.ones(len(b))
    f = _objective(model, y, b)
    g = y - model.gradient(b)
    res = np.full(len(b), np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        res = np.sqrt(np.sum((b - psd_project(b + g)) ** 2, axis=(-1, -2)))
        active = res > tol
        if not np.any(active):
            break
        slack = 1e-15 * (1.0 + np.abs(f))
        for _ in range(80):
            trial = psd_project(b + step[:, None, None] * g)
            ft = _objective(model, y, trial)
            gain = np.sum(g * (trial - b), axis=(-1, -2))
            ok = (ft >= f + 0.5 * gain - slack) | ~active
            if np.all(ok):
                break
            step = np.where(ok, step, 0.8 * step)
        moved = active & ok
        g_new = y - model.gradient(trial)
        # Barzilai-Borwein step for the next iteration
        s_ = trial - b
        curv = -np.sum(s_ * (g_new - g), axis=(-1, -2))
        bb = np.sum(s_ * s_, axis=(-1, -2)) / np.where(curv > 0, curv, 1.0)
        bb = np.where(curv > 0, np.clip(bb, 1e-10, 1e10), step / 0.8)
        b = np.where(moved[:, None, None], trial, b)
        f = np.where(moved, ft, f)
        g = np.where(moved[:, None, None], g_new, g)
        step = np.where(moved, bb, step)
    best = int(np.argmax(f - 1e-14 * np.arange(len(f))))
    return ConjugateResult(
        value=float(f[best]),
        argmax=b[best],
        iterations=it,
        kkt_residual=float(res[best]),
        converged=bool(res[best] <= tol),
        radius=radius,
    )


def grad_conjugate(model, y, tol=1e-10, **kw):
    """The maximizer of y.b - xi(b) over the cone, i.e. grad xi*(y)."""
    if not model.strictly_convex:
        raise ConeError("grad_conjugate needs a strictly convex model")
    return conjugate_xi(model, y, tol=tol, **kw).argmax


def _cone_pairs(rng, n, dim, scale=1.0):
    b = _random_psd(rng, n, dim, scale)
    a = b + _random_psd(rng, n, dim, scale)
    return a, b


def check_model(model, n_samples=1000, seed=0):
    """Sampled certification of monotonicity, cone convexity and superlinearity.

    Returns a report dict with per-check pass flags and a witness for the
    first failure of each check. The model's ``certification`` is updated.
    """
    rng = stream(seed, "check_model")
    dim = model.dim
    report = {"n_samples": int(n_samples), "seed": int(seed)}

    a, b = _cone_pairs(rng, n_samples, dim, 2.0)
    fa, fb = model.value(a), model.value(b)
    tol = 1e-10 * (1 + np.abs(fa) + np.abs(fb))
    bad = np.nonzero(fa < fb - tol)[0]
    report["monotone"] = bad.size == 0
    if bad.size:
        i = bad[0]
        report["monotone_witness"] = {"a": a[i].tolist(), "b": b[i].tolist()}
    dg = model.gradient(a) - model.gradient(b)
    lam = np.linalg.eigvalsh(dg)[..., 0]
    bad = np.nonzero(lam < -1e-9 * (1 + np.sqrt(np.sum(dg**2, axis=(-1, -2)))))[0]
    report["grad_monotone"] = bad.size == 0
    if bad.size:
        i = bad[0]
        report["grad_monotone_witness"] = {"a": a[i].tolist(), "b": b[i].tolist()}

    x = _random_psd(rng, n_samples, dim, 2.0)
    z = _random_psd(rng, n_samples, dim, 2.0)
    mid = 0.5 * (x + z)
    gap = 0.5 * (model.value(x) + model.value(z)) - model.value(mid)
    scale = 1e-10 * (1 + np.abs(model.value(x)) + np.abs(model.value(z)))
    bad = np.nonzero(gap < -scale)[0]
    report["convex"] = bad.size == 0
    if bad.size:
        i = bad[0]
        report["convex_witness"] = {"x": x[i].tolist(), "y": z[i].tolist(), "gap": float(gap[i])}
    dist2 = np.sum((x - z) ** 2, axis=(-1, -2))
    margin = gap / np.maximum(dist2, 1e-300)
    report["strict_margin"] = float(np.min(margin))
    report["strict"] = bool(report["convex"] and np.min(margin) > 1e-8)

    rays = _random_psd(rng, 64, dim, 1.0)
    rays /= np.sqrt(np.sum(rays**2, axis=(-1, -2)))[:, None, None]
    growth = np.array([model.value(r * rays) / r for r in (10.0, 100.0, 1000.0)])
    ok = np.all(np.diff(growth, axis=0) > 0, axis=0) & (growth[-1] >= 2 * np.abs(growth[0])) & (growth[-1] > 0)
    report["superlinear"] = bool(np.all(ok))
    if not report["superlinear"]:
        i = int(np.nonzero(~ok)[0][0])
        report["superlinear_witness"] = {"direction": rays[i].tolist(), "ratios": growth[:, i].tolist()}

    report["passed"] = bool(report["monotone"] and report["grad_monotone"] and report["convex"]
                            and report["superlinear"])
    object.__setattr__(model, "certification", report)
    return report
