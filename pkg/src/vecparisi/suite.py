"""The acceptance battery: thirteen seeded checks with pass/fail verdicts.

Each check returns a JSON-ready dict with a ``passed`` flag. Reports carry
no timings so that reruns with the same seed are byte-identical; wall time
is only printed.
"""

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import stream
from .cascade import CascadeSpec, SpinLaw, default_branching, mc_free_energy, psi_grid, psi_mc
from .cone import XiModel, check_model, conjugate_xi, frob, grad_conjugate, psd_project, theta
from .paths import (
    DiscreteMeasure,
    LipschitzPath,
    RampStepPath,
    StepPath,
    law_map,
    lp_distance,
    quantile_path,
)
from .report import build_report, canonical, write_report
from .transport import (
    concavity_probe,
    kantorovich_dual_gap,
    totally_ordered_support,
    transport_cost_lp,
    transport_cost_monotone,
    w2,
)
from .variational import (
    critical_point_solve,
    gateaux_fd,
    hopflax_solve,
    j_functional,
    parisi_solve,
    pde_residual,
    uniqueness_probe,
)

GROUPS = {
    "duality": (1, 2, 3),
    "cascade": (4, 5, 6),
    "variational": (7, 8, 9, 10, 11),
    "transport": (12,),
    "reproducibility": (13,),
}


def _seed(seed, *names):
    return int(stream(seed, "suite", *names).integers(2**31 - 1))


def _random_psd(rng, dim, scale=1.0):
    g = rng.standard_normal((dim, dim))
    return scale * (g @ g.T) / dim


# ---------------------------------------------------------------------------
# catalogue and instances


def catalogue():
    mono = XiModel.monomials([(1.3, [(0, 0), (0, 0)]), (1.3, [(1, 1), (1, 1)]), (1.0, [(0, 1), (0, 1)]),
                              (1.0, [(1, 0), (1, 0)]), (0.6, [(0, 0), (1, 1)])], 2)
    check_model(mono, 500, 0)
    return {
        "sk": XiModel.sk(1.0),
        "mixed_pspin": XiModel.pspin({2: 1.0, 3: 0.5, 4: 0.25}),
        "entrywise_d2": XiModel.entrywise([[1.0, 0.5], [0.5, 1.0]]),
        "entrywise_d3": XiModel.entrywise(0.5 * np.ones((3, 3)) + 0.5 * np.eye(3)),
        "frobenius_d2": XiModel.frobenius(0.5, 2),
        "frobenius_d3": XiModel.frobenius(1.0, 3),
        "monomial_d2": mono,
    }


def _step(z, vals):
    return StepPath(np.array(z, dtype=float), np.array([np.atleast_2d(v) for v in vals], dtype=float))


def psi_instances():
    """Ten step paths with top level <= 0.5 (cascade truncation bias stays below the MC noise)."""
    i2 = np.eye(2)
    a = np.array([[0.6, 0.2], [0.2, 0.5]])
    b = np.array([[0.8, 0.1], [0.1, 0.6]])
    mixed = SpinLaw(np.array([[0.6, 0.0], [-0.3, 0.5], [0.0, -0.9], [0.2, 0.2]]), np.array([0.3, 0.3, 0.2, 0.2]))
    d1 = SpinLaw.ising(1)
    return [
        (d1, _step([0.4], [[[0.1]], [[0.7]]])),
        (d1, _step([0.5], [[[0.3]], [[1.2]]])),
        (d1, _step([0.2, 0.45], [[[0.05]], [[0.4]], [[1.0]]])),
        (d1, _step([0.3, 0.5], [[[0.0]], [[0.5]], [[0.9]]])),
        (d1, _step([0.15, 0.3, 0.5], [[[0.1]], [[0.3]], [[0.6]], [[1.1]]])),
        (d1, _step([0.1, 0.25, 0.4], [[[0.0]], [[0.2]], [[0.5]], [[0.8]]])),
        (SpinLaw.ising(2), _step([0.4], [0.1 * i2, a])),
        (SpinLaw.vertices(2), _step([0.25, 0.5], [0 * i2, 0.3 * i2, b])),
        (SpinLaw.ising(2), _step([0.3, 0.45], [0.05 * i2, 0.5 * a, a + 0.2 * i2])),
        (mixed, _step([0.1, 0.3, 0.5], [0 * i2, 0.2 * i2, a, a + b])),
    ]


def variational_instances():
    """(label, t, q, model, P1, K) for the Parisi / Hopf-Lax comparison."""
    i2 = np.eye(2)
    return [
        ("d1_k2_t0.5", 0.5, RampStepPath(0.1, _step([0.5], [[[0.0]], [[0.3]]])), XiModel.sk(1.0), SpinLaw.ising(1), 2),
        ("d1_k3_t1", 1.0, RampStepPath.ramp(0.2), XiModel.pspin({2: 0.6, 3: 0.4}), SpinLaw.ising(1), 3),
        ("d1_k2_t1", 1.0, _step([0.5], [[[0.1]], [[0.4]]]), XiModel.sk(1.2), SpinLaw.ising(1), 2),
        ("d2_k2_t0.5", 0.5, RampStepPath.ramp(0.2, 2), XiModel.entrywise([[1.0, 0.5], [0.5, 1.0]]),
         SpinLaw.ising(2), 2),
        ("d2_k3_t1", 1.0, RampStepPath(0.1, _step([0.5], [0 * i2, [[0.3, 0.1], [0.1, 0.2]]])),
         XiModel.frobenius(0.5, 2), SpinLaw.ising(2), 3),
        ("d2_k2_t1", 1.0, _step([0.4], [0.05 * i2, [[0.4, 0.1], [0.1, 0.3]]]),
         XiModel.entrywise([[1.0, 0.3], [0.3, 0.8]]), SpinLaw.vertices(2), 2),
    ]


def certified_instances():
    """Strictly increasing paths (ramp part c in {0.1, 0.2}) for the uniqueness-based checks."""
    return [
        ("ramp0.1", 1.0, RampStepPath.ramp(0.1), XiModel.sk(1.0), SpinLaw.ising(1), 6),
        ("ramp0.2_step", 0.5, RampStepPath(0.2, _step([0.5], [[[0.0]], [[0.2]]])),
         XiModel.pspin({2: 1.0, 3: 0.5}), SpinLaw.ising(1), 6),
    ]


# ---------------------------------------------------------------------------
# criteria


def _psd_inputs(model, seed, n=100):
    rng = stream(seed, "inputs", model.kind, model.dim)
    return [_random_psd(rng, model.dim, rng.uniform(0.1, 1.5)) for _ in range(n)]


def c1_duality(seed):
    rows, ok = {}, True
    for name, model in catalogue().items():
        worst = 0.0
        for i, x in enumerate(_psd_inputs(model, seed)):
            th = theta(model, x)
            cj = conjugate_xi(model, model.gradient(x), seed=i).value
            worst = max(worst, abs(th - cj) / (1.0 + abs(th)))
        rows[name] = worst
        ok &= worst <= 1e-6
    return {"passed": bool(ok), "worst_relative_error": rows, "tolerance": 1e-6}


def c2_inversion(seed):
    rows, ok = {}, True
    for name, model in catalogue().items():
        if not model.strictly_convex:
            continue
        worst = 0.0
        for i, x in enumerate(_psd_inputs(model, seed)):
            b = grad_conjugate(model, model.gradient(x), seed=i)
            worst = max(worst, frob(b - x) / (1.0 + frob(x)))
        rows[name] = worst
        ok &= worst <= 1e-5
    return {"passed": bool(ok), "worst_relative_error": rows, "tolerance": 1e-5}


def c3_closed_forms(seed):
    rng = stream(seed, "closed-forms")
    sq = XiModel.sk(1.0)
    err_sq = 0.0
    for y in rng.uniform(-3.0, 3.0, 100):
        exact = max(y, 0.0) ** 2 / 4
        err_sq = max(err_sq, abs(conjugate_xi(sq, np.array([[y]])).value - exact))
    err_fr = 0.0
    for i in range(100):
        dim = 2 + i % 2
        fr = XiModel.frobenius(0.5, dim)
        g = rng.standard_normal((dim, dim))
        y = g + g.T
        exact = 0.5 * frob(psd_project(y)) ** 2
        err_fr = max(err_fr, abs(conjugate_xi(fr, y).value - exact))
    return {"passed": bool(err_sq <= 1e-8 and err_fr <= 1e-8), "square_max_error": err_sq,
            "frobenius_max_error": err_fr, "tolerance": 1e-8}


def c4_psi_consistency(seed, n_samples=100_000):
    rows, ok = [], True
    for i, (P1, q) in enumerate(psi_instances()):
        z = q.breakpoints
        m = (200,) if len(z) == 1 else default_branching(z)
        spec = CascadeSpec(tuple(z), m, _seed(seed, "psi", i))
        grid = psi_grid(q, P1)
        mc = psi_mc(q, P1, spec, n_samples)
        zscore = (mc.mean - grid) / mc.stderr
        rows.append({"instance": i, "dim": q.dim, "levels": list(z), "M": list(m), "grid": grid,
                     "mc": mc.mean, "stderr": mc.stderr, "z": zscore})
        ok &= abs(zscore) <= 3.0
    d1, d2 = StepPath.constant(np.zeros((1, 1))), StepPath.constant(np.zeros((2, 2)))
    zero = [psi_grid(d1, SpinLaw.ising(1)), psi_grid(d2, SpinLaw.ising(2)),
            psi_mc(d1, SpinLaw.ising(1), CascadeSpec((), (), 0), 10).mean]
    zero_ok = all(v == 0.0 for v in zero)
    return {"passed": bool(ok and zero_ok), "instances": rows, "psi_of_zero": zero, "n_samples": n_samples}


def c5_n_independence(seed, n_samples=100_000):
    cases = [
        (XiModel.sk(1.0), SpinLaw.ising(1), _step([0.4], [[[0.2]], [[0.9]]])),
        (XiModel.entrywise([[1.0, 0.5], [0.5, 1.0]]), SpinLaw.ising(2),
         _step([0.35], [0.1 * np.eye(2), [[0.6, 0.2], [0.2, 0.5]]])),
    ]
    rows, ok = [], True
    for c, (model, P1, q) in enumerate(cases):
        est = {}
        for n in (1, 2, 3):
            spec = CascadeSpec(tuple(q.breakpoints), (200,), _seed(seed, "n-indep", c, n))
            est[n] = mc_free_energy(n, 0.0, q, model, P1, spec, n_samples)
        for a, b in ((1, 2), (1, 3), (2, 3)):
            z = (est[a].mean - est[b].mean) / np.hypot(est[a].stderr, est[b].stderr)
            rows.append({"case": c, "pair": [a, b], "z": z})
            ok &= abs(z) <= 3.0
        rows.append({"case": c, "estimates": {str(n): e.to_dict() for n, e in est.items()}})
    return {"passed": bool(ok), "rows": rows}


def c6_lipschitz(seed, n_pairs=20, n_samples=20_000, n=2):
    rng = stream(seed, "lipschitz-pairs")
    zeta = 0.4
    rows, ok = [], True
    for k in range(n_pairs):
        dim = 1 if k < n_pairs // 2 else 2
        model = XiModel.sk(1.0) if dim == 1 else XiModel.entrywise([[1.0, 0.5], [0.5, 1.0]])
        P1 = SpinLaw.ising(dim)
        draws = []
        for side in range(2):
            q0 = _random_psd(rng, dim, 0.3)
            q1 = q0 + _random_psd(rng, dim, 0.6)
            draws.append((float(rng.uniform(0.0, 1.0)), _step([zeta], [q0, q1])))
        est = []
        for side, (t, q) in enumerate(draws):
            spec = CascadeSpec((zeta,), (200,), _seed(seed, "lipschitz", k, side))
            est.append(mc_free_energy(n, t, q, model, P1, spec, n_samples))
        (t1, qa), (t2, qb) = draws
        bound = lp_distance(qa, qb, 1) + abs(t1 - t2) * model.sup_unit_ball()
        diff = abs(est[0].mean - est[1].mean)
        slack = 4.0 * np.hypot(est[0].stderr, est[1].stderr)
        rows.append({"pair": k, "dim": dim, "diff": diff, "bound": bound, "slack": slack,
                     "ratio": diff / bound if bound > 0 else float("inf")})
        ok &= diff <= bound + slack
    return {"passed": bool(ok), "pairs": rows, "N": n, "n_samples": n_samples}


def c7_parisi_hopflax(seed, threads=1):
    rows, ok = [], True
    for label, t, q, model, P1, K in variational_instances():
        starts = 4 if q.dim == 1 else 2
        iters = 500 if q.dim == 1 else 80
        s = _seed(seed, "parisi-hl", label)
        par = parisi_solve(t, q, model, P1, K, starts, seed=s, threads=threads, max_iter=iters)
        hl = hopflax_solve(t, q, model, P1, K, starts, seed=s, threads=threads, max_iter=iters)
        rel = abs(par.value - hl.value) / (1.0 + abs(par.value))
        rows.append({"instance": label, "parisi": par.value, "hopf_lax": hl.value, "relative_gap": rel,
                     "parisi_status": [x["status"] for x in par.starts],
                     "hopf_lax_status": [x["status"] for x in hl.starts]})
        ok &= rel <= 5e-3
    return {"passed": bool(ok), "instances": rows, "tolerance": 5e-3}


def c8_uniqueness(seed, threads=1):
    rows, ok = [], True
    for label, t, q, model, P1, K in certified_instances():
        r = uniqueness_probe(t, q, model, P1, K, 20, seed=_seed(seed, "uniqueness", label), threads=threads)
        rows.append({"instance": label, "assertion": r["assertion"], "cluster_diameter": r["cluster_diameter"],
                     "threshold": r["threshold"], "value_spread": r["value_spread"],
                     "cluster_size": r["cluster_size"], "value": r["value"]})
        ok &= r["assertion"] == "passed"
    zero = uniqueness_probe(1.0, StepPath.constant(np.zeros((1, 1))), XiModel.sk(1.0), SpinLaw.ising(1), 4, 4,
                            seed=_seed(seed, "uniqueness", "zero"), threads=threads)
    rows.append({"instance": "q=0", "assertion": zero["assertion"], "value": zero["value"],
                 "cluster_diameter": zero["cluster_diameter"]})
    ok &= zero["assertion"] == "skipped (q not in Q_uparrow)"
    return {"passed": bool(ok), "instances": rows}


def _directions(seed, dim, n):
    """Random smooth directions with Lipschitz constant 1 and value 0 at u = 0."""
    out = []
    for d in range(n):
        rng = stream(seed, "gateaux-direction", d)
        a, b = rng.standard_normal((2, dim, dim))
        a, b = a + a.T, b + b.T
        raw = LipschitzPath.from_function(lambda u: u * a + np.sin(np.pi * u) * b, 64)
        out.append(LipschitzPath(raw.values / raw.lipschitz))
    return out


def c9_envelope(seed, n_directions=5):
    rows, ok = [], True
    label, t, q, model, P1, K = certified_instances()[0]
    p_star = parisi_solve(t, q, model, P1, K, 4, seed=_seed(seed, "envelope")).control
    for d, kappa in enumerate(_directions(_seed(seed, "envelope-dir"), q.dim, n_directions)):
        r = gateaux_fd(t, q, kappa, model, P1, K, p_star=p_star)
        err = abs(r["estimate"] - r["inner_product"])
        tol = 1e-2 * (1.0 + abs(r["inner_product"]))
        rows.append({"direction": d, "estimate": r["estimate"], "inner_product": r["inner_product"],
                     "error": err, "tolerance": tol, "table": r["table"]})
        ok &= err <= tol
    return {"passed": bool(ok), "instance": label, "directions": rows}


def c10_hamilton_jacobi(seed):
    rows, ok = [], True
    for label, t, q, model, P1, K in certified_instances():
        r = pde_residual(t, q, model, P1, 0.05, K, seed=_seed(seed, "hj", label))
        tol = 1e-2 * (1.0 + abs(r["dfdt"]))
        passed = r["residual"] <= tol and r["p_monotone"] and r["p_bounded"]
        rows.append({"instance": label, "residual": r["residual"], "tolerance": tol, "dfdt": r["dfdt"],
                     "xi_integral": r["xi_integral"], "p_monotone": r["p_monotone"], "p_bounded": r["p_bounded"]})
        ok &= passed
    return {"passed": bool(ok), "instances": rows}


def c11_critical_point(seed):
    rows, ok = [], True
    for label, t, q, model, P1, K in certified_instances():
        par = parisi_solve(t, q, model, P1, K, 4, seed=_seed(seed, "critical", label))
        cp = critical_point_solve(t, q, model, P1, K)
        j = j_functional(t, q, cp.qprime, cp.p.to_path(), model, P1)
        gap = abs(j - par.value)
        res_ok = cp.residuals["q_relation"] <= 1e-6 and cp.residuals["p_relation"] <= 1e-6
        passed = res_ok and gap <= 1e-3 * (1.0 + abs(par.value))
        rows.append({"instance": label, "residuals": cp.residuals, "iterations": cp.iterations,
                     "j_value": j, "parisi_value": par.value, "gap": gap})
        ok &= passed
    return {"passed": bool(ok), "instances": rows}


def _random_measure(rng, size):
    return DiscreteMeasure(rng.uniform(0.0, 1.0, size), rng.dirichlet(np.ones(size)))


def c12_transport(seed, n_instances=100):
    rng = stream(seed, "transport")
    models = [XiModel.sk(1.0), XiModel.pspin({2: 0.5, 3: 0.5})]
    worst_cost = worst_gap = worst_w2 = 0.0
    for k in range(n_instances):
        mu = _random_measure(rng, int(rng.integers(1, 7)))
        nu = _random_measure(rng, int(rng.integers(1, 7)))
        t = float(rng.uniform(0.2, 2.0))
        model = models[k % 2]
        mono = transport_cost_monotone(t, mu, nu, model)
        lp, _ = transport_cost_lp(t, mu, nu, model)
        worst_cost = max(worst_cost, abs(mono - lp))
        worst_gap = max(worst_gap, abs(kantorovich_dual_gap(t, mu, nu, model)))
        worst_w2 = max(worst_w2, abs(w2(mu, nu) - lp_distance(quantile_path(mu), quantile_path(nu), 2)))
    P1 = SpinLaw.ising(1)
    conc = []
    for k in range(5):
        mu0, mu1 = _random_measure(rng, 3), _random_measure(rng, 3)
        r = concavity_probe(mu0, mu1, [0.1, 0.25, 0.75, 0.9], P1)
        conc.append({"holds": r["holds"], "worst_margin": r["worst_margin"], "midpoint_margin": r["midpoint_margin"]})
    same = _random_measure(rng, 4)
    eq = concavity_probe(same, same, [0.25, 0.75], P1)
    diag = DiscreteMeasure(np.stack([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]), np.array([0.5, 0.5]))
    ordered, witness = totally_ordered_support(diag)
    image = law_map(_step([0.3, 0.7], [np.zeros((2, 2)), [[0.4, 0.1], [0.1, 0.3]], [[1.0, 0.2], [0.2, 0.9]]]))
    image_ok, _ = totally_ordered_support(image)
    passed = (worst_cost <= 1e-8 and worst_gap <= 1e-8 and worst_w2 <= 1e-10
              and all(c["holds"] and c["midpoint_margin"] > 0 for c in conc)
              and abs(eq["worst_margin"]) <= 1e-8 and not ordered and image_ok)
    return {"passed": bool(passed), "monotone_vs_lp": worst_cost, "dual_gap": worst_gap, "w2_isometry": worst_w2,
            "concavity": conc, "equal_measures_margin": eq["worst_margin"],
            "diag_mixture_ordered": ordered, "diag_witness": [np.asarray(w).tolist() for w in witness] if witness else None,
            "law_map_image_ordered": image_ok}


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    func: object
    budget_s: float


CRITERIA = [
    Criterion(1, "duality identity", c1_duality, 10),
    Criterion(2, "conjugate inversion", c2_inversion, 10),
    Criterion(3, "closed-form conjugates", c3_closed_forms, 10),
    Criterion(4, "psi grid vs Monte Carlo", c4_psi_consistency, 300),
    Criterion(5, "N-independence at t=0", c5_n_independence, 120),
    Criterion(6, "Lipschitz bound", c6_lipschitz, 300),
    Criterion(7, "Parisi = Hopf-Lax", c7_parisi_hopflax, 1800),
    Criterion(8, "uniqueness probe", c8_uniqueness, 1800),
    Criterion(9, "envelope identity", c9_envelope, 1200),
    Criterion(10, "Hamilton-Jacobi residual", c10_hamilton_jacobi, 1200),
    Criterion(11, "critical point", c11_critical_point, 900),
    Criterion(12, "transport suite", c12_transport, 120),
]
REPRO_BUDGET_S = 9000


def select(filter_name=None):
    """Criterion numbers selected by a group name, a number, or a comma list of either."""
    if not filter_name:
        return list(range(1, 14))
    out = []
    for part in str(filter_name).split(","):
        part = part.strip().lower()
        if part in GROUPS:
            out.extend(GROUPS[part])
        elif part.lstrip("c").isdigit() and 1 <= int(part.lstrip("c")) <= 13:
            out.append(int(part.lstrip("c")))
        else:
            raise ValueError(f"unknown suite filter {part!r}; groups are {sorted(GROUPS)}")
    return sorted(set(out))


def _takes_threads(c):
    return c.number in (7, 8)


def run_criterion(number, seed, threads=1):
    c = CRITERIA[number - 1]
    t0 = time.perf_counter()
    result = c.func(seed, threads=threads) if _takes_threads(c) else c.func(seed)
    elapsed = time.perf_counter() - t0
    return result, elapsed


def criterion_report(number, seed, threads=1):
    """Canonical report text, raw result and wall time of one criterion; a crash counts as a failure."""
    try:
        result, elapsed = run_criterion(number, seed, threads)
    except Exception as exc:
        result, elapsed = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}, 0.0
    config = {"criterion": number, "name": CRITERIA[number - 1].name, "seed": seed}
    return canonical(build_report("suite", config, result)), result, elapsed


def run_suite(seed=0, filter_name=None, out=None, threads=1, echo=print):
    """Run the selected criteria, write one report per criterion, return the verdict table."""
    chosen = select(filter_name)
    out = Path(out) if out is not None else None
    table, texts = [], {}
    t_start = time.perf_counter()

    def run_once(numbers):
        return {n: criterion_report(n, seed, threads) for n in numbers}

    base = [n for n in chosen if n != 13]
    if 13 in chosen and not base:
        base = list(range(1, 13))
    first = run_once(base)
    for n in base:
        text, result, elapsed = first[n]
        c = CRITERIA[n - 1]
        passed = bool(result["passed"]) and elapsed <= c.budget_s
        row = {"criterion": n, "name": c.name, "passed": passed, "seconds": elapsed}
        table.append(row)
        texts[n] = text
        if out is not None:
            (out / "reports").mkdir(parents=True, exist_ok=True)
            (out / "reports" / f"criterion_{n:02d}.json").write_text(text)
        echo(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {c.name}  ({elapsed:.1f}s)")
    if 13 in chosen:
        t0 = time.perf_counter()
        second = run_once(base)
        mismatched = [n for n in base if second[n][0] != first[n][0]]
        elapsed_pass = time.perf_counter() - t_start
        passed = not mismatched and elapsed_pass <= REPRO_BUDGET_S
        table.append({"criterion": 13, "name": "reproducibility", "passed": passed,
                      "seconds": time.perf_counter() - t0, "mismatched": mismatched})
        if out is not None:
            write_report(out / "reports" / "criterion_13.json",
                         build_report("suite", {"criterion": 13, "name": "reproducibility", "seed": seed},
                                      {"passed": passed, "rerun": base, "mismatched": mismatched}))
        echo(f"criterion 13 {'PASS' if passed else 'FAIL'}  reproducibility  "
             f"({table[-1]['seconds']:.1f}s, {len(base)} reports compared)")
    if out is not None:
        write_report(out / "reports" / "suite.json",
                     build_report("suite", {"seed": seed, "filter": filter_name},
                                  {"verdicts": {str(r["criterion"]): r["passed"] for r in table}}))
    return table
