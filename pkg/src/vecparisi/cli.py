"""Command-line entry point: ``vecparisi <command> --config file [--seed n] [--out dir]``.

Exit codes: 0 success, 1 configuration or runtime error, 2 a check failed
or the computation flagged a numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import cascade, paths, transport, variational
from .cone import ConeError, XiModel, check_model
from .report import build_report, write_csv, write_report

COMMON = {"command", "seed", "name"}
PROBLEM = {"t", "path", "model", "spin_law", "grid", "optimizer"}
SECTIONS = {
    "grid": {"order", "resolution", "bound", "interpolation", "widen", "rule", "spacing"},
    "optimizer": {"K", "n_starts", "tol", "max_iter", "damping", "bound_margin"},
    "cascade": {"M", "n_samples"},
}
COMMANDS = {
    "eval-psi": ({"path", "spin_law", "grid", "method", "gradient", "cascade"}, False),
    "parisi": (PROBLEM, True),
    "hopf-lax": (PROBLEM, True),
    "critpoint": (PROBLEM, False),
    "uniqueness": (PROBLEM, True),
    "mc-free-energy": ({"t", "path", "model", "spin_law", "cascade", "n"}, True),
    "overlap-hist": ({"t", "path", "model", "spin_law", "cascade", "n", "n_draws", "bins"}, True),
    "gateaux": (PROBLEM | {"kappa", "eps"}, True),
    "pde-residual": (PROBLEM | {"dt"}, True),
    "frechet": (PROBLEM | {"n_directions", "scales"}, True),
    "transport": ({"t", "model", "mu", "nu", "lambdas", "spin_law", "grid"}, False),
    "certify-model": ({"model", "n_samples"}, True),
    "certify-path": ({"path", "refine"}, False),
    "suite": ({"filter"}, False),
}


class ConfigError(ValueError):
    pass


def load_config(path):
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def validate(command, config):
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    allowed, stochastic = COMMANDS[command]
    for key, value in config.items():
        if key not in allowed | COMMON:
            raise ConfigError(f"unknown key {key!r} for command {command}")
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"key {key!r} must be a table")
            for sub in value:
                if sub not in SECTIONS[key]:
                    raise ConfigError(f"unknown key {key}.{sub!r}")
    if config.get("command", command) != command:
        raise ConfigError(f"key 'command' says {config['command']!r} but {command!r} was invoked")
    if stochastic and "seed" not in config:
        raise ConfigError(f"key 'seed' is required for the stochastic command {command}")
    if command == "eval-psi" and config.get("method", "grid") != "grid" and "seed" not in config:
        raise ConfigError("key 'seed' is required for Monte Carlo evaluation")
    for key in ("t", "dt"):
        if key in config and not isinstance(config[key], (int, float)):
            raise ConfigError(f"key {key!r} must be a number")
    return config


def _need(config, key):
    if key not in config:
        raise ConfigError(f"missing key {key!r}")
    return config[key]


def _model(config):
    d = _need(config, "model")
    try:
        model = XiModel(d["kind"], int(d["dim"]), d["coefficients"])
    except KeyError as exc:
        raise ConfigError(f"model is missing key {exc.args[0]!r}") from exc
    if model.kind == "monomial_sum":
        check_model(model, 1000, int(config.get("seed", 0)))
    return model


def _spin_law(config, dim):
    d = config.get("spin_law", "ising")
    if d == "ising":
        return cascade.SpinLaw.ising(dim)
    if d == "vertices":
        return cascade.SpinLaw.vertices(dim)
    if isinstance(d, dict):
        return cascade.SpinLaw(np.array(d["atoms"], dtype=float), np.array(d["weights"], dtype=float))
    raise ConfigError(f"key 'spin_law' must be 'ising', 'vertices' or a table, got {d!r}")


def _path(config):
    return paths.path_from_dict(_need(config, "path"))


def _grid(config):
    g = dict(config.get("grid", {}))
    if "bound" in g and g["bound"] is not None:
        g["bound"] = np.atleast_1d(np.asarray(g["bound"], dtype=float))
    return cascade.PsiGridConfig(**g)


def _opt(config):
    return dict(config.get("optimizer", {}))


def _measure(d, key):
    if not isinstance(d, dict):
        raise ConfigError(f"key {key!r} must be a table with atoms and weights")
    return paths.DiscreteMeasure(np.array(d["atoms"], dtype=float), np.array(d["weights"], dtype=float))


def _cell_rows(edges, values):
    rows = []
    for k in range(len(edges) - 1):
        rows.append([edges[k], edges[k + 1], *np.asarray(values[k]).ravel()])
    return rows


def _cell_header(dim):
    return ["u_lo", "u_hi"] + [f"a{i}{j}" for i in range(dim) for j in range(dim)]


# ---------------------------------------------------------------------------
# commands; each returns (result dict, tables {name: (header, rows)}, failed flag)


def cmd_eval_psi(config, seed, threads):
    q = _path(config)
    P1 = _spin_law(config, q.dim)
    method = config.get("method", "grid")
    result, failed = {}, False
    if method in ("grid", "both"):
        cfg = _grid(config)
        if config.get("gradient"):
            sq = cascade.step_of(q)
            r = cascade.psi_cells(sq.edges, sq.values, P1, cfg, grad=True)
            result.update(psi=r.value, gradient=np.asarray(r.gradient).tolist(), widened=r.widened)
        else:
            result["psi"] = cascade.psi_grid(q, P1, cfg)
    if method in ("mc", "both"):
        c = config.get("cascade", {})
        spec = cascade.CascadeSpec.for_path(q, c.get("M"), seed)
        est = cascade.psi_mc(q, P1, spec, int(c.get("n_samples", 10_000)))
        result["mc"] = est.to_dict()
        result["cascade"] = spec.to_dict()
        if "psi" in result:
            z = (est.mean - result["psi"]) / est.stderr if est.stderr > 0 else 0.0
            result["z_score"] = z
            failed = abs(z) > 3.0
    if method not in ("grid", "mc", "both"):
        raise ConfigError("key 'method' must be grid, mc or both")
    return result, {}, failed


def _variational(config, seed, threads, solver):
    q = _path(config)
    model = _model(config)
    P1 = _spin_law(config, q.dim)
    o = _opt(config)
    kw = {k: o[k] for k in ("tol", "max_iter", "bound_margin") if k in o}
    rep = solver(float(_need(config, "t")), q, model, P1, int(o.get("K", 4)),
                 int(o.get("n_starts", 8)), _grid(config), seed, threads=threads, **kw)
    table = (_cell_header(q.dim), _cell_rows(rep.optimizer.edges, rep.optimizer.values))
    return rep.to_dict(), {"optimizer": table}, bool(rep.flags)


def cmd_parisi(config, seed, threads):
    return _variational(config, seed, threads, variational.parisi_solve)


def cmd_hopf_lax(config, seed, threads):
    return _variational(config, seed, threads, variational.hopflax_solve)


def cmd_critpoint(config, seed, threads):
    q = _path(config)
    model = _model(config)
    o = _opt(config)
    kw = {k: o[k] for k in ("tol", "max_iter", "damping", "bound_margin") if k in o}
    cp = variational.critical_point_solve(float(_need(config, "t")), q, model, _spin_law(config, q.dim),
                                          int(o.get("K", 4)), cfg=_grid(config), **kw)
    tables = {"p": (_cell_header(q.dim), _cell_rows(cp.p.edges, cp.p.values)),
              "qprime": (_cell_header(q.dim), _cell_rows(cp.qprime.edges, cp.qprime.values))}
    return cp.to_dict(), tables, not cp.converged


def cmd_uniqueness(config, seed, threads):
    q = _path(config)
    model = _model(config)
    o = _opt(config)
    kw = {k: o[k] for k in ("tol", "max_iter", "bound_margin") if k in o}
    r = variational.uniqueness_probe(float(_need(config, "t")), q, model, _spin_law(config, q.dim),
                                     int(o.get("K", 4)), int(o.get("n_starts", 20)), _grid(config), seed,
                                     threads, **kw)
    r.pop("report")
    rows = [[s["kind"], s["value"], s["status"], s["iterations"]] for s in r["starts"]]
    return r, {"starts": (["start", "value", "status", "iterations"], rows)}, r["assertion"] == "failed"


def _cascade_spec(config, q, seed):
    c = config.get("cascade", {})
    return cascade.CascadeSpec.for_path(q, c.get("M"), seed), int(c.get("n_samples", 10_000))


def cmd_mc_free_energy(config, seed, threads):
    q = _path(config)
    model = _model(config)
    P1 = _spin_law(config, q.dim)
    spec, n_samples = _cascade_spec(config, q, seed)
    ns = config.get("n", 1)
    ns = [int(ns)] if np.isscalar(ns) else [int(x) for x in ns]
    t = float(config.get("t", 0.0))
    rows, out = [], {}
    for n in ns:
        est = cascade.mc_free_energy(n, t, q, model, P1, spec, n_samples)
        out[str(n)] = est.to_dict()
        rows.append([n, est.mean, est.stderr])
    return {"estimates": out, "cascade": spec.to_dict(), "t": t}, {"free_energy": (["N", "mean", "stderr"], rows)}, False


def cmd_overlap_hist(config, seed, threads):
    q = _path(config)
    model = _model(config)
    P1 = _spin_law(config, q.dim)
    spec, _ = _cascade_spec(config, q, seed)
    n = int(config.get("n", 2))
    draws = cascade.overlap_samples(n, float(config.get("t", 0.0)), q, model, P1, spec,
                                    int(config.get("n_draws", 1000)))
    bins = int(config.get("bins", 20))
    rows, hist = [], {}
    for i in range(q.dim):
        for j in range(q.dim):
            counts, edges = np.histogram(draws[:, i, j], bins=bins, range=(-1.0, 1.0))
            hist[f"{i}{j}"] = counts.tolist()
            rows += [[f"{i}{j}", edges[k], edges[k + 1], int(counts[k])] for k in range(bins)]
    result = {"histograms": hist, "bins": bins, "mean_overlap": draws.mean(axis=0).tolist(),
              "cascade": spec.to_dict(), "n": n}
    return result, {"overlaps": (["entry", "lo", "hi", "count"], rows)}, False


def _kappa(config, dim, seed):
    k = config.get("kappa", {"random": 0})
    if isinstance(k, dict) and "random" in k:
        return variational.random_direction(dim, seed + int(k["random"]))
    if isinstance(k, dict) and "values" in k:
        return paths.LipschitzPath(np.array(k["values"], dtype=float))
    raise ConfigError("key 'kappa' must be {random = k} or {values = [...]}")


def cmd_gateaux(config, seed, threads):
    q = _path(config)
    model = _model(config)
    o = _opt(config)
    eps = tuple(config.get("eps", (0.04, 0.02, 0.01)))
    r = variational.gateaux_fd(float(_need(config, "t")), q, _kappa(config, q.dim, seed), model,
                               _spin_law(config, q.dim), int(o.get("K", 4)), eps, _grid(config),
                               n_starts=int(o.get("n_starts", 4)), seed=seed)
    err = abs(r["estimate"] - r["inner_product"])
    r["error"] = err
    r["passed"] = err <= 1e-2 * (1 + abs(r["inner_product"]))
    rows = [[e, v] for e, v in zip(r["eps"], r["table"][0])]
    return r, {"quotients": (["eps", "quotient"], rows)}, not r["passed"]


def cmd_pde_residual(config, seed, threads):
    q = _path(config)
    o = _opt(config)
    r = variational.pde_residual(float(_need(config, "t")), q, _model(config), _spin_law(config, q.dim),
                                 float(config.get("dt", 0.05)), int(o.get("K", 4)), _grid(config),
                                 n_starts=int(o.get("n_starts", 4)), seed=seed)
    r["passed"] = bool(r["residual"] <= 1e-2 * (1 + abs(r["dfdt"])) and r["p_monotone"] and r["p_bounded"])
    return r, {}, not r["passed"]


def cmd_frechet(config, seed, threads):
    q = _path(config)
    o = _opt(config)
    r = variational.frechet_probe(float(_need(config, "t")), q, _model(config), _spin_law(config, q.dim),
                                  int(config.get("n_directions", 3)), int(o.get("K", 4)),
                                  config.get("scales", range(2, 9)), _grid(config), seed,
                                  n_starts=int(o.get("n_starts", 4)))
    rows = [[row["direction"], row["j"], row.get("remainder", "")] for row in r["rows"] if row["member"]]
    return r, {"remainders": (["direction", "j", "remainder"], rows)}, not r["passed"]


def cmd_transport(config, seed, threads):
    mu = _measure(_need(config, "mu"), "mu")
    nu = _measure(_need(config, "nu"), "nu")
    model = _model(config)
    t = float(_need(config, "t"))
    mono = transport.transport_cost_monotone(t, mu, nu, model)
    lp, coupling = transport.transport_cost_lp(t, mu, nu, model)
    dual = transport.kantorovich_dual(t, mu, nu, model)
    result = {"monotone_cost": mono, "lp_cost": lp, "coupling": np.asarray(coupling).tolist(),
              "dual_gap": dual["gap"], "w2": transport.w2(mu, nu)}
    failed = abs(mono - lp) > 1e-8 or abs(dual["gap"]) > 1e-8
    if "lambdas" in config:
        probe = transport.concavity_probe(mu, nu, config["lambdas"], _spin_law(config, 1), _grid(config))
        result["concavity"] = probe
        failed |= not probe["holds"]
    ny = len(nu.weights)
    rows = [[i, *np.asarray(coupling)[i]] for i in range(len(mu.weights))]
    return result, {"coupling": (["mu_atom"] + [f"nu{j}" for j in range(ny)], rows)}, failed


def cmd_certify_model(config, seed, threads):
    model = _model(config)
    r = check_model(model, int(config.get("n_samples", 1000)), seed)
    return r, {}, not r["passed"]


def cmd_certify_path(config, seed, threads):
    r = paths.uparrow_certificate(_path(config), int(config.get("refine", 64)))
    return r, {}, not r["ok"]


HANDLERS = {
    "eval-psi": cmd_eval_psi, "parisi": cmd_parisi, "hopf-lax": cmd_hopf_lax, "critpoint": cmd_critpoint,
    "uniqueness": cmd_uniqueness, "mc-free-energy": cmd_mc_free_energy, "overlap-hist": cmd_overlap_hist,
    "gateaux": cmd_gateaux, "pde-residual": cmd_pde_residual, "frechet": cmd_frechet,
    "transport": cmd_transport, "certify-model": cmd_certify_model, "certify-path": cmd_certify_path,
}


def run(command, config, out=".", seed=None, threads=1):
    """Validate, dispatch and write the report; returns the exit code."""
    config = dict(config)
    if seed is not None:
        config["seed"] = int(seed)
    validate(command, config)
    out = Path(out)
    if command == "suite":
        from .suite import run_suite

        table = run_suite(int(config.get("seed", 0)), config.get("filter"), out, threads)
        write_csv(out / "tables" / "suite.csv", ["criterion", "name", "passed"],
                  [[r["criterion"], r["name"], r["passed"]] for r in table])
        return 0 if all(r["passed"] for r in table) else 2
    seed_value = int(config.get("seed", 0))
    name = config.get("name", command)
    try:
        result, tables, failed = HANDLERS[command](config, seed_value, threads)
    except cascade.GridError as exc:
        result = {"error": str(exc), "flags": ["numerical failure"]}
        write_report(out / "reports" / f"{name}.json", build_report(command, config, result))
        return 2
    write_report(out / "reports" / f"{name}.json", build_report(command, config, result))
    for tname, (header, rows) in tables.items():
        write_csv(out / "tables" / f"{name}_{tname}.csv", header, rows)
    return 2 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="vecparisi", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON or TOML file (optional for suite)")
    p.add_argument("--seed", type=int, help="root seed; overrides the config")
    p.add_argument("--out", default=".", help="output directory for reports/ and tables/")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    p.add_argument("--filter", help="suite only: group name, criterion number, or comma list")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            if args.command != "suite":
                raise ConfigError("--config is required")
            config = {}
        else:
            config = load_config(args.config)
            if not isinstance(config, dict):
                raise ConfigError("config must be a table at top level")
        if args.filter is not None:
            if args.command != "suite":
                raise ConfigError("--filter only applies to suite")
            config["filter"] = args.filter
        return run(args.command, config, args.out, args.seed, max(1, args.threads))
    except (ConfigError, ConeError, paths.PathError, cascade.CascadeError, transport.TransportError,
            variational.VariationalError, OSError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
