"""Command-line entry point.

``cgc solve GRAPH [--data CSV]`` completes a graph declared in the ``.cgc``
format, ``cgc demo NAME`` runs one of the bundled applications with seeded
defaults, ``cgc checkgrad GRAPH`` compares analytic and finite-difference
gradients and ``cgc replay RESULTS`` reruns the command recorded in a
results file.

Exit codes: 0 success, 1 gradient check failed, 2 input error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dsl import build_graph, load, parse, read_samples, write_samples
from .errors import CgcError, InputError, NumericalError
from .graph_model import SampleSet
from .optimizer import INIT_STRATEGIES, OptimizerOptions, check_grad, init_state, minimize_flat
from .solver import CgcObjective, CgcProblem, RelaxationConfig

DEMOS = ("circuit", "pde-solve", "pde-learn", "modes", "emd", "warp", "autoencode")
GRAD_TOL = 1e-5


@dataclass
class RunManifest:
    """Everything needed to rerun a command; ``wall_time`` is the only non-reproducible field."""

    command: str
    argv: list[str]
    inputs: list[str] = field(default_factory=list)
    options: dict = field(default_factory=dict)
    seed: int = 0
    version: str = __version__
    wall_time: float = 0.0
    termination: str = ""

    def to_json(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# output helpers


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _options(args, max_outer=100, tol_rel=1e-8) -> OptimizerOptions:
    return OptimizerOptions(
        max_outer=args.max_iter if args.max_iter is not None else max_outer,
        tol_rel=args.tol if args.tol is not None else tol_rel,
        restarts=args.restarts,
        seed=args.seed,
    )


def _parse_weights(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        name, sep, val = item.partition("=")
        if not sep or not name.strip():
            raise InputError(f"weight override {item!r} must look like NAME=VALUE")
        try:
            v = float(val)
        except ValueError:
            raise InputError(f"weight override {item!r} has a non-numeric value") from None
        if not v > 0:
            raise InputError(f"weight override {item!r} must be positive")
        out[name.strip()] = v
    return out


def _override_relax(p: CgcProblem, args) -> CgcProblem:
    r = p.relax
    l1, l2, l3 = _parse_weights(args.lambda1), _parse_weights(args.lambda2), _parse_weights(args.lambda3)
    if not (l1 or l2 or l3):
        return p
    edges = {e.name for e in p.graph.edges}
    for name in l1:
        if name not in edges:
            raise InputError(f"--lambda1 names unknown edge {name!r}")
    for name in [*l2, *l3]:
        if not p.graph.has_node(name):
            raise InputError(f"--lambda2/--lambda3 names unknown node {name!r}")
    relax = RelaxationConfig({**r.lambda1, **l1}, {**r.lambda2, **l2}, {**r.lambda3, **l3}, r.default)
    return CgcProblem(p.graph, p.kernels, p.data, relax, p.random_cov)


def _option_record(args) -> dict:
    skip = {"func", "out", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _without_out(argv) -> list[str]:
    """``argv`` minus any ``--out`` option, so records do not depend on the output location."""
    kept, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            kept.append(a)
    return kept


def _manifest(args, argv, inputs=()) -> RunManifest:
    return RunManifest(args.command, _without_out(argv), [str(p) for p in inputs], _option_record(args), args.seed)


def _load_problem(args) -> CgcProblem:
    path = Path(args.graph)
    if not path.is_file():
        raise InputError(f"graph file {path} does not exist")
    if args.data is None:
        p = load(path)
    else:
        data_path = Path(args.data)
        if not data_path.is_file():
            raise InputError(f"data file {data_path} does not exist")
        g = build_graph(parse(path.read_text()))
        p = load(path, read_samples(data_path, g))
    return _override_relax(p, args)


# --------------------------------------------------------------------------
# commands


def cmd_solve(args, argv) -> int:
    start = time.perf_counter()
    p = _load_problem(args)
    obj = CgcObjective(p)
    res = minimize_flat(obj, obj.pack(init_state(p, args.init)), _options(args))
    state = obj.unpack(res.x)
    models = obj.extract_models(res.x)
    out = Path(args.out)
    man = _manifest(args, argv, [args.graph] + ([args.data] if args.data else []))
    man.termination = res.termination.value
    man.wall_time = time.perf_counter() - start
    payload = {
        "manifest": man.to_json(),
        "objective_trace": [e.objective for e in res.trace.entries if e.accepted],
        "terms": obj.terms(res.x),
        "nodes": {name: state.Z[name] for name in p.graph.node_names},
        "models": {name: m.to_json() for name, m in sorted(models.items())},
    }
    _write_json(out / "results.json", payload)
    for name, m in models.items():
        _write_json(out / "models" / f"{name}.json", m.to_json())
    full = SampleSet(p.graph.node_names, dict(state.Z), np.ones((p.n_samples, len(p.graph.nodes)), bool))
    write_samples(out / "Z.csv", full)
    print(f"{res.termination.value}: objective {res.value:.10g} after {res.iterations} iterations")
    return 0


def cmd_checkgrad(args, argv) -> int:
    p = _load_problem(args)
    obj = CgcObjective(p)
    if args.inject_gradient_error:
        base = obj.gradient
        obj.gradient = lambda x: base(x) + args.inject_gradient_error
    x0 = obj.pack(init_state(p, args.init))
    rng = np.random.default_rng(args.seed)
    scale = 0.1 * obj.perturbation_scale()
    errs = []
    for k in range(3):
        x = x0 + scale * rng.standard_normal(x0.shape)
        errs.append(check_grad(obj, x))
        print(f"state {k}: max relative gradient error {errs[-1]:.3e}")
    worst = max(errs, default=0.0)
    ok = worst <= GRAD_TOL
    print(f"{'PASS' if ok else 'FAIL'}: worst {worst:.3e} (tolerance {GRAD_TOL:g})")
    if args.out:
        man = _manifest(args, argv, [args.graph] + ([args.data] if args.data else []))
        man.termination = "pass" if ok else "fail"
        _write_json(Path(args.out) / "checkgrad.json", {"manifest": man.to_json(), "errors": errs, "tolerance": GRAD_TOL})
    return 0 if ok else 1


def cmd_replay(args, argv) -> int:
    path = Path(args.results)
    if not path.is_file():
        raise InputError(f"results file {path} does not exist")
    try:
        man = json.loads(path.read_text())["manifest"]
        old = list(man["argv"])
    except (KeyError, TypeError, json.JSONDecodeError):
        raise InputError(f"{path} does not contain a run manifest") from None
    return main(_without_out(old) + ["--out", args.out])


# --------------------------------------------------------------------------
# demos


def _demo_circuit(args, out: Path) -> dict:
    from .applications.circuit import ELEMENTS, CircuitConfig, run_circuit, truth_on

    c = CircuitConfig(seed=args.seed, obs_prob=args.obs_prob, lam=args.lam)
    sol, errs = run_circuit(c, _options(args), init=args.init or "per_node_regression")
    grid = np.linspace(c.times[0], c.times[-1], 400)
    truth = truth_on(c, grid)
    for v in ("V1", "V2", "V3", "i1", "i2", "i3"):
        pred = sol.models["f_" + v](grid[:, None]).ravel()
        _write_csv(out / f"{v}.csv", ("t", "truth", "recovered"), zip(grid, truth[v], pred))
    for elem, (fn, arg) in ELEMENTS.items():
        x = np.linspace(truth[arg].min(), truth[arg].max(), 200)
        pred = np.exp(sol.models[fn](x[:, None]).ravel())
        _write_csv(out / f"{elem}.csv", (arg, "truth", "recovered"), zip(x, getattr(c, elem)(x), pred))
    for name, m in sol.models.items():
        _write_json(out / "models" / f"{name}.json", m.to_json())
    return {"config": c.describe(), "errors": errs, "objective_trace": sol.objective_trace,
            "terms": sol.terms, "termination": sol.termination}


def _demo_pde_solve(args, out: Path) -> dict:
    from .applications.pde import manufactured_solve, pde_solve
    from .kernels import Gaussian

    ls = args.ls if args.ls is not None else (0.2 if args.dim == 1 else None)
    p, u_true = manufactured_solve(args.points, args.dim, Gaussian(ls) if ls else None)
    m = pde_solve(p, _options(args, 200, 1e-12))
    if args.dim == 1:
        xe = np.linspace(0.0, 1.0, 201)[:, None]
    else:
        s = np.linspace(0.0, 1.0, 20)
        xe = np.array([[a, b] for a in s for b in s])
    pred, true = m(xe).ravel(), u_true(xe)
    cols = [f"x{k + 1}" for k in range(args.dim)]
    _write_csv(out / "u.csv", (*cols, "truth", "recovered"), (list(x) + [t, r] for x, t, r in zip(xe, true, pred)))
    _write_json(out / "models" / "u_fn.json", m.to_json())
    return {"dim": args.dim, "points": args.points, "kernel": p.kernel.text,
            "linf_error": float(np.max(np.abs(pred - true)))}


def _demo_pde_learn(args, out: Path) -> dict:
    from .applications.pde import manufactured_learn, pde_learn

    p, u_true, a_true = manufactured_learn(args.points, args.n_data, args.ls or 0.2)
    am, um = pde_learn(p, _options(args, 200, 1e-12))
    xe = np.linspace(0.02, 0.98, 97)[:, None]
    u = um(xe).ravel()
    a = am(xe)
    a = a[:, 0] if a.ndim == 2 else a
    ut, at = u_true(xe[:, 0]), a_true(xe[:, 0])
    ac, atc = a - a.mean(), at - at.mean()
    _write_csv(out / "u.csv", ("x", "truth", "recovered"), zip(xe[:, 0], ut, u))
    _write_csv(out / "a.csv", ("x", "truth_centered", "recovered_centered"), zip(xe[:, 0], atc, ac))
    _write_json(out / "models" / "u_fn.json", um.to_json())
    _write_json(out / "models" / "a_fn.json", am.to_json())
    return {"points": args.points, "n_data": args.n_data,
            "u_rel_error": float(np.linalg.norm(u - ut) / np.linalg.norm(ut)),
            "a_centered_rel_error": float(np.linalg.norm(ac - atc) / np.linalg.norm(atc))}


def _demo_modes(args, out: Path) -> dict:
    from .applications.modes import ModeSetup, default_modes, interior_errors, mode_decompose

    setup = ModeSetup(seed=args.seed)
    p, truths = default_modes(setup)
    models = mode_decompose(p)
    T = p.grid[:, None]
    total = np.zeros_like(p.grid)
    for name, m in zip(p.names, models):
        w = m(T)
        total += w
        _write_csv(out / f"{name}.csv", ("t", "truth", "recovered"), zip(p.grid, truths[name], w))
    return {"setup": setup.describe(), "errors": interior_errors(p, models, truths),
            "interpolation_residual": float(np.max(np.abs(total - p.values)))}


def _demo_emd(args, out: Path) -> dict:
    from .applications.emd import emd_energy, two_chirps

    t, v, truth, cfg = two_chirps(noise=args.noise, seed=args.seed)
    res = emd_energy(t, v, cfg)
    rows = ((tau, om, res.energy[i, j]) for i, tau in enumerate(cfg.taus) for j, om in enumerate(cfg.omegas))
    _write_csv(out / "energy.csv", ("tau", "omega", "energy"), rows)
    tr = truth(cfg.taus)
    k = res.n_components
    header = ["tau"] + [f"truth{i + 1}" for i in range(tr.shape[0])] + [f"recovered{i + 1}" for i in range(k)]
    _write_csv(out / "frequencies.csv", header,
               ([tau, *tr[:, i], *res.frequencies[:, i]] for i, tau in enumerate(cfg.taus)))
    summary = {"n_components": k, "alpha": cfg.alpha, "noise": args.noise}
    if k == tr.shape[0]:
        sel = (cfg.taus >= 0.1) & (cfg.taus <= 0.9)
        rel = np.abs(res.frequencies[:, sel] - tr[:, sel]) / tr[:, sel]
        summary["max_interior_rel_error"] = float(np.nanmax(rel))
    return summary


def _demo_warp(args, out: Path) -> dict:
    from .applications.warp import WarpConfig, deep_warp, two_moons
    from .gp import point_evals, regress
    from .kernels import Gaussian

    X, y = two_moons(40, 0.05, args.seed)
    cfg = WarpConfig(depth=args.depth, nu=1.0, lam=100.0, r=1e-2)
    res = deep_warp(X, y, cfg)
    rows = ([s, i, *q] for s, Q in enumerate(res.trajectory) for i, q in enumerate(Q))
    _write_csv(out / "trajectory.csv", ("layer", "point", "x1", "x2"), rows)
    base = regress(Gaussian(1.0), point_evals(X), y, 1.0 / cfg.lam)
    misfit = float(np.linalg.norm(res(X).ravel() - y) / np.linalg.norm(y))
    baseline = float(np.linalg.norm(base(X).ravel() - y) / np.linalg.norm(y))
    return {"depth": cfg.depth, "objective_trace": res.objective_trace, "termination": res.termination,
            "train_misfit": misfit, "baseline_misfit": baseline}


def _demo_autoencode(args, out: Path) -> dict:
    from scipy.linalg import subspace_angles

    from .applications.dimred import DimRedConfig, autoencode

    rng = np.random.default_rng(args.seed)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    X = rng.standard_normal((40, 8)) @ np.diag(np.linspace(3.0, 0.3, 8)) @ Q
    res = autoencode(X, DimRedConfig(args.latent_dim, seed=args.seed))
    k = args.latent_dim
    _write_csv(out / "latents.csv", [f"z{i + 1}" for i in range(k)], res.latents)
    A = res.encoder(np.eye(8)).reshape(8, k)
    V = np.linalg.svd(X)[2][:k].T
    return {"latent_dim": k, "subspace_angle": float(np.max(subspace_angles(A, V))),
            "objective": res.objective, "termination": res.termination}


DEMO_RUNNERS = {
    "circuit": _demo_circuit, "pde-solve": _demo_pde_solve, "pde-learn": _demo_pde_learn,
    "modes": _demo_modes, "emd": _demo_emd, "warp": _demo_warp, "autoencode": _demo_autoencode,
}


def cmd_demo(args, argv) -> int:
    if args.name not in DEMO_RUNNERS:
        raise InputError(f"unknown demo {args.name!r}; choose from {', '.join(DEMOS)}")
    start = time.perf_counter()
    out = Path(args.out)
    summary = DEMO_RUNNERS[args.name](args, out)
    man = _manifest(args, argv)
    man.termination = str(summary.get("termination", "done"))
    man.wall_time = time.perf_counter() - start
    _write_json(out / "summary.json", {"manifest": man.to_json(), "demo": args.name, "summary": summary})
    print(json.dumps(_clean(summary.get("errors", {k: v for k, v in summary.items()
                                                    if not isinstance(v, (list, dict))})), sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# parser


def _add_common(sp, out_default=None):
    sp.add_argument("--out", default=out_default, help="output directory")
    sp.add_argument("--max-iter", type=int, default=None, help="outer iterations per restart")
    sp.add_argument("--tol", type=float, default=None, help="relative decrease tolerance")
    sp.add_argument("--restarts", type=int, default=1, help="number of seeded restarts")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--init", choices=INIT_STRATEGIES, default=None, help="initial state strategy")
    for k in (1, 2, 3):
        sp.add_argument(f"--lambda{k}", action="append", metavar="NAME=VALUE",
                        help=f"override a lambda{k} weight (repeatable, 'inf' allowed)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cgc", description="Computational graph completion toolkit")
    ap.add_argument("--version", action="version", version=f"cgc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="complete a graph from data")
    sp.add_argument("graph")
    sp.add_argument("--data", default=None, help="long-format CSV (sample,node,component,value)")
    _add_common(sp, "cgc-out")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("checkgrad", help="compare analytic and finite-difference gradients")
    sp.add_argument("graph")
    sp.add_argument("--data", default=None)
    _add_common(sp)
    sp.add_argument("--inject-gradient-error", type=float, default=0.0, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_checkgrad)

    sp = sub.add_parser("demo", help="run a bundled application")
    sp.add_argument("name", help=f"one of {', '.join(DEMOS)}")
    _add_common(sp, "cgc-demo")
    sp.add_argument("--obs-prob", type=float, default=0.07, help="circuit: observation probability")
    sp.add_argument("--lam", type=float, default=1000.0, help="circuit: relaxation weight")
    sp.add_argument("--dim", type=int, choices=(1, 2), default=1, help="pde-solve: dimension")
    sp.add_argument("--points", type=int, default=30, help="pde: interior collocation points")
    sp.add_argument("--n-data", type=int, default=10, help="pde-learn: interior measurements")
    sp.add_argument("--ls", type=float, default=None, help="pde: kernel lengthscale")
    sp.add_argument("--noise", type=float, default=0.0, help="emd: white-noise level")
    sp.add_argument("--depth", type=int, default=2, help="warp: number of layers")
    sp.add_argument("--latent-dim", type=int, default=2, help="autoencode: latent dimension")
    sp.set_defaults(func=cmd_demo)

    sp = sub.add_parser("replay", help="rerun the command recorded in a results or summary file")
    sp.add_argument("results")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_replay, seed=0)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "init", "x") is None and args.command != "demo":
        args.init = "observed_mean"
    try:
        return args.func(args, argv)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (CgcError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
