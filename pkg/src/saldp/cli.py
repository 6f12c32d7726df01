"""Command line entry point: ``saldp <subcommand> [options]``.

Every subcommand reads an experiment config (``--config`` file and/or a
bundled ``--preset``, plus ``--set key=value`` overrides) and writes CSV/JSON
files to the output directory.  CSV files start with a ``# config_hash=``
comment line followed by a header row; JSON files carry the config echo.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
64 unknown subcommand.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import io
import json
import math
import sys
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from . import config as C
from .action import ActionProblem, action, min_action_path
from .errors import NumericalError
from .estimator import SupDeviation, laplace_functional, tube_probability
from .kernel import check_assumptions
from .models import (rbm_exact_gradient, run_wang_landau, wl_free_energy_differences)
from .rate import RateEval, local_rate
from .sa_sim import Path, g_bar, noise_chain, ode_limit, run_chain, simulate_segment

SCHEMA_VERSION = 1
EX_OK, EX_CONFIG, EX_NUMERIC, EX_USAGE = 0, 2, 3, 64


class Output:
    """Writes result files stamped with the config hash."""

    def __init__(self, cfg, command, out_dir, timestamp=True):
        self.cfg = cfg
        self.command = command
        self.dir = FsPath(out_dir)
        self.hash = C.config_hash(cfg)
        self.timestamp = timestamp
        self.written = []

    def csv(self, name, header, rows):
        self.dir.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        buf.write(f"# config_hash={self.hash} command={self.command}\n")
        buf.write(",".join(header) + "\n")
        for r in rows:
            buf.write(",".join(_fmt(v) for v in r) + "\n")
        p = self.dir / name
        p.write_text(buf.getvalue())
        self.written.append(str(p))
        return p

    def json(self, name, result):
        self.dir.mkdir(parents=True, exist_ok=True)
        doc = {"schema_version": SCHEMA_VERSION, "command": self.command, "config_hash": self.hash,
               "version": __version__, "config": self.cfg, "result": result}
        if self.timestamp:
            doc["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        p = self.dir / name
        p.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        self.written.append(str(p))
        return p


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else ("inf" if f > 0 else ("-inf" if f < 0 else "nan"))
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def _vec(v, d, name):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.shape != (d,):
        raise C.ConfigError(f"{name} must have {d} components, got {a.tolist()}")
    return a


def _grid(v, d, name):
    """A list of d-vectors (scalars are accepted when ``d == 1``)."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim <= 1 and d == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise C.ConfigError(f"{name} must be a list of {d}-vectors")
    return arr


def _path_from(spec, model, T):
    """Reference path from config: ``{start, end, segments}`` or ``{times, values}``."""
    if spec is None:
        return None
    if "times" in spec:
        return Path(spec["times"], spec["values"])
    start = model.x0 if spec.get("start") is None else spec["start"]
    return Path.linear(start, spec["end"], T, int(spec.get("segments", 1)))


# -- subcommands ---------------------------------------------------------------------------

def cmd_simulate(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    sched = C.schedule_of(cfg)
    path = simulate_segment(model, sched, int(P["n"]), cfg["T"], cfg["seed"])
    rows = [(t, *v) for t, v in zip(path.times, path.values)]
    out.csv("path.csv", ["t"] + [f"x_{j + 1}" for j in range(path.dim)], rows)
    out.json("simulate.json", {"n": int(P["n"]), "beta_n": sched.beta_n(int(P["n"]), cfg["T"]),
                               "breakpoints": len(path.times), "end": path.end})


def cmd_ode(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    path = ode_limit(model, model.x0, cfg["T"], float(P["dt"]))
    out.csv("ode.csv", ["t"] + [f"x_{j + 1}" for j in range(path.dim)],
            [(t, *v) for t, v in zip(path.times, path.values)])
    out.json("ode.json", {"dt": float(P["dt"]), "end": path.end})


def cmd_hamiltonian(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    d = model.d1
    xs = _grid(P.get("x_grid", [P.get("x", model.x0.tolist())]), d, "x")
    alphas = _grid(P.get("alpha_grid", [P.get("alpha", [0.0] * d)]), d, "alpha")
    rows = []
    for x in xs:
        ev = RateEval(model, x)
        for a in alphas:
            Hv, gr = ev.value_grad(a)
            rows.append((*x, *a, Hv, *gr))
    hdr = [f"x_{j + 1}" for j in range(d)] + [f"alpha_{j + 1}" for j in range(d)] + ["H"] + \
          [f"dH_{j + 1}" for j in range(d)]
    out.csv("hamiltonian.csv", hdr, rows)
    out.json("hamiltonian.json", {"rows": len(rows), "first": {"H": rows[0][2 * d]}})


def cmd_rate_surface(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    d = model.d1
    xs = _grid(P.get("x_grid", [model.x0.tolist()]), d, "x_grid")
    betas = _grid(P.get("beta_grid", np.linspace(0, 1, 21).tolist()), d, "beta_grid")
    alphas = _grid(P.get("alpha_grid", np.linspace(-2, 2, 21).tolist()), d, "alpha_grid")
    Lrows, Hrows = [], []
    for x in xs:
        ev = RateEval(model, x)
        warm = None
        for b in betas:
            L = local_rate(model, x, b, alpha0=warm, ev=ev)
            warm = None if L.infinite else L.argmax
            Lrows.append((*x, *b, L))
        for a in alphas:
            Hrows.append((*x, *a, ev.H(a)))
    xh = [f"x_{j + 1}" for j in range(d)]
    out.csv("rate_surface.csv", xh + [f"beta_{j + 1}" for j in range(d)] + ["L"], Lrows)
    out.csv("hamiltonian_surface.csv", xh + [f"alpha_{j + 1}" for j in range(d)] + ["H"], Hrows)
    out.json("rate_surface.json", {"L_points": len(Lrows), "H_points": len(Hrows),
                                   "infinite": sum(1 for r in Lrows if math.isinf(r[-1]))})


def cmd_action(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    sched = C.schedule_of(cfg)
    path = _path_from(P.get("path"), model, cfg["T"])
    if path is None:
        path = ode_limit(model, model.x0, cfg["T"], cfg["T"] / (8 * int(P["K"])))
    val = action(model, sched, cfg["T"], path, nodes=int(P["nodes"]))
    out.json("action.json", {"action": val.to_json(), "infinite": val.infinite,
                             "reason": val.info.get("reason"), "segments": len(path.times) - 1})


def cmd_minpath(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    sched = C.schedule_of(cfg)
    x_end = P.get("x_end")
    prob = ActionProblem(model, sched, cfg["T"], x_end=None if x_end is None else _vec(x_end, model.d1, "x_end"),
                         K=int(P["K"]), nodes=int(P["nodes"]))
    res = min_action_path(prob)
    out.csv("minpath.csv", ["t"] + [f"x_{j + 1}" for j in range(model.d1)],
            [(t, *v) for t, v in zip(res.path.times, res.path.values)])
    out.json("minpath.json", {"action": res.value.to_json(), "converged": res.converged,
                              "grad_norm": res.grad_norm, "iterations": res.iterations,
                              "start_index": res.start_index, "starts": res.starts})
    if res.value.infinite:
        raise NumericalError("every start has infinite action (infeasible end point?)")


def cmd_laplace(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    sched = C.schedule_of(cfg)
    ref = _path_from(P.get("laplace_ref"), model, cfg["T"]) or ode_limit(model, model.x0, cfg["T"], float(P["dt"]))
    F = SupDeviation(ref, float(P["cap"]))
    ns = [int(n) for n in P.get("n_list") or [P["n"]]]
    rows, recs = [], []
    for n in ns:
        e = laplace_functional(model, sched, F, n, cfg["T"], int(P["N"]), cfg["seed"], threads=threads,
                               chunk=int(P["chunk"]))
        rows.append((n, e.beta_n, e.value, e.stderr, e.clamped))
        recs.append(e.to_dict())
    out.csv("laplace.csv", ["n", "beta_n", "estimate", "stderr", "clamped"], rows)
    out.json("laplace.json", {"functional": "min(cap, sup deviation from reference)", "estimates": recs,
                              "non_increasing": bool(all(a[2] >= b[2] for a, b in zip(rows, rows[1:])))})


def cmd_tube(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    sched = C.schedule_of(cfg)
    ref = _path_from(P.get("path"), model, cfg["T"]) or ode_limit(model, model.x0, cfg["T"], float(P["dt"]))
    e = tube_probability(model, sched, ref, float(P["delta"]), int(P["n"]), cfg["T"], int(P["N"]), cfg["seed"],
                         threads=threads, chunk=int(P["chunk"]))
    out.csv("tube.csv", ["n", "beta_n", "N", "delta", "hits", "p", "log_rate", "censored"],
            [(e.n, e.beta_n, e.N, e.delta, e.hits, e.p, e.log_rate, e.censored)])
    out.json("tube.json", e.to_dict())


def cmd_check(cfg, P, out, threads):
    model, _ = C.build_model(cfg)
    if model.kernel is None:
        raise C.ConfigError("assumption audit needs a finite noise kernel")
    d = model.d1
    xg = _grid(P.get("x_grid", (model.x0 + np.linspace(-1, 1, 5)[:, None] * np.ones(d)).tolist()), d, "x_grid")
    ag = _grid(P.get("alpha_grid", (np.linspace(-2, 2, 5)[:, None] * np.ones(d)).tolist()), d, "alpha_grid")
    rep = check_assumptions(model, xg, ag, schedule=C.schedule_of(cfg))
    out.json("assumptions.json", rep.to_dict())
    print(rep.to_json())


def cmd_demo_sgd(cfg, P, out, threads):
    model, data = C.build_model(cfg)
    if data is None:
        raise C.ConfigError("demo-sgd needs the sgd_logistic builder")
    sched = C.schedule_of(cfg)
    k = int(P.get("k", 10000))
    every = max(1, k // 200)
    steps, xs, _ = run_chain(model, sched, k, cfg["seed"], record_every=every)
    out.csv("sgd.csv", ["k"] + [f"x_{j + 1}" for j in range(model.d1)] + ["nll"],
            [(s, *x, data.nll(x)) for s, x in zip(steps, xs)])
    out.json("sgd.json", {"final": xs[-1], "nll": data.nll(xs[-1]), "mean_drift_at_final": g_bar(model, xs[-1])})


def cmd_demo_rbm(cfg, P, out, threads):
    model, spec = C.build_model(cfg)
    if cfg["model"]["builder"] != "rbm":
        raise C.ConfigError("demo-rbm needs the rbm builder")
    k = int(P.get("k", 100000))
    x = spec.x
    ys = noise_chain(model.kernel, x, model.y0, k, cfg["seed"])
    G = model.g_values(x)[ys]
    nb = 100
    bm = G[: (k // nb) * nb].reshape(nb, -1, G.shape[1]).mean(axis=1)
    mean = G.mean(axis=0)
    se = bm.std(axis=0, ddof=1) / math.sqrt(nb)
    exact = rbm_exact_gradient(spec, x)
    z = np.abs(mean - exact) / se
    out.csv("rbm.csv", ["coordinate", "pcd_mean", "exact", "stderr", "z"],
            [(j, mean[j], exact[j], se[j], z[j]) for j in range(len(x))])
    out.json("rbm.json", {"steps": k, "max_z": float(z.max()), "within_3se": bool(np.all(z <= 3))})


def cmd_demo_wl(cfg, P, out, threads):
    model, spec = C.build_model(cfg)
    if cfg["model"]["builder"] != "wang_landau":
        raise C.ConfigError("demo-wl needs the wang_landau builder")
    k = int(P.get("k", 100000))
    run = run_wang_landau(spec, C.schedule_of(cfg), k, cfg["seed"], record_every=max(1, k // 200))
    out.csv("wl.csv", ["k"] + [f"x_{i + 1}" for i in range(spec.d)], [(s, *x) for s, x in zip(run.steps, run.x)])
    out.json("wl.json", {"final": run.final, "true": spec.true_x(),
                         "max_abs_error": float(np.abs(run.final - spec.true_x()).max()),
                         "free_energy_differences": wl_free_energy_differences(run),
                         "true_free_energy_differences": spec.free_energy_differences()})


COMMANDS = {
    "simulate": cmd_simulate,
    "ode": cmd_ode,
    "hamiltonian": cmd_hamiltonian,
    "rate-surface": cmd_rate_surface,
    "action": cmd_action,
    "minpath": cmd_minpath,
    "laplace": cmd_laplace,
    "tube": cmd_tube,
    "check-assumptions": cmd_check,
    "demo-sgd": cmd_demo_sgd,
    "demo-rbm": cmd_demo_rbm,
    "demo-wl": cmd_demo_wl,
}

USAGE = "usage: saldp {" + ",".join(COMMANDS) + "} [--config FILE] [--preset NAME] [options]\n"


def _parser(cmd):
    p = argparse.ArgumentParser(prog=f"saldp {cmd}")
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--preset", help="bundled preset name (" + ", ".join(C.preset_names()) + ")")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--no-timestamp", action="store_true", help="omit wall-clock fields from JSON outputs")
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--n", type=int)
    p.add_argument("--N", type=int)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        sys.stdout.write(USAGE)
        return EX_OK if argv else EX_USAGE
    cmd = argv[0]
    if cmd not in COMMANDS:
        sys.stderr.write(f"unknown subcommand {cmd!r}\n" + USAGE)
        return EX_USAGE
    args = _parser(cmd).parse_args(argv[1:])
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    for flag, key in (("alpha", "params.alpha"), ("x", "params.x"), ("n", "params.n"), ("N", "params.N")):
        v = getattr(args, flag)
        if v is not None:
            overrides.append(f"{key}={json.dumps(v)}")
    if args.n is not None:
        overrides.append("params.n_list=null")
    try:
        cfg = C.load(args.config, args.preset, overrides)
        out = Output(cfg, cmd, cfg["out"], timestamp=not args.no_timestamp)
        COMMANDS[cmd](cfg, cfg["params"], out, max(1, args.threads))
    except C.ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EX_CONFIG
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EX_NUMERIC
    for p in out.written:
        sys.stdout.write(p + "\n")
    return EX_OK


if __name__ == "__main__":
    sys.exit(main())
