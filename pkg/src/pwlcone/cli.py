"""Command-line interface.

Every command takes its system either from a JSON definition
(``--system file.json``) or from a built-in benchmark (``--bench chain3``
or ``--bench sdof`` with ``--kn``, ``--c``, ``--cn``). Options may also be
given in a JSON config file (``--config``); flags override the file.
Output goes to ``--out``, else ``$PWLCONE_OUT``, else ``./pwlcone_out``.

Exit codes: 0 success, 2 diagnosed method failure (fold, nodal,
multi-valued), 1 any other error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import arclength as al
from . import bench
from . import graphstyle as gs
from .cone import (
    ConeError,
    ConeSolution,
    attractivity,
    fsp_sweep,
    guess_from_ray,
    load_cone_solution,
    save_cone_solution,
    solve_cone,
    solve_ray_fixed_point,
    solve_k_crossing_cone,
    write_fsp_csv,
)
from .flow import FlowError, simulate, write_trajectory_csv
from .system import assemble_state_space, load_system

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_EXPECTED_FAILURE = 2
OUT_ENV = "PWLCONE_OUT"

DEFAULTS = {
    "bench": "chain3",
    "system": None,
    "kn": 1.5,
    "c": 0.0,
    "cn": 0.0,
    "out": None,
    "x0": None,
    "tend": None,
    "dt": None,
    "k": 1,
    "xi": None,
    "cone": None,
    "nh": None,
    "method": None,
    "theta0": 0.3,
    "s0": 0.3,
    "periods": 5.0,
    "decay": 10.0,
    "tol": 1e-10,
    "kn_values": None,
    "kn_range": None,
    "scenario": None,
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _parse_vector(text) -> np.ndarray:
    """Comma-separated numbers, or a path to a text/JSON file of numbers."""
    if isinstance(text, (list, tuple)):
        return np.asarray(text, dtype=float)
    p = Path(str(text))
    if p.exists():
        raw = p.read_text(encoding="utf-8").strip()
        if raw.startswith("["):
            return np.asarray(json.loads(raw), dtype=float).ravel()
        return np.asarray([float(t) for t in raw.replace(",", " ").split()])
    try:
        return np.asarray([float(t) for t in str(text).split(",") if t.strip()])
    except ValueError as exc:
        raise ConfigError(f"cannot read a vector from {text!r} (not a file, not a comma list)") from exc


def merge_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        data = json.loads(path.read_text(encoding="utf-8"))
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            cfg[key] = val
    _validate(cfg)
    return cfg


def _validate(cfg):
    for key in ("tol", "dt", "tend", "periods", "decay"):
        if cfg[key] is not None and not float(cfg[key]) > 0:
            raise ConfigError(f"{key} must be > 0 (got {cfg[key]})")
    if cfg["nh"] is not None and int(cfg["nh"]) < 1:
        raise ConfigError(f"N_h must be >= 1 (got {cfg['nh']})")
    if int(cfg["k"]) < 1:
        raise ConfigError(f"k must be >= 1 (got {cfg['k']})")
    for key in ("system", "cone"):
        if cfg[key] is not None and not Path(cfg[key]).exists():
            raise ConfigError(f"{key} file {cfg[key]} does not exist")
    if cfg["system"] is None and cfg["bench"] not in ("chain3", "sdof"):
        raise ConfigError(f"unknown benchmark {cfg['bench']!r} (chain3 or sdof)")


def make_system(cfg):
    if cfg["system"] is not None:
        return load_system(cfg["system"])
    maker = bench.make_chain_3dof if cfg["bench"] == "chain3" else bench.make_sdof
    return maker(float(cfg["kn"]), float(cfg["c"]), float(cfg["cn"]))


def out_dir(cfg) -> Path:
    d = Path(cfg["out"] or os.environ.get(OUT_ENV) or "pwlcone_out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path, data):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(bench._plain(data), fh, indent=2)
        fh.write("\n")


def _write_states_csv(path, t, X):
    """Full-state CSV ``t, x1..xn``; ``X`` has shape (n, m)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t"] + [f"x{i + 1}" for i in range(X.shape[0])])
        for k in range(len(t)):
            wr.writerow([f"{v:.17g}" for v in np.r_[t[k], X[:, k]]])


def _say(msg):
    print(msg, flush=True)


# ---------------------------------------------------------------- cone helper

def _get_cone(cfg, ss) -> ConeSolution:
    if cfg["cone"] is not None:
        return load_cone_solution(cfg["cone"])
    k = int(cfg["k"])
    if cfg["xi"] is not None:
        xi = _parse_vector(cfg["xi"])
        if xi.size != ss.n:
            raise ConfigError(f"xi must have {ss.n} entries")
        g = solve_ray_fixed_point(ss, xi, k)
        return solve_k_crossing_cone(ss, k, g, tol=float(cfg["tol"]))
    if cfg["system"] is None and cfg["bench"] == "chain3":
        return bench.chain_cone(float(cfg["kn"]), float(cfg["c"]), float(cfg["cn"]), k)
    if k != 1:
        raise ConfigError("k > 1 needs a seed ray (--xi)")
    return solve_cone(ss)


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg) -> int:
    sys_ = make_system(cfg)
    ss = assemble_state_space(sys_)
    if cfg["x0"] is None:
        raise ConfigError("simulate needs --x0")
    x0 = _parse_vector(cfg["x0"])
    if x0.size != ss.n:
        raise ConfigError(f"x0 must have {ss.n} entries (got {x0.size})")
    if cfg["tend"] is None:
        raise ConfigError("simulate needs --tend")
    tr = simulate(ss, x0, float(cfg["tend"]), dt=cfg["dt"])
    d = out_dir(cfg)
    write_trajectory_csv(tr, d / "trajectory.csv")
    with open(d / "events.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "boundary", "pre", "post", "grazing"])
        for e in tr.events:
            wr.writerow([f"{e.t:.17g}", e.boundary, e.pre, e.post, int(e.grazing)])
    _say(f"{len(tr.t)} samples, {len(tr.events)} events -> {d}")
    return EXIT_OK


def cmd_cone(cfg) -> int:
    ss = assemble_state_space(make_system(cfg))
    sol = _get_cone(cfg, ss)
    d = out_dir(cfg)
    save_cone_solution(sol, d / "cone.json")
    att = attractivity(ss, sol)
    _write_json(d / "attractivity.json", {
        "attractive": att.attractive,
        "marginal": att.marginal,
        "ambiguous": att.ambiguous,
        "message": att.message,
        "eigenvalues_re": att.eigenvalues.real,
        "eigenvalues_im": att.eigenvalues.imag,
    })
    if sol.k != int(cfg["k"]):
        _say(f"note: the flow closes after {sol.k} crossings, not {cfg['k']}")
    _say(f"k={sol.k} mu={sol.mu:.12g} T={sol.T:.12g} omega={sol.omega:.12g} attractive={att.attractive}")
    _say(f"times={np.array2string(sol.times, precision=10)}")
    return EXIT_OK


def cmd_graphstyle(cfg) -> int:
    ss = assemble_state_space(make_system(cfg))
    sol = _get_cone(cfg, ss)
    sel = gs.MasterSelection.switching_dof(ss)
    nh = int(cfg["nh"] or 20)
    method = cfg["method"] or "galerkin"
    res = gs.solve_generating_curve_hbm(ss, sel, nh, reference=sol, tol=min(1e-9, float(cfg["tol"]) * 10), method=method)
    d = out_dir(cfg)
    if isinstance(res, gs.FailureDiagnosis):
        _write_json(d / "diagnosis.json", {"kind": res.kind, "evidence": res.evidence})
        _say(f"graph-style parametrization fails: {res.kind} {json.dumps(bench._plain(res.evidence))}")
        _say("use the arc-length parametrization for this case")
        return EXIT_EXPECTED_FAILURE
    gs.save_theta_curve(res, d / "theta_curve.json")
    X0 = res.state(float(cfg["theta0"]))[:, 0]
    t_end = float(cfg["tend"]) if cfg["tend"] else float(cfg["periods"]) * sol.T
    tt = np.linspace(0.0, t_end, 2001)
    t, U = gs.rom_integrate(ss, res, X0[sel.u_index], X0[sel.v_index], t_end, t_eval=tt)
    gs.write_rom_csv(t, U, d / "rom.csv")
    _write_states_csv(d / "reconstructed.csv", t, gs.lift(res, U[0], U[1]))
    _write_json(d / "diagnosis.json", {"kind": "none", "harmonic_residual": res.report.residual_norm, "ln_mu": gs.log_multiplier(ss, res)})
    _say(f"N_h={nh} residual={res.report.residual_norm:.3e} ln(mu)={gs.log_multiplier(ss, res):.10g} -> {d}")
    return EXIT_OK


def cmd_arclength(cfg) -> int:
    ss = assemble_state_space(make_system(cfg))
    sol = _get_cone(cfg, ss)
    nh = int(cfg["nh"] or 12)
    curve = al.solve_generating_curve(ss, sol, method=cfg["method"] or "hbm", n_harmonics=nh)
    mu = al.multiplier_line_integral(ss, curve)
    d = out_dir(cfg)
    al.save_spherical_curve(curve, d / "spherical_curve.json")
    s0 = float(cfg["s0"]) * curve.L
    if cfg["tend"]:
        t_end = float(cfg["tend"])
    elif mu < 1 - 1e-9:
        t_end = np.log(float(cfg["decay"])) / -np.log(mu) * sol.T
    else:
        t_end = float(cfg["periods"]) * sol.T
    tt = np.linspace(0.0, t_end, 2001)
    t, r, s = al.rom_integrate(ss, curve, 1.0, s0, t_end, t_eval=tt)
    al.write_reduced_csv(t, r, s, d / "reduced.csv")
    _write_states_csv(d / "reconstructed.csv", t, r * curve(s))
    _write_json(d / "summary.json", {"method": curve.method, "N_h": nh, "L": curve.L, "mu": mu, "diagnostics": curve.diagnostics})
    _say(f"method={curve.method} N_h={nh} L={curve.L:.12g} mu={mu:.12g} -> {d}")
    return EXIT_OK


def _kn_values(cfg):
    if cfg["kn_values"] is not None:
        return [float(v) for v in _parse_vector(cfg["kn_values"])]
    if cfg["kn_range"] is not None:
        a, b, n = _parse_vector(cfg["kn_range"])
        if not (0 < a < b) or n < 2:
            raise ConfigError("kn_range must be start,stop,count with 0 < start < stop and count >= 2")
        return list(np.geomspace(a, b, int(n)))
    return list(bench.FSP_VALUES)


def cmd_fsp(cfg) -> int:
    values = _kn_values(cfg)
    if cfg["system"] is not None:
        base = load_system(cfg["system"])
        from dataclasses import replace
        factory = lambda kn: replace(base, k_n=kn)
    else:
        maker = bench.make_chain_3dof if cfg["bench"] == "chain3" else bench.make_sdof
        factory = lambda kn: maker(kn, float(cfg["c"]), float(cfg["cn"]))
    pts = fsp_sweep(factory, values)
    d = out_dir(cfg)
    write_fsp_csv(pts, d / "fsp.csv")
    sys0 = factory(values[0])
    w1 = float(np.sqrt(np.linalg.eigvals(np.linalg.solve(sys0.M, sys0.K)).real.min()))
    with open(d / "fsp_normalized.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["kn_over_k", "omega_over_omega1"])
        for p in pts:
            wr.writerow([f"{p.kn_over_k:.17g}", f"{p.omega / w1:.17g}"])
    for p in pts:
        _say(f"k_n/k={p.kn_over_k:<10.6g} omega={p.omega:.12g} omega/omega1={p.omega / w1:.10g}")
    return EXIT_OK


def cmd_validate(cfg) -> int:
    name = cfg["scenario"]
    rep = bench.run_scenario(name, str(out_dir(cfg)))
    _say(rep.summary())
    return EXIT_OK if rep.passed else EXIT_ERROR


def cmd_list(cfg) -> int:
    for sc in bench.REGISTRY.values():
        _say(f"{sc.name:<20} {sc.method:<16} {sc.expected}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "cone": cmd_cone,
    "graphstyle": cmd_graphstyle,
    "arclength": cmd_arclength,
    "fsp": cmd_fsp,
    "validate": cmd_validate,
    "list": cmd_list,
}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; 2 is reserved for diagnosed method failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pwlcone", description="Invariant cones of piecewise-linear oscillators.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with option values (flags override)")
    common.add_argument("--system", help="JSON system definition {N, M, C, K, w, k_n, c_n}")
    common.add_argument("--bench", choices=["chain3", "sdof"], help="built-in benchmark (default chain3)")
    common.add_argument("--kn", type=float, help="contact stiffness ratio k_n/k")
    common.add_argument("--c", type=float, help="damping ratio c/k (C = c K)")
    common.add_argument("--cn", type=float, help="contact damping c_n")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./pwlcone_out)")
    common.add_argument("--tol", type=float, help="solver tolerance")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="full-system simulation")
    s.add_argument("--x0", help="initial state: comma list or file")
    s.add_argument("--tend", type=float)
    s.add_argument("--dt", type=float, help="output sampling step")

    def cone_opts(q):
        q.add_argument("--k", type=int, help="crossings per cycle (default 1)")
        q.add_argument("--xi", help="seed ray: comma list or file")
        q.add_argument("--cone", help="use a saved cone solution instead of solving")

    s = sub.add_parser("cone", parents=[common], help="solve a k-crossing cone")
    cone_opts(s)

    s = sub.add_parser("graphstyle", parents=[common], help="graph-style curve and ROM")
    cone_opts(s)
    s.add_argument("--nh", type=int, help="harmonic order (default 20)")
    s.add_argument("--method", choices=["galerkin", "collocation"])
    s.add_argument("--theta0", type=float, help="ROM initial master angle")
    s.add_argument("--tend", type=float)
    s.add_argument("--periods", type=float)

    s = sub.add_parser("arclength", parents=[common], help="arc-length curve, multiplier and ROM")
    cone_opts(s)
    s.add_argument("--nh", type=int, help="harmonic order (default 12)")
    s.add_argument("--method", choices=["hbm", "shooting"])
    s.add_argument("--s0", type=float, help="ROM start as a fraction of L")
    s.add_argument("--tend", type=float)
    s.add_argument("--periods", type=float)
    s.add_argument("--decay", type=float, help="radial decay factor that ends a damped ROM run")

    s = sub.add_parser("fsp", parents=[common], help="frequency-stiffness branch")
    s.add_argument("--kn-values", dest="kn_values", help="comma list of k_n/k values")
    s.add_argument("--kn-range", dest="kn_range", help="start,stop,count (log spaced)")

    s = sub.add_parser("validate", parents=[common], help="run a benchmark scenario")
    s.add_argument("scenario", choices=sorted(bench.REGISTRY))

    sub.add_parser("list", parents=[common], help="list benchmark scenarios")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ConeError, FlowError, gs.GraphStyleError, al.ArcLengthError, al.SingularTangentError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
