"""Command-line driver: iteration tables, dense bound verification, Newton runs.

Configuration files are UTF-8 text with one ``key = value`` per line, ``#``
comments and comma-separated lists.  Unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .al_precond import VARIANTS, default_W, solve_stokes
from .assembly import assemble_stokes, export_matrix_market
from .elements import make_pressure_space, make_velocity_space
from .mesh import build_hierarchy, build_rect_mesh
from .multigrid import build_multigrid
from .problems.sinker import SinkerConfig, default_sinker_count
from .problems.viscoplastic import ViscoplasticConfig, ViscoplasticProblem, newton_solve, write_fields_csv
from .spectral_analysis import MAX_DENSE, verify_lemma

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

TABLE_COLUMNS = ["problem", "variant", "DR", "gamma", "iterations", "converged", "relative_residual", "seconds"]
VERIFY_COLUMNS = ["DR", "gamma", "variant", "c_mu", "C_mu", "d_mu", "D_mu", "e_mu", "E_mu",
                  "f_mu", "F_mu", "lam_min", "lam_max", "holds"]
NEWTON_COLUMNS = ["gamma", "step", "linear_iterations", "linear_converged", "residual",
                  "relative_residual", "step_length", "seconds"]

EPILOG = f"""\
CSV columns
  table:     {', '.join(TABLE_COLUMNS)}
  verify:    {', '.join(VERIFY_COLUMNS)}
  nonlinear: {', '.join(NEWTON_COLUMNS)}
The seconds column is wall time and is the only nondeterministic field.

Exit codes: 0 success, 1 failure (violated bound or internal error),
2 bad configuration or problem too large for dense verification.
"""


class ConfigError(ValueError):
    pass


def _floats(v):
    return [float(x) for x in v]


def _one(conv):
    def parse(v):
        if len(v) != 1:
            raise ConfigError("expected a single value")
        return conv(v[0])
    return parse


def _choice(*options):
    def parse(v):
        if len(v) != 1 or v[0] not in options:
            raise ConfigError(f"expected one of {', '.join(options)}")
        return v[0]
    return parse


@dataclass
class ExperimentConfig:
    problem: str = "sinker"
    nx: int = 8
    ny: int = 0                    # 0 means same as nx
    levels: int = 1
    k: int = 2
    gamma: list = field(default_factory=lambda: [0.0, 10.0, 1000.0])
    DR: list = field(default_factory=lambda: [1e4])
    variant: list = field(default_factory=lambda: ["P1"])
    W: str = "auto"
    inner: str = "auto"            # lu | mg; auto picks mg when levels > 1
    smoother: str = "robust"
    transfer: str = "robust"
    cycle: str = "F"
    steps: int = 5
    tol: float = 1e-6
    maxit: int = 300
    seed: int = 0
    n_sinkers: int = 0             # 0 means chosen from the coarse mesh size
    mu: float = 1.0                # custom-constant-viscosity only
    rheology: str = "viscoplastic"
    stress_update: str = "linearized"
    newton_tol: float = 1e-8
    newton_maxit: int = 15
    output: str = ""
    fields_output: str = ""


PARSERS = {
    "problem": _choice("sinker", "viscoplastic", "custom-constant-viscosity"),
    "nx": _one(int), "ny": _one(int), "levels": _one(int), "k": _one(int),
    "gamma": _floats, "DR": _floats,
    "variant": lambda v: list(v),
    "W": _choice("auto", "Mp", "Mp_invvisc"),
    "inner": _choice("auto", "lu", "mg"),
    "smoother": _choice("robust", "star", "jacobi"),
    "transfer": _choice("robust", "standard"),
    "cycle": _choice("F", "V"),
    "steps": _one(int), "tol": _one(float), "maxit": _one(int), "seed": _one(int),
    "n_sinkers": _one(int), "mu": _one(float),
    "rheology": _choice("viscoplastic", "linear"),
    "stress_update": _choice("linearized", "consistent"),
    "newton_tol": _one(float), "newton_maxit": _one(int),
    "output": _one(str), "fields_output": _one(str),
}


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        items = [s.strip() for s in value.split(",") if s.strip()]
        if not items:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        try:
            setattr(cfg, key, PARSERS[key](items))
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    if not cfg.gamma:
        raise ConfigError("gamma list is empty")
    if any(g < 0 for g in cfg.gamma):
        raise ConfigError("gamma must be non-negative")
    if any(d < 1 for d in cfg.DR):
        raise ConfigError("DR must be at least 1")
    bad = [v for v in cfg.variant if v not in VARIANTS]
    if bad or not cfg.variant:
        raise ConfigError(f"variant must be among {', '.join(VARIANTS)}")
    if cfg.nx < 1 or cfg.ny < 0 or cfg.levels < 1 or cfg.k < 2:
        raise ConfigError("need nx >= 1, levels >= 1 and k >= 2")
    if cfg.steps < 1 or cfg.maxit < 1 or not (0 < cfg.tol < 1):
        raise ConfigError("invalid solver settings")


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        validate(cfg)
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# problem setup


class ConstantViscosity:
    def __init__(self, mu):
        self.mu = mu

    def __call__(self, x):
        return np.full(len(np.atleast_2d(x)), self.mu)


def _sinker_cfg(cfg: ExperimentConfig, DR: float) -> SinkerConfig:
    n = cfg.n_sinkers or default_sinker_count(min(cfg.nx, cfg.ny or cfg.nx))
    return SinkerConfig(DR=DR, n=n, seed=cfg.seed)


def linear_blocks(cfg: ExperimentConfig, DR: float, gamma: float, W: str):
    """Per-level blocks (coarse to fine) for the linear problems."""
    sk = _sinker_cfg(cfg, DR)
    visc = ConstantViscosity(cfg.mu) if cfg.problem == "custom-constant-viscosity" else sk.viscosity
    hier = build_hierarchy(build_rect_mesh(nx=cfg.nx, ny=cfg.ny or cfg.nx), cfg.levels - 1)
    out = []
    for m in hier.levels:
        V = make_velocity_space(m, cfg.k)
        Q = make_pressure_space(m, cfg.k)
        out.append(assemble_stokes(V, Q, visc, sk.rhs, gamma=gamma, W=W))
    return out


def _W(cfg, variant):
    return default_W(variant) if cfg.W == "auto" else cfg.W


def _smoother(cfg):
    return "jacobi" if cfg.smoother == "jacobi" else "star"


def _dump(dump_dir, tag, blocks):
    if dump_dir:
        export_matrix_market(blocks, os.path.join(dump_dir, tag))


def _run_linear(cfg: ExperimentConfig, variant, DR, gamma, dump_dir):
    t0 = time.perf_counter()
    levels = linear_blocks(cfg, DR, gamma, _W(cfg, variant))
    fine = levels[-1]
    _dump(dump_dir, f"{variant}_DR{DR:g}_gamma{gamma:g}", fine)
    use_mg = cfg.inner == "mg" or (cfg.inner == "auto" and cfg.levels > 1)
    inner = build_multigrid(levels, smoother=_smoother(cfg), transfer=cfg.transfer, cycle=cfg.cycle,
                            steps=cfg.steps) if use_mg else "lu"
    sol = solve_stokes(fine, variant, inner=inner, tol=cfg.tol, maxiter=cfg.maxit)
    rep = sol.report
    return {"problem": cfg.problem, "variant": variant, "DR": DR, "gamma": gamma,
            "iterations": rep.iterations, "converged": rep.converged,
            "relative_residual": float(rep.relative_residual), "seconds": time.perf_counter() - t0}


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _open_output(path, default):
    return open(path or default, "w", encoding="utf-8", newline="")


def _sweep(tasks, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda t: t(), tasks))
    return [t() for t in tasks]


def run_table(cfg: ExperimentConfig, dump_dir=None, threads=1, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    if cfg.problem == "viscoplastic":
        raise ConfigError("table runs the linear problems; use 'nonlinear' for viscoplastic")
    tasks = [(lambda v=v, d=d, g=g: _run_linear(cfg, v, d, g, dump_dir))
             for v in cfg.variant for d in cfg.DR for g in cfg.gamma]
    rows = _sweep(tasks, threads)
    rows.sort(key=lambda r: (cfg.variant.index(r["variant"]), r["DR"], r["gamma"]))
    with _open_output(cfg.output, "table.csv") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    head = ["variant", "DR", "gamma", "iterations", "converged"]
    print("  ".join(f"{h:>10}" for h in head), file=stream)
    for r in rows:
        it = str(r["iterations"]) if r["converged"] else f"-({r['iterations']})"
        print("  ".join(f"{x:>10}" for x in (r["variant"], _fmt(r["DR"]), _fmt(r["gamma"]), it,
                                               str(r["converged"]))), file=stream)
    return EXIT_OK


def run_verify(cfg: ExperimentConfig, dump_dir=None, shat_scale=1.0, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    if cfg.problem == "viscoplastic":
        raise ConfigError("verify works on the linear problems")
    ny = cfg.ny or cfg.nx
    k = cfg.k
    n_dense = cfg.nx * ny * 2 ** (2 * (cfg.levels - 1)) * (2 * k * k + k * (k + 1) // 2)
    if n_dense > MAX_DENSE:
        raise ConfigError(f"about {n_dense} unknowns; dense verification is limited to {MAX_DENSE}")
    all_ok = True
    rows = []
    for d in cfg.DR:
        for v in cfg.variant:
            if v not in ("P1", "P2"):
                raise ConfigError("verify supports variants P1 and P2")
            W = _W(cfg, v)
            blk = linear_blocks(cfg, d, 0.0, W)[-1]
            _dump(dump_dir, f"{v}_DR{d:g}", blk)
            reps = verify_lemma(blk, v, cfg.gamma, W_choice=None if cfg.W == "auto" else cfg.W,
                                shat_scale=shat_scale)
            for r in reps:
                all_ok &= r.holds
                rows.append((d, r))
    with _open_output(cfg.output, "verify.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERIFY_COLUMNS)
        for d, r in rows:
            row = r.row()
            w.writerow([repr(d)] + [repr(row[c]) if isinstance(row[c], float) else row[c]
                                    for c in VERIFY_COLUMNS[1:]])
    for d, r in rows:
        mark = "ok" if r.holds else "VIOLATED"
        print(f"DR={d:<8g} {r.variant} gamma={r.gamma:<8g} [{r.lam_min:.6g}, {r.lam_max:.6g}] "
              f"within [{r.f_mu:.6g}, {r.F_mu:.6g}]  {mark}", file=stream)
    return EXIT_OK if all_ok else EXIT_FAIL


def run_nonlinear(cfg: ExperimentConfig, dump_dir=None, threads=1, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    if cfg.problem != "viscoplastic":
        raise ConfigError("nonlinear needs problem = viscoplastic")
    vp = ViscoplasticConfig(levels=cfg.levels, k=cfg.k, linear=cfg.rheology == "linear")
    variant = cfg.variant[0]

    def one(g):
        return g, newton_solve(vp, gamma=g, variant=variant, W=None if cfg.W == "auto" else cfg.W,
                               tol=cfg.newton_tol, maxit=cfg.newton_maxit, linear_tol=cfg.tol,
                               linear_maxit=cfg.maxit, stress_update=cfg.stress_update,
                               smoother=_smoother(cfg), transfer=cfg.transfer)

    if dump_dir:
        from .problems.viscoplastic import assemble_newton_system, initial_state
        prob = ViscoplasticProblem(vp)
        _dump(dump_dir, "newton_step1", assemble_newton_system(prob, initial_state(prob), cfg.gamma[0],
                                                               _W(cfg, variant))[-1])
    results = _sweep([(lambda g=g: one(g)) for g in cfg.gamma], threads)
    with _open_output(cfg.output, "nonlinear.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NEWTON_COLUMNS)
        for g, res in results:
            for s in res.steps:
                w.writerow([repr(g), s.step, s.linear_iterations, s.linear_converged, repr(s.residual),
                            repr(s.relative_residual), repr(s.step_length), repr(s.seconds)])
    for g, res in results:
        its = res.linear_iterations
        avg = float(np.mean(its)) if its else 0.0
        status = "converged" if res.converged else "not converged"
        failed = ", linear solve failed" if res.any_linear_failure else ""
        print(f"gamma={g:g}: {len(its)} Newton steps ({status}{failed}), "
              f"average linear iterations {avg:.1f}", file=stream)
    if cfg.fields_output:
        g, res = results[-1]
        prob = ViscoplasticProblem(vp)
        with open(cfg.fields_output, "w", encoding="utf-8", newline="") as fh:
            write_fields_csv(vp, prob.V, prob.Q, res.u, res.p, fh)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alstokes", description="Augmented Lagrangian Stokes experiments.",
                                 epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", choices=["table", "verify", "nonlinear"])
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--dump-matrices", metavar="DIR", help="write Matrix Market files of the assembled blocks")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for sweeps and BLAS")
    ap.add_argument("--debug-scale-shat", type=float, default=1.0,
                    help="verify only: scale S_hat to check that violations are detected")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        with threadpool_limits(limits=args.threads):
            if args.command == "table":
                return run_table(cfg, args.dump_matrices, args.threads)
            if args.command == "verify":
                return run_verify(cfg, args.dump_matrices, args.debug_scale_shat)
            return run_nonlinear(cfg, args.dump_matrices, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported as an internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
