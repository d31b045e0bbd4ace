"""Config-driven experiment harness and command-line interface.

Subcommands reproduce the three studies (smooth convergence, interior
layer, conditioning) plus free-form custom runs.  All output is
machine-readable: CSV with 17-significant-digit decimals for re-parsing,
Markdown with 3-significant-digit scientific notation for reading.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .analysis import (
    LevelRecord,
    bound_violation,
    condition_number,
    conservation_report,
    eoc,
    error_h1_linear,
    error_l2,
    fit_rate,
    jump_norm,
)
from .assembly import ProblemSpec, assemble_system
from .fespace import DofMap, write_egfunction
from .mesh import build_structured, refine_uniform
from .solver import solve_bound_preserving, solve_standard_eg, write_trace

__all__ = [
    "StudyConfig",
    "StudyReport",
    "run_smooth",
    "run_layer",
    "run_condition",
    "run_custom",
    "emit_tables",
    "parse_report_csv",
    "main",
]

CSV_HEADER = (
    "elements,h,err_l2,eoc_l2,err_h1,eoc_h1,jump_norm,eoc_jump,"
    "const_l2,eoc_const,iters,min_val,max_val,cons_residual"
)


@dataclass
class StudyConfig:
    """Flat experiment configuration; experiment defaults fill gaps."""

    experiment: str = "smooth"
    levels: int = 5
    nx: int = 8
    ny: int = 4
    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0
    epsilon: float = 1e-5
    mu: float = 1.0
    gamma: float = 10.0
    beta: int = 4
    alpha: float = 1.0
    omega: float = 0.5
    bound_a: float = 0.0
    bound_b: float = 1.0
    tol_inner: float = 1e-9
    tol_outer: float = 1e-12
    max_inner: int = 500
    max_outer: int = 200
    drop_inner_coupling: bool = False
    raw_outer_update: bool = False
    emit_fields: bool = False
    out_dir: str = "."
    check: bool = False

    def problem_spec(self, f=None, u_D=None, **overrides):
        kwargs = dict(
            epsilon=self.epsilon,
            mu=self.mu,
            gamma=self.gamma,
            beta=self.beta,
            alpha=self.alpha,
            omega=self.omega,
            bounds=(self.bound_a, self.bound_b),
            f=f,
            u_D=u_D,
            tol_inner=self.tol_inner,
            tol_outer=self.tol_outer,
            max_inner=self.max_inner,
            max_outer=self.max_outer,
            drop_inner_coupling=self.drop_inner_coupling,
            raw_outer_update=self.raw_outer_update,
        )
        kwargs.update(overrides)
        return ProblemSpec(**kwargs)


_EXPERIMENT_DEFAULTS = {
    "smooth": dict(
        levels=5, nx=8, ny=4, x0=-1.0, y0=0.0, x1=1.0, y1=1.0,
        epsilon=1e-5, mu=1.0, gamma=10.0, beta=4, alpha=1.0, omega=0.5,
        bound_a=0.0, bound_b=1.0, tol_inner=1e-9, tol_outer=1e-12,
    ),
    "layer": dict(
        levels=2, nx=12, ny=12, x0=0.0, y0=0.0, x1=1.0, y1=1.0,
        epsilon=1e-7, mu=1.0, gamma=10.0, beta=4, alpha=1.0, omega=0.5,
        bound_a=0.0, bound_b=1.0, tol_inner=1e-9, tol_outer=1e-12,
    ),
    "condition": dict(
        levels=5, nx=2, ny=2, x0=0.0, y0=0.0, x1=1.0, y1=1.0,
        epsilon=1.0, mu=1.0, gamma=10.0, beta=1, alpha=1.0,
    ),
    "custom": dict(),
}


@dataclass
class StudyReport:
    """Study results: config echo, per-level records, derived EOC columns."""

    config: StudyConfig
    records: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    all_converged: bool = True

    def eoc_columns(self):
        """EOC between consecutive levels for the four error columns."""
        cols = {"eoc_l2": [], "eoc_h1": [], "eoc_jump": [], "eoc_const": []}
        prev = None
        for rec in self.records:
            for key, attr in (
                ("eoc_l2", "err_l2"),
                ("eoc_h1", "err_h1"),
                ("eoc_jump", "jump_norm"),
                ("eoc_const", "const_l2"),
            ):
                if prev is None:
                    cols[key].append(np.nan)
                else:
                    cols[key].append(eoc(getattr(prev, attr), getattr(rec, attr)))
            prev = rec
        return cols


def apply_experiment_defaults(config):
    """Fill experiment defaults for every field the user did not set."""
    if config.experiment not in _EXPERIMENT_DEFAULTS:
        raise ValueError("unknown experiment %r" % config.experiment)
    base = StudyConfig()
    updates = {}
    for key, val in _EXPERIMENT_DEFAULTS[config.experiment].items():
        if getattr(config, key) == getattr(base, key):
            updates[key] = val
    return replace(config, **updates)


def smooth_exact():
    """Manufactured solution of the smooth study and its data."""

    def u(x, y):
        return np.sin(np.pi * (np.asarray(x) + 1.0) / 2.0) * np.sin(np.pi * np.asarray(y))

    def grad_u(x, y):
        sx = np.sin(np.pi * (np.asarray(x) + 1.0) / 2.0)
        cx = np.cos(np.pi * (np.asarray(x) + 1.0) / 2.0)
        sy = np.sin(np.pi * np.asarray(y))
        cy = np.cos(np.pi * np.asarray(y))
        return 0.5 * np.pi * cx * sy, np.pi * sx * cy

    lap_factor = np.pi**2 / 4.0 + np.pi**2

    def make_f(epsilon, mu):
        def f(x, y):
            return (epsilon * lap_factor + mu) * u(x, y)

        return f

    return u, grad_u, make_f


def layer_source(x, y):
    """Discontinuous source of the interior-layer study."""
    x = np.asarray(x)
    y = np.asarray(y)
    inside = (x >= 0.25) & (x <= 0.75) & (y >= 0.25) & (y <= 0.75)
    return np.where(inside, 0.0, 1.0)


def _mesh_sequence(config):
    mesh = build_structured(config.nx, config.ny, (config.x0, config.y0, config.x1, config.y1))
    meshes = [mesh]
    for _ in range(config.levels - 1):
        mesh = refine_uniform(mesh)
        meshes.append(mesh)
    return meshes


def _record_solution(mesh, spec, system, solution, elapsed):
    u_plus = getattr(solution, "u_plus", solution)
    residuals = conservation_report(mesh, system, solution)
    mn, mx, _ = bound_violation(mesh, u_plus, spec.bounds, tol=1e-10)
    trace = getattr(solution, "trace", None)
    return LevelRecord(
        n_elements=mesh.num_elements,
        h=mesh.h,
        jump_norm=jump_norm(mesh, spec, u_plus.const_coeffs),
        const_l2=float(np.sqrt(u_plus.const_coeffs @ (system.M0_diag * u_plus.const_coeffs))),
        outer_iters=trace.outer_iters if trace is not None else 0,
        min_val=mn,
        max_val=mx,
        max_conservation_residual=float(np.max(np.abs(residuals))),
        b_norm=float(np.linalg.norm(np.concatenate([system.b1, system.b0]))),
        nonlinear_residual=(
            trace.nonlinear_residual if trace is not None else np.nan
        ),
        wall_clock=elapsed,
    )


def run_smooth(config):
    """Convergence study with the manufactured smooth solution."""
    config = apply_experiment_defaults(config)
    u, grad_u, make_f = smooth_exact()
    f = make_f(config.epsilon, config.mu)
    spec = config.problem_spec(f=f, u_D=u)
    report = StudyReport(config=config)
    for level, mesh in enumerate(_mesh_sequence(config)):
        t0 = time.perf_counter()
        dofs = DofMap.from_mesh(mesh)
        system = assemble_system(mesh, spec, dofs, _lift(mesh, spec))
        solution = solve_bound_preserving(mesh, spec, dofs, system)
        rec = _record_solution(mesh, spec, system, solution, time.perf_counter() - t0)
        rec.err_l2 = error_l2(mesh, u, solution.u_plus)
        rec.err_h1 = error_h1_linear(mesh, grad_u, solution.u_plus)
        report.records.append(rec)
        report.all_converged &= solution.trace.converged
        _maybe_emit_fields(config, solution.u_plus, "smooth_level%d" % level)
        _maybe_emit_trace(config, solution.trace, level, "smooth")
    return report


def run_layer(config):
    """Interior-layer study: bound-preserving method plus the standard
    EG comparator (beta = 1, alpha = 0, direct solve) on every level."""
    config = apply_experiment_defaults(config)
    if config.nx % 4 or config.ny % 4:
        raise ValueError("layer study requires nx, ny divisible by 4")
    u_D = lambda x, y: 0.0 * np.asarray(x)
    spec_bp = config.problem_spec(f=layer_source, u_D=u_D, f_quadrature="centroid")
    spec_std = config.problem_spec(
        f=layer_source, u_D=u_D, f_quadrature="centroid", beta=1, alpha=0.0
    )
    report = StudyReport(config=config)
    standard_rows = []
    for level, mesh in enumerate(_mesh_sequence(config)):
        t0 = time.perf_counter()
        dofs = DofMap.from_mesh(mesh)
        system = assemble_system(mesh, spec_bp, dofs, _lift(mesh, spec_bp))
        solution = solve_bound_preserving(mesh, spec_bp, dofs, system)
        rec = _record_solution(mesh, spec_bp, system, solution, time.perf_counter() - t0)
        report.records.append(rec)
        report.all_converged &= solution.trace.converged

        system_std = assemble_system(mesh, spec_std, dofs, _lift(mesh, spec_std))
        u_std = solve_standard_eg(mesh, spec_std, dofs, system_std)
        mn, mx, nviol = bound_violation(mesh, u_std, spec_std.bounds, tol=1e-10)
        res_std = conservation_report(mesh, system_std, u_std)
        b_norm = float(np.linalg.norm(np.concatenate([system_std.b1, system_std.b0])))
        standard_rows.append(
            dict(
                n_elements=mesh.num_elements,
                h=mesh.h,
                min_val=mn,
                max_val=mx,
                violations=nviol,
                max_conservation_residual=float(np.max(np.abs(res_std))),
                b_norm=b_norm,
            )
        )
        _maybe_emit_fields(config, solution.u_plus, "layer_bp_level%d" % level)
        _maybe_emit_fields(config, u_std, "layer_standard_level%d" % level)
        _maybe_emit_trace(config, solution.trace, level, "layer")
    report.extra["standard"] = standard_rows
    return report


def run_condition(config, betas=(1, 2, 4)):
    """Condition numbers of the monolithic and split matrices.

    Uses eps = mu = 1 on structured unit-square grids with a penalty
    factor above the interior-penalty coercivity threshold (gamma = 10
    by default; values below about 4 make the monolithic matrix
    indefinite on right-triangle meshes); only the exponent beta varies.
    """
    config = apply_experiment_defaults(config)
    report = StudyReport(config=config)
    rows = []
    meshes = _mesh_sequence(config)
    for beta in betas:
        spec = config.problem_spec(beta=beta, epsilon=1.0, mu=1.0)
        for mesh in meshes:
            dofs = DofMap.from_mesh(mesh)
            system = assemble_system(mesh, spec, dofs)
            rows.append(
                dict(
                    beta=beta,
                    n_elements=mesh.num_elements,
                    h=mesh.h,
                    cond_A=condition_number(system.full_matrix()),
                    cond_A1=condition_number(system.A11),
                    cond_A0=condition_number(system.A00),
                )
            )
    report.extra["condition"] = rows
    return report


def run_custom(config, f=None, u_D=None):
    """Bound-preserving solve on a user-defined configuration."""
    config_filled = apply_experiment_defaults(config)
    if f is None:
        f = lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    if u_D is None:
        u_D = lambda x, y: 0.0 * np.asarray(x)
    spec = config_filled.problem_spec(f=f, u_D=u_D)
    report = StudyReport(config=config_filled)
    for level, mesh in enumerate(_mesh_sequence(config_filled)):
        t0 = time.perf_counter()
        dofs = DofMap.from_mesh(mesh)
        system = assemble_system(mesh, spec, dofs, _lift(mesh, spec))
        solution = solve_bound_preserving(mesh, spec, dofs, system)
        rec = _record_solution(mesh, spec, system, solution, time.perf_counter() - t0)
        report.records.append(rec)
        report.all_converged &= solution.trace.converged
        _maybe_emit_fields(config_filled, solution.u_plus, "custom_level%d" % level)
    return report


def _lift(mesh, spec):
    from .fespace import dirichlet_lift, EGFunction
    import numpy as _np

    if spec.u_D is None:
        return EGFunction(_np.zeros(mesh.num_vertices), _np.zeros(mesh.num_elements))
    return dirichlet_lift(mesh, spec.u_D)


def _maybe_emit_fields(config, func, name):
    if config.emit_fields:
        os.makedirs(config.out_dir, exist_ok=True)
        write_egfunction(func, os.path.join(config.out_dir, name + ".csv"))


def _maybe_emit_trace(config, trace, level, name):
    if config.emit_fields:
        os.makedirs(config.out_dir, exist_ok=True)
        write_trace(trace, os.path.join(config.out_dir, "%s_trace_level%d.csv" % (name, level)), level)


def _fmt_full(x):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "--"
    return "%.17g" % x


def _fmt_short(x):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "--"
    return "%.2e" % x


def emit_tables(report, out_dir, basename="study", formats=("csv", "markdown")):
    """Write the study table as CSV and/or Markdown; returns file paths."""
    os.makedirs(out_dir, exist_ok=True)
    eocs = report.eoc_columns()
    paths = []
    rows = []
    for i, rec in enumerate(report.records):
        rows.append(
            [
                rec.n_elements,
                rec.h,
                rec.err_l2,
                eocs["eoc_l2"][i],
                rec.err_h1,
                eocs["eoc_h1"][i],
                rec.jump_norm,
                eocs["eoc_jump"][i],
                rec.const_l2,
                eocs["eoc_const"][i],
                rec.outer_iters,
                rec.min_val,
                rec.max_val,
                rec.max_conservation_residual,
            ]
        )
    if "csv" in formats:
        path = os.path.join(out_dir, basename + ".csv")
        with open(path, "w", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in rows:
                cells = [str(row[0])] + [_fmt_full(v) for v in row[1:10]]
                cells += [str(row[10])] + [_fmt_full(v) for v in row[11:]]
                fh.write(",".join(cells) + "\n")
        paths.append(path)
    if "markdown" in formats:
        path = os.path.join(out_dir, basename + ".md")
        header = CSV_HEADER.split(",")
        with open(path, "w") as fh:
            fh.write("| " + " | ".join(header) + " |\n")
            fh.write("|" + "---|" * len(header) + "\n")
            for row in rows:
                cells = [str(row[0])] + [_fmt_short(v) for v in row[1:10]]
                cells += [str(row[10])] + [_fmt_short(v) for v in row[11:]]
                fh.write("| " + " | ".join(cells) + " |\n")
        paths.append(path)
    return paths


def emit_condition_table(report, out_dir, basename="condition"):
    """CSV of the conditioning study: one row per (beta, level)."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, basename + ".csv")
    with open(path, "w", newline="") as fh:
        fh.write("beta,elements,h,cond_A,cond_A1,cond_A0\n")
        for row in report.extra["condition"]:
            fh.write(
                "%d,%d,%s,%s,%s,%s\n"
                % (
                    row["beta"],
                    row["n_elements"],
                    _fmt_full(row["h"]),
                    _fmt_full(row["cond_A"]),
                    _fmt_full(row["cond_A1"]),
                    _fmt_full(row["cond_A0"]),
                )
            )
    return path


def parse_report_csv(path):
    """Re-parse a study CSV into a list of numeric dicts ("--" -> nan)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER.split(","):
            raise ValueError("unexpected CSV header in %s" % path)
        for row in reader:
            parsed = {}
            for key, val in row.items():
                if val == "--":
                    parsed[key] = np.nan
                elif key in ("elements", "iters"):
                    parsed[key] = int(val)
                else:
                    parsed[key] = float(val)
            out.append(parsed)
    return out


# ---------------------------------------------------------------------------
# configuration files and command line
# ---------------------------------------------------------------------------

_BOOL_KEYS = {"drop_inner_coupling", "raw_outer_update", "emit_fields", "check"}


def load_config(path):
    """Flat "key = value" config file; '#' starts a comment; unknown keys
    are errors."""
    known = {f.name: f.type for f in fields(StudyConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError("%s:%d: expected 'key = value'" % (path, lineno))
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValueError("%s:%d: unknown key %r" % (path, lineno, key))
            values[key] = _coerce(key, val)
    return values


def _coerce(key, val):
    if key in _BOOL_KEYS:
        if val.lower() in ("1", "true", "yes", "on"):
            return True
        if val.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError("invalid boolean %r for key %r" % (val, key))
    if key in ("experiment", "out_dir"):
        return val
    if key in ("levels", "nx", "ny", "beta", "max_inner", "max_outer"):
        return int(val)
    return float(val)


def build_config(args):
    values = {}
    if args.config:
        values.update(load_config(args.config))
    values["experiment"] = args.experiment
    for key, attr in (
        ("out_dir", "out"),
        ("levels", "levels"),
        ("beta", "beta"),
        ("gamma", "gamma"),
        ("omega", "omega"),
        ("tol_inner", "tol_inner"),
        ("tol_outer", "tol_outer"),
    ):
        val = getattr(args, attr, None)
        if val is not None:
            values[key] = val
    if args.drop_inner_coupling:
        values["drop_inner_coupling"] = True
    if args.raw_outer_update:
        values["raw_outer_update"] = True
    if args.emit_fields:
        values["emit_fields"] = True
    if args.check:
        values["check"] = True
    return StudyConfig(**values)


def _check_smooth(report):
    failures = []
    eocs = report.eoc_columns()
    if not (1.9 <= eocs["eoc_l2"][-1] <= 2.1):
        failures.append("final L2 EOC %.3f outside [1.9, 2.1]" % eocs["eoc_l2"][-1])
    if not (0.9 <= eocs["eoc_h1"][-1] <= 1.1):
        failures.append("final H1 EOC %.3f outside [0.9, 1.1]" % eocs["eoc_h1"][-1])
    for rec in report.records:
        if rec.outer_iters > 30:
            failures.append("level with %d elements used %d outer iterations" % (rec.n_elements, rec.outer_iters))
    return failures


def _check_layer(report):
    failures = []
    for rec in report.records:
        if rec.min_val < -1e-10 or rec.max_val > 1.0 + 1e-10:
            failures.append(
                "bound-preserving range [%.3e, %.3e] violates [0, 1]" % (rec.min_val, rec.max_val)
            )
    std = report.extra["standard"]
    if not any(row["min_val"] < 0.0 for row in std):
        failures.append("standard EG did not undershoot on any level")
    return failures


def _check_condition(report):
    failures = []
    rows = report.extra["condition"]
    betas = sorted({row["beta"] for row in rows})
    for beta in betas:
        sub = [row for row in rows if row["beta"] == beta]
        kA = [row["cond_A"] for row in sub]
        kA1 = [row["cond_A1"] for row in sub]
        kA0 = [row["cond_A0"] for row in sub]
        rate_A = np.log2(kA[-1] / kA[-2])
        if not (beta + 0.5 <= rate_A <= beta + 1.3):
            failures.append("kappa(A) rate %.2f for beta=%d outside [%g, %g]" % (rate_A, beta, beta + 0.5, beta + 1.3))
        if not (1.7 <= fit_rate(1.0 / np.asarray(kA1)) <= 2.1):
            failures.append("kappa(A1) growth rate outside [1.7, 2.1] for beta=%d" % beta)
        if fit_rate(1.0 / np.asarray(kA0)) > 2.2:
            failures.append("kappa(A0) growth rate above 2.2 for beta=%d" % beta)
    return failures


def main(argv=None):
    parser = argparse.ArgumentParser(prog="egbp", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in ("smooth", "layer", "condition", "custom"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--check", action="store_true", help="run acceptance-style assertions")
        p.add_argument("--levels", type=int, default=None)
        p.add_argument("--beta", type=int, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--omega", type=float, default=None)
        p.add_argument("--tol-inner", dest="tol_inner", type=float, default=None)
        p.add_argument("--tol-outer", dest="tol_outer", type=float, default=None)
        p.add_argument("--drop-inner-coupling", action="store_true")
        p.add_argument("--raw-outer-update", action="store_true")
        p.add_argument("--emit-fields", dest="emit_fields", action="store_true")
    args = parser.parse_args(argv)

    config = build_config(args)
    runners = {
        "smooth": run_smooth,
        "layer": run_layer,
        "condition": run_condition,
        "custom": run_custom,
    }
    report = runners[config.experiment](config)

    out_dir = config.out_dir
    if config.experiment == "condition":
        path = emit_condition_table(report, out_dir)
        print("wrote %s" % path)
    else:
        for path in emit_tables(report, out_dir, basename=config.experiment):
            print("wrote %s" % path)

    failures = []
    if not report.all_converged:
        failures.append("at least one level did not converge")
    if config.check:
        checker = {
            "smooth": _check_smooth,
            "layer": _check_layer,
            "condition": _check_condition,
        }.get(config.experiment)
        if checker is not None:
            failures.extend(checker(report))
    for msg in failures:
        print("CHECK FAILED: %s" % msg, file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
