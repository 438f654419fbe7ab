"""Command-line interface.

Exit codes: 0 success, 1 I/O or missing data, 2 verification failure,
3 rule search failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dispersion as disp
from . import quadrature as quad
from . import refelement as ref
from . import solver
from .errors import (ConfigMismatch, InvalidElementData, MissingElementData, NoConvergence,
                     ParseError, UnknownElement)

EXIT_OK, EXIT_IO, EXIT_VERIFY, EXIT_SEARCH = 0, 1, 2, 3

log = logging.getLogger("mltet")


def _header(args, extra: dict | None = None) -> str:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",) and v is not None}
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}
    if extra:
        cfg.update(extra)
    return (f"# mltet {__version__}\n# command: {args.command}\n"
            f"# config: {json.dumps(cfg, sort_keys=True, default=str)}\n")


def _open_out(path):
    if path is None or str(path) == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


# -- rules-verify ----------------------------------------------------------------------

def cmd_rules_verify(args) -> int:
    element_id = args.element
    if args.rule_file:
        rule = quad.read_rule(args.rule_file)
    else:
        rule = quad.builtin_stiffness_rule(element_id)
    space = ref.element_space(element_id)
    gens = quad.builtin_generator_set(element_id)
    lines, ok = [], True

    def report(name, passed, detail):
        nonlocal ok
        ok &= bool(passed)
        lines.append(f"{name}: {'PASS' if passed else 'FAIL'}  {detail}")

    weights = rule.weights()
    defect = quad.exactness_defect(rule, gens, relative=True)
    space_defect = ref.space_exactness_defect(rule, ref.stiffness_exactness_space(space))
    report("weight positivity", quad.check_positivity(rule), f"min weight {weights.min():.6e}")
    report("generator exactness", defect < 1e-12 and space_defect < 1e-12,
           f"generator defect {defect:.3e}, exactness-space defect {space_defect:.3e}")
    try:
        basis = ref.build_element(element_id, "exact").basis
        source = "nodal basis"
    except MissingElementData:
        basis = space
        source = "element space (no mass data)"
    s_ok, s_null = ref.check_spurious_free(basis, rule, "scalar")
    e_ok, e_null = ref.check_spurious_free(basis, rule, "elastic")
    report("spurious-free scalar", s_ok, f"null space dim {s_null} (want 1) on {source}")
    report("spurious-free elastic", e_ok, f"null space dim {e_null} (want 6) on {source}")
    resid = ref.exactness_containment(space, gens)
    report("exactness containment", resid < 1e-9, f"max residual {resid:.3e}")
    print(_header(args, {"rule": rule.label, "points": rule.n_points}), end="")
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_VERIFY


# -- rules-find -------------------------------------------------------------------------

def _find_mass(args) -> int:
    result = ref.find_mass_rule(args.mass, max_trials=args.trials,
                                max_newton_iters=args.newton_iters, seed=args.seed,
                                selection=args.selection)
    summary = {"trials": result.trials, "diverged": result.diverged,
               "converged_inadmissible": result.converged_inadmissible,
               "distinct_admissible": len(result.candidates),
               "selected_trial": result.trial_index}
    print(_header(args), end="")
    print("# search: " + json.dumps(summary))
    if not result.success:
        print("no admissible mass rule found", file=sys.stderr)
        return EXIT_SEARCH
    for o, w in result.rule.entries:
        print(f"{o.type.tag:10s} {' '.join(f'{p:.16f}' for p in o.params):60s} {w:.16e}")
    if args.output:
        ref.write_element_data(args.output, args.mass, result.rule, search=summary,
                               seed=args.seed)
    return EXIT_OK


def cmd_rules_find(args) -> int:
    if args.mass:
        return _find_mass(args)
    if not args.generators:
        print("error: --generators is required unless --mass is given", file=sys.stderr)
        return EXIT_VERIFY
    config = quad.Configuration(args.K4, args.K31, args.K22, args.K211, args.K1111)
    gens = quad.builtin_generator_set(args.generators)
    admissibility = None
    if args.check_spurious:
        space = ref.element_space(args.generators)
        admissibility = lambda r: ref.check_spurious_free(space, r, "scalar")[0]  # noqa: E731
    try:
        result = quad.find_rule(config, gens, args.trials, args.newton_iters, args.seed,
                                admissibility, selection=args.selection)
    except ConfigMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    summary = {"trials": result.trials, "diverged": result.diverged,
               "converged_inadmissible": result.converged_inadmissible,
               "distinct_admissible": len(result.candidates),
               "selected_trial": result.trial_index}
    print(_header(args), end="")
    print("# search: " + json.dumps(summary))
    if not result.success:
        print("no admissible rule found", file=sys.stderr)
        return EXIT_SEARCH
    rule = result.rule
    print(f"# exactness defect {quad.exactness_defect(rule, gens, relative=True):.3e}")
    for o, w in rule.entries:
        print(f"{o.type.tag:10s} {' '.join(f'{p:.16f}' for p in o.params):60s} {w:.16e}")
    if args.output:
        quad.write_rule(args.output, rule, generator_label=args.generators, search=summary,
                        seed=args.seed)
    return EXIT_OK


# -- element-build ------------------------------------------------------------------------

def _digest(a) -> str:
    return hashlib.sha256(np.round(np.asarray(a), 10).tobytes()).hexdigest()[:16]


def cmd_element_build(args) -> int:
    el = ref.build_element(args.element, args.stiffness, args.data_dir)
    t = el.tables
    info = {
        "element": el.element_id, "n": el.n, "degree": el.p,
        "stiffness_rule": t.stiffness_rule.label if t.stiffness_rule else "exact",
        "n_quadrature": t.stiffness_rule.n_points if t.stiffness_rule else None,
        "mass_weight_sum": float(t.mass_weights.sum()),
        "basis_condition": float(el.basis.condition),
        "B_digest": _digest(t.B), "D_digest": _digest(t.D) if t.D is not None else None,
        "B_row_sum_max": float(np.abs(t.B.sum(axis=-1)).max()),
    }
    out, close = _open_out(args.output)
    try:
        out.write(_header(args))
        json.dump(info, out, indent=2)
        out.write("\n")
    finally:
        if close:
            out.close()
    return EXIT_OK


# -- dispersion -----------------------------------------------------------------------------

def cmd_dispersion(args) -> int:
    n_elements = None
    if args.n_min is not None or args.n_max is not None:
        n_elements = np.geomspace(args.n_min or 16.0, args.n_max or 128.0, args.n_count)
    results = []
    for method in args.methods:
        r = disp.analyse(method, args.K, n_elements, args.directions, args.resolution,
                         time_error=not args.semi_discrete)
        results.append(r)
    out, close = _open_out(args.output)
    try:
        out.write(_header(args))
        disp.write_dispersion_csv(out, results)
        out.write("\n")
        disp.write_timestep_csv(out, results)
        for r in results:
            if r.fit:
                out.write(f"# fit {r.label}: e_disp = {r.fit[0]:.4g} N_E^-{r.fit[1]:.4f}; "
                          f"asymptotic constant {r.extra['asymptotic']:.4g}\n")
            out.write(f"# dt_max {r.label} (K={r.K}): {r.dt_max:.4f}\n")
    finally:
        if close:
            out.close()
    return EXIT_OK


# -- converge -------------------------------------------------------------------------------

def cmd_converge(args) -> int:
    try:
        rows, order = solver.run_convergence_study(
            args.sizes, args.element, args.mode, args.policy, args.distortion, args.K,
            threads=args.threads,
            log_fn=lambda r: log.info("n=%d N=%d rms=%.4e", r.n_cells, r.n_dofs, r.rms))
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    out, close = _open_out(args.output)
    try:
        out.write(_header(args))
        solver.write_convergence_csv(out, rows)
        out.write(f"# observed order {order:.3f}\n")
    finally:
        if close:
            out.close()
    print(f"observed order {order:.3f}", file=sys.stderr)
    return EXIT_OK if np.all(np.isfinite([r.rms for r in rows])) else EXIT_VERIFY


# -- simulate ---------------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = solver.load_simulation_spec(args.spec)
    prob, u0, v0, T, K = solver.build_simulation(spec, threads=args.threads)
    sigma = solver.estimate_sigma_max(prob.apply_stiffness, prob.mass, prob.free_mask)
    dt_max = solver.max_stable_dt(sigma, K)
    if args.snapshots:
        Path(args.snapshots).mkdir(parents=True, exist_ok=True)
    res = solver.run(prob, u0, v0, T, dt_max, K, energy_every=args.energy_every,
                     snapshot_every=args.snapshot_every if args.snapshots else 0,
                     snapshot_dir=args.snapshots)
    out, close = _open_out(args.output)
    try:
        out.write(_header(args, {"dt": res.dt, "steps": res.steps, "sigma_max": sigma}))
        out.write("step,t,energy\n")
        for n, t, e in res.energy:
            out.write(f"{n},{t:.10g},{e:.12g}\n")
    finally:
        if close:
            out.close()
    if not np.all(np.isfinite(res.u)):
        return EXIT_VERIFY
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mltet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mltet {__version__}")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for element loops (results do not depend on it)")
    p.add_argument("--data-dir", type=Path, default=None,
                   help=f"element data directory (default: ${ref.DATA_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("rules-verify", help="check a stiffness rule: weights, exactness, spurious modes")
    s.add_argument("element", choices=sorted(ref.ELEMENT_DIM))
    s.add_argument("--rule-file", type=Path, help="rule JSON instead of the builtin rule")
    s.set_defaults(func=cmd_rules_verify)

    s = sub.add_parser("rules-find", help="search a symmetric rule with Newton restarts")
    for name in ("K4", "K31", "K22", "K211", "K1111"):
        s.add_argument(f"--{name}", type=int, default=0)
    s.add_argument("--generators", choices=sorted(ref.ELEMENT_DIM),
                   help="element whose generator set defines the moment equations")
    s.add_argument("--mass", choices=sorted(ref.MASS_SEARCH_TEMPLATES),
                   help="search the element's mass nodes and weights instead; "
                        "-o writes an element data file")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--newton-iters", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--selection", choices=quad.SELECTIONS, default="first")
    s.add_argument("--check-spurious", action="store_true",
                   help="require the scalar spurious-mode screen")
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_rules_find)

    s = sub.add_parser("element-build", help="build kernel tables and print digests")
    s.add_argument("element", choices=sorted(ref.ELEMENT_DIM))
    s.add_argument("--stiffness", default="rule", choices=("rule", "mass", "exact"))
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_element_build)

    s = sub.add_parser("dispersion", help="dispersion error sweep and time step limit")
    s.add_argument("methods", nargs="+", help="e.g. 2n15 2n15q14 2n15q15")
    s.add_argument("--K", type=int, default=None, help="Dablain order 2K (default: K = p)")
    s.add_argument("--n-min", type=float, default=None,
                   help="smallest N_E (default 16 for degree 2, 8 above)")
    s.add_argument("--n-max", type=float, default=None,
                   help="largest N_E (default 128 for degree 2, 32 above)")
    s.add_argument("--n-count", type=int, default=7)
    s.add_argument("--directions", type=int, default=disp.DEFAULT_DIRECTIONS)
    s.add_argument("--resolution", type=int, default=16)
    s.add_argument("--semi-discrete", action="store_true", help="ignore the time error")
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_dispersion)

    s = sub.add_parser("converge", help="convergence study on the heterogeneous acoustic problem")
    s.add_argument("--element", default="p2n15", choices=sorted(ref.ELEMENT_DIM))
    s.add_argument("--mode", default="rule", choices=("rule", "exact"))
    s.add_argument("--policy", default=None, choices=("pointwise", "piecewise-constant"))
    s.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16])
    s.add_argument("--distortion", type=float, default=0.15)
    s.add_argument("--K", type=int, default=2)
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("simulate", help="run a simulation described by a JSON spec")
    s.add_argument("spec", type=Path)
    s.add_argument("-o", "--output", type=Path, help="energy trace CSV")
    s.add_argument("--energy-every", type=int, default=1)
    s.add_argument("--snapshots", type=Path, help="directory for binary snapshots")
    s.add_argument("--snapshot-every", type=int, default=10)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.data_dir is not None:
        os.environ[ref.DATA_ENV] = str(args.data_dir)
    try:
        return args.func(args)
    except (MissingElementData, InvalidElementData, UnknownElement, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
