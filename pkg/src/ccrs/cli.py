"""Command-line entry point wiring the full pipeline.

Every command echoes its fully resolved configuration, writes machine-readable
key=value lines to stdout, and reports artifacts (CSV, cube, containers) under
--out.  Exit codes: 0 success, 2 usage error, 3 convergence failure, 4 I/O or
container corruption.
"""

import argparse
import csv
import os
import statistics
import sys
import time

import numpy as np

from . import chem, datastore, response, surrogate
from .ccsd import mp2_amplitudes, solve_ccsd, solve_lambda
from .errors import ContainerError, ConvergenceError, DegenerateGapError
from .gauge import make_gauge, transform_amplitudes
from .pipeline import build_fcidump_system, build_system

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


class UsageError(ValueError):
    pass


def _load_config_file(path):
    opts = {}
    try:
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError("config line without '=': %r" % line)
                key, val = (part.strip() for part in line.split("=", 1))
                opts[key.replace("-", "_")] = val
    except OSError as exc:
        raise ContainerError("cannot read config file: %s" % exc)
    return opts


def _echo_config(args):
    for key in sorted(vars(args)):
        if key in ("func", "command", "config"):
            continue
        print("config %s=%s" % (key, getattr(args, key)))


def _read_system(args):
    if getattr(args, "xyz", None) and getattr(args, "fcidump", None):
        raise UsageError("give either --xyz or --fcidump, not both")
    if getattr(args, "xyz", None):
        with open(args.xyz) as fh:
            mol = chem.parse_xyz(fh.read())
        return build_system(mol, args.basis), mol
    if getattr(args, "fcidump", None):
        with open(args.fcidump) as fh:
            return build_fcidump_system(fh.read()), None
    raise UsageError("an input geometry is required (--xyz or --fcidump)")


def cmd_scf(args):
    system, _ = _read_system(args)
    res = system.scf
    print("e_hf=%.12f" % res.e_hf)
    print("n_iter=%d" % res.n_iter)
    print("converged=%s" % res.converged)
    for k, e in enumerate(res.eps):
        print("eps_%d=%.10f" % (k, e))
    return EXIT_OK


def cmd_ccsd(args):
    system, _ = _read_system(args)
    cc = solve_ccsd(system.so, tol=args.tol, max_iter=args.max_iter,
                    diis_depth=args.diis_depth)
    print("e_hf=%.12f" % system.scf.e_hf)
    print("e_corr=%.12f" % cc.e_corr)
    print("e_total=%.12f" % cc.e_total)
    print("t_residual_norm=%.3e" % cc.t_residual_norm)
    print("n_iter_t=%d" % cc.n_iter_t)
    if args.with_lambda:
        cc = solve_lambda(system.so, cc, tol=args.tol, max_iter=args.max_iter,
                          diis_depth=args.diis_depth)
        print("lambda_residual_norm=%.3e" % cc.lambda_residual_norm)
        print("n_iter_lambda=%d" % cc.n_iter_lambda)
    return EXIT_OK


def _grid_for(mol, n, pad=4.0):
    pos = mol.positions()
    lo = pos.min(axis=0) - pad
    hi = pos.max(axis=0) + pad
    axes = [np.array([(hi[0] - lo[0]) / max(n - 1, 1), 0.0, 0.0]),
            np.array([0.0, (hi[1] - lo[1]) / max(n - 1, 1), 0.0]),
            np.array([0.0, 0.0, (hi[2] - lo[2]) / max(n - 1, 1)])]
    return lo, axes, (n, n, n)


def cmd_props(args):
    need_mol = (args.dipole or args.quadrupole or args.polarizability
                or args.forces or args.density_cube or args.pair_density
                or args.ontop)
    if args.fcidump and need_mol:
        raise UsageError("multipole/real-space properties need an embedded-basis "
                         "--xyz input (FCIDUMP carries no multipole integrals)")
    system, mol = _read_system(args)
    cc = solve_ccsd(system.so, tol=args.tol, max_iter=args.max_iter)
    cc = solve_lambda(system.so, cc, tol=args.tol, max_iter=args.max_iter)
    rdm1 = response.cc_rdm1(cc.amps)
    report = response.PropertyReport(
        e_total=cc.e_total,
        natural_occupations=response.natural_occupations(rdm1),
        provenance={"method": "ccsd-lambda", "gauge": "canonical",
                    "tol": args.tol, "origin": "nuclear-charge-center"})
    os.makedirs(args.out, exist_ok=True)
    if args.dipole:
        report.dipole = response.dipole(rdm1, system.dip_so, mol, system.origin)
    if args.quadrupole:
        report.quadrupole = response.quadrupole(rdm1, system.quad_so, mol,
                                                system.origin)
    if args.polarizability:
        pol = response.polarizability_ff(system.so, system.dip_so, system.mu_nuc,
                                         field_step=args.field_step, tol=args.tol)
        report.polarizability = pol.alpha
        report.provenance["polarizability_asymmetry"] = "%.3e" % pol.asymmetry
        report.provenance["field_step"] = pol.field_step
    if args.forces:
        report.forces = response.forces_fd(mol, args.basis, "ccsd", args.fd_step,
                                           tol=args.tol)
        report.provenance["fd_step"] = args.fd_step
    if args.density_cube or args.pair_density or args.ontop:
        rdm2 = response.cc_rdm2(cc.amps) if (args.pair_density or args.ontop) else None
        origin, axes, shape = _grid_for(mol, args.grid_n)
        pts = response.regular_grid(origin, axes, shape)
        if args.density_cube:
            rho = response.density_on_grid(rdm1, system.scf.c, system.basis, pts)
            response.write_cube(os.path.join(args.out, "density.cube"), mol, rho,
                                origin, axes, shape, "electron density")
            print("cube_density=%s" % os.path.join(args.out, "density.cube"))
        if args.pair_density:
            r_ref = (np.array(args.pair_ref) if args.pair_ref is not None
                     else mol.nuclear_charge_center())
            pi = response.pair_density(rdm2, system.scf.c, system.basis, r_ref, pts)
            response.write_cube(os.path.join(args.out, "pair_density.cube"), mol, pi,
                                origin, axes, shape, "pair density vs fixed point")
            print("cube_pair_density=%s" % os.path.join(args.out, "pair_density.cube"))
        if args.ontop:
            pi = response.on_top_pair_density(rdm2, system.scf.c, system.basis, pts)
            response.write_cube(os.path.join(args.out, "ontop.cube"), mol, pi,
                                origin, axes, shape, "on-top pair density")
            print("cube_ontop=%s" % os.path.join(args.out, "ontop.cube"))

    report_path = os.path.join(args.out, "report.txt")
    with open(report_path, "w") as fh:
        fh.write(report.as_text())
    print("report=%s" % report_path)
    _write_props_csv(os.path.join(args.out, "props.csv"), args, report)
    print("csv=%s" % os.path.join(args.out, "props.csv"))
    for line in report.as_text().strip().splitlines():
        key, val = line.split(": ", 1)
        print("%s=%s" % (key.replace(" ", "_"), val))
    return EXIT_OK


def _write_props_csv(path, args, report):
    header = (["input", "e_total"]
              + ["dip_%s" % w for w in "xyz"]
              + ["quad_%s" % c for c in ("xx", "xy", "xz", "yy", "yz", "zz")]
              + ["alpha_%s%s" % (a, b) for a in "xyz" for b in "xyz"])
    row = [args.xyz or args.fcidump, "%.12f" % report.e_total]
    row += (["%.10f" % x for x in report.dipole]
            if report.dipole is not None else [""] * 3)
    if report.quadrupole is not None:
        q = report.quadrupole
        row += ["%.10f" % q[i, j] for i, j in
                ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))]
    else:
        row += [""] * 6
    row += (["%.10f" % x for x in report.polarizability.ravel()]
            if report.polarizability is not None else [""] * 9)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerow(row)


def cmd_dataset_gen(args):
    with open(args.xyz) as fh:
        mols = chem.parse_xyz_frames(fh.read())
    records = datastore.generate_dataset(mols, args.basis, tol=args.tol)
    datastore.save_records(args.out, records)
    n_ok = sum(1 for r in records if not r.failed)
    print("records=%d" % len(records))
    print("converged=%d" % n_ok)
    for rec in records:
        if rec.failed:
            print("failed %s reason=%s" % (rec.molecule_id, rec.fail_reason))
    print("dataset=%s" % args.out)
    return EXIT_OK


def cmd_train(args):
    records = datastore.load_records(args.dataset)
    cfg = surrogate.FeatureConfig(r_cut=args.r_cut, radial_bins=args.radial_bins,
                                  hidden=args.hidden)
    examples = datastore.examples_from_records(records, cfg, args.basis)
    if not examples:
        raise UsageError("dataset has no usable records")
    model = surrogate.init_model(cfg, seed=args.seed, mode=args.mode)
    model = surrogate.train(model, examples, epochs=args.epochs, lr=args.lr,
                            batch=args.batch)
    datastore.save_model(args.out, model)
    print("examples=%d" % len(examples))
    print("final_loss=%.6e" % model.loss_trace[-1])
    print("model=%s" % args.out)
    return EXIT_OK


def cmd_eval(args):
    model = datastore.load_model(args.model)
    with open(args.xyz) as fh:
        mols = chem.parse_xyz_frames(fh.read())
    rows, agg = surrogate.evaluate(model, mols, args.basis,
                                   with_forces=args.with_forces,
                                   fd_step=args.fd_step)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    cols = ["molecule_id", "e_mae", "f_mae", "dip_mae",
            "t1_mae", "t2_mae", "l1_mae", "l2_mae"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols + ["failed"])
        for row in rows:
            writer.writerow([row.get(c, "") for c in cols] + [row.get("failed", "")])
        writer.writerow(["aggregate"] + [agg[c] for c in cols[1:]] + [""])
    for key in cols[1:]:
        print("%s=%s" % (key, agg[key]))
    print("metrics=%s" % args.out)
    return EXIT_OK


def hydrogen_chain(n_atoms, spacing=1.8):
    """Linear H chain with uniform spacing (bohr)."""
    return chem.Molecule([(1, np.array([0.0, 0.0, k * spacing]))
                          for k in range(n_atoms)])


def cmd_bench(args):
    """Wall-clock comparison of the replaced pipeline stage on H chains.

    The SCF and the localized gauge are shared preprocessing for both routes
    and stay outside the timers: (a) times the CCSD + Lambda solve, (b) times
    feature construction plus the surrogate forward pass that replaces it.
    """
    sizes = [int(s) for s in args.sizes.split(",")]
    model = surrogate.init_model(surrogate.FeatureConfig(), seed=0, mode="residual")
    rows = []
    for n in sizes:
        mol = hydrogen_chain(n)
        system = build_system(mol, args.basis)
        gauge = make_gauge(system.scf, system.ints)

        def run_solver():
            cc = solve_ccsd(system.so, tol=args.tol)
            solve_lambda(system.so, cc, tol=args.tol)

        def run_surrogate():
            pair, quad = surrogate.build_features(system.scf, gauge, system.ints,
                                                  model.config)
            surrogate.predict(model, pair, quad)

        # warm pass sizes the surrogate inner loop so both timing blocks are
        # comparable; interleaving keeps load spikes common-mode in the ratio
        run_solver()
        start = time.perf_counter()
        run_surrogate()
        t_single = time.perf_counter() - start
        inner = max(3, int(0.02 / max(t_single, 1e-6)))
        t_solver = []
        t_surr = []
        for _ in range(args.repeats):
            start = time.perf_counter()
            run_solver()
            t_solver.append(time.perf_counter() - start)
            start = time.perf_counter()
            for _ in range(inner):
                run_surrogate()
            t_surr.append((time.perf_counter() - start) / inner)
        row = ("H%d" % n, system.so.n_so // 2,
               statistics.median(t_solver), statistics.median(t_surr))
        rows.append(row)
        print("bench system=%s n_orbitals=%d t_solver_s=%.4f t_surrogate_s=%.4f"
              % row)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system", "n_orbitals", "t_solver_s", "t_surrogate_s"])
        writer.writerows(rows)
    print("bench_csv=%s" % args.out)
    return EXIT_OK


def build_parser(config=None):
    parser = argparse.ArgumentParser(
        prog="ccrs",
        description="Coupled-cluster response-state engine and amplitude surrogate")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--config", help="flat key = value config file; "
                                        "flags override file values")
        if config:
            actions = {a.dest: a for a in p._actions}
            converted = {}
            for key, raw in config.items():
                action = actions.get(key)
                if action is None:
                    continue
                if isinstance(action, argparse._StoreTrueAction):
                    converted[key] = raw.lower() in ("1", "true", "yes")
                elif action.type is not None:
                    converted[key] = action.type(raw)
                else:
                    converted[key] = raw
            p.set_defaults(**converted)
        return p

    common = dict(basis="sto-3g", tol=1e-10, max_iter=200)

    p = add("scf", cmd_scf, help="restricted Hartree-Fock single point")
    p.add_argument("--xyz")
    p.add_argument("--fcidump")
    p.add_argument("--basis", default=common["basis"])

    p = add("ccsd", cmd_ccsd, help="CCSD (optionally + Lambda) single point")
    p.add_argument("--xyz")
    p.add_argument("--fcidump")
    p.add_argument("--basis", default=common["basis"])
    p.add_argument("--lambda", dest="with_lambda", action="store_true",
                   help="also solve the adjoint (Lambda) equations")
    p.add_argument("--tol", type=float, default=common["tol"])
    p.add_argument("--max-iter", type=int, default=common["max_iter"])
    p.add_argument("--diis-depth", type=int, default=8)

    p = add("props", cmd_props, help="Lambda-state property report")
    p.add_argument("--xyz")
    p.add_argument("--fcidump")
    p.add_argument("--basis", default=common["basis"])
    p.add_argument("--tol", type=float, default=common["tol"])
    p.add_argument("--max-iter", type=int, default=common["max_iter"])
    p.add_argument("--dipole", action="store_true")
    p.add_argument("--quadrupole", action="store_true")
    p.add_argument("--polarizability", action="store_true")
    p.add_argument("--forces", action="store_true")
    p.add_argument("--density-cube", action="store_true")
    p.add_argument("--pair-density", action="store_true")
    p.add_argument("--pair-ref", type=float, nargs=3, default=None,
                   help="reference point for the pair density (bohr)")
    p.add_argument("--ontop", action="store_true")
    p.add_argument("--grid-n", type=int, default=24)
    p.add_argument("--field-step", type=float, default=1e-3)
    p.add_argument("--fd-step", type=float, default=1e-3)
    p.add_argument("--out", default=".")

    p = add("dataset-gen", cmd_dataset_gen,
            help="label a multi-frame XYZ with CC response amplitudes")
    p.add_argument("--xyz", required=True, help="multi-frame XYZ geometry list")
    p.add_argument("--basis", default=common["basis"])
    p.add_argument("--tol", type=float, default=common["tol"])
    p.add_argument("--out", default="dataset.ccrs")

    p = add("train", cmd_train, help="train the amplitude surrogate")
    p.add_argument("--dataset", required=True)
    p.add_argument("--basis", default=common["basis"])
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("direct", "residual"), default="residual")
    p.add_argument("--r-cut", type=float, default=10.0)
    p.add_argument("--radial-bins", type=int, default=4)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--out", default="model.ccrs")

    p = add("eval", cmd_eval, help="evaluate a trained surrogate")
    p.add_argument("--model", required=True)
    p.add_argument("--xyz", required=True)
    p.add_argument("--basis", default=common["basis"])
    p.add_argument("--with-forces", action="store_true")
    p.add_argument("--fd-step", type=float, default=1e-3)
    p.add_argument("--out", default="metrics.csv")

    p = add("bench", cmd_bench,
            help="solver vs surrogate wall-time scaling on H chains")
    p.add_argument("--sizes", default="2,4,6,8,10")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--basis", default=common["basis"])
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", default="bench.csv")

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    config = None
    try:
        if "--config" in argv:
            pos = argv.index("--config")
            if pos + 1 >= len(argv):
                raise UsageError("--config needs a file path")
            config = _load_config_file(argv[pos + 1])
        parser = build_parser(config)
        args = parser.parse_args(argv)
        _echo_config(args)
        return args.func(args)
    except (ConvergenceError, DegenerateGapError) as exc:
        print("error category=convergence message=%s" % exc, file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ContainerError, OSError, chem.ParseError) as exc:
        print("error category=io message=%s" % exc, file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print("error category=usage message=%s" % exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
