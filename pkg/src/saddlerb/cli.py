"""Command-line interface: ``saddlerb {offline,online,sweep,verify,mesh-export}``."""
from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (ArtifactError, EmptyTrainingSet, InvalidGeometry, OutOfDomain,
                     SaddleRBError)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

ONLINE_FIELDS = ("mu_1", "mu_2", "alg", "n", "n_z", "mode", "r1", "r2", "delta_u_sym",
                 "delta_p_sym", "delta_sym", "delta_u_energy", "delta_u_gen", "delta_p_gen",
                 "delta_br", "delta_ba", "uN_norm", "pN_norm", "t_solve_ms", "t_bounds_ms")


def _parse_mu(text: str):
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"cannot parse parameter {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saddlerb", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, artifact=True):
        sp.add_argument("--config", type=Path, help="TOML experiment configuration")
        if artifact:
            sp.add_argument("--artifact", type=Path, help="offline artifact directory")
        sp.add_argument("--out", type=Path, help="output file or directory")
        sp.add_argument("--seed", type=int, help="random seed override")

    common(sub.add_parser("offline", help="build truth model, run greedy, write artifact"))
    on = sub.add_parser("online", help="reduced solve and error bounds at one parameter")
    common(on)
    on.add_argument("--mu", type=_parse_mu, required=True, help="parameter, e.g. 0.3,0.5")
    on.add_argument("--n", type=int, help="number of generations (default: all)")
    on.add_argument("--alg", type=int, help="greedy variant stored in the artifact")
    on.add_argument("--exact", action="store_true",
                    help="use exact constants (rebuilds the truth model) instead of surrogates")
    sw = sub.add_parser("sweep", help="figure and table CSVs over a random test set")
    common(sw)
    sw.add_argument("--n", type=int, help="test-set size override")
    ve = sub.add_parser("verify", help="run the invariant suite on an artifact")
    common(ve)
    ve.add_argument("--n", type=int, help="test-set size override")
    common(sub.add_parser("mesh-export", help="write the reference mesh as text"), artifact=False)
    return p


def _config(args):
    from .experiment import ExperimentConfig, load_config
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg


def _artifact_path(args, cfg) -> Path:
    return args.artifact if args.artifact else Path(cfg.out) / "artifact"


def cmd_offline(args) -> int:
    from .experiment import run_offline
    cfg = _config(args)
    if args.seed is not None:
        cfg.train_seed = args.seed
    cfg.validate()
    path = _artifact_path(args, cfg)
    art = run_offline(cfg, path, log=lambda m: print(m, file=sys.stderr))
    for v, vd in sorted(art.variants.items()):
        print(f"N_truth={art.n_truth} variant={v} iterations={vd.space.generations} "
              f"N_Z={vd.space.n_z} converged={vd.converged}")
    return EXIT_OK


def cmd_online(args) -> int:
    from .artifact import load_artifact
    from .bounds import bound_report, delta_p_sym, delta_u_sym
    from .constants import surrogate_bounds
    from .online import online_solve, residual_dual_norms

    cfg = _config(args)
    art = load_artifact(_artifact_path(args, cfg))
    alg = args.alg if args.alg is not None else sorted(art.variants)[0]
    if alg not in art.variants:
        raise ArtifactError(f"variant {alg} not in artifact (have {sorted(art.variants)})")
    model = art.variants[alg].model
    n = model.generations if args.n is None else args.n
    if not 0 <= n <= model.generations:
        raise ValueError(f"--n must lie in 0..{model.generations}")
    mu = model.domain.validate(args.mu)
    t0 = time.perf_counter()
    th = model.eval_thetas(mu)
    sol = online_solve(model, mu, n, th)
    t1 = time.perf_counter()
    r1, r2 = residual_dual_norms(model, mu, sol, th=th)
    if args.exact:
        from .constants import ExactConstants
        from .experiment import rebuild_truth
        _, disc = rebuild_truth(art)
        c = ExactConstants(disc)(mu, babuska=True)
        mode = "exact"
    else:
        c = surrogate_bounds(art.training, mu)
        mode = "surrogate (empirically certified)"
    delta_u_sym(r1, r2, c)
    delta_p_sym(r1, r2, c)
    t2 = time.perf_counter()
    rep = bound_report(r1, r2, c, mu, n, sol.n_z)
    rep.uN_norm, rep.pN_norm = float(np.linalg.norm(sol.u)), float(np.linalg.norm(sol.p))
    row = {"mu_1": mu[0], "mu_2": mu[1], "alg": alg, "n": n, "n_z": sol.n_z, "mode": mode.split()[0],
           "r1": r1, "r2": r2, "delta_u_sym": rep.delta_u_sym, "delta_p_sym": rep.delta_p_sym,
           "delta_sym": rep.delta_sym, "delta_u_energy": rep.delta_u_energy,
           "delta_u_gen": rep.delta_u_gen, "delta_p_gen": rep.delta_p_gen, "delta_br": rep.delta_br,
           "delta_ba": rep.delta_ba, "uN_norm": rep.uN_norm, "pN_norm": rep.pN_norm,
           "t_solve_ms": (t1 - t0) * 1e3, "t_bounds_ms": (t2 - t1) * 1e3}
    print(f"mu = ({mu[0]:.6g}, {mu[1]:.6g})  variant {alg}  N = {n}  N_Z = {sol.n_z}  constants: {mode}")
    print(f"  residual dual norms   r1 = {r1:.6e}   r2 = {r2:.6e}")
    for key in ("delta_u_sym", "delta_p_sym", "delta_sym", "delta_u_energy", "delta_u_gen",
                "delta_p_gen", "delta_br", "delta_ba"):
        val = row[key]
        if isinstance(val, float) and math.isnan(val):
            continue
        print(f"  {key:<15s} {val:.6e}")
    print(f"  |u_N|_X = {rep.uN_norm:.6e}   |p_N|_Y = {rep.pN_norm:.6e}")
    print(f"  online solve {row['t_solve_ms']:.3f} ms   bounds {row['t_bounds_ms']:.3f} ms")
    if args.out:
        path = Path(args.out)
        new = not path.exists()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=ONLINE_FIELDS, lineterminator="\n")
            if new:
                w.writeheader()
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .artifact import load_artifact
    from .experiment import run_sweep
    cfg = _config(args)
    art = load_artifact(_artifact_path(args, cfg))
    size = args.n if args.n is not None else (cfg.test_size if args.config else None)
    out = args.out if args.out else Path(cfg.out) / "sweep"
    run_sweep(art, out, seed=args.seed, test_size=size, log=lambda m: print(m, file=sys.stderr))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .artifact import load_artifact
    from .experiment import run_verify
    cfg = _config(args)
    art = load_artifact(_artifact_path(args, cfg))
    size = args.n if args.n is not None else (cfg.test_size if args.config else None)
    checks = run_verify(art, seed=args.seed, test_size=size)
    ok = all(c.passed for c in checks)
    print("ALL CHECKS PASSED" if ok else "SOME CHECKS FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_mesh_export(args) -> int:
    from .stokes import build_benchmark
    cfg = _config(args)
    mesh, space = build_benchmark(cfg.benchmark)
    out = args.out if args.out else Path(cfg.out) / "mesh.txt"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    mesh.export(out)
    print(f"wrote {out}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
          f"N_truth = {space.n_total}")
    return EXIT_OK


COMMANDS = {"offline": cmd_offline, "online": cmd_online, "sweep": cmd_sweep,
            "verify": cmd_verify, "mesh-export": cmd_mesh_export}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (InvalidGeometry, OutOfDomain, ArtifactError, EmptyTrainingSet, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SaddleRBError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
