"""Experiment driver: configuration, offline build, test sweeps and verification."""
from __future__ import annotations

import csv
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .artifact import Artifact, VariantData, save_artifact
from .bounds import (BoundReport, TrueErrors, bound_report, delta_p_sym, delta_u_sym,
                     effectivities, verify_apriori)
from .constants import ConstantBounds, ExactConstants, build_training, surrogate_bounds
from .errors import EmptyTrainingSet, NegativeNormSquare, SaddleRBError
from .greedy import GreedyConfig, greedy_run, sample_train_set
from .kernels import SPDFactor
from .online import direct_dual_norms, online_solve, residual_dual_norms
from .stokes import BenchmarkConfig, TruthSolution, build_truth, truth_solve

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_VERSION = 1

FIG_HEADERS = {
    "u": "n_z,max_rel_err_u,max_rel_delta_u_sym,max_rel_delta_u_gen,max_rel_delta_ba",
    "p": "n_z,max_rel_err_p,max_rel_delta_p_sym,max_rel_delta_p_gen,max_rel_delta_ba",
    "z": "n_z,max_rel_err_z,max_rel_delta_z_sym,max_rel_delta_z_gen,max_rel_delta_ba",
}
TABLE1_HEADER = ("alg,n,n_z,eta_u_energy,eta_u_sym,eta_u_br,eta_u_ba,eta_p_sym,eta_p_br,"
                 "eta_p_ba,eta_sym,eta_br,eta_ba")
TABLE2_HEADER = "alg,target,tol,n_z,n,t_solve_ms,t_bounds_ms,t_total_ms,speedup"
TABLE1_KEYS = ("u_energy", "u_sym", "u_br", "u_ba", "p_sym", "p_br", "p_ba", "sym", "br", "ba")


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    variants: tuple = (1, 2, 3)
    tol: float = 1e-2
    n_max: int = 40
    delta_beta_tol: float = 0.1
    train_size: int = 400
    train_seed: int = 0
    test_size: int = 25
    test_seed: int = 1
    constants_mode: str = "exact"
    lb_factor: float = 0.9
    ub_factor: float = 1.1
    table_tols: tuple = (1e-2, 1e-3)
    out: str = "out"

    def validate(self):
        self.benchmark.validate()
        if not self.variants or any(v not in (1, 2, 3) for v in self.variants):
            raise ValueError("variants must be a nonempty subset of {1, 2, 3}")
        if self.train_size < 1:
            raise EmptyTrainingSet("train_size must be >= 1")
        if self.test_size < 1:
            raise EmptyTrainingSet("test_size must be >= 1")
        if self.constants_mode not in ("exact", "surrogate"):
            raise ValueError("constants mode must be 'exact' or 'surrogate'")
        if not (0 < self.lb_factor <= 1 <= self.ub_factor):
            raise ValueError("need 0 < lb_factor <= 1 <= ub_factor")
        GreedyConfig(1, self.tol, self.n_max, self.delta_beta_tol, self.train_size,
                     self.train_seed).validate()
        return self

    def greedy(self, variant: int) -> GreedyConfig:
        return GreedyConfig(variant, self.tol, self.n_max, self.delta_beta_tol,
                            self.train_size, self.train_seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["benchmark"] = self.benchmark.to_dict()
        d["variants"] = list(self.variants)
        d["table_tols"] = list(self.table_tols)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        bench = BenchmarkConfig.from_dict(d.pop("benchmark", {}))
        for k in ("variants", "table_tols"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(benchmark=bench, **d)


def load_config(path) -> ExperimentConfig:
    """Read a TOML experiment file.

    Schema (all keys optional)::

        version = 1
        [benchmark]   length height obstacle_center left_break right_break
                      lower upper reference base_resolution refinement inflow_peak
        [greedy]      variants tol n_max delta_beta_tol train_size train_seed
        [test]        size seed table_tols
        [constants]   mode lb_factor ub_factor
        [output]      dir
    """
    raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    version = raw.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ValueError(f"unsupported config version {version}")
    known = {"version", "benchmark", "greedy", "test", "constants", "output"}
    extra = set(raw) - known
    if extra:
        raise ValueError(f"unknown config sections {sorted(extra)}")
    d = {"benchmark": raw.get("benchmark", {})}
    g = raw.get("greedy", {})
    for k in ("variants", "tol", "n_max", "delta_beta_tol", "train_size", "train_seed"):
        if k in g:
            d[k] = g[k]
    t = raw.get("test", {})
    for src, dst in (("size", "test_size"), ("seed", "test_seed"), ("table_tols", "table_tols")):
        if src in t:
            d[dst] = t[src]
    c = raw.get("constants", {})
    for src, dst in (("mode", "constants_mode"), ("lb_factor", "lb_factor"), ("ub_factor", "ub_factor")):
        if src in c:
            d[dst] = c[src]
    if "dir" in raw.get("output", {}):
        d["out"] = raw["output"]["dir"]
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# offline

def run_offline(cfg: ExperimentConfig, path, log=print) -> Artifact:
    cfg.validate()
    t0 = time.perf_counter()
    disc = build_truth(cfg.benchmark)
    log(f"truth dimension {disc.n_total} (velocity {disc.space.n_velocity}, "
        f"pressure {disc.space.n_pressure}); Qa={disc.a.Q} Qb={disc.b.Q} Qf={disc.f.Q} Qg={disc.g.Q}")
    train = sample_train_set(disc.domain, cfg.train_size, cfg.train_seed)
    t1 = time.perf_counter()
    training = build_training(disc, train)
    training.lb_factor, training.ub_factor = cfg.lb_factor, cfg.ub_factor
    log(f"exact constants on {len(train)} training points in {time.perf_counter() - t1:.1f} s")
    variants = {}
    for v in cfg.variants:
        space, model, trace = greedy_run(disc, cfg.greedy(v), train, training, log=log)
        steps = [{k: val for k, val in row.items() if not k.startswith("t_")} for row in trace.rows()]
        variants[v] = VariantData(v, space, model, steps, trace.converged, trace.final_max)
        log(f"variant {v}: {space.generations} iterations, N_Z = {space.n_z}, "
            f"max indicator {trace.final_max:.3e}, converged {trace.converged}")
    art = Artifact(cfg.to_dict(), disc.hash(), disc.n_total, variants, training,
                   {"offline_seconds_excluded_from_checksums": True})
    save_artifact(art, path)
    log(f"artifact written to {path} ({time.perf_counter() - t0:.1f} s)")
    return art


def rebuild_truth(art: Artifact):
    cfg = ExperimentConfig.from_dict(art.config)
    disc = build_truth(cfg.benchmark)
    if disc.hash() != art.mesh_hash:
        raise SaddleRBError("artifact mesh hash does not match the rebuilt discretization")
    return cfg, disc


# ---------------------------------------------------------------------------
# test points and evaluation

@dataclass
class TestPoint:
    __test__ = False     # not a pytest class
    mu: np.ndarray
    truth: TruthSolution
    A: object
    A_factor: SPDFactor
    constants: ConstantBounds
    u_norm: float
    p_norm: float
    t_truth: float


def prepare_test_points(disc, mus, babuska: bool = True, tilde: bool = True):
    ev = ExactConstants(disc)
    out = []
    for mu in np.atleast_2d(mus):
        t0 = time.perf_counter()
        truth = truth_solve(disc, mu)
        t_truth = time.perf_counter() - t0
        A = disc.A(mu)
        c = ev(mu, babuska=babuska, tilde=tilde)
        u_norm = math.sqrt(float(truth.u @ (disc.X @ truth.u)))
        p_norm = math.sqrt(float(truth.p @ (disc.Y @ truth.p)))
        out.append(TestPoint(np.asarray(mu, float), truth, A, SPDFactor(A), c, u_norm, p_norm, t_truth))
    return out


def evaluate_point(disc, space, model, tp: TestPoint, n: int, constants=None) -> BoundReport:
    """Bounds, true errors and effectivities at one test point and generation."""
    c = tp.constants if constants is None else constants
    th = model.eval_thetas(tp.mu)
    sol = online_solve(model, tp.mu, n, th)
    r1, r2 = residual_dual_norms(model, tp.mu, sol, th=th)
    u = space.Zu[:, : sol.n_x] @ sol.u
    p = space.Zp[:, : sol.n_y] @ sol.p
    B = disc.B(tp.mu)
    res1 = disc.f.assemble(tp.mu) - tp.A @ u - B.T @ p
    r1e = math.sqrt(max(float(res1 @ tp.A_factor.solve(res1)), 0.0))
    rep = bound_report(r1, r2, c, tp.mu, n, sol.n_z, r1e)
    rep.uN_norm = float(np.linalg.norm(sol.u))
    rep.pN_norm = float(np.linalg.norm(sol.p))
    eu, ep = tp.truth.u - u, tp.truth.p - p
    eu_x = math.sqrt(max(float(eu @ (disc.X @ eu)), 0.0))
    eu_en = math.sqrt(max(float(eu @ (tp.A @ eu)), 0.0))
    ep_y = math.sqrt(max(float(ep @ (disc.Y @ ep)), 0.0))
    errs = TrueErrors(eu_x, eu_en, ep_y, math.hypot(eu_x, ep_y), tp.u_norm, tp.p_norm)
    return effectivities(rep, errs)


def sweep_reports(disc, vd: VariantData, points):
    """``{n: [BoundReport per test point]}`` for every stored generation ``n >= 1``."""
    return {n: [evaluate_point(disc, vd.space, vd.model, tp, n) for tp in points]
            for n in range(1, vd.model.generations + 1)}


def _fmt(x) -> str:
    return repr(float(x))


def fig_rows(reports):
    rows = {"u": [], "p": [], "z": []}
    for n, reps in reports.items():
        nz = reps[0].n_z
        un = np.array([r.errors.u_norm for r in reps])
        pn = np.array([r.errors.p_norm for r in reps])
        zn = np.hypot(un, pn)
        ba = np.array([r.delta_ba for r in reps])

        def mx(vals, norm):
            return float(np.max(np.asarray(vals) / norm))

        rows["u"].append((nz, mx([r.errors.eu_x for r in reps], un), mx([r.delta_u_sym for r in reps], un),
                          mx([r.delta_u_gen for r in reps], un), mx(ba, un)))
        rows["p"].append((nz, mx([r.errors.ep_y for r in reps], pn), mx([r.delta_p_sym for r in reps], pn),
                          mx([r.delta_p_gen for r in reps], pn), mx(ba, pn)))
        rows["z"].append((nz, mx([r.errors.e_z for r in reps], zn), mx([r.delta_sym for r in reps], zn),
                          mx([r.delta_br for r in reps], zn), mx(ba, zn)))
    return rows


def table1_rows(alg: int, reports):
    rows = []
    for n, reps in reports.items():
        vals = []
        for k in TABLE1_KEYS:
            e = np.array([r.eta[k] for r in reps])
            e = e[np.isfinite(e)]
            vals.append(float(e.max()) if e.size else math.nan)
        rows.append((alg, n, reps[0].n_z, *vals))
    return rows


def first_generation_below(fig, column: int, tol: float):
    """Smallest generation whose figure value in ``column`` is ``<= tol``."""
    for n, row in enumerate(fig, start=1):
        if row[column] <= tol:
            return n
    return None


def time_online(vd: VariantData, training, points, n: int, warmup: bool = True):
    """Average online solve and bound times (seconds) with surrogate constants."""
    model = vd.model
    if warmup:
        for tp in points[:3]:
            th = model.eval_thetas(tp.mu)
            sol = online_solve(model, tp.mu, n, th)
            residual_dual_norms(model, tp.mu, sol, th=th)
            surrogate_bounds(training, tp.mu)
    ts, tb = [], []
    for tp in points:
        t0 = time.perf_counter()
        th = model.eval_thetas(tp.mu)
        sol = online_solve(model, tp.mu, n, th)
        t1 = time.perf_counter()
        r1, r2 = residual_dual_norms(model, tp.mu, sol, th=th)
        c = surrogate_bounds(training, tp.mu)
        delta_u_sym(r1, r2, c)
        delta_p_sym(r1, r2, c)
        t2 = time.perf_counter()
        ts.append(t1 - t0)
        tb.append(t2 - t1)
    return float(np.mean(ts)), float(np.mean(tb))


def write_csv(path, header: str, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for r in rows:
            w.writerow([x if isinstance(x, (str, int, np.integer)) else _fmt(x) for x in r])


@dataclass
class SweepResult:
    figs: dict          # variant -> {"u"|"p"|"z": rows}
    table1: list
    table2: list
    reports: dict       # variant -> {n: [BoundReport]}
    points: list


def run_sweep(art: Artifact, out_dir, seed: int | None = None, test_size: int | None = None,
              log=print, disc=None) -> SweepResult:
    cfg, disc0 = rebuild_truth(art) if disc is None else (ExperimentConfig.from_dict(art.config), disc)
    disc = disc0
    size = cfg.test_size if test_size is None else test_size
    seed = cfg.test_seed if seed is None else seed
    if size < 1:
        raise EmptyTrainingSet("test set is empty")
    mus = disc.domain.sample(size, seed)
    points = prepare_test_points(disc, mus)
    t_truth = float(np.mean([tp.t_truth for tp in points]))
    log(f"{size} test points prepared; mean truth solve {t_truth * 1e3:.2f} ms")
    out = Path(out_dir)
    figs, table1, table2, all_reports = {}, [], [], {}
    for v in sorted(art.variants):
        vd = art.variants[v]
        reports = sweep_reports(disc, vd, points)
        all_reports[v] = reports
        rows = fig_rows(reports)
        figs[v] = rows
        for k in ("u", "p", "z"):
            write_csv(out / f"alg{v}" / f"fig_{k}.csv", FIG_HEADERS[k], rows[k])
        table1 += table1_rows(v, reports)
        for target in ("u", "p"):
            for tol in cfg.table_tols:
                n = first_generation_below(rows[target], 2, tol)
                if n is None:
                    table2.append((v, target, tol, "", "", math.nan, math.nan, math.nan, math.nan))
                    continue
                ts, tb = time_online(vd, art.training, points, n)
                table2.append((v, target, tol, vd.model.n_z(n), n, ts * 1e3, tb * 1e3,
                               (ts + tb) * 1e3, t_truth / (ts + tb)))
        log(f"variant {v}: swept {len(reports)} generations")
    write_csv(out / "table1.csv", TABLE1_HEADER, table1)
    write_csv(out / "table2.csv", TABLE2_HEADER, table2)
    return SweepResult(figs, table1, table2, all_reports, points)


# ---------------------------------------------------------------------------
# verification suite

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _rigor_and_order(reports_by_variant):
    viol, order_viol, eff_viol, count = 0, 0, 0, 0
    for reports in reports_by_variant.values():
        for reps in reports.values():
            for r in reps:
                e = r.errors
                count += 1
                tight = 1 + 1e-10
                pairs = [(e.eu_x, r.delta_u_sym), (e.eu_energy, r.delta_u_energy),
                         (e.ep_y, r.delta_p_sym), (e.e_z, r.delta_sym),
                         (e.eu_x, r.delta_u_gen), (e.ep_y, r.delta_p_gen), (e.e_z, r.delta_br),
                         (e.e_z, r.delta_ba), (e.eu_energy, r.delta_u_tilde), (e.ep_y, r.delta_p_tilde)]
                viol += sum(err > b * tight for err, b in pairs)
                if r.r2 > 0:
                    order_viol += (not r.delta_u_sym < r.delta_u_gen)
                    order_viol += (not r.delta_p_sym < r.delta_p_gen)
                    order_viol += (not r.delta_sym < r.delta_br)
                a, b = r.eta["u_energy"], r.eta["u_sym"]
                if a == a and b == b and a > b * (1 + 1e-12):
                    eff_viol += 1
    return viol, order_viol, eff_viol, count


def run_verify(art: Artifact, seed: int | None = None, test_size: int | None = None,
               log=print, disc=None):
    """Run the invariant suite on an artifact; returns a list of :class:`Check`."""

    cfg, disc = rebuild_truth(art) if disc is None else (ExperimentConfig.from_dict(art.config), disc)
    size = cfg.test_size if test_size is None else test_size
    seed = cfg.test_seed if seed is None else seed
    if size < 1:
        raise EmptyTrainingSet("test set is empty")
    checks = []
    # corrupted offline data shows up in the squared Gram expansion first
    for v, vd in sorted(art.variants.items()):
        try:
            for mu in disc.domain.sample(5, seed + 1000):
                for n in range(vd.model.generations + 1):
                    sol = online_solve(vd.model, mu, n)
                    residual_dual_norms(vd.model, mu, sol, method="gram")
            checks.append(Check(f"v{v} Riesz Gram tensors", True, "no negative norm squares"))
        except NegativeNormSquare as exc:
            checks.append(Check(f"v{v} Riesz Gram tensors", False, f"NegativeNormSquare: {exc}"))
    mus = disc.domain.sample(size, seed)
    points = prepare_test_points(disc, mus)
    reports = {v: sweep_reports(disc, vd, points) for v, vd in sorted(art.variants.items())}
    viol, order_viol, eff_viol, count = _rigor_and_order(reports)
    checks.append(Check("rigor", viol == 0, f"{viol} violations in {count} (mu, N) evaluations"))
    checks.append(Check("bound ordering", order_viol == 0, f"{order_viol} violations"))
    checks.append(Check("effectivity ordering", eff_viol == 0, f"{eff_viol} violations"))
    sw = 0
    for tp in points:
        c = tp.constants
        lo, hi = c.beta_br_lb / math.sqrt(c.gamma_ub), c.beta_br_lb / math.sqrt(c.alpha_lb)
        sw += not (lo * (1 - 1e-8) <= c.tilde_beta <= hi * (1 + 1e-8))
    checks.append(Check("tilde-beta sandwich", sw == 0, f"{sw} violations at {len(points)} points"))
    # offline-online consistency and a priori estimates on the first variant
    v0 = sorted(art.variants)[0]
    vd = art.variants[v0]
    rng = np.random.default_rng(seed)
    worst = 0.0
    apriori_fail = 0
    for k, tp in enumerate(points[:10]):
        n = int(rng.integers(1, vd.model.generations + 1))
        sol = online_solve(vd.model, tp.mu, n)
        a = residual_dual_norms(vd.model, tp.mu, sol)
        b = direct_dual_norms(disc, vd.space, sol)
        worst = max(worst, *(abs(x - y) / max(y, 1e-300) for x, y in zip(a, b)))
        rec = verify_apriori(disc, vd.space, vd.model, tp.mu, n, tp.constants)
        apriori_fail += not rec.holds
    checks.append(Check("residual dual norms vs truth", worst <= 1e-8, f"max relative deviation {worst:.2e}"))
    checks.append(Check("a priori estimates", apriori_fail == 0, f"{apriori_fail} failures at 10 points"))
    if art.training is not None:
        bad = 0
        for tp in points:
            s = surrogate_bounds(art.training, tp.mu)
            c = tp.constants
            bad += not (s.alpha_lb <= c.alpha_lb <= s.alpha_ub)
            bad += not (s.gamma_lb <= c.gamma_ub <= s.gamma_ub)
            bad += not (s.beta_br_lb <= c.beta_br_lb <= s.beta_br_ub)
            bad += not (c.gamma_b_ub <= s.gamma_b_ub)
        checks.append(Check("surrogate constants (held-out)", bad == 0, f"{bad} violations"))
    ortho = max(vd.space.orthonormality_error(disc.X, disc.Y) for vd in art.variants.values())
    checks.append(Check("basis orthonormality", ortho <= 1e-10, f"max deviation {ortho:.2e}"))
    for c in checks:
        log(c.line())
    return checks
