"""A posteriori error bounds, effectivities, true errors and a priori checks.

Notation: ``r1 = |r1_N|_X'`` (momentum residual), ``r2 = |r2_N|_Y'``
(continuity residual), ``alpha``/``gamma`` coercivity/continuity of ``a``,
``beta`` the Brezzi inf-sup constant.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InfeasibleConstraint, NonpositiveConstant, ZeroError
from .online import RBSolution, energy_residual_norm, expand, online_solve, residual_dual_norms
from .stokes import truth_solve

ZERO_ERROR = 1e-12          # relative to the truth norm


def _check(c):
    if not (c.alpha_lb > 0 and c.beta_br_lb > 0 and c.gamma_ub > 0):
        raise NonpositiveConstant(
            f"need alpha_lb, gamma_ub, beta_lb > 0 (got {c.alpha_lb}, {c.gamma_ub}, {c.beta_br_lb})")


def delta_u_sym(r1: float, r2: float, c) -> float:
    """Velocity bound exploiting symmetry."""
    _check(c)
    return r1 / c.alpha_lb + math.sqrt(c.gamma_ub / c.alpha_lb) * r2 / c.beta_br_lb


def delta_p_sym(r1: float, r2: float, c) -> float:
    """Pressure bound exploiting symmetry."""
    _check(c)
    beta = c.beta_br_lb
    return (1.0 + math.sqrt(c.gamma_ub / c.alpha_lb)) * r1 / beta + (c.gamma_ub / beta) * r2 / beta


def delta_combined(du: float, dp: float) -> float:
    return math.hypot(du, dp)


delta_combined_sym = delta_combined


def delta_u_energy(r1: float, r2: float, c) -> float:
    """Velocity bound in the energy norm ``sqrt(a(v, v; mu))``."""
    _check(c)
    return r1 / math.sqrt(c.alpha_lb) + math.sqrt(c.gamma_ub) * r2 / c.beta_br_lb


def delta_u_general(r1: float, r2: float, c) -> float:
    """Velocity bound without the energy-norm argument (general saddle problems)."""
    _check(c)
    return r1 / c.alpha_lb + (1.0 + c.gamma_ub / c.alpha_lb) * r2 / c.beta_br_lb


def delta_p_general(r1: float, r2: float, c) -> float:
    _check(c)
    k = 1.0 + c.gamma_ub / c.alpha_lb
    beta = c.beta_br_lb
    return k * r1 / beta + (c.gamma_ub / beta) * k * r2 / beta


def delta_combined_general(r1: float, r2: float, c) -> float:
    return delta_combined(delta_u_general(r1, r2, c), delta_p_general(r1, r2, c))


def delta_babuska(r1: float, r2: float, beta_ba: float) -> float:
    """Combined-residual bound from the Babuska inf-sup constant."""
    if not beta_ba > 0:
        raise NonpositiveConstant(f"Babuska constant must be positive, got {beta_ba}")
    return math.hypot(r1, r2) / beta_ba


def delta_tilde_beta_pair(r1_energy: float, r2: float, tilde_beta: float):
    """``(energy velocity bound, pressure bound)`` from the energy-dual residual."""
    if not tilde_beta > 0:
        raise NonpositiveConstant(f"tilde beta must be positive, got {tilde_beta}")
    return r1_energy + r2 / tilde_beta, 2.0 * r1_energy / tilde_beta + r2 / tilde_beta ** 2


# ---------------------------------------------------------------------------

@dataclass
class TrueErrors:
    eu_x: float
    eu_energy: float
    ep_y: float
    e_z: float
    u_norm: float          # |u|_X of the (homogeneous) truth velocity
    p_norm: float


@dataclass
class BoundReport:
    mu: np.ndarray
    n: int
    n_z: int
    r1: float
    r2: float
    constants: object
    delta_u_sym: float
    delta_p_sym: float
    delta_sym: float
    delta_u_energy: float
    delta_u_gen: float
    delta_p_gen: float
    delta_br: float
    delta_ba: float = math.nan
    delta_u_tilde: float = math.nan
    delta_p_tilde: float = math.nan
    r1_energy: float = math.nan
    uN_norm: float = math.nan
    pN_norm: float = math.nan
    errors: TrueErrors | None = None
    eta: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("constants", "errors", "eta", "mu")}
        d["mu"] = list(map(float, self.mu))
        if self.errors is not None:
            d.update(asdict(self.errors))
        d.update({f"eta_{k}": v for k, v in self.eta.items()})
        return d


def bound_report(r1: float, r2: float, c, mu=None, n: int = 0, n_z: int = 0,
                 r1_energy: float | None = None) -> BoundReport:
    du, dp = delta_u_sym(r1, r2, c), delta_p_sym(r1, r2, c)
    dug, dpg = delta_u_general(r1, r2, c), delta_p_general(r1, r2, c)
    rep = BoundReport(np.asarray(mu if mu is not None else [], float), n, n_z, r1, r2, c,
                      du, dp, delta_combined(du, dp), delta_u_energy(r1, r2, c),
                      dug, dpg, delta_combined(dug, dpg))
    if c.beta_ba_lb == c.beta_ba_lb and c.beta_ba_lb > 0:
        rep.delta_ba = delta_babuska(r1, r2, c.beta_ba_lb)
    if r1_energy is not None and c.tilde_beta == c.tilde_beta:
        rep.r1_energy = r1_energy
        rep.delta_u_tilde, rep.delta_p_tilde = delta_tilde_beta_pair(r1_energy, r2, c.tilde_beta)
    return rep


def true_errors(disc, space, sol: RBSolution, truth=None) -> TrueErrors:
    """Errors of the reduced solution against the truth solution at ``sol.mu``."""
    truth = truth if truth is not None else truth_solve(disc, sol.mu)
    u, p = expand(space, sol)
    eu, ep = truth.u - u, truth.p - p
    eu_x = math.sqrt(max(float(eu @ (disc.X @ eu)), 0.0))
    eu_en = math.sqrt(max(float(eu @ (disc.A(sol.mu) @ eu)), 0.0))
    ep_y = math.sqrt(max(float(ep @ (disc.Y @ ep)), 0.0))
    u_norm = math.sqrt(float(truth.u @ (disc.X @ truth.u)))
    p_norm = math.sqrt(float(truth.p @ (disc.Y @ truth.p)))
    return TrueErrors(eu_x, eu_en, ep_y, math.hypot(eu_x, ep_y), u_norm, p_norm)


EFFECTIVITY_PAIRS = {
    # name: (bound attribute, error attribute)
    "u_energy": ("delta_u_energy", "eu_energy"),
    "u_sym": ("delta_u_sym", "eu_x"),
    "u_br": ("delta_u_gen", "eu_x"),
    "u_ba": ("delta_ba", "eu_x"),
    "p_sym": ("delta_p_sym", "ep_y"),
    "p_br": ("delta_p_gen", "ep_y"),
    "p_ba": ("delta_ba", "ep_y"),
    "sym": ("delta_sym", "e_z"),
    "br": ("delta_br", "e_z"),
    "ba": ("delta_ba", "e_z"),
    "u_tilde": ("delta_u_tilde", "eu_energy"),
    "p_tilde": ("delta_p_tilde", "ep_y"),
}


def effectivity(bound: float, error: float, reference: float = 1.0) -> float:
    """``bound / error``; :class:`ZeroError` when ``error`` is roundoff relative to ``reference``."""
    if error < ZERO_ERROR * reference:
        raise ZeroError(f"error {error:.2e} too small for a meaningful effectivity")
    return bound / error


def effectivities(report: BoundReport, errors: TrueErrors | None = None) -> BoundReport:
    """Fill ``report.eta``; entries with vanishing error become NaN."""
    errors = errors if errors is not None else report.errors
    if errors is None:
        raise ValueError("true errors required")
    report.errors = errors
    ref = {"eu_x": errors.u_norm, "eu_energy": errors.u_norm, "ep_y": errors.p_norm,
           "e_z": math.hypot(errors.u_norm, errors.p_norm)}
    for name, (b, e) in EFFECTIVITY_PAIRS.items():
        try:
            report.eta[name] = effectivity(getattr(report, b), getattr(errors, e), ref[e])
        except ZeroError:
            report.eta[name] = math.nan
    return report


def check_effectivity_order(report: BoundReport) -> bool:
    """Energy-norm velocity effectivity never exceeds the X-norm one."""
    a, b = report.eta.get("u_energy", math.nan), report.eta.get("u_sym", math.nan)
    return not (a == a and b == b) or a <= b * (1 + 1e-12)


def evaluate(model, mu, n, constants, disc=None, space=None, truth=None, with_errors=False,
             energy=False) -> BoundReport:
    """Online solve plus full bound report (and true errors on request)."""
    sol = online_solve(model, mu, n)
    r1, r2 = residual_dual_norms(model, mu, sol)
    r1e = None
    if energy:
        r1e = energy_residual_norm(disc, space, sol)
    rep = bound_report(r1, r2, constants, sol.mu, n, sol.n_z, r1e)
    rep.uN_norm = float(np.linalg.norm(sol.u))
    rep.pN_norm = float(np.linalg.norm(sol.p))
    if with_errors:
        effectivities(rep, true_errors(disc, space, sol, truth))
    return rep


# ---------------------------------------------------------------------------
# a priori estimates

@dataclass
class AprioriRecord:
    mu: np.ndarray
    n: int
    eu_x: float
    ep_y: float
    inf_u: float           # best constrained velocity approximation error
    inf_p: float           # best pressure approximation error
    rhs_u: float
    rhs_p: float
    alpha: float
    gamma: float
    gamma_b: float
    beta_n: float

    @property
    def holds_u(self) -> bool:
        return self.eu_x <= self.rhs_u * (1 + 1e-10) + 1e-13

    @property
    def holds_p(self) -> bool:
        return self.ep_y <= self.rhs_p * (1 + 1e-10) + 1e-13

    @property
    def holds(self) -> bool:
        return self.holds_u and self.holds_p


def best_pressure_error(disc, space, n_y: int, p) -> float:
    """``inf_{q in Y_N} |p - q|_Y`` via ``Y``-orthogonal projection."""
    Zp = space.Zp[:, :n_y]
    e = p - Zp @ (Zp.T @ (disc.Y @ p))
    return math.sqrt(max(float(e @ (disc.Y @ e)), 0.0))


def best_constrained_velocity_error(disc, space, n_x: int, n_y: int, mu, u) -> float:
    """``inf |u - v_N|_X`` over ``v_N`` in ``X_N`` with ``B_N v_N = g_N``.

    With an ``X``-orthonormal basis this is an equality-constrained least
    squares problem in the coefficients, solved by projecting the
    unconstrained optimum onto the affine constraint set.
    """
    Zu, Zp = space.Zu[:, :n_x], space.Zp[:, :n_y]
    c_star = Zu.T @ (disc.X @ u)
    if n_y:
        BN = Zp.T @ (disc.B(mu) @ Zu)
        gN = Zp.T @ disc.g.assemble(mu)
        M = BN @ BN.T
        s = np.linalg.svd(BN, compute_uv=False)
        if n_y > n_x or s[-1] <= 1e-12 * max(s[0], 1e-300):
            raise InfeasibleConstraint("reduced divergence block is rank deficient")
        c = c_star - BN.T @ np.linalg.solve(M, BN @ c_star - gN)
        if np.linalg.norm(BN @ c - gN) > 1e-8 * max(np.linalg.norm(gN), 1e-300):
            raise InfeasibleConstraint("g_N is not in the range of B_N")
    else:
        c = c_star
    e = u - Zu @ c
    return math.sqrt(max(float(e @ (disc.X @ e)), 0.0))


def verify_apriori(disc, space, model, mu, n: int, constants) -> AprioriRecord:
    """Evaluate both sides of the a priori estimates at ``(mu, n)``."""
    sol = online_solve(model, mu, n)
    truth = truth_solve(disc, mu)
    err = true_errors(disc, space, sol, truth)
    beta_n = model.infsup(mu, n)
    inf_p = best_pressure_error(disc, space, sol.n_y, truth.p)
    inf_u = best_constrained_velocity_error(disc, space, sol.n_x, sol.n_y, mu, truth.u)
    a, g, gb = constants.alpha_lb, constants.gamma_ub, constants.gamma_b_ub
    root = math.sqrt(g / a)
    rhs_u = 2.0 * root * inf_u + (gb / a) * inf_p
    rhs_p = (1.0 + (gb / beta_n) * (1.0 + root)) * inf_p + 2.0 * (g / beta_n) * inf_u
    return AprioriRecord(np.asarray(mu, float), n, err.eu_x, err.ep_y, inf_u, inf_p,
                         rhs_u, rhs_p, a, g, gb, beta_n)
