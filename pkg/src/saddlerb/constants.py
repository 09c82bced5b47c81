"""Truth stability constants and cheap surrogate bounds for them.

Exact values come from generalized eigenproblems:

* coercivity ``alpha``  -- min eig of ``(A, X)``
* continuity ``gamma``  -- max eig of ``(A, X)``
* ``gamma_b`` / Brezzi ``beta`` -- sqrt of max / min eig of ``(B X^-1 B^T, Y)``
* ``tilde_beta``        -- sqrt of min eig of ``(B A^-1 B^T, Y)``
* Babuska ``beta``      -- smallest Z-norm singular value of ``K = [[A, B^T], [B, 0]]``,
  i.e. min ``|lam|`` of ``(K, blockdiag(X, Y))``
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .affine import compile_thetas, expr_from_json
from .errors import EmptyTrainingSet, NotSPD, SingularSystem, StabilityLoss
from .kernels import DENSE_BELOW, SaddleFactor, SPDFactor, eig_extreme, saddle_matrix

STABILITY_FLOOR = 1e-10      # on beta^2 / gamma_b^2
LB_FACTOR = 0.9
UB_FACTOR = 1.1


@dataclass
class ConstantBounds:
    alpha_lb: float
    alpha_ub: float
    gamma_lb: float
    gamma_ub: float
    gamma_b_ub: float
    beta_br_lb: float
    beta_br_ub: float
    beta_ba_lb: float = float("nan")
    tilde_beta: float = float("nan")
    mode: str = "exact"

    def as_dict(self):
        return asdict(self)

    def check(self):
        pairs = [(self.alpha_lb, self.alpha_ub), (self.gamma_lb, self.gamma_ub),
                 (self.beta_br_lb, self.beta_br_ub)]
        for lo, hi in pairs:
            if not lo <= hi * (1 + 1e-12):
                raise ValueError(f"lower bound {lo} exceeds upper bound {hi}")
        if min(self.alpha_lb, self.beta_br_lb) <= 0:
            raise ValueError("coercivity and inf-sup lower bounds must be positive")


# ---------------------------------------------------------------------------
# matrix-level routines

def _schur(B, solve, n):
    """Dense ``B M^-1 B^T`` given the action of ``M^-1`` on a block of columns."""
    Bt = B.T.toarray() if sp.issparse(B) else np.asarray(B).T
    W = solve(Bt)
    S = np.asarray(B @ W)
    return 0.5 * (S + S.T)


def coercivity_constant(A, X, X_solve=None, dense_below: int = DENSE_BELOW) -> float:
    return eig_extreme(A, X, "min", G_solve=X_solve, dense_below=dense_below).value


def continuity_constant(A, X, X_solve=None, dense_below: int = DENSE_BELOW) -> float:
    return eig_extreme(A, X, "max", G_solve=X_solve, dense_below=dense_below).value


def _schur_extreme(B, M, Y, which, M_factor=None, Y_solve=None):
    """Extreme eigenvalue of ``(B M^-1 B^T, Y)`` for SPD ``M``."""
    ny, nx = B.shape
    if ny == 0:
        return math.inf
    M_factor = M_factor or SPDFactor(M)
    if ny < DENSE_BELOW:
        S = _schur(B, M_factor.solve, nx)
        return eig_extreme(S, Y, which).value
    B = sp.csr_matrix(B)
    S_op = spla.LinearOperator((ny, ny), matvec=lambda q: B @ M_factor.solve(B.T @ q), dtype=float)
    if which == "max":
        return eig_extreme(S_op, Y, "max", G_solve=Y_solve).value
    # S^-1 r = -(p-part of the saddle solve with [[M, B^T], [B, 0]] and rhs [0; r])
    try:
        fac = SaddleFactor(M, B)
    except SingularSystem as exc:
        raise StabilityLoss(str(exc)) from exc
    nxm = M.shape[0]

    def s_inv(r):
        return -fac.solve_raw(np.concatenate([np.zeros(nxm), r]))[nxm:]

    return eig_extreme(S_op, Y, "absmin", M_solve=s_inv).value


def continuity_b_constant(B, X, Y, X_factor=None, Y_solve=None) -> float:
    lam = _schur_extreme(B, X, Y, "max", X_factor, Y_solve)
    return math.sqrt(max(lam, 0.0))


def _check_stable(lo: float, hi: float) -> float:
    if math.isinf(lo):          # no pressure space
        return lo
    beta = math.sqrt(max(lo, 0.0))
    if lo <= STABILITY_FLOOR * hi:
        raise StabilityLoss(f"Brezzi inf-sup constant {beta:.3e} is numerically zero "
                            f"(continuity {math.sqrt(max(hi, 0.0)):.3e})")
    return beta


def brezzi_constant(B, X, Y, X_factor=None, Y_solve=None) -> float:
    X_factor = X_factor or SPDFactor(X)
    lo = _schur_extreme(B, X, Y, "min", X_factor, Y_solve)
    hi = _schur_extreme(B, X, Y, "max", X_factor, Y_solve)
    return _check_stable(lo, hi)


def tilde_beta_constant(A, B, Y) -> float:
    lam = _schur_extreme(B, A, Y, "min")
    return math.sqrt(max(lam, 0.0))


def babuska_constant(A, B, X, Y) -> float:
    """Smallest singular value of the saddle operator in the ``Z = X x Y`` norm."""
    if B is None or B.shape[0] == 0:
        return coercivity_constant(A, X)
    K = saddle_matrix(A, B)
    Z = sp.block_diag([sp.csr_matrix(X), sp.csr_matrix(Y)], format="csc")
    return abs(eig_extreme(K, Z, "absmin").value)


def babuska_constant_normal(A, B, X, Y) -> float:
    """Same constant via the normal pencil ``(K Z^-1 K, Z)`` (dense; small systems only)."""
    K = saddle_matrix(A, B).toarray()
    Z = sp.block_diag([sp.csr_matrix(X), sp.csr_matrix(Y)]).toarray()
    N = K @ np.linalg.solve(Z, K)
    return math.sqrt(max(eig_extreme(0.5 * (N + N.T), Z, "min", dense_below=10**9).value, 0.0))


# ---------------------------------------------------------------------------
# discretization-level wrappers

def alpha_exact(disc, mu) -> float:
    return coercivity_constant(disc.A(mu), disc.X, disc.X_factor.solve)


def gamma_exact(disc, mu) -> float:
    return continuity_constant(disc.A(mu), disc.X, disc.X_factor.solve)


def gamma_b_exact(disc, mu) -> float:
    return continuity_b_constant(disc.B(mu), disc.X, disc.Y, disc.X_factor, disc.Y_factor.solve)


def beta_brezzi_exact(disc, mu) -> float:
    return brezzi_constant(disc.B(mu), disc.X, disc.Y, disc.X_factor, disc.Y_factor.solve)


def beta_babuska_exact(disc, mu) -> float:
    return babuska_constant(disc.A(mu), disc.B(mu), disc.X, disc.Y)


def tilde_beta_exact(disc, mu) -> float:
    return tilde_beta_constant(disc.A(mu), disc.B(mu), disc.Y)


def exact_bounds(disc, mu, babuska: bool = True, tilde: bool = True, gamma_b: bool = True) -> ConstantBounds:
    """All constants at ``mu``; lower and upper bounds coincide."""
    mu = disc.domain.validate(mu)
    A, B = disc.A(mu), disc.B(mu)
    al = coercivity_constant(A, disc.X, disc.X_factor.solve)
    ga = continuity_constant(A, disc.X, disc.X_factor.solve)
    gb = continuity_b_constant(B, disc.X, disc.Y, disc.X_factor, disc.Y_factor.solve) if gamma_b else math.nan
    be = brezzi_constant(B, disc.X, disc.Y, disc.X_factor, disc.Y_factor.solve)
    ba = babuska_constant(A, B, disc.X, disc.Y) if babuska else math.nan
    tb = tilde_beta_constant(A, B, disc.Y) if tilde else math.nan
    return ConstantBounds(al, al, ga, ga, gb, be, be, ba, tb, "exact")


class ExactConstants:
    """Exact constants over many parameters for one discretization.

    Caches the ``X`` factorization and, when the pressure space is small
    enough for dense algebra, the parameter-independent Schur blocks
    ``S_qr = B_q X^-1 B_r^T`` so that ``B(mu) X^-1 B(mu)^T`` costs only a
    short dense sum per parameter.
    """

    # Lanczos with the cached X factor beats dense LAPACK well below the
    # kernel default for these well-conditioned velocity pencils
    VELOCITY_DENSE_BELOW = 400

    def __init__(self, disc):
        self.disc = disc
        self._blocks = None
        ny = disc.space.n_pressure
        if ny < DENSE_BELOW:
            W = [disc.X_factor.solve(t.T.toarray()) for t in disc.b.terms]
            self._blocks = [[np.asarray(bq @ w) for w in W] for bq in disc.b.terms]
            self._Yd = disc.Y.toarray()

    def schur(self, mu) -> np.ndarray:
        th = self.disc.b.eval_thetas(mu)
        S = np.zeros_like(self._Yd)
        for q, row in enumerate(self._blocks):
            for r, blk in enumerate(row):
                S += th[q] * th[r] * blk
        return 0.5 * (S + S.T)

    def brezzi_pair(self, mu):
        """``(beta_Br, gamma_b)`` at ``mu``."""
        if self._blocks is None:
            return beta_brezzi_exact(self.disc, mu), gamma_b_exact(self.disc, mu)
        S = self.schur(mu)
        lo = eig_extreme(S, self._Yd, "min").value
        hi = eig_extreme(S, self._Yd, "max").value
        return _check_stable(lo, hi), math.sqrt(max(hi, 0.0))

    def __call__(self, mu, babuska: bool = False, tilde: bool = False) -> ConstantBounds:
        disc = self.disc
        mu = disc.domain.validate(mu)
        A = disc.A(mu)
        al = coercivity_constant(A, disc.X, disc.X_factor.solve, self.VELOCITY_DENSE_BELOW)
        ga = continuity_constant(A, disc.X, disc.X_factor.solve, self.VELOCITY_DENSE_BELOW)
        be, gb = self.brezzi_pair(mu)
        ba = babuska_constant(A, disc.B(mu), disc.X, disc.Y) if babuska else math.nan
        tb = tilde_beta_constant(A, disc.B(mu), disc.Y) if tilde else math.nan
        return ConstantBounds(al, al, ga, ga, gb, be, be, ba, tb, "exact")


# ---------------------------------------------------------------------------
# surrogate ("empirically certified") bounds

@dataclass
class ConstantsTraining:
    """Exact constants at training parameters plus the a-form coefficients.

    ``min_theta`` records that every a-term is positive semidefinite and all
    a-coefficients are positive on the domain, which makes the min/max-theta
    ratio bounds for ``alpha`` and ``gamma`` rigorous.
    """

    mus: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    beta_br: np.ndarray
    gamma_b: np.ndarray
    a_thetas: list                      # JSON expression trees
    b_thetas: list
    beta_ba: np.ndarray | None = None
    min_theta: bool = True
    lb_factor: float = LB_FACTOR
    ub_factor: float = UB_FACTOR
    _exprs: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self.mus = np.atleast_2d(np.asarray(self.mus, float))
        if len(self.mus) == 0 or self.mus.size == 0:
            raise EmptyTrainingSet("surrogate constants need at least one training point")
        for name in ("alpha", "gamma", "beta_br", "gamma_b"):
            setattr(self, name, np.asarray(getattr(self, name), float))
        if self.beta_ba is not None:
            self.beta_ba = np.asarray(self.beta_ba, float)
        a = [expr_from_json(t) for t in self.a_thetas]
        b = [expr_from_json(t) for t in self.b_thetas]
        self._exprs = (a, b)
        self._eval = (compile_thetas(a), compile_thetas(b))
        self._theta_a_train = np.array([[t(m) for t in a] for m in self.mus])
        self._theta_b_train = np.array([[t(m) for t in b] for m in self.mus])

    def thetas(self, mu):
        fa, fb = self._eval
        return np.array(fa(mu), float), np.array(fb(mu), float)

    def to_payload(self):
        meta = {"a_thetas": self.a_thetas, "b_thetas": self.b_thetas, "min_theta": self.min_theta,
                "lb_factor": self.lb_factor, "ub_factor": self.ub_factor}
        arrays = {"mus": self.mus, "alpha": self.alpha, "gamma": self.gamma,
                  "beta_br": self.beta_br, "gamma_b": self.gamma_b}
        if self.beta_ba is not None:
            arrays["beta_ba"] = self.beta_ba
        return meta, arrays

    @classmethod
    def from_payload(cls, meta, arrays):
        return cls(arrays["mus"], arrays["alpha"], arrays["gamma"], arrays["beta_br"],
                   arrays["gamma_b"], meta["a_thetas"], meta["b_thetas"], arrays.get("beta_ba"),
                   meta["min_theta"], meta["lb_factor"], meta["ub_factor"])


def a_terms_psd(disc, tol: float = 1e-10) -> bool:
    """True when every a-term is symmetric and ``t + tol * |t| X`` is SPD.

    The shifted factorization succeeds with positive pivots only when the
    smallest eigenvalue of ``(t, X)`` exceeds ``-tol * |t|``.
    """
    for t in disc.a.terms:
        scale = abs(t).max()
        d = abs(t - t.T)
        if d.nnz and d.max() > 1e-12 * scale:
            return False
        try:
            SPDFactor(t + tol * scale * disc.X)
        except NotSPD:
            return False
    return True


def build_training(disc, mus, exact=None, babuska: bool = False) -> ConstantsTraining:
    """Evaluate exact constants at ``mus`` (or reuse ``exact``: list of ConstantBounds)."""
    mus = np.atleast_2d(np.asarray(mus, float))
    if len(mus) == 0 or mus.size == 0:
        raise EmptyTrainingSet("training sample is empty")
    if exact is None:
        ev = ExactConstants(disc)
        exact = [ev(m, babuska=babuska) for m in mus]
    a_th = disc.a.thetas_json()
    b_th = disc.b.thetas_json()
    theta_pos = all(np.all(disc.a.eval_thetas(m) > 0) for m in
                    (disc.domain.sample(64, 0).tolist() + [list(disc.domain.lower), list(disc.domain.upper)]))
    beta_ba = np.array([c.beta_ba_lb for c in exact]) if babuska else None
    return ConstantsTraining(mus, [c.alpha_lb for c in exact], [c.gamma_ub for c in exact],
                             [c.beta_br_lb for c in exact], [c.gamma_b_ub for c in exact],
                             a_th, b_th, beta_ba, theta_pos and a_terms_psd(disc))


def _nearest(training: ConstantsTraining, mu):
    d = np.linalg.norm(training.mus - mu, axis=1)
    return int(np.argmin(d))


def surrogate_bounds(training: ConstantsTraining, mu) -> ConstantBounds:
    """Online-cheap bounds from the training data.

    alpha/gamma: min/max-theta ratio bounds, best over the training set, times
    the safety factors (rigorous when ``training.min_theta``).  Brezzi beta and
    gamma_b: training values attenuated by the theta ratios between ``mu`` and
    the training point, best over the training set, times the safety factors
    (validated on held-out samples, not proved).
    """
    if training is None or len(training.mus) == 0:
        raise EmptyTrainingSet("no training data")
    mu = np.asarray(mu, float)
    ta, tb = training.thetas(mu)
    lb, ub = training.lb_factor, training.ub_factor
    if training.min_theta:
        ratio = ta[None, :] / training._theta_a_train
        rmin, rmax = ratio.min(axis=1), ratio.max(axis=1)
        alpha_lb = lb * np.max(training.alpha * rmin)
        alpha_ub = ub * np.min(training.alpha * rmax)
        gamma_lb = lb * np.max(training.gamma * rmin)
        gamma_ub = ub * np.min(training.gamma * rmax)
    else:
        k = _nearest(training, mu)
        alpha_lb, alpha_ub = lb * training.alpha[k], ub * training.alpha[k]
        gamma_lb, gamma_ub = lb * training.gamma[k], ub * training.gamma[k]
    both = np.hstack([training._theta_a_train, np.abs(training._theta_b_train)])
    cur = np.hstack([ta, np.abs(tb)])[None, :]
    r = np.minimum(cur / both, both / cur).min(axis=1)    # in (0, 1], 1 at the training point
    beta_lb = lb * np.max(training.beta_br * r)
    beta_ub = ub * np.min(training.beta_br / r)
    gamma_b_ub = ub * np.min(training.gamma_b / r)
    beta_ba_lb = lb * np.max(training.beta_ba * r) if training.beta_ba is not None else math.nan
    tilde = beta_lb / math.sqrt(gamma_ub)
    return ConstantBounds(float(alpha_lb), float(alpha_ub), float(gamma_lb), float(gamma_ub),
                          float(gamma_b_ub), float(beta_lb), float(beta_ub), float(beta_ba_lb),
                          float(tilde), "surrogate")
