"""Reduced model: projected affine blocks, reduced solves, residual dual norms.

Residual dual norms are evaluated from the Riesz representers of every
affine residual term.  Besides the classical Gram tensors ``R^T X R`` the
model keeps an incrementally ``X``-orthonormalized factorization
``R = W C`` of the same representers; the norm of a residual with term
coefficients ``c`` is then ``|C c|``, which avoids the cancellation of the
squared Gram expansion when the residual is small relative to its terms.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .affine import ParameterDomain, compile_thetas
from .errors import NegativeNormSquare, SingularReducedSystem
from .kernels import SPDFactor
from .rbspace import reduced_infsup

CLIP_FLOOR = -1e-12
ORTHO_DROP = 1e-14
PIVOT_RATIO = 1e-13


@dataclass
class RBSolution:
    mu: np.ndarray
    n: int
    n_x: int
    n_y: int
    u: np.ndarray          # coefficients in the X_N basis
    p: np.ndarray          # coefficients in the Y_N basis
    residual: float        # relative residual of the dense reduced solve

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_y


class _RieszFactor:
    """Riesz representers of residual terms, appended in order.

    Keeps the Gram tensor ``G = R^T M R`` (``M`` the inner-product matrix)
    and the factor ``C`` with ``R = W C``, ``W^T M W = I`` (classical
    Gram-Schmidt with one re-orthogonalization pass).
    """

    def __init__(self, solve, M):
        self.solve, self.M = solve, M
        n = M.shape[0]
        self._T = np.zeros((n, 0))
        self._R = np.zeros((n, 0))
        self._W = np.zeros((n, 16))
        self.k = 0
        self.cols = []          # columns of C (upper trapezoidal)
        self.G = np.zeros((0, 0))

    @property
    def m(self) -> int:
        return self._T.shape[1]

    def append(self, vectors):
        if len(vectors) == 0:
            return
        T_new = np.column_stack([np.asarray(v, float) for v in vectors])
        R_new = self.solve(T_new)
        if R_new.ndim == 1:
            R_new = R_new[:, None]
        for j in range(T_new.shape[1]):
            t, r = T_new[:, j], R_new[:, j]
            W = self._W[:, : self.k]
            h = W.T @ t                       # W^T M r
            rem = r - W @ h
            h2 = W.T @ (self.M @ rem)
            rem -= W @ h2
            h += h2
            nrm_r = math.sqrt(max(float(t @ r), 0.0))
            nrm = math.sqrt(max(float(rem @ (self.M @ rem)), 0.0))
            if nrm > ORTHO_DROP * nrm_r:
                if self.k == self._W.shape[1]:
                    self._W = np.hstack([self._W, np.zeros_like(self._W)])
                self._W[:, self.k] = rem / nrm
                self.k += 1
                h = np.append(h, nrm)
            self.cols.append(h)
        old_m = self.m
        self._T = np.hstack([self._T, T_new])
        self._R = np.hstack([self._R, R_new])
        G = np.zeros((self.m, self.m))
        G[:old_m, :old_m] = self.G
        block = self._T.T @ R_new             # G_ij = t_i^T r_j
        G[:, old_m:] = block
        G[old_m:, :] = block.T
        G[old_m:, old_m:] = 0.5 * (block[old_m:] + block[old_m:].T)
        self.G = G

    def C(self) -> np.ndarray:
        out = np.zeros((self.k, self.m))
        for j, c in enumerate(self.cols):
            out[: len(c), j] = c
        return out


@dataclass
class ReducedModel:
    """All parameter-independent reduced quantities for nested generations.

    Generation ``n`` uses the first ``nx[n]`` velocity and ``ny[n]`` pressure
    basis columns; residual terms are ordered so that generation ``n`` uses
    the first ``m1[n]`` (``m2[n]``) terms and ``k1[n]`` (``k2[n]``) rows of
    the factors ``C1`` (``C2``).
    """

    domain: ParameterDomain
    thetas: dict                       # {"a","b","f","g"} -> JSON trees
    Aq: np.ndarray                     # (Qa, NX, NX)
    Bq: np.ndarray                     # (Qb, NY, NX)
    fq: np.ndarray                     # (Qf, NX)
    gq: np.ndarray                     # (Qg, NY)
    nx: np.ndarray                     # (G+1,)
    ny: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    m1: np.ndarray
    k1: np.ndarray
    m2: np.ndarray
    k2: np.ndarray
    G1: np.ndarray                     # Riesz Gram tensors
    G2: np.ndarray
    order1: np.ndarray                 # residual-1 term -> slot in the natural layout
    order2: np.ndarray
    mesh_hash: str = ""
    _offline: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._compile()

    def _compile(self):
        self._theta_fn = {k: compile_thetas(v) for k, v in self.thetas.items()}
        self.Q = {k: len(v) for k, v in self.thetas.items()}

    # -- layout -----------------------------------------------------------
    @property
    def generations(self) -> int:
        return len(self.nx) - 1

    def dims(self, n: int) -> tuple:
        if not 0 <= n <= self.generations:
            raise ValueError(f"generation {n} not in 0..{self.generations}")
        return int(self.nx[n]), int(self.ny[n])

    def n_z(self, n: int) -> int:
        return int(self.nx[n] + self.ny[n])

    # -- online -------------------------------------------------------------
    def eval_thetas(self, mu):
        mu = self.domain.validate(mu)
        return {k: np.array(fn(mu)) for k, fn in self._theta_fn.items()}

    def blocks(self, mu, n: int, th=None):
        th = self.eval_thetas(mu) if th is None else th
        nx, ny = self.dims(n)
        A = np.tensordot(th["a"], self.Aq[:, :nx, :nx], axes=1)
        B = np.tensordot(th["b"], self.Bq[:, :ny, :nx], axes=1)
        f = th["f"] @ self.fq[:, :nx]
        g = th["g"] @ self.gq[:, :ny]
        return A, B, f, g

    def infsup(self, mu, n: int) -> float:
        _, B, _, _ = self.blocks(mu, n)
        return reduced_infsup(B)

    def residual_coefficients(self, th, sol: RBSolution):
        """Term coefficients of both residuals in stored term order."""
        nx, ny = sol.n_x, sol.n_y
        natural1 = np.concatenate([th["f"], -np.outer(sol.u, th["a"]).ravel(),
                                   -np.outer(sol.p, th["b"]).ravel()])
        natural2 = np.concatenate([th["g"], -np.outer(sol.u, th["b"]).ravel()])
        m1, m2 = int(self.m1[sol.n]), int(self.m2[sol.n])
        return natural1[self._slots(1, nx, ny)[:m1]], natural2[self._slots(2, nx, ny)[:m2]]

    def _slots(self, which: int, nx: int, ny: int):
        """Map stored term order to positions in ``natural`` for a prefix."""
        Qa, Qb, Qf, Qg = self.Q["a"], self.Q["b"], self.Q["f"], self.Q["g"]
        order = self.order1 if which == 1 else self.order2
        kind, col, q = order[:, 0], order[:, 1], order[:, 2]
        if which == 1:
            pos = np.where(kind == 0, q, np.where(kind == 1, Qf + col * Qa + q,
                                                  Qf + nx * Qa + col * Qb + q))
        else:
            pos = np.where(kind == 0, q, Qg + col * Qb + q)
        return pos


def _offline_state(disc):
    return {
        "disc": disc,
        "r1": _RieszFactor(disc.X_factor.solve, disc.X),
        "r2": _RieszFactor(disc.Y_factor.solve, disc.Y),
        "AZ": [np.zeros((disc.X.shape[0], 0)) for _ in disc.a.terms],
        "BZ": [np.zeros((disc.Y.shape[0], 0)) for _ in disc.b.terms],
        "BtP": [np.zeros((disc.X.shape[0], 0)) for _ in disc.b.terms],
        "Zu": np.zeros((disc.X.shape[0], 0)),
        "Zp": np.zeros((disc.Y.shape[0], 0)),
        "order1": [], "order2": [],
    }


def empty_model(disc) -> ReducedModel:
    """Model of the empty space (generation 0): only the data terms."""
    Qa, Qb = disc.a.Q, disc.b.Q
    Qf, Qg = disc.f.Q, disc.g.Q
    st = _offline_state(disc)
    st["r1"].append(disc.f.terms)
    st["r2"].append(disc.g.terms)
    st["order1"] = [(0, 0, q) for q in range(Qf)]
    st["order2"] = [(0, 0, q) for q in range(Qg)]
    thetas = {"a": disc.a.thetas_json(), "b": disc.b.thetas_json(),
              "f": disc.f.thetas_json(), "g": disc.g.thetas_json()}
    model = ReducedModel(
        disc.domain, thetas, np.zeros((Qa, 0, 0)), np.zeros((Qb, 0, 0)),
        np.zeros((Qf, 0)), np.zeros((Qg, 0)), np.array([0]), np.array([0]),
        st["r1"].C(), st["r2"].C(), np.array([Qf]), np.array([st["r1"].k]),
        np.array([Qg]), np.array([st["r2"].k]), st["r1"].G.copy(), st["r2"].G.copy(),
        np.array(st["order1"], dtype=np.int64).reshape(-1, 3),
        np.array(st["order2"], dtype=np.int64).reshape(-1, 3), disc.hash(), st)
    return model


def extend(model: ReducedModel, space) -> ReducedModel:
    """Add every generation of ``space`` not yet represented in ``model`` (in place)."""
    st = model._offline
    if st is None:
        raise RuntimeError("model has no offline state; rebuild it with project()")
    disc = st["disc"]
    for gen in range(model.generations + 1, space.generations + 1):
        nx_old, ny_old = model.dims(model.generations)
        nx, ny = space.dims(gen)
        new_u = space.Zu[:, nx_old:nx]
        new_p = space.Zp[:, ny_old:ny]
        Zu = np.column_stack([st["Zu"], new_u])
        Zp = np.column_stack([st["Zp"], new_p])
        for q, Aq in enumerate(disc.a.terms):
            st["AZ"][q] = np.column_stack([st["AZ"][q], Aq @ new_u])
        for q, Bq in enumerate(disc.b.terms):
            st["BZ"][q] = np.column_stack([st["BZ"][q], Bq @ new_u])
            st["BtP"][q] = np.column_stack([st["BtP"][q], Bq.T @ new_p])
        Qa, Qb = disc.a.Q, disc.b.Q
        Aq = np.stack([0.5 * (Zu.T @ AZ + (Zu.T @ AZ).T) for AZ in st["AZ"]]) if nx else np.zeros((Qa, 0, 0))
        Bqn = np.stack([Zp.T @ BZ for BZ in st["BZ"]]) if nx else np.zeros((Qb, ny, 0))
        fq = np.stack([Zu.T @ t for t in disc.f.terms])
        gq = np.stack([Zp.T @ t for t in disc.g.terms])
        # residual terms of this generation, velocity columns first
        t1, t2 = [], []
        for j in range(nx_old, nx):
            for q in range(Qa):
                t1.append(st["AZ"][q][:, j])
                st["order1"].append((1, j, q))
            for q in range(Qb):
                t2.append(st["BZ"][q][:, j])
                st["order2"].append((1, j, q))
        for k in range(ny_old, ny):
            for q in range(Qb):
                t1.append(st["BtP"][q][:, k])
                st["order1"].append((2, k, q))
        st["r1"].append(t1)
        st["r2"].append(t2)
        st["Zu"], st["Zp"] = Zu, Zp
        model.Aq, model.Bq, model.fq, model.gq = Aq, Bqn, fq, gq
        model.nx = np.append(model.nx, nx)
        model.ny = np.append(model.ny, ny)
        model.m1 = np.append(model.m1, st["r1"].m)
        model.k1 = np.append(model.k1, st["r1"].k)
        model.m2 = np.append(model.m2, st["r2"].m)
        model.k2 = np.append(model.k2, st["r2"].k)
    model.C1, model.C2 = st["r1"].C(), st["r2"].C()
    model.G1, model.G2 = st["r1"].G.copy(), st["r2"].G.copy()
    model.order1 = np.array(st["order1"], dtype=np.int64).reshape(-1, 3)
    model.order2 = np.array(st["order2"], dtype=np.int64).reshape(-1, 3)
    return model


def project(disc, space) -> ReducedModel:
    """Build the reduced model of ``space`` generation by generation."""
    return extend(empty_model(disc), space)


# ---------------------------------------------------------------------------
# online stage

def online_solve(model: ReducedModel, mu, n: int | None = None, th=None) -> RBSolution:
    """Dense reduced saddle solve at ``mu`` with the first ``n`` generations."""
    n = model.generations if n is None else n
    th = model.eval_thetas(mu) if th is None else th
    A, B, f, g = model.blocks(mu, n, th)
    nx, ny = A.shape[0], B.shape[0]
    mu = np.asarray(mu, float)
    if nx + ny == 0:
        return RBSolution(mu, n, 0, 0, np.zeros(0), np.zeros(0), 0.0)
    if ny:
        rn = np.linalg.norm(B, axis=1)
        if nx == 0 or rn.min() <= 1e-14 * max(rn.max(), 1e-300):
            raise SingularReducedSystem("reduced divergence block has a zero row")
    K = np.zeros((nx + ny, nx + ny))
    K[:nx, :nx] = A
    K[nx:, :nx] = B
    K[:nx, nx:] = B.T
    rhs = np.concatenate([f, g])
    lu, piv = sla.lu_factor(K, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= PIVOT_RATIO * d.max():
        raise SingularReducedSystem("reduced saddle-point matrix is numerically singular")
    x = sla.lu_solve((lu, piv), rhs, check_finite=False)
    res = float(np.linalg.norm(K @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return RBSolution(mu, n, nx, ny, x[:nx], x[nx:], res)


def residual_dual_norms(model: ReducedModel, mu, sol: RBSolution, method: str = "factor", th=None):
    """``(|r1|_X', |r2|_Y')`` of the reduced solution.

    ``method="factor"`` uses the orthonormalized Riesz factor (stable);
    ``method="gram"`` uses the squared Gram expansion, clipping roundoff
    negatives down to ``-1e-12`` and raising :class:`NegativeNormSquare`
    below that.
    """
    th = model.eval_thetas(mu) if th is None else th
    c1, c2 = model.residual_coefficients(th, sol)
    n = sol.n
    if method == "factor":
        r1 = float(np.linalg.norm(model.C1[: model.k1[n], : c1.size] @ c1))
        r2 = float(np.linalg.norm(model.C2[: model.k2[n], : c2.size] @ c2))
        return r1, r2
    if method != "gram":
        raise ValueError(f"unknown method {method!r}")
    out = []
    for c, G in ((c1, model.G1), (c2, model.G2)):
        s = float(c @ (G[: c.size, : c.size] @ c))
        if s < CLIP_FLOOR:
            raise NegativeNormSquare(f"residual norm square {s:.3e} below {CLIP_FLOOR}")
        out.append(math.sqrt(max(s, 0.0)))
    return tuple(out)


def expand(space, sol: RBSolution):
    """Truth coefficient vectors of a reduced solution."""
    return space.Zu[:, : sol.n_x] @ sol.u, space.Zp[:, : sol.n_y] @ sol.p


def truth_residuals(disc, space, sol: RBSolution):
    """Residual vectors ``(r1, r2)`` in truth coordinates (dual representation)."""
    u, p = expand(space, sol)
    mu = sol.mu
    r1 = disc.f.assemble(mu) - disc.A(mu) @ u - disc.B(mu).T @ p
    r2 = disc.g.assemble(mu) - disc.B(mu) @ u
    return r1, r2


def direct_dual_norms(disc, space, sol: RBSolution):
    """Dual norms from a truth-level residual assembly and Riesz solve."""
    r1, r2 = truth_residuals(disc, space, sol)
    z1 = disc.X_factor.solve(r1)
    z2 = disc.Y_factor.solve(r2)
    return math.sqrt(max(float(r1 @ z1), 0.0)), math.sqrt(max(float(r2 @ z2), 0.0))


def energy_residual_norm(disc, space, sol: RBSolution, r1_dual: float | None = None,
                         constants=None, mode: str = "validation"):
    """Dual norm of the momentum residual with respect to the energy norm.

    ``mode="validation"`` solves ``A(mu) z = r1`` at truth level and returns
    ``sqrt(r1^T z)``.  ``mode="sandwich"`` returns the interval
    ``(|r1|_X' / sqrt(gamma), |r1|_X' / sqrt(alpha))`` from the constants.
    """
    if mode == "sandwich":
        if r1_dual is None or constants is None:
            raise ValueError("sandwich mode needs r1_dual and constants")
        return (r1_dual / math.sqrt(constants.gamma_ub), r1_dual / math.sqrt(constants.alpha_lb))
    if mode != "validation":
        raise ValueError(f"unknown mode {mode!r}")
    r1, _ = truth_residuals(disc, space, sol)
    if not np.any(r1):
        return 0.0
    z = SPDFactor(disc.A(sol.mu)).solve(r1)
    return math.sqrt(max(float(r1 @ z), 0.0))


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
