"""Sparse and dense linear-algebra kernels.

Everything here is a pure function of its inputs.  Sparse direct solves go
through SuperLU; extremal generalized eigenvalues use ARPACK (Lanczos) above
``DENSE_BELOW`` unknowns and LAPACK below.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, NotSPD, Singular, SingularSystem

DENSE_BELOW = 2000
SPD_RTOL = 1e-10
SADDLE_RTOL = 1e-9
EIG_RTOL = 1e-8
EIG_SEED = 1234


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray
    residual_norm: float
    iterations: int


def _csc(M):
    if sp.issparse(M):
        return sp.csc_matrix(M, dtype=float)
    return sp.csc_matrix(np.asarray(M, dtype=float))


def _rel_residual(M, x, rhs):
    r = M @ x - rhs
    scale = np.linalg.norm(rhs)
    if scale == 0.0:
        scale = 1.0
    return float(np.linalg.norm(r) / scale)


class SPDFactor:
    """Symmetric LU factorization of an SPD matrix with a pivot-sign check.

    With ``diag_pivot_thresh=0`` and a symmetric ordering, SuperLU performs
    ``P M P^T = L U`` and the diagonal of ``U`` holds the LDL^T pivots, so the
    matrix is SPD exactly when all of them are positive.
    """

    def __init__(self, M):
        M = _csc(M)
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"square matrix expected, got {M.shape}")
        self.matrix = M
        self.shape = M.shape
        try:
            lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise Singular(str(exc)) from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotSPD("factorization required off-diagonal pivoting")
        d = lu.U.diagonal()
        if not np.all(np.isfinite(d)):
            raise Singular("non-finite pivot")
        if np.any(d <= 0.0):
            raise NotSPD(f"nonpositive pivot {d.min():.3e}")
        self._lu = lu

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] == 0:
            return rhs.copy()
        return self._lu.solve(rhs)


def factor_spd(M) -> SPDFactor:
    return SPDFactor(M)


def solve_spd(M, rhs, rtol: float = SPD_RTOL, factor: SPDFactor | None = None) -> np.ndarray:
    """Solve ``M x = rhs`` for symmetric positive definite ``M``."""
    factor = factor if factor is not None else SPDFactor(M)
    rhs = np.asarray(rhs, dtype=float)
    x = factor.solve(rhs)
    # at most two steps of iterative refinement before giving up
    for _ in range(2):
        if _rel_residual(factor.matrix, x, rhs) <= rtol:
            return x
        x = x + factor.solve(rhs - factor.matrix @ x)
    if _rel_residual(factor.matrix, x, rhs) > rtol:
        raise Singular("SPD solve did not reach the requested accuracy")
    return x


def saddle_matrix(A, B) -> sp.csc_matrix:
    A = sp.csr_matrix(A, dtype=float)
    B = sp.csr_matrix(B, dtype=float)
    return sp.bmat([[A, B.T], [B, None]], format="csc")


class SaddleFactor:
    """Factorization of ``[[A, B^T], [B, 0]]`` reusable for many right-hand sides."""

    PIVOT_RATIO = 1e-13

    def __init__(self, A, B):
        B = sp.csr_matrix(B, dtype=float)
        self.nx = A.shape[0]
        self.ny = B.shape[0]
        if B.shape[1] != self.nx:
            raise ValueError("B must have as many columns as A")
        row_norms = np.sqrt(np.asarray(B.multiply(B).sum(axis=1)).ravel())
        if self.ny and np.any(row_norms == 0.0):
            raise SingularSystem("B has a zero row (rank deficient)")
        self.matrix = saddle_matrix(A, B)
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        d = np.abs(self._lu.U.diagonal())
        if not np.all(np.isfinite(d)) or d.min() <= self.PIVOT_RATIO * d.max():
            raise SingularSystem("numerically singular saddle-point matrix")

    def solve(self, f, g):
        rhs = np.concatenate([np.asarray(f, float), np.asarray(g, float)])
        x = self._lu.solve(rhs)
        for _ in range(2):
            if _rel_residual(self.matrix, x, rhs) <= SADDLE_RTOL:
                break
            x = x + self._lu.solve(rhs - self.matrix @ x)
        if _rel_residual(self.matrix, x, rhs) > SADDLE_RTOL or not np.all(np.isfinite(x)):
            raise SingularSystem("saddle-point solve did not reach the requested accuracy")
        return x[: self.nx], x[self.nx:]

    def solve_raw(self, rhs):
        return self._lu.solve(rhs)


def solve_saddle(A, B, f, g):
    """Solve ``A u + B^T p = f``, ``B u = g``; returns ``(u, p)``."""
    return SaddleFactor(A, B).solve(f, g)


def _as_dense(M, n):
    if isinstance(M, np.ndarray):
        return M
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M @ np.eye(n))


def _norm1(M):
    if isinstance(M, np.ndarray):
        return float(np.abs(M).sum(axis=0).max())
    if sp.issparse(M):
        return float(abs(M).sum(axis=0).max())
    return None


def _eig_residual(M, G, lam, v):
    """Backward error of ``(lam, v)``; matrix norms when available, else vector norms."""
    Mv = M @ v
    Gv = G @ v
    num = np.linalg.norm(Mv - lam * Gv)
    nm, ng = _norm1(M), _norm1(G)
    if nm is not None and ng is not None:
        den = (nm + abs(lam) * ng) * np.linalg.norm(v)
    else:
        den = np.linalg.norm(Mv) + abs(lam) * np.linalg.norm(Gv)
    if den == 0.0:
        return 0.0
    return float(num / den)


class _Counted:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def _as_operator(solve, n):
    return spla.LinearOperator((n, n), matvec=solve, dtype=float)


def eig_extreme(M, G, which: str = "min", *, tol: float = EIG_RTOL,
                dense_below: int = DENSE_BELOW, seed: int = EIG_SEED,
                G_solve=None, M_solve=None, maxiter: int | None = None) -> EigenResult:
    """Extremal eigenpair of the symmetric pencil ``M v = lam G v``.

    ``which`` is ``"min"``/``"max"`` (algebraic) or ``"absmin"`` (smallest
    magnitude, shift-invert about zero).  ``M`` may be a matrix or a
    ``LinearOperator``; ``G`` must be SPD.  ``G_solve`` and ``M_solve`` are
    optional prefactored inverse actions; ``M_solve`` is required for
    ``"absmin"`` with an operator ``M`` on the iterative path.
    """
    if which not in ("min", "max", "absmin"):
        raise ValueError(f"unknown selector {which!r}")
    n = G.shape[0]
    if n == 0:
        raise ValueError("empty pencil")

    if n < dense_below:
        Md = _as_dense(M, n)
        Gd = _as_dense(G, n)
        Md = 0.5 * (Md + Md.T)
        if which == "absmin":
            w, V = sla.eigh(Md, Gd)
            k = int(np.argmin(np.abs(w)))
            lam, v = w[k], V[:, k]
        else:
            idx = [0, 0] if which == "min" else [n - 1, n - 1]
            w, V = sla.eigh(Md, Gd, subset_by_index=idx)
            lam, v = w[0], V[:, 0]
        res = _eig_residual(Md, Gd, lam, v)
        if res > tol:
            raise NoConvergence(f"dense eigen-residual {res:.2e} exceeds {tol:.1e}")
        return EigenResult(float(lam), v, res, 0)

    v0 = np.random.default_rng(seed).standard_normal(n)
    Mop = M if isinstance(M, spla.LinearOperator) else spla.aslinearoperator(M)
    last = None
    for ncv in (40, 80, 160):
        ncv = min(ncv, n - 1)
        try:
            if which == "absmin":
                if M_solve is None:
                    M_solve = spla.splu(_csc(M)).solve
                counter = _Counted(M_solve)
                w, V = spla.eigsh(Mop, k=1, M=G, sigma=0.0, which="LM",
                                  OPinv=_as_operator(counter, n), v0=v0, ncv=ncv,
                                  tol=tol * 1e-2, maxiter=maxiter or 50 * n)
            else:
                if G_solve is None:
                    G_solve = SPDFactor(G).solve
                counter = _Counted(G_solve)
                w, V = spla.eigsh(Mop, k=1, M=G, Minv=_as_operator(counter, n),
                                  which="SA" if which == "min" else "LA", v0=v0,
                                  ncv=ncv, tol=tol * 1e-2, maxiter=maxiter or 50 * n)
        except spla.ArpackNoConvergence as exc:
            last = exc
            continue
        lam, v = float(w[0]), V[:, 0]
        res = _eig_residual(Mop, G, lam, v)
        if res <= tol:
            return EigenResult(lam, v, res, counter.calls)
        last = res
    raise NoConvergence(f"Lanczos iteration did not converge ({last})")
