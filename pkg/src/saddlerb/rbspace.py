"""Nested reduced-basis spaces ``X_N`` (velocity) and ``Y_N`` (pressure)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REJECT_RTOL = 1e-10

U_SNAPSHOT = "u-snapshot"
P_SNAPSHOT = "p-snapshot"
SUPREMIZER = "supremizer"
EXTRA_SNAPSHOT = "extra-snapshot"
ROLES = (U_SNAPSHOT, P_SNAPSHOT, SUPREMIZER, EXTRA_SNAPSHOT)


def supremizer(disc, mu, q) -> np.ndarray:
    """Riesz representer ``t`` of ``b(., q; mu)``: ``X t = B(mu)^T q``."""
    q = np.asarray(q, float)
    rhs = disc.B(mu).T @ q
    if not np.any(rhs):
        return np.zeros(disc.X.shape[0])
    return disc.X_factor.solve(rhs)


def gram_schmidt(Z, G, v, rtol: float = REJECT_RTOL):
    """Orthonormalize ``v`` against the ``G``-orthonormal columns of ``Z``.

    Modified Gram-Schmidt with one re-orthogonalization pass.  Returns the
    normalized vector, or ``None`` when the remainder is below
    ``rtol`` times the original norm.
    """
    v = np.array(v, dtype=float)
    pre = math.sqrt(max(float(v @ (G @ v)), 0.0))
    if pre == 0.0 or not np.isfinite(pre):
        return None
    for _ in range(2):
        for j in range(Z.shape[1]):
            z = Z[:, j]
            v -= float(z @ (G @ v)) * z
    post = math.sqrt(max(float(v @ (G @ v)), 0.0))
    if post < rtol * pre:
        return None
    return v / post


@dataclass
class RBSpace:
    """Gram-orthonormal velocity and pressure bases with provenance.

    Columns carry a role (``u-snapshot``, ``p-snapshot``, ``supremizer``,
    ``extra-snapshot``) and the generation (greedy iteration) that added
    them.  Columns are never modified after insertion, so every generation
    prefix is itself a valid nested space.
    """

    Zu: np.ndarray
    Zp: np.ndarray
    u_roles: list = field(default_factory=list)
    p_roles: list = field(default_factory=list)
    u_gen: list = field(default_factory=list)
    p_gen: list = field(default_factory=list)
    mus: list = field(default_factory=list)      # parameter of each generation

    @classmethod
    def empty(cls, nx: int, ny: int) -> "RBSpace":
        return cls(np.zeros((nx, 0)), np.zeros((ny, 0)))

    @property
    def n_x(self) -> int:
        return self.Zu.shape[1]

    @property
    def n_y(self) -> int:
        return self.Zp.shape[1]

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_y

    @property
    def generations(self) -> int:
        return len(self.mus)

    def dims(self, n: int) -> tuple:
        """``(N_X, N_Y)`` of the nested space made of the first ``n`` generations."""
        if not 0 <= n <= self.generations:
            raise ValueError(f"generation {n} not in 0..{self.generations}")
        nx = int(np.sum(np.asarray(self.u_gen, int) <= n))
        ny = int(np.sum(np.asarray(self.p_gen, int) <= n))
        return nx, ny

    def new_generation(self, mu) -> int:
        self.mus.append(np.asarray(mu, float).copy())
        return self.generations

    def insert(self, vectors, roles, which: str, G, generation: int | None = None):
        """Append vectors to ``X_N`` (``which="X"``) or ``Y_N`` (``"Y"``).

        Returns a list of booleans, ``False`` for numerically dependent
        vectors that were rejected.
        """
        if which not in ("X", "Y"):
            raise ValueError("which must be 'X' or 'Y'")
        if isinstance(roles, str):
            roles = [roles] * len(vectors)
        gen = self.generations if generation is None else generation
        accepted = []
        for v, role in zip(vectors, roles):
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
            Z = self.Zu if which == "X" else self.Zp
            w = gram_schmidt(Z, G, v)
            if w is None:
                accepted.append(False)
                continue
            if which == "X":
                self.Zu = np.column_stack([self.Zu, w])
                self.u_roles.append(role)
                self.u_gen.append(gen)
            else:
                self.Zp = np.column_stack([self.Zp, w])
                self.p_roles.append(role)
                self.p_gen.append(gen)
            accepted.append(True)
        return accepted

    def orthonormality_error(self, X, Y) -> float:
        eu = np.abs(self.Zu.T @ (X @ self.Zu) - np.eye(self.n_x)).max() if self.n_x else 0.0
        ep = np.abs(self.Zp.T @ (Y @ self.Zp) - np.eye(self.n_y)).max() if self.n_y else 0.0
        return float(max(eu, ep))


def insert(space: RBSpace, vectors, roles, which: str, G, generation: int | None = None):
    return space.insert(vectors, roles, which, G, generation)


def reduced_infsup(BN: np.ndarray) -> float:
    """Smallest singular value of an orthonormal-basis reduced divergence block.

    ``+inf`` for an empty pressure space; ``0`` when ``N_Y > N_X``.
    """
    ny, nx = BN.shape
    if ny == 0:
        return math.inf
    if ny > nx:
        return 0.0
    s = np.linalg.svd(BN, compute_uv=False)
    return float(s[-1])


def rb_infsup(space: RBSpace, disc, mu, n: int | None = None) -> float:
    """``beta_N(mu)`` of the (generation-``n``) pair, from truth matrices."""
    nx, ny = space.dims(space.generations if n is None else n)
    BN = space.Zp[:, :ny].T @ (disc.B(mu) @ space.Zu[:, :nx])
    return reduced_infsup(BN)
