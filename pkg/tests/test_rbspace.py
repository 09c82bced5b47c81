import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlerb.rbspace import (P_SNAPSHOT, SUPREMIZER, U_SNAPSHOT, RBSpace, gram_schmidt,
                              rb_infsup, reduced_infsup, supremizer)
from saddlerb.stokes import truth_solve


def spd(rng, n):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


@given(st.integers(3, 12), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_gram_schmidt_builds_orthonormal_basis(n, seed):
    rng = np.random.default_rng(seed)
    G = spd(rng, n)
    Z = np.zeros((n, 0))
    for _ in range(n):
        w = gram_schmidt(Z, G, rng.standard_normal(n))
        assert w is not None
        Z = np.column_stack([Z, w])
    np.testing.assert_allclose(Z.T @ G @ Z, np.eye(n), atol=1e-10)
    # the span is full now, so any further vector is dependent
    assert gram_schmidt(Z, G, rng.standard_normal(n)) is None


def test_gram_schmidt_rejects_zero_and_dependent(rng):
    G = spd(rng, 5)
    w = gram_schmidt(np.zeros((5, 0)), G, rng.standard_normal(5))
    Z = w[:, None]
    assert gram_schmidt(Z, G, np.zeros(5)) is None
    assert gram_schmidt(Z, G, 3.0 * w) is None


def test_space_generations_and_dims(rng):
    G = np.eye(6)
    s = RBSpace.empty(6, 4)
    g1 = s.new_generation([0.3, 0.3])
    assert s.insert([rng.standard_normal(6)] * 2, U_SNAPSHOT, "X", G, g1) == [True, False]
    assert s.insert([rng.standard_normal(4)], P_SNAPSHOT, "Y", np.eye(4), g1) == [True]
    g2 = s.new_generation([0.5, 0.5])
    s.insert([rng.standard_normal(6), rng.standard_normal(6)], [U_SNAPSHOT, SUPREMIZER], "X", G, g2)
    assert (s.generations, s.n_x, s.n_y, s.n_z) == (2, 3, 1, 4)
    assert s.dims(0) == (0, 0) and s.dims(1) == (1, 1) and s.dims(2) == (3, 1)
    assert s.u_roles == [U_SNAPSHOT, U_SNAPSHOT, SUPREMIZER]
    with pytest.raises(ValueError):
        s.dims(3)
    with pytest.raises(ValueError):
        s.insert([np.ones(6)], "mystery", "X", G)
    with pytest.raises(ValueError):
        s.insert([np.ones(6)], U_SNAPSHOT, "Z", G)


def test_reduced_infsup_conventions(rng):
    assert reduced_infsup(np.zeros((0, 3))) == math.inf
    assert reduced_infsup(rng.standard_normal((3, 2))) == 0.0
    M = rng.standard_normal((2, 5))
    assert reduced_infsup(M) == pytest.approx(np.linalg.svd(M, compute_uv=False)[-1])


def test_supremizer_is_the_maximizer(disc, rng):
    mu = np.array([0.35, 0.45])
    q = rng.standard_normal(disc.space.n_pressure)
    t = supremizer(disc, mu, q)
    B = disc.B(mu)
    np.testing.assert_allclose(disc.X @ t, B.T @ q, atol=1e-10 * np.abs(B.T @ q).max())
    best = (q @ (B @ t)) / math.sqrt(t @ (disc.X @ t))
    for k in range(200):
        v = rng.standard_normal(len(t))
        if k % 2:
            v = t + 0.1 * np.linalg.norm(t) * v / math.sqrt(len(t))
        assert abs(q @ (B @ v)) / math.sqrt(v @ (disc.X @ v)) <= best * (1 + 1e-8)


def test_supremizer_enrichment_restores_stability(disc):
    mu = np.array([0.45, 0.3])
    sol = truth_solve(disc, mu)
    without = RBSpace.empty(disc.X.shape[0], disc.Y.shape[0])
    g = without.new_generation(mu)
    without.insert([sol.u], U_SNAPSHOT, "X", disc.X, g)
    without.insert([sol.p], P_SNAPSHOT, "Y", disc.Y, g)
    with_sup = RBSpace(without.Zu.copy(), without.Zp.copy(), list(without.u_roles),
                       list(without.p_roles), list(without.u_gen), list(without.p_gen),
                       list(without.mus))
    with_sup.insert([supremizer(disc, mu, sol.p)], SUPREMIZER, "X", disc.X, g)
    assert rb_infsup(with_sup, disc, mu) >= rb_infsup(without, disc, mu)
    assert with_sup.orthonormality_error(disc.X, disc.Y) <= 1e-12


def test_orthogonal_vector_is_accepted_unchanged(rng):
    G = spd(rng, 6)
    w = gram_schmidt(np.zeros((6, 0)), G, rng.standard_normal(6))
    v = rng.standard_normal(6)
    v -= w * (w @ G @ v)                  # G-orthogonal to w
    out = gram_schmidt(w[:, None], G, v)
    np.testing.assert_allclose(out, v / math.sqrt(v @ G @ v), rtol=1e-10, atol=1e-12)
