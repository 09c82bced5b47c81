import math

import numpy as np
import pytest

from saddlerb.errors import NegativeNormSquare, OutOfDomain, SingularReducedSystem
from saddlerb.online import (direct_dual_norms, energy_residual_norm, expand, online_solve, project,
                             residual_dual_norms)
from saddlerb.rbspace import P_SNAPSHOT, RBSpace
from saddlerb.stokes import truth_solve


def galerkin_oracle(disc, space, mu, n):
    """Dense Galerkin solve assembled from truth matrices and the basis."""
    nx, ny = space.dims(n)
    Zu, Zp = space.Zu[:, :nx], space.Zp[:, :ny]
    A = Zu.T @ (disc.A(mu) @ Zu)
    B = Zp.T @ (disc.B(mu) @ Zu)
    K = np.block([[A, B.T], [B, np.zeros((ny, ny))]])
    rhs = np.concatenate([Zu.T @ disc.f.assemble(mu), Zp.T @ disc.g.assemble(mu)])
    x = np.linalg.solve(K, rhs)
    return x[:nx], x[nx:]


def test_incremental_model_equals_fresh_projection(disc, greedy_v1):
    space, model, _ = greedy_v1
    fresh = project(disc, space)
    for name in ("Aq", "Bq", "fq", "gq", "C1", "C2", "G1", "G2", "k1", "k2", "m1", "m2"):
        np.testing.assert_array_equal(getattr(model, name), getattr(fresh, name))


@pytest.mark.parametrize("n", [1, 3, None])
def test_online_solve_matches_galerkin_oracle(disc, greedy_v1, n):
    space, model, _ = greedy_v1
    n = model.generations if n is None else n
    mu = np.array([0.27, 0.51])
    sol = online_solve(model, mu, n)
    u, p = galerkin_oracle(disc, space, mu, n)
    scale = max(np.abs(u).max(), np.abs(p).max())
    assert np.abs(sol.u - u).max() <= 1e-10 * scale
    assert np.abs(sol.p - p).max() <= 1e-10 * scale
    assert sol.n_z == sum(space.dims(n))


def test_residual_dual_norms_match_truth(disc, greedy_v1, rng):
    space, model, _ = greedy_v1
    for mu in disc.domain.sample(6, 5):
        n = int(rng.integers(0, model.generations + 1))
        sol = online_solve(model, mu, n)
        fast = residual_dual_norms(model, mu, sol)
        gram = residual_dual_norms(model, mu, sol, method="gram")
        ref = direct_dual_norms(disc, space, sol)
        for a, b, c in zip(fast, gram, ref):
            assert a == pytest.approx(c, rel=1e-8, abs=1e-13)
            assert b == pytest.approx(c, rel=1e-6, abs=1e-7)


def test_unknown_residual_method(greedy_v1):
    _, model, _ = greedy_v1
    mu = np.array([0.4, 0.4])
    with pytest.raises(ValueError):
        residual_dual_norms(model, mu, online_solve(model, mu), method="svd")


def test_gram_method_detects_corrupted_tensor(greedy_v1):
    _, model, _ = greedy_v1
    mu = np.array([0.4, 0.4])
    sol = online_solve(model, mu)
    saved = model.G1.copy()
    try:
        model.G1 = -np.eye(*saved.shape)
        with pytest.raises(NegativeNormSquare):
            residual_dual_norms(model, mu, sol, method="gram")
    finally:
        model.G1 = saved


def test_snapshot_reproduction(disc, greedy_v1):
    space, model, _ = greedy_v1
    for k, mu in enumerate(space.mus, start=1):
        truth = truth_solve(disc, mu)
        sol = online_solve(model, mu, k)
        u, p = expand(space, sol)
        eu, ep = truth.u - u, truth.p - p
        X, Y = disc.X, disc.Y
        assert math.sqrt(eu @ (X @ eu)) <= 1e-9 * math.sqrt(truth.u @ (X @ truth.u))
        assert math.sqrt(ep @ (Y @ ep)) <= 1e-9 * math.sqrt(truth.p @ (Y @ truth.p))


def test_empty_generation_gives_empty_solution(greedy_v1):
    _, model, _ = greedy_v1
    sol = online_solve(model, np.array([0.3, 0.3]), 0)
    assert sol.n_z == 0
    r1, r2 = residual_dual_norms(model, sol.mu, sol)
    assert r1 > 0 and r2 >= 0


def test_pressure_without_velocity_is_singular(disc):
    mu = np.array([0.3, 0.3])
    space = RBSpace.empty(disc.X.shape[0], disc.Y.shape[0])
    g = space.new_generation(mu)
    space.insert([truth_solve(disc, mu).p], P_SNAPSHOT, "Y", disc.Y, g)
    model = project(disc, space)
    with pytest.raises(SingularReducedSystem):
        online_solve(model, mu)


def test_online_rejects_out_of_domain(greedy_v1):
    _, model, _ = greedy_v1
    with pytest.raises(OutOfDomain):
        online_solve(model, [0.7, 0.3])


def test_energy_residual_norm_within_sandwich(disc, greedy_v1):
    from saddlerb.constants import ExactConstants
    space, model, _ = greedy_v1
    mu = np.array([0.52, 0.37])
    sol = online_solve(model, mu, 2)
    r1, _ = residual_dual_norms(model, mu, sol)
    c = ExactConstants(disc)(mu)
    lo, hi = energy_residual_norm(disc, space, sol, r1, c, mode="sandwich")
    val = energy_residual_norm(disc, space, sol)
    assert lo * (1 - 1e-8) <= val <= hi * (1 + 1e-8)
