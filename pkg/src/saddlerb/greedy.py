"""Greedy construction of the reduced spaces (three stabilization variants).

* variant 1: add ``u(mu*)``, ``p(mu*)`` and the supremizer of ``p(mu*)``;
* variant 2: add ``u(mu*)``, ``p(mu*)``; add the supremizer only when the
  reduced inf-sup constant at ``mu*`` drops below ``delta_beta_tol`` times
  the truth one;
* variant 3: as variant 2, but stabilize with the truth velocity at the
  train point with the next-largest indicator instead of a supremizer.

The selection indicator is the relative energy-norm velocity bound
``Delta_u_energy(mu) / |u_N(mu)|_X``.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bounds import delta_u_energy
from .constants import ConstantBounds, ConstantsTraining, build_training
from .errors import EmptyTrainingSet, SingularReducedSystem
from .online import empty_model, extend, online_solve, residual_dual_norms
from .rbspace import (EXTRA_SNAPSHOT, P_SNAPSHOT, SUPREMIZER, U_SNAPSHOT, RBSpace,
                      rb_infsup, supremizer)
from .stokes import truth_solve


@dataclass
class GreedyConfig:
    variant: int = 1
    tol: float = 1e-2
    n_max: int = 40
    delta_beta_tol: float = 0.1
    train_size: int = 400
    seed: int = 0

    def validate(self):
        if self.variant not in (1, 2, 3):
            raise ValueError("variant must be 1, 2 or 3")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.delta_beta_tol <= 1:
            raise ValueError("delta_beta_tol must lie in (0, 1]")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.train_size < 1:
            raise EmptyTrainingSet("training set size must be >= 1")


@dataclass
class GreedyStep:
    iteration: int
    index: int
    mu: np.ndarray
    max_indicator: float
    added: list
    n_x: int
    n_y: int
    beta_n: float
    beta_br: float
    t_sweep: float
    t_enrich: float


@dataclass
class GreedyTrace:
    steps: list = field(default_factory=list)
    final_max: float = math.inf
    converged: bool = False

    FIELDS = ("iteration", "mu_1", "mu_2", "max_indicator", "n_x", "n_y", "n_z",
              "beta_n", "beta_br", "added", "t_sweep_s", "t_enrich_s")

    def rows(self):
        for s in self.steps:
            yield {"iteration": s.iteration, "mu_1": repr(float(s.mu[0])), "mu_2": repr(float(s.mu[1])),
                   "max_indicator": repr(float(s.max_indicator)), "n_x": s.n_x, "n_y": s.n_y,
                   "n_z": s.n_x + s.n_y, "beta_n": repr(float(s.beta_n)),
                   "beta_br": repr(float(s.beta_br)), "added": "|".join(s.added),
                   "t_sweep_s": f"{s.t_sweep:.6f}", "t_enrich_s": f"{s.t_enrich:.6f}"}

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow(r)


def sample_train_set(domain, size: int, seed: int) -> np.ndarray:
    """Seeded uniform random sample of the parameter domain."""
    if size < 1:
        raise EmptyTrainingSet("training set size must be >= 1")
    return domain.sample(size, seed)


def exact_at(training: ConstantsTraining, i: int) -> ConstantBounds:
    a, g, b = training.alpha[i], training.gamma[i], training.beta_br[i]
    return ConstantBounds(a, a, g, g, training.gamma_b[i], b, b, mode="exact")


def indicators(model, train: np.ndarray, training: ConstantsTraining, n: int | None = None):
    """Relative energy bound at every training point (``inf`` if unusable)."""
    n = model.generations if n is None else n
    out = np.empty(len(train))
    for i, mu in enumerate(train):
        try:
            th = model.eval_thetas(mu)
            sol = online_solve(model, mu, n, th)
        except SingularReducedSystem:
            out[i] = math.inf
            continue
        r1, r2 = residual_dual_norms(model, mu, sol, th=th)
        unorm = float(np.linalg.norm(sol.u))
        d = delta_u_energy(r1, r2, exact_at(training, i))
        out[i] = d / unorm if unorm > 0 else math.inf
    return out


def greedy_run(disc, config: GreedyConfig, train=None, training: ConstantsTraining | None = None,
               log=None):
    """Run one greedy variant; returns ``(space, model, trace)``.

    ``train``/``training`` may be shared between variants so that the exact
    constants over the training set are computed only once.
    """
    config.validate()
    if train is None:
        train = sample_train_set(disc.domain, config.train_size, config.seed)
    train = np.atleast_2d(np.asarray(train, float))
    if len(train) == 0:
        raise EmptyTrainingSet("empty training set")
    if training is None:
        training = build_training(disc, train)
    space = RBSpace.empty(disc.X.shape[0], disc.Y.shape[0])
    model = empty_model(disc)
    trace = GreedyTrace()
    masked = np.zeros(len(train), dtype=bool)
    while True:
        t0 = time.perf_counter()
        ind = indicators(model, train, training)
        t_sweep = time.perf_counter() - t0
        current = float(np.max(ind))
        trace.final_max = current
        if space.generations >= 1 and current <= config.tol:
            trace.converged = True
            break
        if space.generations >= config.n_max:
            break
        cand = np.where(masked, -math.inf, ind)
        i = int(np.argmax(cand))          # first index wins ties
        if cand[i] == -math.inf:
            break
        t0 = time.perf_counter()
        mu = train[i]
        added = _enrich(disc, space, mu, i, config, train, training, cand)
        extend(model, space)
        beta_n = rb_infsup(space, disc, mu)
        if all(ok for _, ok in added):
            masked[i] = True
        step = GreedyStep(space.generations, i, mu.copy(), current,
                          [r for r, ok in added if ok], space.n_x, space.n_y, beta_n,
                          float(training.beta_br[i]), t_sweep, time.perf_counter() - t0)
        trace.steps.append(step)
        if log:
            log(f"[greedy v{config.variant}] it {step.iteration:3d}  max {current:.3e}  "
                f"N_Z {space.n_z:3d}  beta_N {beta_n:.3e}")
    return space, model, trace


def _enrich(disc, space: RBSpace, mu, i, config, train, training, cand):
    sol = truth_solve(disc, mu)
    gen = space.new_generation(mu)
    added = [(U_SNAPSHOT, space.insert([sol.u], U_SNAPSHOT, "X", disc.X, gen)[0]),
             (P_SNAPSHOT, space.insert([sol.p], P_SNAPSHOT, "Y", disc.Y, gen)[0])]
    if config.variant == 1:
        t = supremizer(disc, mu, sol.p)
        added.append((SUPREMIZER, space.insert([t], SUPREMIZER, "X", disc.X, gen)[0]))
        return added
    beta_br = float(training.beta_br[i])
    if rb_infsup(space, disc, mu) >= config.delta_beta_tol * beta_br:
        return added
    if config.variant == 2:
        t = supremizer(disc, mu, sol.p)
        added.append((SUPREMIZER, space.insert([t], SUPREMIZER, "X", disc.X, gen)[0]))
    else:
        rest = cand.copy()
        rest[i] = -math.inf
        j = int(np.argmax(rest))
        if rest[j] > -math.inf:
            extra = truth_solve(disc, train[j])
            added.append((EXTRA_SNAPSHOT, space.insert([extra.u], EXTRA_SNAPSHOT, "X", disc.X, gen)[0]))
    return added
