"""NIP-ES: novelty-driven, increasing-population CMA-ES used as the learner.

The core is a (mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance
updates and cumulative step-size adaptation.  It maximises the blend
``eta * novelty + (1 - eta) * task_performance`` where ``eta`` decays by a
fixed amount each iteration.  Stagnation of the best task performance or a
collapse of behavioural diversity restarts the search with twice the
population.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .arena import ArenaParams, Environment, Rollout, body_model, start_state, task_performance
from .controller import DEFAULT_HIDDEN, ElmanController, param_count
from .morphogen import BodyPlan, robot_type


@dataclass
class NipesParams:
    sigma0: float = 1.0
    lambda0: int = 10
    eta0: float = 1.0
    eta_decrement: float = 0.05
    k_neighbors: int = 15
    novelty_threshold: float = 0.9
    archive_probability: float = 0.4
    stagnation_window: int = 20
    tau_stagnation: float = 0.05
    tau_diversity: float = 0.05
    trial_period: int = 50
    success_threshold: float = 0.95
    init_low: float = -1.0
    init_high: float = 1.0
    restarts: bool = True
    novelty: bool = True


def novelty(descriptor, population_descriptors, novelty_archive, k: int = 15) -> float:
    """Mean distance to the ``k`` nearest neighbours among population and archive.

    ``population_descriptors`` must not contain the individual itself.
    """
    others = [np.asarray(p, float).reshape(-1, np.size(descriptor))
              for p in (population_descriptors, novelty_archive) if len(p)]
    if not others:
        return 0.0
    d = np.linalg.norm(np.vstack(others) - np.asarray(descriptor, float), axis=1)
    if d.size > k:
        d = np.partition(d, k - 1)[:k]
    return float(d.mean())


def combined_objective(eta: float, novelty_score, task_perf):
    return eta * np.asarray(novelty_score) + (1.0 - eta) * np.asarray(task_perf)


@dataclass
class EvaluatedCandidate:
    theta: np.ndarray
    task_performance: float
    descriptor: np.ndarray
    novelty: float = float("nan")
    combined: float = float("nan")


class Nipes:
    """Optimizer state; ``ask``/``tell`` as in other CMA-ES implementations.

    ``rng`` is used only for drawing the search samples, one
    ``standard_normal((lambda, dim))`` block per ``ask``.  Archive and
    restart draws come from a child generator spawned from it.
    """

    def __init__(self, mean, params: NipesParams | None = None, rng: np.random.Generator | None = None):
        self.params = params or NipesParams()
        self.rng = rng if rng is not None else np.random.default_rng()
        self._aux = self.rng.spawn(1)[0]
        self.dim = len(mean)
        self.restart_count = 0
        self.evaluations_used = 0
        self.total_iterations = 0
        self.novelty_archive: list[np.ndarray] = []
        self.last_descriptors = np.zeros((0, 2))
        self._reset(np.asarray(mean, dtype=float))

    # -- distribution ------------------------------------------------------

    def _reset(self, mean: np.ndarray) -> None:
        p, n = self.params, self.dim
        self.mean = mean.copy()
        self.sigma = p.sigma0
        self.lam = p.lambda0 * 2 ** self.restart_count
        self.eta = p.eta0 if p.novelty else 0.0
        self.best_history = deque(maxlen=p.stagnation_window)
        self.iteration = 0
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self._sqrt_C = np.eye(n)
        self._inv_sqrt_C = np.eye(n)
        self.p_sigma = np.zeros(n)
        self.p_c = np.zeros(n)
        self._evals_since_restart = 0
        self._eigen_at = 0

        mu = self.lam // 2
        w = math.log((self.lam + 1) / 2) - np.log(np.arange(1, mu + 1))
        self.weights = w / w.sum()
        self.mu = mu
        self.mu_eff = 1.0 / np.sum(self.weights ** 2)
        me = self.mu_eff
        self.c_sigma = (me + 2) / (n + me + 5)
        self.d_sigma = 1 + 2 * max(0.0, math.sqrt((me - 1) / (n + 1)) - 1) + self.c_sigma
        self.c_c = (4 + me / n) / (n + 4 + 2 * me / n)
        self.c1 = 2 / ((n + 1.3) ** 2 + me)
        self.c_mu = min(1 - self.c1, 2 * (me - 2 + 1 / me) / ((n + 2) ** 2 + me))
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    def _update_eigen(self) -> None:
        n = self.dim
        lag = self.lam / (self.c1 + self.c_mu) / n / 10
        if self._evals_since_restart - self._eigen_at <= lag:
            return
        self._eigen_at = self._evals_since_restart
        self.C = (self.C + self.C.T) / 2
        ev, B = np.linalg.eigh(self.C)
        floor = max(ev.max(), 1e-300) * 1e-14
        if ev.min() < floor:
            ev = np.maximum(ev, floor)
            self.C = (B * ev) @ B.T
        self.B = B
        self.D = np.sqrt(ev)
        # the symmetric root does not depend on how eigh picks bases of
        # (nearly) degenerate eigenspaces
        self._sqrt_C = (B * self.D) @ B.T
        self._inv_sqrt_C = (B / self.D) @ B.T

    def ask(self) -> np.ndarray:
        self._update_eigen()
        z = self.rng.standard_normal((self.lam, self.dim))
        return self.mean + self.sigma * z @ self._sqrt_C

    def tell(self, candidates: list[EvaluatedCandidate]) -> None:
        if len(candidates) != self.lam:
            raise ValueError(f"expected {self.lam} candidates, got {len(candidates)}")
        p = self.params
        X = np.array([c.theta for c in candidates], dtype=float)
        r = np.array([c.task_performance for c in candidates], dtype=float)
        desc = np.array([np.asarray(c.descriptor, float) for c in candidates]).reshape(len(candidates), -1)

        if p.novelty:
            S = np.array([novelty(desc[i], np.delete(desc, i, axis=0), self.novelty_archive, p.k_neighbors)
                          for i in range(len(candidates))])
        else:
            S = np.zeros(len(candidates))
        F = combined_objective(self.eta, S, r)
        F = np.where(np.isnan(F), -np.inf, F)
        for c, s, f in zip(candidates, S, F):
            c.novelty, c.combined = float(s), float(f)

        order = np.argsort(-F, kind="stable")
        self._cma_update(X[order[: self.mu]])

        self.eta = max(0.0, self.eta - p.eta_decrement)
        if p.novelty:
            for d, s in zip(desc, S):
                if self._aux.random() < p.archive_probability or s > p.novelty_threshold:
                    self.novelty_archive.append(d)
        self.best_history.append(np.nanmax(r) if np.any(~np.isnan(r)) else np.nan)
        self.last_descriptors = desc
        self.evaluations_used += len(candidates)
        self._evals_since_restart += len(candidates)
        self.iteration += 1
        self.total_iterations += 1

    def _cma_update(self, X_sel: np.ndarray) -> None:
        old = self.mean
        Y = (X_sel - old) / self.sigma
        y_w = self.weights @ Y
        self.mean = old + self.sigma * y_w

        inv_sqrt = self._inv_sqrt_C
        cs, cc, me = self.c_sigma, self.c_c, self.mu_eff
        self.p_sigma = (1 - cs) * self.p_sigma + math.sqrt(cs * (2 - cs) * me) * inv_sqrt @ y_w
        norm_ps = np.linalg.norm(self.p_sigma)
        gen = self._evals_since_restart / self.lam + 1
        h_sigma = norm_ps / math.sqrt(1 - (1 - cs) ** (2 * gen)) < (1.4 + 2 / (self.dim + 1)) * self.chi_n
        self.p_c = (1 - cc) * self.p_c + h_sigma * math.sqrt(cc * (2 - cc) * me) * y_w

        delta = (1 - h_sigma) * cc * (2 - cc)
        rank_mu = (Y.T * self.weights) @ Y
        self.C = ((1 - self.c1 - self.c_mu) * self.C
                  + self.c1 * (np.outer(self.p_c, self.p_c) + delta * self.C)
                  + self.c_mu * rank_mu)
        self.sigma *= math.exp((cs / self.d_sigma) * (norm_ps / self.chi_n - 1))

    # -- restarts ----------------------------------------------------------

    def stagnated(self) -> bool:
        h = self.best_history
        return len(h) == h.maxlen and float(np.std(h)) < self.params.tau_stagnation

    def low_diversity(self) -> bool:
        d = self.last_descriptors
        if len(d) < 2:
            return False
        return math.sqrt(float(np.mean(np.var(d, axis=0)))) < self.params.tau_diversity

    def check_restart(self) -> bool:
        """Restart (and return True) when stagnating or behaviourally collapsed."""
        if not (self.stagnated() or self.low_diversity()):
            return False
        self.restart()
        return True

    def restart(self) -> None:
        self.restart_count += 1
        p = self.params
        self._reset(self._aux.uniform(p.init_low, p.init_high, self.dim))


# ---------------------------------------------------------------------------
# learning a controller for one body


@dataclass
class LearnOutcome:
    best_controller: ElmanController | None
    f_star: float
    f0: float
    n_best: int
    evaluations_used: int = 0
    iterations: int = 0
    restarts: int = 0
    stop_reason: str = ""
    seeded: bool = False
    log: list[dict] = field(default_factory=list)


def learn(plan: BodyPlan, seed_controller: ElmanController | None, budget: int, env: Environment,
          rng: np.random.Generator, params: NipesParams | None = None, hidden_size: int = DEFAULT_HIDDEN,
          arena_params: ArenaParams | None = None) -> LearnOutcome:
    if budget <= 0:
        raise ValueError("budget must be positive")
    params = params or NipesParams()
    rtype = plan.type or robot_type(plan)
    body = body_model(plan)
    if body.n_wheels + body.n_joints == 0:
        f = task_performance(start_state(body, env).position, env.beacon, env.diagonal)
        return LearnOutcome(None, f, f, 0, stop_reason="no_actuators")

    rollout = Rollout(body, env, hidden_size, arena_params)
    dim = param_count(2 * body.n_sensors, hidden_size, body.n_wheels + body.n_joints)
    seeded = seed_controller is not None
    if seeded:
        if not seed_controller.matches(rtype) or seed_controller.hidden_size != hidden_size:
            raise ValueError("seed controller topology does not match the body-plan")
        mean = seed_controller.get_params()
    else:
        mean = rng.uniform(params.init_low, params.init_high, dim)
    es = Nipes(mean, params, rng)

    best_theta, f_star, n_best, f0 = None, -math.inf, 0, None
    ever_moved = False
    log: list[dict] = []
    reason = "budget"
    while es.evaluations_used < budget:
        X = es.ask()
        if seeded and es.total_iterations == 0:
            X[0] = mean  # the archived controller itself is part of the first population
        results = [rollout.run(x) for x in X]
        r = np.array([res.task_performance for res in results])
        cands = [EvaluatedCandidate(x, res.task_performance, res.final_position / env.size)
                 for x, res in zip(X, results)]
        before = es.evaluations_used
        lam, eta, sigma = es.lam, es.eta, es.sigma
        es.tell(cands)
        for i, v in enumerate(r):
            if v > f_star:
                f_star, best_theta, n_best = float(v), X[i].copy(), before + i + 1
        if f0 is None:
            f0 = float(np.min(r))
        ever_moved = ever_moved or any(res.moved for res in results)

        S = np.array([c.novelty for c in cands])
        row = {"iteration": es.total_iterations, "lambda": lam, "eta": eta, "sigma": sigma,
               "best_r": float(r.max()), "mean_r": float(r.mean()),
               "novelty_mean": float(S.mean()), "novelty_max": float(S.max()), "restart": 0}
        log.append(row)

        if r.max() >= params.success_threshold:
            reason = "success"
            break
        if es.evaluations_used >= budget:
            reason = "budget"
            break
        if not ever_moved and es.total_iterations >= params.trial_period:
            reason = "trial"
            break
        # a body that never moved has no diversity to lose; restarting it only inflates lambda
        if params.restarts and ever_moved and es.check_restart():
            row["restart"] = 1

    ctrl = ElmanController(rtype, hidden_size)
    ctrl.set_params(best_theta)
    return LearnOutcome(ctrl, f_star, f0, n_best, es.evaluations_used, es.total_iterations,
                        es.restart_count, reason, seeded, log)


LOG_FIELDS = ["iteration", "lambda", "eta", "sigma", "best_r", "mean_r", "novelty_mean", "novelty_max", "restart"]


def write_learner_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
