"""Selection and bandwidth policies: the optimised online policy and the
random, greedy and age-based benchmarks.

Benchmarks split the band equally among the clients they may select.
"""

from __future__ import annotations

import numpy as np

from .engine import Decision
from .solver import OnlineInstance, SolverSettings, solve_online

PolicyDecision = Decision


def _equal_split(members, K):
    w = np.zeros(K)
    if len(members):
        w[np.asarray(members, dtype=np.int64) - 1] = 1.0 / len(members)
    return w


def _indicator(members, K):
    p = np.zeros(K)
    p[np.asarray(members, dtype=np.int64) - 1] = 1.0
    return p


def random_policy(p_const: float, K: int) -> Decision:
    if not 0 <= p_const <= 1:
        raise ValueError("p_const must lie in [0, 1]")
    return Decision(np.full(K, float(p_const)), np.full(K, 1.0 / K))


def greedy_policy(k_sel: int, gains) -> Decision:
    """The ``k_sel`` clients with the largest gains (lower id wins ties)."""
    gains = np.asarray(gains, dtype=np.float64)
    K = gains.size
    if not 1 <= k_sel <= K:
        raise ValueError(f"k_sel must lie in 1..{K}")
    order = np.lexsort((np.arange(K), -gains))
    members = sorted(int(k) + 1 for k in order[:k_sel])
    return Decision(_indicator(members, K), _equal_split(members, K))


def age_based_ids(k_sel: int, rnd: int, K: int) -> list[int]:
    start = (rnd * k_sel) % K
    return [(start + j) % K + 1 for j in range(k_sel)]


def age_based_policy(k_sel: int, rnd: int, K: int) -> Decision:
    """Contiguous blocks of ``k_sel`` ids, advancing every round and wrapping."""
    if not 1 <= k_sel <= K:
        raise ValueError(f"k_sel must lie in 1..{K}")
    members = age_based_ids(k_sel, rnd, K)
    return Decision(_indicator(members, K), _equal_split(members, K))


def proposed_policy(inst: OnlineInstance, settings: SolverSettings | None = None) -> Decision:
    sol = solve_online(inst, settings)
    return Decision(np.clip(sol.p, 0.0, 1.0), sol.w)


def calibrate_k_sel(p) -> int:
    """Deterministic budget matching an expected participant count."""
    return max(1, int(round(float(np.sum(p)))))


# ---------------------------------------------------------------- engine adapters

class RandomPolicy:
    name = "random"

    def __init__(self, p_const: float):
        self.p_const = p_const

    def decide(self, rnd, gains, state):
        return random_policy(self.p_const, len(gains))


class GreedyPolicy:
    name = "greedy"

    def __init__(self, k_sel: int):
        self.k_sel = k_sel

    def decide(self, rnd, gains, state):
        return greedy_policy(self.k_sel, gains)


class AgeBasedPolicy:
    name = "age"

    def __init__(self, k_sel: int):
        self.k_sel = k_sel

    def decide(self, rnd, gains, state):
        return age_based_policy(self.k_sel, rnd, len(gains))


class ScriptedPolicy:
    """Fixed participant sets per round (for protocol tests)."""

    name = "scripted"

    def __init__(self, schedule, K: int):
        self.schedule = [sorted(s) for s in schedule]
        self.K = K

    def decide(self, rnd, gains, state):
        members = self.schedule[rnd % len(self.schedule)]
        return Decision(_indicator(members, self.K), _equal_split(members, self.K))


class FixedPolicy:
    """The same ``(p, w)`` every round."""

    name = "fixed"

    def __init__(self, p, w):
        self.decision = Decision(p, w)

    def decide(self, rnd, gains, state):
        return self.decision


class ProposedPolicy:
    """Solves the single-round problem on the current gains.

    Decisions are cached by gain vector, so a static channel costs one solve.
    """

    name = "proposed"

    def __init__(self, rho: float, lambda_min: float, cell, profiles, horizon: int,
                 settings: SolverSettings | None = None):
        self.rho = rho
        self.lambda_min = lambda_min
        self.cell = cell
        self.profiles = list(profiles)
        self.horizon = horizon
        self.settings = settings or SolverSettings()
        self._cache = {}
        self.mean_participation = []

    def instance(self, gains) -> OnlineInstance:
        return OnlineInstance(self.rho, self.lambda_min, self.cell, self.profiles, gains, self.horizon)

    def decide(self, rnd, gains, state):
        key = np.asarray(gains, dtype=np.float64).tobytes()
        if key not in self._cache:
            self._cache[key] = proposed_policy(self.instance(gains), self.settings)
        d = self._cache[key]
        self.mean_participation.append(float(d.p.sum()))
        return d
