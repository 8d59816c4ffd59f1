"""Convergence-bound calculators and communication-interval statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .wireless import STREAM_MONTE_CARLO, stream_rng


class BoundValidityError(ValueError):
    """The learning rate is too large for the bound to hold."""


@dataclass(frozen=True)
class BoundConstants:
    L: float
    G_max: float
    sigma_sq: float
    f_max: float
    eta: float

    def __post_init__(self):
        for name in ("L", "G_max", "sigma_sq", "f_max", "eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def check(self) -> None:
        if self.eta > 1.0 / (8.0 * self.L):
            raise BoundValidityError(
                f"eta = {self.eta} exceeds 1/(8L) = {1.0 / (8.0 * self.L)}")


def _bound_terms(deltas, c: BoundConstants, T: int, K: int):
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.shape != (K,):
        raise ValueError(f"expected {K} intervals, got shape {deltas.shape}")
    if np.any(deltas < 1):
        raise ValueError("communication intervals must be >= 1")
    c.check()
    return (8.0 * c.f_max / (c.eta * T),
            92.0 * c.eta ** 2 * c.L ** 2 * c.G_max ** 2 * float(np.sum(deltas ** 2)) / K,
            9.0 * c.sigma_sq)


def lemma1_bound(deltas, c: BoundConstants, T: int, K: int) -> float:
    """Bound on the average squared gradient norm for maximum intervals ``deltas``."""
    return float(sum(_bound_terms(deltas, c, T, K)))


def lemma1_terms(deltas, c: BoundConstants, T: int, K: int) -> dict:
    a, b, s = _bound_terms(deltas, c, T, K)
    return {"optimisation": a, "staleness": b, "variance": s}


def delta_approx(p_row, T: int) -> float:
    """Approximate maximum interval ``T / sum_t p_t``."""
    total = float(np.sum(p_row))
    if not total > 0:
        raise ValueError("selection probabilities sum to zero")
    return T / total


def _deltas(p, T):
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if np.any((p <= 0) | (p > 1)):
        raise ValueError("selection probabilities must lie in (0, 1]")
    return np.array([delta_approx(row, T) for row in p])


def theorem1_bound(p, c: BoundConstants, T: int, K: int) -> float:
    """``lemma1_bound`` with each interval replaced by its approximation."""
    return lemma1_bound(_deltas(p, T), c, T, K)


def convergence_metric(p, T: int, K: int) -> float:
    """``(T^2/K) * sum_k (1 / sum_t p_kt)^2``."""
    d = np.array([delta_approx(row, T) for row in np.atleast_2d(p)])
    return float(np.sum(d ** 2) / K)


def expected_first_comm(p_row, T: int) -> float:
    """``sum_{t<T} t * p_t * prod_{tau<t} (1 - p_tau)``: the expected index
    of the first upload, counting no upload as 0."""
    p = np.broadcast_to(np.asarray(p_row, dtype=np.float64), (T,))
    if np.any((p < 0) | (p > 1)):
        raise ValueError("selection probabilities must lie in [0, 1]")
    survive = np.concatenate([[1.0], np.cumprod(1.0 - p)[:-1]])
    return float(np.sum(np.arange(T) * p * survive))


def fairness_gap(deltas):
    """``sum(deltas^2)`` and the same sum for the uniform vector with equal
    ``sum(1/deltas)``; the first is never below the second."""
    d = np.asarray(deltas, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValueError("intervals must be positive")
    uniform = d.size / np.sum(1.0 / d)
    sum_sq = float(np.sum(d ** 2))
    uniform_sq = float(d.size * uniform ** 2)
    assert sum_sq >= uniform_sq * (1 - 1e-12), (sum_sq, uniform_sq)
    return sum_sq, uniform_sq


def communication_gaps(selected) -> np.ndarray:
    """Gaps between consecutive uploads of one boolean trajectory."""
    return np.diff(np.flatnonzero(np.asarray(selected, dtype=bool)))


def max_gap(selected, start: int = -1) -> int:
    """Longest stretch between uploads, counting from round ``start``."""
    idx = np.concatenate([[start], np.flatnonzero(np.asarray(selected, dtype=bool))])
    return int(np.max(np.diff(idx))) if idx.size > 1 else len(selected) - start


def monte_carlo_gap(p_row, T: int, n_traj: int, seed: int = 0) -> float:
    """Mean gap between consecutive uploads over ``n_traj`` simulated
    Bernoulli trajectories of length ``T``."""
    p = np.broadcast_to(np.asarray(p_row, dtype=np.float64), (T,))
    rng = stream_rng(seed, STREAM_MONTE_CARLO)
    total, count = 0, 0
    chunk = max(1, 2_000_000 // T)
    for start in range(0, n_traj, chunk):
        n = min(chunk, n_traj - start)
        sel = rng.random((n, T)) < p
        rows, cols = np.nonzero(sel)
        same = rows[1:] == rows[:-1]
        gaps = np.diff(cols)[same]
        total += int(gaps.sum())
        count += gaps.size
    if count == 0:
        raise ValueError("no trajectory uploaded twice")
    return total / count
