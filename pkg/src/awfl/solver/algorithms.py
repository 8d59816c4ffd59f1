"""Inner solvers (selection by coordinate descent, bandwidth by dual search)
and the outer fixed-point loop on the auxiliary parameters."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from .problem import (
    AuxiliaryParams,
    ConvergenceError,
    Diagnostics,
    LineSearchError,
    OnlineInstance,
    ProblemInstance,
    Residuals,
    SolverSettings,
    _objective,
    rates,
    _residuals,
    _Structure,
    check_feasible,
    targets,
)

log = logging.getLogger(__name__)


def lambert_w0(x):
    """Principal branch of the Lambert W function.

    Accepts a scalar or an array; raises ``ValueError`` below ``-1/e``
    (with a relative slack of a few ulps so that ``-1/e`` itself is accepted).
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(arr)):
        raise ValueError("lambert_w0 of NaN")
    if np.any(arr < -math.exp(-1.0) * (1.0 + 4e-16)):
        raise ValueError("lambert_w0 is only defined for x >= -1/e")
    out = kernels.lambert_w0(arr)
    return float(out.reshape(-1)[0]) if arr.ndim == 0 else out.reshape(arr.shape)


# ---------------------------------------------------------------- selection

def bcd_update_p(k: int, t: int, p_row, alpha_kt: float, inst) -> float:
    """One coordinate update of the selection probability of client ``k``
    (0-based) in round ``t`` given the rest of its row."""
    st = inst.structure()
    p_row = np.asarray(p_row, dtype=np.float64)
    others = p_row.sum() - p_row[t]
    target = np.cbrt(2.0 * st.conv / (alpha_kt * st.energy[k]))
    return float(min(1.0, max(st.lam, target - others)))


_TIE_RTOL = 1e-12


def _p_sorted_fill(cost, conv, lam):
    # exact minimiser per row: for a fixed total the cheapest rounds fill
    # first, so only the total needs a search over the fill segments
    K, T = cost.shape
    order = np.argsort(cost, axis=1, kind="stable")
    c = np.take_along_axis(cost, order, axis=1)
    lo = T * lam + np.arange(T) * (1.0 - lam)
    s_star = np.cbrt(2.0 * np.asarray(conv, dtype=np.float64).reshape(-1, 1) / c)
    stop = s_star <= lo + (1.0 - lam)
    j = np.where(stop.any(axis=1), np.argmax(stop, axis=1), T - 1)
    rows = np.arange(K)
    total = np.where(stop.any(axis=1), np.maximum(s_star[rows, j], lo[j]), float(T))
    fill = (total - T * lam)[:, None] - np.arange(T) * (1.0 - lam)
    p_sorted = lam + np.clip(fill, 0.0, 1.0 - lam)
    # rounds with (numerically) equal cost are interchangeable; share their
    # fill evenly so the result does not depend on rounding noise in ``cost``
    tied = c[:, 1:] <= c[:, :-1] * (1.0 + _TIE_RTOL)
    for k in np.flatnonzero(tied.any(axis=1)):
        group = np.concatenate([[0], np.cumsum(~tied[k])])
        p_sorted[k] = (np.bincount(group, p_sorted[k]) / np.bincount(group))[group]
    p = np.empty_like(p_sorted)
    np.put_along_axis(p, order, p_sorted, axis=1)
    return p


def _solve_p(alpha, st: _Structure, settings: SolverSettings, p0=None):
    cost = alpha * st.energy[:, None]
    if p0 is None:
        p0 = _p_sorted_fill(cost, np.full(st.shape[0], st.conv), st.lam)
    p, sweeps, change = kernels.bcd_solve(cost, st.conv, p0, st.lam,
                                          settings.bcd_tol, settings.max_bcd_sweeps)
    if np.any(change > settings.bcd_tol):
        k = int(np.argmax(change))
        raise ConvergenceError(
            f"coordinate descent for client {k + 1} stopped with change {change[k]:.3e}",
            best=p, residual=float(change.max()))
    return p


def solve_p_bcd(alpha, gamma, inst, settings: SolverSettings | None = None, p0=None):
    """Minimise ``conv/(sum_t p)^2 + sum_t alpha * energy * p`` per client.

    ``gamma`` does not enter this subproblem; it is accepted so the call
    mirrors the full set of auxiliary parameters.
    """
    settings = settings or SolverSettings()
    st = inst.structure()
    alpha = np.reshape(np.asarray(alpha, dtype=np.float64), st.shape)
    if np.any(~(alpha > 0)):
        raise ValueError("alpha must be positive")
    return _solve_p(alpha, st, settings, p0)


def solve_p_exact(cost, conv, lam):
    """Direct solution of the selection subproblem for one client.

    For a fixed total ``s`` the cheapest rounds are filled first, so the
    problem reduces to a convex one-dimensional search over ``s`` with
    breakpoints at the fill levels. Used as an oracle.
    """
    cost = np.asarray(cost, dtype=np.float64)
    T = cost.size
    order = np.argsort(cost, kind="stable")
    c = cost[order]
    # on the segment where round j is being filled, s runs from lo_j to lo_j + (1 - lam)
    best_s = None
    for j in range(T):
        lo = T * lam + j * (1.0 - lam)
        hi = lo + (1.0 - lam)
        s = np.cbrt(2.0 * conv / c[j])
        if s <= lo:
            best_s = lo
            break
        if s <= hi:
            best_s = s
            break
    if best_s is None:
        best_s = float(T)
    fill = best_s - T * lam
    p_sorted = np.full(T, lam)
    for j in range(T):
        add = min(1.0 - lam, fill)
        p_sorted[j] += add
        fill -= add
    p = np.empty(T)
    p[order] = p_sorted
    return p


# ---------------------------------------------------------------- bandwidth

def optimal_w_closed_form(alpha_kt, beta_kt, v_t, P, h, cell) -> float:
    """Bandwidth share maximising ``alpha*beta*R(w) - v*w``, clipped to [0, 1]."""
    if not (alpha_kt > 0 and beta_kt > 0):
        raise ValueError("alpha and beta must be positive")
    if v_t < 0:
        raise ValueError("the bandwidth price must be non-negative")
    W = cell.total_bandwidth_hz
    a = np.asarray(alpha_kt * beta_kt * W, dtype=np.float64)
    b = np.asarray(P * h / (W * cell.noise_density_w_per_hz), dtype=np.float64)
    out = kernels.bandwidth_shares(a.reshape(1, 1), b.reshape(1, 1), np.asarray([v_t], dtype=np.float64))
    return float(out[0, 0])


def _bandwidth_terms(alpha, beta, st: _Structure):
    W = st.cell.total_bandwidth_hz
    with np.errstate(over="ignore"):
        a = alpha * beta * W
    b = np.broadcast_to(st.tx_power[:, None] * st.gains / (W * st.cell.noise_density_w_per_hz), a.shape)
    return a, np.ascontiguousarray(b)


@dataclass
class DualMultipliers:
    v: np.ndarray
    iterations: np.ndarray
    slack: np.ndarray

    def __post_init__(self):
        if np.any(self.v < 0):
            raise ValueError("bandwidth prices must be non-negative")


def _solve_w(alpha, beta, st: _Structure, settings: SolverSettings):
    a, b = _bandwidth_terms(alpha, beta, st)
    step = settings.step_scale * np.median(a, axis=0)
    w, v, iters, slack, ok = kernels.dual_bandwidth(a, b, step, settings.dual_tol,
                                                    settings.max_dual_iter)
    if not np.all(ok):
        t = int(np.flatnonzero(~ok)[0])
        raise ConvergenceError(
            f"bandwidth price search for round {t} did not converge; slack {slack[t]:.3e}",
            best=w, residual=float(np.abs(slack[~ok]).max()))
    return w, DualMultipliers(v, iters, slack)


def solve_w_dual(alpha, beta, inst, settings: SolverSettings | None = None):
    """Per-round bandwidth split; returns ``(w, DualMultipliers)``."""
    settings = settings or SolverSettings()
    st = inst.structure()
    alpha = np.reshape(np.asarray(alpha, dtype=np.float64), st.shape)
    beta = np.reshape(np.asarray(beta, dtype=np.float64), st.shape)
    if np.any(~(alpha > 0)) or np.any(~(beta > 0)):
        raise ValueError("alpha and beta must be positive")
    return _solve_w(alpha, beta, st, settings)


# ---------------------------------------------------------------- outer loop

@dataclass
class _Iterate:
    aux: AuxiliaryParams
    p: np.ndarray
    w: np.ndarray
    res: Residuals
    norm: float


def _evaluate(aux, st, settings) -> _Iterate:
    with np.errstate(over="ignore", under="ignore"):
        a = aux.alpha * aux.beta
    if not (np.all(np.isfinite(a)) and np.all(a > 0) and np.all(np.isfinite(aux.gamma))):
        nan = np.full(st.shape, np.nan)
        return _Iterate(aux, nan, nan, Residuals(nan, nan, np.full(st.shape[0], np.nan)), np.inf)
    p = _solve_p(aux.alpha, st, settings)
    w, _ = _solve_w(aux.alpha, aux.beta, st, settings)
    res = _residuals(p, w, aux, st)
    # a share that underflows to 0 has no finite targets; never accept it
    norm = res.squared_norm() if np.all(w > 0) else np.inf
    if not np.isfinite(norm):
        norm = np.inf
    return _Iterate(aux, p, w, res, norm)


@dataclass
class NewtonStep:
    aux: AuxiliaryParams
    p: np.ndarray
    w: np.ndarray
    exponent: int
    residual_sq: float


def _newton(it: _Iterate, st, settings) -> NewtonStep:
    with np.errstate(over="ignore", divide="ignore"):
        tgt = targets(it.p, it.w, st)
    if not all(np.all(np.isfinite(x)) for x in (tgt.alpha, tgt.beta, tgt.gamma)):
        raise LineSearchError("auxiliary targets overflow", residual=it.norm)
    rel = max(float(np.max(np.abs(tgt.alpha / it.aux.alpha - 1.0))),
              float(np.max(np.abs(tgt.beta / it.aux.beta - 1.0))),
              float(np.max(np.abs(tgt.gamma / it.aux.gamma - 1.0))))
    for l in range(settings.min_exponent, settings.max_exponent + 1):
        step = settings.zeta ** l
        if step * rel < 1e-15:
            # the trial point no longer differs from the current one
            break
        aux = it.aux.blend(tgt, step)
        if settings.resolve_inner:
            trial = _evaluate(aux, st, settings)
        else:
            res = _residuals(it.p, it.w, aux, st)
            trial = _Iterate(aux, it.p, it.w, res, res.squared_norm())
        if trial.norm < it.norm and trial.norm <= (1.0 - settings.epsilon * step) * it.norm:
            return NewtonStep(trial.aux, trial.p, trial.w, l, trial.norm)
    raise LineSearchError(
        f"no step zeta^l with l <= {settings.max_exponent} gave sufficient decrease",
        best=(it.p, it.w, it.aux), residual=it.norm)


def newton_step(aux: AuxiliaryParams, plan_p, plan_w, inst,
                settings: SolverSettings | None = None) -> NewtonStep:
    """Damped update of the auxiliary parameters towards the values implied
    by the current plan.

    ``plan_p``/``plan_w`` must be the inner solutions for ``aux``. Trial
    steps ``zeta**l`` (``l = min_exponent, ...``) re-solve the inner problems
    and the first one whose squared residual drops by ``1 - epsilon*zeta**l``
    is returned together with its plans.
    """
    settings = settings or SolverSettings()
    st = inst.structure()
    p = np.reshape(np.asarray(plan_p, dtype=np.float64), st.shape)
    w = np.reshape(np.asarray(plan_w, dtype=np.float64), st.shape)
    res = _residuals(p, w, aux, st)
    norm = res.squared_norm()
    tgt = targets(p, w, st)
    if norm == 0.0 or all(np.allclose(a, b, rtol=1e-13, atol=0)
                          for a, b in ((aux.alpha, tgt.alpha), (aux.beta, tgt.beta),
                                       (aux.gamma, tgt.gamma))):
        # already at the fixed point up to rounding
        return NewtonStep(aux, p, w, settings.min_exponent, norm)
    return _newton(_Iterate(aux, p, w, res, norm), st, settings)


def initial_point(st: _Structure) -> tuple[AuxiliaryParams, np.ndarray, np.ndarray]:
    K, T = st.shape
    p = np.full((K, T), 0.5 * (st.lam + 1.0))
    w = np.full((K, T), 1.0 / K)
    return targets(p, w, st), p, w


def block_descent(p, w, st: _Structure, settings: SolverSettings):
    """Alternate exact minimisation of the original objective over ``w``
    (given ``p``) and ``p`` (given ``w``).

    Both blocks are convex, so the objective never increases; the limit is a
    stationary point, where the auxiliary targets reproduce the plan.
    """
    W = st.cell.total_bandwidth_hz
    b = st.tx_power[:, None] * st.gains / (W * st.cell.noise_density_w_per_hz)
    conv = np.full(st.shape[0], st.conv)
    p = np.array(p, dtype=np.float64)
    for sweep in range(1, settings.max_block_sweeps + 1):
        w, _ = kernels.min_energy_bandwidth(p * st.energy[:, None], b, 1e-15, 200)
        p_new = _p_sorted_fill(st.energy[:, None] / rates(w, st), conv, st.lam)
        change = float(np.max(np.abs(p_new - p)))
        p = p_new
        if change <= settings.bcd_tol:
            return p, w, sweep
    raise ConvergenceError(f"block descent stopped after {settings.max_block_sweeps} sweeps",
                           best=(p, w), residual=change)


@dataclass
class JointSolution:
    p: np.ndarray
    w: np.ndarray
    aux: AuxiliaryParams
    diagnostics: Diagnostics
    residual_sq: float
    objective: float

    def __iter__(self):
        # allows ``p, w, aux, diag = solve_joint(...)``
        return iter((self.p, self.w, self.aux, self.diagnostics))


def _stalled(history, window):
    return len(history) > window and history[-1] > 0.1 * history[-1 - window]


def _solve(st: _Structure, settings: SolverSettings) -> JointSolution:
    aux0, _, _ = initial_point(st)
    it = _evaluate(aux0, st, settings)
    diag = Diagnostics()
    best = it
    since_restart = [it.norm]

    def record(cur):
        diag.residual_sq.append(cur.norm)
        diag.objective.append(_objective(cur.p, cur.w, st) if np.isfinite(cur.norm) else np.inf)

    record(it)
    while it.norm > settings.outer_tol:
        if diag.iterations >= settings.max_outer_iter:
            raise ConvergenceError(
                f"outer loop stopped after {diag.iterations} iterations at residual {best.norm:.3e}",
                best=(best.p, best.w, best.aux), residual=best.norm)
        try:
            if not np.isfinite(it.norm) or _stalled(since_restart, settings.stall_window):
                raise LineSearchError("stalled")
            step = _newton(it, st, settings)
            it = _Iterate(step.aux, step.p, step.w,
                          _residuals(step.p, step.w, step.aux, st), step.residual_sq)
            diag.exponents.append(step.exponent)
        except LineSearchError:
            if not settings.fallback or diag.fallbacks >= settings.max_fallbacks:
                raise
            # restart from a stationary plan reached by exact block descent
            p, w, _ = block_descent(best.p, best.w, st, settings)
            it = _evaluate(targets(p, w, st), st, settings)
            diag.fallbacks += 1
            diag.exponents.append(-1)
            since_restart = []
        diag.iterations += 1
        since_restart.append(it.norm)
        record(it)
        if it.norm < best.norm:
            best = it
    if not diag.objective_monotone:
        log.debug("objective increased along the outer iterations")
    check_feasible(it.p, it.w, st.lam)
    return JointSolution(it.p, it.w, it.aux, diag, it.norm, diag.objective[-1])


def solve_joint(inst: ProblemInstance, settings: SolverSettings | None = None) -> JointSolution:
    """Jointly optimised selection probabilities and bandwidth shares."""
    return _solve(inst.structure(), settings or SolverSettings())


def online_probability(alpha, inst: OnlineInstance):
    """Per-client closed form ``clip((2 rho / (K alpha P S T (1 - rho)))^(1/3), lambda, 1)``."""
    st = inst.structure()
    return np.clip(np.cbrt(2.0 * st.conv / (np.asarray(alpha).reshape(-1) * st.energy)),
                   st.lam, 1.0)


@dataclass
class OnlineSolution:
    p: np.ndarray
    w: np.ndarray
    aux: AuxiliaryParams
    diagnostics: Diagnostics

    def __iter__(self):
        return iter((self.p, self.w))


def solve_online(inst: OnlineInstance, settings: SolverSettings | None = None) -> OnlineSolution:
    """Single-round plan: ``p`` and ``w`` are length-K vectors."""
    sol = _solve(inst.structure(), settings or SolverSettings())
    return OnlineSolution(sol.p[:, 0], sol.w[:, 0], sol.aux, sol.diagnostics)
