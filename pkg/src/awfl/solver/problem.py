"""Problem data, settings and the plain formulas of the joint selection /
bandwidth problem: objective, feasibility, fixed-point residuals."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..wireless import CellConfig, ClientProfile, transmission_rate

RHO_MIN = 1e-4
RHO_MAX = 1.0 - 1e-4
FEAS_TOL = 1e-9


class SolverError(RuntimeError):
    """Base class for solver failures; ``best`` carries the best iterate."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class ConvergenceError(SolverError):
    pass


class LineSearchError(SolverError):
    pass


class InfeasiblePlanError(ValueError):
    pass


@dataclass
class SolverSettings:
    """Tolerances and iteration budgets.

    ``epsilon`` and ``zeta`` are the sufficient-decrease constant and the
    step base of the outer line search; ``step_scale`` multiplies the
    ``a = alpha*beta*W`` scale in the subgradient step ``c / sqrt(t1 + 1)``.
    """

    bcd_tol: float = 1e-12
    dual_tol: float = 1e-12
    outer_tol: float = 1e-8
    max_bcd_sweeps: int = 1_000_000
    max_dual_iter: int = 2_000
    max_outer_iter: int = 500
    epsilon: float = 0.1
    zeta: float = 0.5
    min_exponent: int = 1
    max_exponent: int = 60
    step_scale: float = 0.1
    resolve_inner: bool = True
    fallback: bool = True
    max_fallbacks: int = 5
    stall_window: int = 5
    max_block_sweeps: int = 100_000

    def __post_init__(self):
        for name in ("bcd_tol", "dual_tol", "outer_tol", "step_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("epsilon", "zeta"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.min_exponent < 0 or self.max_exponent < self.min_exponent:
            raise ValueError("need 0 <= min_exponent <= max_exponent")

    def updated(self, **kw) -> "SolverSettings":
        return replace(self, **kw)


def _check_common(rho, lambda_min, cell, profiles):
    if not RHO_MIN <= rho <= RHO_MAX:
        raise ValueError(f"rho must lie in [{RHO_MIN}, {RHO_MAX}], got {rho}")
    if not 0 < lambda_min <= 1:
        raise ValueError(f"lambda_min must lie in (0, 1], got {lambda_min}")
    ids = [p.id for p in profiles]
    if ids != list(range(1, len(profiles) + 1)):
        raise ValueError(f"client ids must be 1..K in order, got {ids}")
    for p in profiles:
        p.check_in_cell(cell)


@dataclass
class _Structure:
    # conv / (sum_t p_kt)^2 + sum_t alpha_kt * energy_k * p_kt is the p-part
    conv: float
    energy: np.ndarray      # (K,)
    tx_power: np.ndarray    # (K,)
    gains: np.ndarray       # (K, T)
    lam: float
    cell: CellConfig

    @property
    def shape(self):
        return self.gains.shape


@dataclass
class ProblemInstance:
    """Offline instance: per-round gains over the whole horizon."""

    rho: float
    lambda_min: float
    cell: CellConfig
    profiles: list
    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.atleast_2d(np.asarray(self.gains, dtype=np.float64))
        _check_common(self.rho, self.lambda_min, self.cell, self.profiles)
        if self.gains.shape[0] != len(self.profiles):
            raise ValueError(f"gains has {self.gains.shape[0]} rows for {len(self.profiles)} clients")
        if self.gains.shape[1] < 1 or np.any(~(self.gains > 0)):
            raise ValueError("gains must be a positive K x T matrix with T >= 1")

    @property
    def K(self):
        return len(self.profiles)

    @property
    def T(self):
        return self.gains.shape[1]

    @property
    def tx_power(self):
        return np.array([p.tx_power_w for p in self.profiles])

    def structure(self) -> _Structure:
        S = self.cell.model_size_nats
        return _Structure(
            conv=self.rho * self.T ** 2 / self.K,
            energy=self.tx_power * S * (1.0 - self.rho),
            tx_power=self.tx_power,
            gains=self.gains,
            lam=self.lambda_min,
            cell=self.cell,
        )


@dataclass
class OnlineInstance:
    """One round of the online variant: current gains plus the horizon ``T``
    that weighs energy against the convergence term."""

    rho: float
    lambda_min: float
    cell: CellConfig
    profiles: list
    gains: np.ndarray
    horizon: int = 1

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64).reshape(-1)
        _check_common(self.rho, self.lambda_min, self.cell, self.profiles)
        if self.gains.shape[0] != len(self.profiles) or np.any(~(self.gains > 0)):
            raise ValueError("gains must be a positive length-K vector")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def K(self):
        return len(self.profiles)

    @property
    def tx_power(self):
        return np.array([p.tx_power_w for p in self.profiles])

    def structure(self) -> _Structure:
        S = self.cell.model_size_nats
        return _Structure(
            conv=self.rho / self.K,
            energy=self.tx_power * S * self.horizon * (1.0 - self.rho),
            tx_power=self.tx_power,
            gains=self.gains[:, None],
            lam=self.lambda_min,
            cell=self.cell,
        )

    def as_offline(self) -> ProblemInstance:
        """The equivalent one-round offline instance (only exact for horizon 1)."""
        return ProblemInstance(self.rho, self.lambda_min, self.cell, self.profiles,
                               self.gains[:, None])


@dataclass
class AuxiliaryParams:
    alpha: np.ndarray   # (K, T)
    beta: np.ndarray    # (K, T)
    gamma: np.ndarray   # (K,)

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=np.float64))
        self.gamma = np.asarray(self.gamma, dtype=np.float64).reshape(-1)
        if np.any(~(self.alpha > 0)) or np.any(~(self.beta > 0)) or np.any(~(self.gamma > 0)):
            raise ValueError("auxiliary parameters must be strictly positive")

    def blend(self, target: "AuxiliaryParams", step: float) -> "AuxiliaryParams":
        return AuxiliaryParams(
            (1.0 - step) * self.alpha + step * target.alpha,
            (1.0 - step) * self.beta + step * target.beta,
            (1.0 - step) * self.gamma + step * target.gamma,
        )


@dataclass
class Residuals:
    psi: np.ndarray
    kappa: np.ndarray
    chi: np.ndarray

    def squared_norm(self) -> float:
        return float(np.sum(self.psi ** 2) + np.sum(self.kappa ** 2) + np.sum(self.chi ** 2))


@dataclass
class Diagnostics:
    residual_sq: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    exponents: list = field(default_factory=list)
    iterations: int = 0
    fallbacks: int = 0

    @property
    def objective_monotone(self) -> bool:
        obj = np.asarray(self.objective)
        return bool(np.all(np.diff(obj) <= 1e-9 * np.maximum(1.0, np.abs(obj[:-1]))))

    def rows(self):
        """One record per outer iteration; ``residual_norm`` is the Euclidean norm."""
        for i, (r, o) in enumerate(zip(self.residual_sq, self.objective)):
            yield {"iteration": i, "residual_norm": float(np.sqrt(r)), "objective": o}


def rates(w, st: _Structure) -> np.ndarray:
    return transmission_rate(w, st.cell, st.tx_power[:, None], st.gains)


def check_feasible(p, w, lam, tol=FEAS_TOL) -> None:
    """Raise ``InfeasiblePlanError`` naming the first violated constraint."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if p.shape != w.shape:
        raise InfeasiblePlanError(f"plan shapes differ: p {p.shape}, w {w.shape}")
    if np.any(p < lam - tol) or np.any(p > 1 + tol):
        k, t = np.argwhere((p < lam - tol) | (p > 1 + tol))[0]
        raise InfeasiblePlanError(
            f"selection bound lambda <= p <= 1 violated at client {k + 1}, round {t}: p={p[k, t]}")
    if np.any(w < -tol) or np.any(w > 1 + tol):
        k, t = np.argwhere((w < -tol) | (w > 1 + tol))[0]
        raise InfeasiblePlanError(
            f"bandwidth bound 0 <= w <= 1 violated at client {k + 1}, round {t}: w={w[k, t]}")
    col = w.sum(axis=0)
    if np.any(col > 1 + tol):
        t = int(np.argmax(col))
        raise InfeasiblePlanError(f"bandwidth budget sum_k w <= 1 violated in round {t}: {col[t]}")
    if np.any((w <= 0) & (p > 0)):
        k, t = np.argwhere((w <= 0) & (p > 0))[0]
        raise InfeasiblePlanError(f"client {k + 1} may transmit in round {t} without bandwidth")


def _objective(p, w, st: _Structure) -> float:
    p = np.atleast_2d(p)
    w = np.atleast_2d(w)
    check_feasible(p, w, st.lam)
    conv = st.conv * np.sum(1.0 / p.sum(axis=1) ** 2)
    energy = np.sum(p * st.energy[:, None] / rates(w, st))
    return float(conv + energy)


def objective_p1(p, w, inst: ProblemInstance) -> float:
    """Convergence surrogate weighted by rho plus (1 - rho) times total energy."""
    return _objective(p, w, inst.structure())


def objective_online(p, w, inst: OnlineInstance) -> float:
    return _objective(np.reshape(p, (-1, 1)), np.reshape(w, (-1, 1)), inst.structure())


def targets(p, w, st: _Structure) -> AuxiliaryParams:
    """Auxiliary values for which the current plan has zero residuals."""
    R = rates(w, st)
    return AuxiliaryParams(1.0 / R, p * st.energy[:, None] / R, st.conv / p.sum(axis=1) ** 2)


def _residuals(p, w, aux: AuxiliaryParams, st: _Structure) -> Residuals:
    R = rates(w, st)
    return Residuals(
        psi=aux.alpha * R - 1.0,
        kappa=aux.beta * R - p * st.energy[:, None],
        chi=aux.gamma - st.conv / p.sum(axis=1) ** 2,
    )


def residuals(p, w, aux: AuxiliaryParams, inst) -> Residuals:
    """Fixed-point residuals (psi, kappa, chi) of a plan under ``aux``."""
    st = inst.structure()
    p = np.reshape(p, st.shape)
    w = np.reshape(w, st.shape)
    return _residuals(p, w, aux, st)
