"""Finite-state continuous-time chain primitives.

Simplex arithmetic, controlled generators, exponential one-step transitions
and forward flow propagation.  Time stepping freezes the generator on each
grid cell and applies its matrix exponential, which preserves the simplex
for any step size (an explicit Euler step would need dt < 1/K1).

All operations are pure functions of their inputs; the data types are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import AdmissibilityError, DimensionMismatch, ModelDefect, NumericalError

# Negative entries no larger than this are treated as roundoff and clipped.
SIMPLEX_ATOL = 1e-12
# Allowed drift of probability mass / stochastic row sums.
MASS_ATOL = 1e-10
# Tolerance for generator row sums and off-diagonal signs.
GENERATOR_ATOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = horizon with dt = horizon/steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)


class ProbabilityVector:
    """Point of the probability simplex over states {0, ..., m-1}.

    Construction clips negative entries in [-1e-12, 0) to zero and
    renormalizes; larger negatives are rejected so genuine solver failures
    are distinguished from roundoff.
    """

    __slots__ = ("weights",)

    def __init__(self, weights):
        w = np.array(weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValueError("empty probability vector")
        if not np.all(np.isfinite(w)):
            raise NumericalError("non-finite entries in probability vector")
        lo = w.min()
        if lo < -SIMPLEX_ATOL:
            raise NumericalError(f"negative mass {lo:.3e} exceeds roundoff tolerance")
        if lo < 0.0:
            w = np.clip(w, 0.0, None)
        total = w.sum()
        if total <= 0.0:
            raise NumericalError("probability vector has no mass")
        w /= total
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.weights.size

    @classmethod
    def dirac(cls, i: int, m: int) -> "ProbabilityVector":
        w = np.zeros(m)
        w[i] = 1.0
        return cls(w)

    @classmethod
    def uniform(cls, m: int) -> "ProbabilityVector":
        return cls(np.full(m, 1.0 / m))

    def __len__(self):
        return self.weights.size

    def __repr__(self):
        return f"ProbabilityVector({self.weights.tolist()})"


def _as_weights(rho) -> np.ndarray:
    if isinstance(rho, ProbabilityVector):
        return rho.weights
    return np.asarray(rho, dtype=float)


def tv_distance(rho, gamma) -> float:
    """Total variation distance sum_i |rho(i) - gamma(i)| on the simplex."""
    a, b = _as_weights(rho), _as_weights(gamma)
    if a.shape != b.shape:
        raise DimensionMismatch(f"state counts differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


class GeneratorModel(ABC):
    """Controlled rate family q_t^v(i, .) with per-state admissible intervals.

    Subclasses declare m (state count), kappa1 (action Lipschitz constant of
    the rate rows in l1 norm) and K1 (rate magnitude cap).
    """

    m: int
    kappa1: float
    K1: float

    @abstractmethod
    def rates(self, t: float, i: int, v: float) -> np.ndarray:
        """Row q_t^v(i, .) of the generator, length m."""

    @abstractmethod
    def action_interval(self, t: float, i: int) -> tuple[float, float]:
        """Closed admissible interval [lo, hi] for state i at time t."""

    def contains_action(self, t: float, i: int, v: float, atol: float = 1e-9) -> bool:
        lo, hi = self.action_interval(t, i)
        return lo - atol <= v <= hi + atol

    def clip_action(self, t: float, i: int, v: float) -> float:
        lo, hi = self.action_interval(t, i)
        return min(max(v, lo), hi)

    def rate_matrix(self, t: float, profile) -> np.ndarray:
        """Full generator for the action profile u: row i uses u[i]."""
        u = np.asarray(profile, dtype=float)
        Q = np.empty((self.m, self.m))
        for i in range(self.m):
            Q[i] = self.rates(t, i, float(u[i]))
        return Q


class StrategyTable:
    """Grid-indexed action profile, piecewise constant on [t_k, t_{k+1}).

    actions has shape (steps, m): row k applies on the k-th grid cell.
    """

    __slots__ = ("actions", "grid")

    def __init__(self, actions, grid: TimeGrid):
        a = np.array(actions, dtype=float)
        if a.ndim != 2:
            raise ValueError("strategy actions must be a (steps, m) array")
        if a.shape[0] != grid.steps:
            raise DimensionMismatch(
                f"strategy has {a.shape[0]} rows but grid has {grid.steps} cells"
            )
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite action in strategy table")
        a.setflags(write=False)
        self.actions = a
        self.grid = grid

    @property
    def m(self) -> int:
        return self.actions.shape[1]

    @classmethod
    def constant(cls, grid: TimeGrid, m: int, value: float = 0.0) -> "StrategyTable":
        return cls(np.full((grid.steps, m), value), grid)

    def with_cell(self, k: int, profile) -> "StrategyTable":
        """Copy with row k replaced by the given action profile."""
        a = self.actions.copy()
        a[k] = np.asarray(profile, dtype=float)
        return StrategyTable(a, self.grid)

    def check_admissible(self, model: GeneratorModel, atol: float = 1e-9):
        nodes = self.grid.nodes
        for k in range(self.grid.steps):
            for i in range(self.m):
                if not model.contains_action(nodes[k], i, self.actions[k, i], atol):
                    raise AdmissibilityError(
                        f"action {self.actions[k, i]:.6g} at node {k}, state {i} "
                        f"outside admissible interval"
                    )


def strategy_distance(pi: StrategyTable, pi2: StrategyTable, metric=None) -> float:
    """Rectangle-rule time integral of the sup-over-states action distance.

    Returns dt * sum_k max_i |pi_k(i) - pi2_k(i)| (or the supplied elementwise
    action metric in place of absolute difference).
    """
    if pi.grid != pi2.grid or pi.m != pi2.m:
        raise DimensionMismatch("strategy tables live on different grids")
    if metric is None:
        gaps = np.abs(pi.actions - pi2.actions)
    else:
        gaps = np.asarray(metric(pi.actions, pi2.actions), dtype=float)
    return float(pi.grid.dt * gaps.max(axis=1).sum())


class FlowCurve:
    """Probability-vector-valued curve sampled at the grid nodes.

    values has shape (steps+1, m); each row satisfies the simplex invariants.
    """

    __slots__ = ("values", "grid")

    def __init__(self, values, grid: TimeGrid):
        v = np.array(values, dtype=float)
        if v.ndim != 2 or v.shape[0] != grid.steps + 1:
            raise DimensionMismatch(
                f"flow needs shape ({grid.steps + 1}, m), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise NumericalError("non-finite entries in flow curve")
        lo = v.min()
        if lo < -SIMPLEX_ATOL:
            raise NumericalError(f"negative mass {lo:.3e} in flow curve")
        if lo < 0.0:
            v = np.clip(v, 0.0, None)
        drift = np.abs(v.sum(axis=1) - 1.0).max()
        if drift > MASS_ATOL:
            raise NumericalError(f"flow mass drift {drift:.3e} exceeds tolerance")
        v.setflags(write=False)
        self.values = v
        self.grid = grid

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def at(self, k: int) -> np.ndarray:
        return self.values[k]

    def sup_distance(self, other: "FlowCurve") -> float:
        if self.values.shape != other.values.shape:
            raise DimensionMismatch("flow curves have different shapes")
        return float(np.abs(self.values - other.values).sum(axis=1).max())

    @classmethod
    def constant(cls, rho, grid: TimeGrid) -> "FlowCurve":
        w = _as_weights(rho)
        return cls(np.tile(w, (grid.steps + 1, 1)), grid)


@dataclass
class GeneratorReport:
    """Outcome of sampling a generator model over the grid."""

    ok: bool
    kappa1_hat: float
    K1_hat: float
    row_sum_violations: list = field(default_factory=list)
    sign_violations: list = field(default_factory=list)
    samples_per_point: int = 0

    def summary(self) -> str:
        status = "valid" if self.ok else (
            f"{len(self.row_sum_violations)} row-sum and "
            f"{len(self.sign_violations)} sign violations"
        )
        return (
            f"generator {status}; kappa1_hat={self.kappa1_hat:.6g} "
            f"K1_hat={self.K1_hat:.6g} (sampled lower bounds)"
        )


def validate_generator(model: GeneratorModel, grid: TimeGrid, samples: int = 8) -> GeneratorReport:
    """Sample actions on every grid node and check generator structure.

    Checks row sums and off-diagonal signs at `samples` actions spread over
    each admissible interval, and estimates kappa1 as the largest sampled
    l1-row-difference per unit action distance and K1 as the largest sampled
    rate magnitude.  Both are lower bounds on the true suprema.  An empty
    admissible set is a fatal model defect.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples per admissible interval")
    report = GeneratorReport(ok=True, kappa1_hat=0.0, K1_hat=0.0,
                             samples_per_point=samples)
    for k, t in enumerate(grid.nodes):
        for i in range(model.m):
            lo, hi = model.action_interval(t, i)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ModelDefect(
                    f"empty admissible action set at node {k}, state {i}"
                )
            actions = np.linspace(lo, hi, samples) if hi > lo else np.array([lo])
            rows = np.array([model.rates(t, i, v) for v in actions])
            report.K1_hat = max(report.K1_hat, float(np.abs(rows).max()))
            sums = rows.sum(axis=1)
            for v, s in zip(actions, sums):
                if abs(s) > GENERATOR_ATOL:
                    report.row_sum_violations.append((k, i, float(v), float(s)))
            off = rows.copy()
            off[:, i] = 0.0
            for v, row in zip(actions, off):
                worst = row.min()
                if worst < -GENERATOR_ATOL:
                    report.sign_violations.append((k, i, float(v), float(worst)))
            if actions.size > 1:
                dv = np.abs(np.diff(actions))
                dq = np.abs(np.diff(rows, axis=0)).sum(axis=1)
                report.kappa1_hat = max(report.kappa1_hat, float((dq / dv).max()))
                span = hi - lo
                endpoint = np.abs(rows[-1] - rows[0]).sum() / span
                report.kappa1_hat = max(report.kappa1_hat, float(endpoint))
    report.ok = not (report.row_sum_violations or report.sign_violations)
    return report


def transition_matrix(model: GeneratorModel, t: float, profile, dt: float) -> np.ndarray:
    """exp(dt * Q) for the generator frozen at (t, profile); rows stochastic."""
    Q = model.rate_matrix(t, profile)
    P = expm(dt * Q)
    lo = P.min()
    if not np.all(np.isfinite(P)):
        raise NumericalError("non-finite transition matrix")
    if lo < -MASS_ATOL:
        raise NumericalError(f"transition entry {lo:.3e} below tolerance")
    if lo < 0.0:
        P = np.clip(P, 0.0, None)
    drift = np.abs(P.sum(axis=1) - 1.0).max()
    if drift > MASS_ATOL:
        raise NumericalError(f"transition row-sum drift {drift:.3e}")
    return P


def step_transition(model: GeneratorModel, strategy: StrategyTable, k: int) -> np.ndarray:
    """One-cell transition matrix exp(dt * Q_{t_k}^{pi_k})."""
    grid = strategy.grid
    t = grid.nodes[k]
    for i in range(strategy.m):
        if not model.contains_action(t, i, strategy.actions[k, i]):
            raise AdmissibilityError(
                f"strategy action at node {k}, state {i} is inadmissible"
            )
    return transition_matrix(model, t, strategy.actions[k], grid.dt)


def transition_stack(model: GeneratorModel, strategy: StrategyTable) -> np.ndarray:
    """All per-cell transition matrices, shape (steps, m, m)."""
    grid = strategy.grid
    out = np.empty((grid.steps, strategy.m, strategy.m))
    for k in range(grid.steps):
        out[k] = step_transition(model, strategy, k)
    return out


def propagate_flow(model: GeneratorModel, rho0, strategy: StrategyTable,
                   grid: TimeGrid | None = None,
                   transitions: np.ndarray | None = None) -> FlowCurve:
    """Forward propagation nu_{k+1} = nu_k exp(dt * Q_{t_k}^{pi_k}).

    `transitions` may carry a precomputed stack from transition_stack to
    share the matrix exponentials across calls with the same strategy.
    """
    grid = grid or strategy.grid
    if grid != strategy.grid:
        raise DimensionMismatch("strategy grid differs from requested grid")
    w = _as_weights(rho0)
    if w.size != model.m:
        raise DimensionMismatch("initial law dimension differs from model")
    values = np.empty((grid.steps + 1, model.m))
    values[0] = w
    nu = w
    for k in range(grid.steps):
        P = transitions[k] if transitions is not None else step_transition(model, strategy, k)
        nu = nu @ P
        if not np.all(np.isfinite(nu)):
            raise NumericalError(f"non-finite mass after step {k}")
        if nu.min() < -SIMPLEX_ATOL:
            raise NumericalError(f"negative mass {nu.min():.3e} after step {k}")
        values[k + 1] = nu
    return FlowCurve(values, grid)
