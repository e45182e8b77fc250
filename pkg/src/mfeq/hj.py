"""Backward solver for the two-index value system driven by a frozen flow.

Given an a-priori flow curve nu, the solver runs one backward sweep that
produces the value table Theta[a, k, i] (value at decision time t_k seen
from evaluation time t_a) together with the policy derived from the table's
diagonal.  The policy at node k minimizes the instantaneous control cost
plus the generator applied to the latest available diagonal, which is the
standard explicit discretization of the diagonal coupling and carries O(dt)
error.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod

import numpy as np

from .chain import (
    FlowCurve,
    GeneratorModel,
    StrategyTable,
    TimeGrid,
    transition_matrix,
)
from .errors import DimensionMismatch, MfeqError

logger = logging.getLogger(__name__)


def scan_golden_min(fn, lo: float, hi: float, n_scan: int = 33, tol: float = 1e-10):
    """Minimize a 1-D function on [lo, hi]: coarse scan, then golden section.

    Ties in the coarse scan break toward the smallest argument, so the
    result is deterministic across runs and platforms.
    Returns (argmin, min value).
    """
    if hi <= lo:
        return lo, fn(lo)
    xs = np.linspace(lo, hi, n_scan)
    vals = [fn(x) for x in xs]
    best = int(np.argmin(vals))  # argmin returns the first (smallest) index
    a = xs[max(best - 1, 0)]
    b = xs[min(best + 1, n_scan - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    fx = fn(x)
    # on ties prefer the scan point, which is the smallest tied argument
    if vals[best] <= fx:
        return float(xs[best]), float(vals[best])
    return float(x), float(fx)


class CostModel(ABC):
    """Separable cost f = f_dist + control cost, with terminal cost and
    an argmin oracle for the policy map.

    Declared constants: K2 caps the distribution and terminal costs, K3 is
    their Lipschitz constant in the flow argument (total variation), and
    kappa2 (optional) is the Lipschitz constant of h -> argmin profile.
    """

    m: int
    K2: float
    K3: float
    kappa2: float | None = None

    @abstractmethod
    def running_dist(self, tau: float, t: float, rho) -> np.ndarray:
        """Distribution running cost profile, length m."""

    @abstractmethod
    def terminal(self, tau: float, rho) -> np.ndarray:
        """Terminal cost profile, length m."""

    @abstractmethod
    def control_cost(self, t: float, i: int, v: float) -> float:
        """Pointwise control cost."""

    def control_profile_cost(self, t: float, profile) -> np.ndarray:
        u = np.asarray(profile, dtype=float)
        return np.array([self.control_cost(t, i, float(u[i])) for i in range(self.m)])

    def running_dist_many(self, taus, t: float, rho) -> np.ndarray:
        """Distribution cost for several evaluation times; shape (len(taus), m)."""
        return np.array([self.running_dist(tau, t, rho) for tau in taus])

    def terminal_many(self, taus, rho) -> np.ndarray:
        return np.array([self.terminal(tau, rho) for tau in taus])

    def argmin_profile(self, gen: GeneratorModel, t: float, h) -> np.ndarray:
        """Profile of minimizers of control_cost(i, v) + q_t^v(i, .) . h.

        Fallback for 1-D continuous action intervals: coarse scan plus
        golden-section refinement to 1e-10, ties toward the smallest action.
        Models with structure should override with their closed form.
        """
        hv = np.asarray(h, dtype=float)
        out = np.empty(self.m)
        for i in range(self.m):
            lo, hi = gen.action_interval(t, i)

            def objective(v, i=i):
                return self.control_cost(t, i, v) + float(gen.rates(t, i, v) @ hv)

            out[i], _ = scan_golden_min(objective, lo, hi)
        return out


def apply_generator(gen: GeneratorModel, profile, t: float, h) -> np.ndarray:
    """i -> sum_j q_t^{u(i)}(i, j) h(j) for the action profile u."""
    u = np.asarray(profile, dtype=float)
    hv = np.asarray(h, dtype=float)
    if hv.size != gen.m:
        raise DimensionMismatch("state function length differs from model")
    out = np.empty(gen.m)
    for i in range(gen.m):
        if not gen.contains_action(t, i, u[i]):
            raise MfeqError(f"inadmissible action {u[i]:.6g} at state {i}")
        out[i] = gen.rates(t, i, float(u[i])) @ hv
    return out


class ValueTable:
    """Two-index value table on the grid, optionally tau-subsampled.

    values[a, k, i] holds the value at time node k seen from evaluation node
    tau_indices[a].  With stride 1 every evaluation node is stored and the
    diagonal is exact; with a larger stride the diagonal is linearly
    interpolated between stored evaluation rows.
    """

    __slots__ = ("values", "tau_indices", "grid")

    def __init__(self, values: np.ndarray, tau_indices: np.ndarray, grid: TimeGrid):
        self.values = values
        self.tau_indices = np.asarray(tau_indices, dtype=int)
        self.grid = grid

    @property
    def m(self) -> int:
        return self.values.shape[2]

    @property
    def dense(self) -> bool:
        return self.tau_indices.size == self.grid.steps + 1

    def _row_weights(self, a: int):
        """Stored-row index pair and interpolation weight for evaluation node a."""
        idx = self.tau_indices
        pos = int(np.searchsorted(idx, a))
        if pos < idx.size and idx[pos] == a:
            return pos, pos, 0.0
        lo, hi = pos - 1, pos
        w = (a - idx[lo]) / (idx[hi] - idx[lo])
        return lo, hi, float(w)

    def row(self, a: int, k: int) -> np.ndarray:
        lo, hi, w = self._row_weights(a)
        if w == 0.0:
            return self.values[lo, k]
        return (1.0 - w) * self.values[lo, k] + w * self.values[hi, k]

    def value(self, a: int, k: int, i: int) -> float:
        return float(self.row(a, k)[i])

    def diagonal(self) -> np.ndarray:
        """theta_k(i) = value at matching evaluation and decision node."""
        n = self.grid.steps
        out = np.empty((n + 1, self.m))
        for k in range(n + 1):
            out[k] = self.row(k, k)
        return out


def solve_hj(gen: GeneratorModel, cost: CostModel, nu: FlowCurve, grid: TimeGrid,
             tau_stride: int = 1) -> tuple[ValueTable, StrategyTable]:
    """Backward sweep producing the value table and its diagonal policy.

    Terminal layer: values[a, N] = terminal cost at evaluation node a against
    nu_N.  Then for k = N-1 .. 0: the policy at node k is the argmin profile
    against theta_{k+1}, each evaluation row is pushed back through the
    exponential one-step transition plus the rectangle-rule running cost, and
    the new diagonal entry is read off.

    tau_stride > 1 stores every tau_stride-th evaluation row (plus the last)
    and interpolates the diagonal; memory drops from O(N^2 m) accordingly.
    """
    if nu.grid != grid:
        raise DimensionMismatch("flow curve grid differs from solve grid")
    if gen.m != cost.m or gen.m != nu.m:
        raise DimensionMismatch("state counts differ between model parts")
    n = grid.steps
    nodes = grid.nodes
    dt = grid.dt
    tau_idx = np.arange(0, n + 1, tau_stride)
    if tau_idx[-1] != n:
        tau_idx = np.append(tau_idx, n)
    taus = nodes[tau_idx]

    values = np.empty((tau_idx.size, n + 1, gen.m))
    values[:, n, :] = cost.terminal_many(taus, nu.at(n))
    # the table wraps the buffer being filled: at step k only column k+1 is
    # read, and that column was written in the previous step
    table = ValueTable(values, tau_idx, grid)
    actions = np.empty((n, gen.m))

    for k in range(n - 1, -1, -1):
        theta_next = table.row(k + 1, k + 1)
        try:
            profile = np.asarray(cost.argmin_profile(gen, nodes[k], theta_next), float)
        except Exception as exc:
            raise MfeqError(f"argmin oracle failed at node {k}: {exc}") from exc
        actions[k] = profile
        P = transition_matrix(gen, nodes[k], profile, dt)
        running = cost.running_dist_many(taus, nodes[k], nu.at(k))
        running = running + cost.control_profile_cost(nodes[k], profile)
        values[:, k, :] = values[:, k + 1, :] @ P.T + dt * running

    bound = (gen.K1 + cost.K2) * grid.horizon + cost.K2
    worst_hi = values.max() - bound
    worst_lo = -values.min()
    if worst_hi > 1e-8 or worst_lo > 1e-8:
        logger.warning(
            "value table exceeds declared bounds: above by %.3e, below by %.3e "
            "(declared constants may be inconsistent)", max(worst_hi, 0.0),
            max(worst_lo, 0.0),
        )
    return table, StrategyTable(actions, grid)


def evaluate_cost(gen: GeneratorModel, cost: CostModel, nu: FlowCurve,
                  strategy: StrategyTable, a: int, k: int, i: int,
                  transitions: np.ndarray | None = None) -> float:
    """Trajectory cost from state i at node k, evaluated from node a.

    Propagates the law of the chain started at delta_i under the strategy and
    accumulates the rectangle-rule running cost against the frozen flow nu,
    plus the terminal term.  Uses the same one-step operators as solve_hj, so
    for the returned policy it reproduces the value table to roundoff.
    """
    grid = strategy.grid
    if nu.grid != grid:
        raise DimensionMismatch("flow curve grid differs from strategy grid")
    n = grid.steps
    nodes = grid.nodes
    dt = grid.dt
    tau = nodes[a]
    mu = np.zeros(gen.m)
    mu[i] = 1.0
    total = 0.0
    for s in range(k, n):
        f = cost.running_dist(tau, nodes[s], nu.at(s))
        f = f + cost.control_profile_cost(nodes[s], strategy.actions[s])
        total += dt * float(mu @ f)
        P = transitions[s] if transitions is not None else transition_matrix(
            gen, nodes[s], strategy.actions[s], dt)
        mu = mu @ P
    total += float(mu @ cost.terminal(tau, nu.at(n)))
    return total


def evaluate_population_cost(gen: GeneratorModel, cost: CostModel, rho,
                             strategy: StrategyTable, a: int, k: int,
                             transitions: np.ndarray | None = None) -> float:
    """Population cost with the self-consistent flow inside f and g.

    The law propagated from rho at node k is itself the distribution argument
    of the running and terminal costs.  When that self-flow coincides with a
    frozen curve nu, this equals the rho-mixture of evaluate_cost values.
    """
    grid = strategy.grid
    n = grid.steps
    nodes = grid.nodes
    dt = grid.dt
    tau = nodes[a]
    mu = np.array(rho.weights if hasattr(rho, "weights") else rho, dtype=float)
    if mu.size != gen.m:
        raise DimensionMismatch("initial law dimension differs from model")
    total = 0.0
    for s in range(k, n):
        f = cost.running_dist(tau, nodes[s], mu)
        f = f + cost.control_profile_cost(nodes[s], strategy.actions[s])
        total += dt * float(mu @ f)
        P = transitions[s] if transitions is not None else transition_matrix(
            gen, nodes[s], strategy.actions[s], dt)
        mu = mu @ P
    total += float(mu @ cost.terminal(tau, mu))
    return total


def validate_cost(gen: GeneratorModel, cost: CostModel, grid: TimeGrid,
                  samples: int = 24, seed: int = 0) -> list[str]:
    """Sampled checks of the declared cost bounds and the argmin oracle.

    Returns a list of human-readable violations (empty when all sampled
    checks pass): cost caps 0 <= f_dist, g <= K2 and control cost <= K1,
    flow-Lipschitz |df| + |dg| <= K3 d(rho, rho'), and the argmin profile
    being admissible and achieving the sampled objective minimum to 1e-8.
    """
    rng = np.random.default_rng(seed)
    nodes = grid.nodes
    problems: list[str] = []
    for _ in range(samples):
        a = rng.integers(0, grid.steps + 1)
        k = rng.integers(0, grid.steps + 1)
        tau, t = nodes[a], nodes[k]
        rho = rng.dirichlet(np.ones(cost.m))
        rho2 = rng.dirichlet(np.ones(cost.m))
        f = cost.running_dist(tau, t, rho)
        g = cost.terminal(tau, rho)
        if f.min() < -1e-12 or g.min() < -1e-12:
            problems.append(f"negative cost at (tau={tau:.3g}, t={t:.3g})")
        if f.max() > cost.K2 + 1e-9 or g.max() > cost.K2 + 1e-9:
            problems.append(
                f"cost exceeds K2={cost.K2:.6g} at (tau={tau:.3g}, t={t:.3g}): "
                f"max f={f.max():.6g}, max g={g.max():.6g}")
        df = np.abs(f - cost.running_dist(tau, t, rho2))
        dg = np.abs(g - cost.terminal(tau, rho2))
        d = float(np.abs(rho - rho2).sum())
        if (df + dg).max() > cost.K3 * d + 1e-9:
            problems.append(f"flow-Lipschitz bound K3={cost.K3:.6g} violated")
        for i in range(cost.m):
            lo, hi = gen.action_interval(t, i)
            v = float(rng.uniform(lo, hi))
            psi = cost.control_cost(t, i, v)
            if psi > gen.K1 + 1e-9:
                problems.append(
                    f"control cost {psi:.6g} exceeds K1={gen.K1:.6g}")
        h = rng.uniform(0.0, (gen.K1 + cost.K2) * grid.horizon + cost.K2, cost.m)
        profile = cost.argmin_profile(gen, t, h)
        for i in range(cost.m):
            lo, hi = gen.action_interval(t, i)
            if not (lo - 1e-9 <= profile[i] <= hi + 1e-9):
                problems.append(f"argmin profile inadmissible at state {i}")
                continue
            achieved = cost.control_cost(t, i, profile[i]) + float(
                gen.rates(t, i, float(profile[i])) @ h)
            grid_best = min(
                cost.control_cost(t, i, v) + float(gen.rates(t, i, v) @ h)
                for v in np.linspace(lo, hi, 65)
            )
            if achieved > grid_best + 1e-8:
                problems.append(
                    f"argmin misses sampled minimum by {achieved - grid_best:.3e} "
                    f"at state {i}")
    return problems
