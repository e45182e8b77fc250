"""Independent checks that a computed equilibrium deserves the name.

The central test perturbs the policy by a short constant-action spike and
measures the normalized cost change; a genuine equilibrium admits no spike
that lowers the cost faster than the discretization error.  All values here
are recomputed by trajectory cost evaluation against the equilibrium flow,
never read from the solver's value table, so the checks form an oracle
independent of the backward sweep.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import (
    FlowCurve,
    GeneratorModel,
    StrategyTable,
    TimeGrid,
    propagate_flow,
    transition_matrix,
    transition_stack,
    tv_distance,
    validate_generator,
)
from .errors import AdmissibilityError, DimensionMismatch
from .hj import CostModel, evaluate_cost, scan_golden_min
from .solver import Equilibrium


def worker_count() -> int:
    """Worker cap from MFE_THREADS (default: single-threaded)."""
    raw = os.environ.get("MFE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


@dataclass
class SpikeEntry:
    node: int
    state: int
    action: float
    gap: float


@dataclass
class SpikeReport:
    """Normalized spike gaps over the sweep and the entries below -tol."""

    tol: float
    min_gap: float
    entries: list[SpikeEntry] = field(default_factory=list)
    violations: list[SpikeEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        status = "no violations" if self.ok else f"{len(self.violations)} violations"
        return (f"spike sweep over {len(self.entries)} perturbations: {status} "
                f"(min gap {self.min_gap:.6g}, tolerance {self.tol:.6g})")


def constant_spike_profile(gen: GeneratorModel, t: float, u, tested_state: int | None) -> np.ndarray:
    """Constant-action profile for the spike cell.

    A scalar action is applied at every state, clipped into each state's
    admissible interval (the tested state must admit it unclipped); an array
    is taken as the profile itself and must be admissible everywhere.
    """
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 0:
        v = float(arr)
        if tested_state is not None and not gen.contains_action(t, tested_state, v):
            raise AdmissibilityError(
                f"spike action {v:.6g} inadmissible at tested state {tested_state}")
        return np.array([gen.clip_action(t, i, v) for i in range(gen.m)])
    if arr.shape != (gen.m,):
        raise DimensionMismatch("spike profile length differs from state count")
    for i in range(gen.m):
        if not gen.contains_action(t, i, arr[i]):
            raise AdmissibilityError(f"spike profile inadmissible at state {i}")
    return arr


def spike_gap(eq: Equilibrium, gen: GeneratorModel, cost: CostModel, k: int,
              i: int, u, eps_nodes: int = 1) -> float:
    """Normalized cost change of a spike at (node k, state i).

    Replaces the policy on [t_k, t_k + eps) by the constant profile built
    from u, holds the flow fixed at the equilibrium flow, and returns
    (perturbed cost - equilibrium cost) / eps with both costs computed by
    trajectory evaluation from evaluation node k.
    """
    grid = eq.grid
    if eps_nodes < 1 or k + eps_nodes > grid.steps:
        raise ValueError("spike must fit between the node and the horizon")
    t = grid.nodes[k]
    profile = constant_spike_profile(gen, t, u, i)
    spiked = eq.policy.actions.copy()
    for s in range(k, k + eps_nodes):
        spiked[s] = constant_spike_profile(gen, grid.nodes[s], u, None) \
            if np.ndim(u) == 0 else profile
    spiked_strategy = StrategyTable(spiked, grid)
    eps = eps_nodes * grid.dt
    v_base = evaluate_cost(gen, cost, eq.flow, eq.policy, k, k, i)
    v_spiked = evaluate_cost(gen, cost, eq.flow, spiked_strategy, k, k, i)
    return (v_spiked - v_base) / eps


def _running_profile(cost: CostModel, tau: float, t: float, nu_k, actions) -> np.ndarray:
    return cost.running_dist(tau, t, nu_k) + cost.control_profile_cost(t, actions)


def _sweep_node(gen, cost, eq, transitions, k, action_samples):
    """All spike gaps at node k (tail values recomputed from scratch)."""
    grid = eq.grid
    n = grid.steps
    nodes = grid.nodes
    dt = grid.dt
    tau = nodes[k]
    nu = eq.flow
    # tail value under the equilibrium policy, evaluated from node k
    w = cost.terminal(tau, nu.at(n)).astype(float)
    for s in range(n - 1, k, -1):
        f = _running_profile(cost, tau, nodes[s], nu.at(s), eq.policy.actions[s])
        w = dt * f + transitions[s] @ w
    base_f = _running_profile(cost, tau, nodes[k], nu.at(k), eq.policy.actions[k])
    v_base = dt * base_f + transitions[k] @ w
    run_k = cost.running_dist(tau, nodes[k], nu.at(k))

    entries = []
    for i in range(gen.m):
        lo, hi = gen.action_interval(nodes[k], i)
        actions = np.unique(np.concatenate([
            np.linspace(lo, hi, max(action_samples, 2)), [lo, hi]]))
        for u in actions:
            profile = np.array([gen.clip_action(nodes[k], j, float(u))
                                for j in range(gen.m)])
            P = transition_matrix(gen, nodes[k], profile, dt)
            v_spiked = dt * (run_k[i] + cost.control_cost(nodes[k], i, float(u))) \
                + float(P[i] @ w)
            gap = (v_spiked - float(v_base[i])) / dt
            entries.append(SpikeEntry(node=k, state=i, action=float(u), gap=gap))
    return entries


def verify_local_optimality(eq: Equilibrium, gen: GeneratorModel, cost: CostModel,
                            action_samples: int = 16, tol_spike: float | None = None,
                            threads: int | None = None) -> SpikeReport:
    """Spike sweep over all grid nodes and states.

    Samples action_samples admissible actions per (node, state) (evenly
    spaced, endpoints included), spikes one grid cell each, and reports
    every normalized gap below -tol_spike.  The default tolerance 5 * dt
    reflects that a fixed grid approximates the vanishing-width limit to
    first order.  Violations are findings, not errors.
    """
    grid = eq.grid
    if tol_spike is None:
        tol_spike = 5.0 * grid.dt
    transitions = transition_stack(gen, eq.policy)
    nodes = list(range(grid.steps))
    workers = threads if threads is not None else worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_node = list(pool.map(
                lambda k: _sweep_node(gen, cost, eq, transitions, k, action_samples),
                nodes))
    else:
        per_node = [_sweep_node(gen, cost, eq, transitions, k, action_samples)
                    for k in nodes]
    entries = [e for chunk in per_node for e in chunk]
    min_gap = min((e.gap for e in entries), default=0.0)
    violations = [e for e in entries if e.gap < -tol_spike]
    return SpikeReport(tol=tol_spike, min_gap=min_gap, entries=entries,
                       violations=violations)


def dp_oracle(gen: GeneratorModel, cost: CostModel, nu: FlowCurve, grid: TimeGrid,
              tau: float = 0.0) -> tuple[np.ndarray, StrategyTable]:
    """Classical backward induction for costs independent of evaluation time.

    W_N = terminal cost; W_k(i) minimizes over admissible v the one-step
    exponential transition applied to W_{k+1} plus the rectangle-rule running
    cost.  The transition row for action v comes from the constant profile v
    clipped into each state's admissible interval, and the minimization runs
    directly on this exponential-step objective (scan plus golden section) -
    deliberately not the generator-form argmin the backward solver uses, so
    the two agree only up to O(dt) and cross-check each other.
    """
    n = grid.steps
    nodes = grid.nodes
    dt = grid.dt
    W = np.empty((n + 1, gen.m))
    W[n] = cost.terminal(tau, nu.at(n))
    actions = np.empty((n, gen.m))
    for k in range(n - 1, -1, -1):
        t = nodes[k]
        run = cost.running_dist(tau, t, nu.at(k))
        for i in range(gen.m):
            lo, hi = gen.action_interval(t, i)

            def objective(v, i=i, t=t):
                profile = np.array([gen.clip_action(t, j, v) for j in range(gen.m)])
                P = transition_matrix(gen, t, profile, dt)
                return dt * cost.control_cost(t, i, v) + float(P[i] @ W[k + 1])

            # value is quadratic near the minimum, so 1e-6 in the argument
            # already pins it far below the O(dt) scheme error
            v_star, val = scan_golden_min(objective, lo, hi, n_scan=17, tol=1e-6)
            actions[k, i] = v_star
            W[k, i] = dt * run[i] + val
    return W, StrategyTable(actions, grid)


@dataclass
class BoundsReport:
    """Uniform value bounds plus sampled flow-stability checks."""

    theta_min: float
    theta_max: float
    theta_bound: float
    bounds_ok: bool
    flow_slack: float
    flow_allowance: float
    flow_ok: bool

    @property
    def ok(self) -> bool:
        return self.bounds_ok and self.flow_ok

    def summary(self) -> str:
        return (f"values in [{self.theta_min:.6g}, {self.theta_max:.6g}] vs bound "
                f"[0, {self.theta_bound:.6g}] ({'ok' if self.bounds_ok else 'VIOLATED'}); "
                f"flow-stability slack {self.flow_slack:.3e} vs allowance "
                f"{self.flow_allowance:.3e} ({'ok' if self.flow_ok else 'VIOLATED'})")


def check_bounds_and_lipschitz(eq: Equilibrium, gen: GeneratorModel, cost: CostModel,
                               samples: int = 20, seed: int = 0) -> BoundsReport:
    """Assert the uniform value bound and sample the flow-stability estimate.

    The value bound uses the declared constants, (K1 + K2) * horizon + K2, so
    misdeclared caps surface here.  The stability check propagates random
    initial-law / strategy pairs and measures the slack in
    d(flow, flow') <= d(rho, gamma) + kappa1_hat * strategy distance; with
    exponential stepping the flows solve the frozen dynamics exactly, so the
    slack should be roundoff-sized (the allowance keeps an O(dt) term for
    models whose sampled kappa1 underestimates the true constant).
    """
    grid = eq.grid
    bound = (gen.K1 + cost.K2) * grid.horizon + cost.K2
    tmin = float(eq.values.values.min())
    tmax = float(eq.values.values.max())
    bounds_ok = tmin >= -1e-9 and tmax <= bound + 1e-9

    rng = np.random.default_rng(seed)
    kappa1 = validate_generator(gen, grid, samples=8).kappa1_hat
    worst = 0.0
    for _ in range(samples):
        rho = rng.dirichlet(np.ones(gen.m))
        gamma = rng.dirichlet(np.ones(gen.m))
        s1 = _random_strategy(rng, gen, grid)
        s2 = _random_strategy(rng, gen, grid)
        f1 = propagate_flow(gen, rho, s1, grid)
        f2 = propagate_flow(gen, gamma, s2, grid)
        base = tv_distance(rho, gamma)
        # running rectangle-rule integral of the sup action gap up to t_k
        cell_gaps = np.abs(s1.actions - s2.actions).max(axis=1)
        integral = np.concatenate([[0.0], np.cumsum(cell_gaps) * grid.dt])
        for k in range(grid.steps + 1):
            lhs = tv_distance(f1.at(k), f2.at(k))
            worst = max(worst, lhs - base - kappa1 * integral[k])
    allowance = 1e-8 + 0.05 * grid.dt
    return BoundsReport(theta_min=tmin, theta_max=tmax, theta_bound=bound,
                        bounds_ok=bounds_ok, flow_slack=worst,
                        flow_allowance=allowance, flow_ok=worst <= allowance)


def _random_strategy(rng: np.random.Generator, gen: GeneratorModel,
                     grid: TimeGrid) -> StrategyTable:
    actions = np.empty((grid.steps, gen.m))
    for k in range(grid.steps):
        t = grid.nodes[k]
        for i in range(gen.m):
            lo, hi = gen.action_interval(t, i)
            actions[k, i] = rng.uniform(lo, hi)
    return StrategyTable(actions, grid)
