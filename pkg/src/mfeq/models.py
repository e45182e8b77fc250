"""Built-in model families with analytic argmin oracles and declared constants.

States carry the labels 1..m in the cost formulas (arrays are 0-indexed
internally); the distribution mean used by the mean-variance terminal costs
is taken over those labels.
"""

from __future__ import annotations

import numpy as np

from .chain import GeneratorModel, TimeGrid
from .errors import ModelDefect
from .hj import CostModel

ACTION_LO, ACTION_HI = -1.0, 1.0


def admissible_interval(alpha_row, beta, i: int) -> tuple[float, float]:
    """Largest closed subinterval of [-1, 1] keeping row i a generator row.

    Intersects {v : alpha(i, j) + beta(j) v >= 0} over j != i.  The model's
    sign constraints put 0 inside the result.
    """
    a = np.asarray(alpha_row, dtype=float)
    b = np.asarray(beta, dtype=float)
    lo, hi = ACTION_LO, ACTION_HI
    for j in range(a.size):
        if j == i or b[j] == 0.0:
            continue
        bound = -a[j] / b[j]
        if b[j] > 0.0:
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
    return lo, hi


def affine_argmin(h, beta, interval) -> float:
    """Minimizer of v^2/2 + v * (h . beta) over a closed interval.

    The stationary point -(h . beta) clipped into the interval; unique by
    strong convexity and 1-Lipschitz in the stationary point.
    """
    lo, hi = interval
    if lo > hi:
        raise ModelDefect("empty admissible interval")
    s = float(np.asarray(h, dtype=float) @ np.asarray(beta, dtype=float))
    return min(max(-s, lo), hi)


class AffineQuadraticModel(GeneratorModel):
    """Controlled rates q_t^v(i, j) = alpha_t(i, j) + beta_t(j) v on U = [-1, 1].

    alpha rows sum to zero with nonnegative off-diagonals, beta sums to zero.
    Time-varying coefficients are supplied as per-cell tables and frozen
    between nodes.  Declared constants: kappa1 = max_t sum_j |beta_t(j)| (the
    l1 row sensitivity to the action) and K1 = max |alpha| + |beta| entrywise.
    """

    def __init__(self, alpha, beta, grid: TimeGrid | None = None):
        alphas = np.array(alpha, dtype=float)
        betas = np.array(beta, dtype=float)
        if alphas.ndim == 2:
            alphas = alphas[None, :, :]
        if betas.ndim == 1:
            betas = betas[None, :]
        if alphas.ndim != 3 or alphas.shape[1] != alphas.shape[2]:
            raise ModelDefect(f"alpha must be (m, m) or (cells, m, m), got {alphas.shape}")
        m = alphas.shape[1]
        if betas.shape[1] != m:
            raise ModelDefect("beta length differs from alpha dimension")
        if alphas.shape[0] != betas.shape[0]:
            raise ModelDefect("alpha and beta tables have different cell counts")
        if alphas.shape[0] > 1:
            if grid is None:
                raise ModelDefect("time-varying tables need a grid")
            if alphas.shape[0] != grid.steps:
                raise ModelDefect(
                    f"{alphas.shape[0]} coefficient cells but grid has {grid.steps}")
        for c in range(alphas.shape[0]):
            a = alphas[c]
            off = a.copy()
            np.fill_diagonal(off, 0.0)
            if off.min() < 0.0:
                raise ModelDefect(f"negative off-diagonal base rate in cell {c}")
            if np.abs(a.sum(axis=1)).max() > 1e-12:
                raise ModelDefect(f"alpha rows do not sum to zero in cell {c}")
            if abs(betas[c].sum()) > 1e-12:
                raise ModelDefect(f"beta does not sum to zero in cell {c}")
        alphas.setflags(write=False)
        betas.setflags(write=False)
        self._alphas = alphas
        self._betas = betas
        self._dt = grid.dt if grid is not None else None
        self._cells = alphas.shape[0]
        self.m = m
        self.kappa1 = float(np.abs(betas).sum(axis=1).max())
        self.K1 = float((np.abs(alphas) + np.abs(betas)[:, None, :]).max())

    def _cell(self, t: float) -> int:
        if self._cells == 1:
            return 0
        # calls occur at node times, so nearest-node indexing picks the cell
        k = int(np.floor(t / self._dt + 0.5))
        return min(max(k, 0), self._cells - 1)

    def coefficients_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        c = self._cell(t)
        return self._alphas[c], self._betas[c]

    def rates(self, t: float, i: int, v: float) -> np.ndarray:
        a, b = self.coefficients_at(t)
        return a[i] + b * v

    def rate_matrix(self, t: float, profile) -> np.ndarray:
        a, b = self.coefficients_at(t)
        u = np.asarray(profile, dtype=float)
        return a + u[:, None] * b[None, :]

    def action_interval(self, t: float, i: int) -> tuple[float, float]:
        a, b = self.coefficients_at(t)
        return admissible_interval(a[i], b, i)


class TabulatedGenerator(GeneratorModel):
    """Control-free generator given as a rate table per grid cell.

    The admissible set degenerates to the single action 0, so kappa1 = 0.
    """

    def __init__(self, rates, grid: TimeGrid | None = None):
        Q = np.array(rates, dtype=float)
        if Q.ndim == 2:
            Q = Q[None, :, :]
        if Q.ndim != 3 or Q.shape[1] != Q.shape[2]:
            raise ModelDefect(f"rate table must be (m, m) or (cells, m, m), got {Q.shape}")
        if Q.shape[0] > 1:
            if grid is None or Q.shape[0] != grid.steps:
                raise ModelDefect("per-cell rate table does not match the grid")
        for c in range(Q.shape[0]):
            off = Q[c].copy()
            np.fill_diagonal(off, 0.0)
            if off.min() < 0.0:
                raise ModelDefect(f"negative off-diagonal rate in cell {c}")
            if np.abs(Q[c].sum(axis=1)).max() > 1e-10:
                raise ModelDefect(f"rate rows do not sum to zero in cell {c}")
        Q.setflags(write=False)
        self._tables = Q
        self._dt = grid.dt if grid is not None else None
        self._cells = Q.shape[0]
        self.m = Q.shape[1]
        self.kappa1 = 0.0
        self.K1 = float(np.abs(Q).max())

    def _cell(self, t: float) -> int:
        if self._cells == 1:
            return 0
        k = int(np.floor(t / self._dt + 0.5))
        return min(max(k, 0), self._cells - 1)

    def rates(self, t: float, i: int, v: float) -> np.ndarray:
        return self._tables[self._cell(t)][i]

    def rate_matrix(self, t: float, profile) -> np.ndarray:
        return self._tables[self._cell(t)]

    def action_interval(self, t: float, i: int) -> tuple[float, float]:
        return 0.0, 0.0


def state_labels(m: int) -> np.ndarray:
    return np.arange(1, m + 1, dtype=float)


def label_mean(rho) -> float:
    w = np.asarray(rho.weights if hasattr(rho, "weights") else rho, dtype=float)
    return float(state_labels(w.size) @ w)


def mean_variance_terminal(variant: str, label: float, rho) -> float:
    """Raw terminal cost of the two mean-variance variants at a state label.

    variant "g": (label - mean)^2; variant "gtilde": label^2 - mean^2.  Both
    have the population average equal to the label variance of rho, but the
    raw gtilde values can be negative (the cost model applies a recorded
    constant shift to restore nonnegativity without changing any argmin).
    """
    mbar = label_mean(rho)
    if variant == "g":
        return float((label - mbar) ** 2)
    if variant == "gtilde":
        return float(label ** 2 - mbar ** 2)
    raise ValueError(f"unknown mean-variance variant {variant!r}")


def make_tau_weight(spec: dict | None, horizon: float):
    """Evaluation-time weight w(tau) from a small declarative spec.

    Kinds: "one" (constant 1), "affine" (intercept + slope * tau), "exp"
    (exp(-rate * tau)).  Returns (callable, max over [0, horizon]); the
    weight must stay nonnegative on the horizon.
    """
    if spec is None or spec.get("kind", "one") == "one":
        return (lambda tau: np.ones_like(np.asarray(tau, dtype=float))), 1.0
    kind = spec["kind"]
    if kind == "affine":
        c0 = float(spec.get("intercept", 1.0))
        c1 = float(spec.get("slope", 0.0))
        ends = [c0, c0 + c1 * horizon]
        if min(ends) < 0.0:
            raise ModelDefect("affine tau weight goes negative on the horizon")
        return (lambda tau: c0 + c1 * np.asarray(tau, dtype=float)), max(ends)
    if kind == "exp":
        r = float(spec.get("rate", 0.0))
        ends = [1.0, float(np.exp(-r * horizon))]
        return (lambda tau: np.exp(-r * np.asarray(tau, dtype=float))), max(ends)
    raise ModelDefect(f"unknown tau weight kind {kind!r}")


class SeparableCost(CostModel):
    """Configurable separable cost: tau-weighted distribution running cost,
    quadratic or zero control cost, and a pluggable terminal cost.

    running: ("zero",), ("table", values), or ("mean_square", scale) for the
    squared deviation of the state label from the distribution mean.
    terminal: ("mean_variance", "g"|"gtilde") or ("table", values).  The
    gtilde variant is shifted by m^2 (recorded in terminal_shift) so the
    declared nonnegativity cap holds; the shift moves every value equally
    and leaves the policy map unchanged.
    """

    def __init__(self, m: int, running=("zero",), control: str = "quadratic",
                 terminal=("mean_variance", "g"), tau_weight: dict | None = None,
                 horizon: float = 1.0, gen: GeneratorModel | None = None,
                 K2: float | None = None, K3: float | None = None):
        self.m = m
        self._labels = state_labels(m)
        self._weight, wmax = make_tau_weight(tau_weight, horizon)

        kind = running[0]
        if kind == "zero":
            self._running_base = None
            run_cap, run_lip = 0.0, 0.0
        elif kind == "table":
            vals = np.asarray(running[1], dtype=float)
            if vals.shape != (m,):
                raise ModelDefect("running table length differs from state count")
            if vals.min() < 0.0:
                raise ModelDefect("running table must be nonnegative")
            self._running_base = ("table", vals)
            run_cap, run_lip = float(vals.max()), 0.0
        elif kind == "mean_square":
            scale = float(running[1])
            if scale < 0.0:
                raise ModelDefect("mean_square scale must be nonnegative")
            self._running_base = ("mean_square", scale)
            run_cap = scale * (m - 1) ** 2
            run_lip = scale * 2.0 * m * m
        else:
            raise ModelDefect(f"unknown running cost kind {kind!r}")
        self._running_kind = kind

        if control not in ("quadratic", "zero"):
            raise ModelDefect(f"unknown control cost kind {control!r}")
        self.control = control

        tkind = terminal[0]
        if tkind == "mean_variance":
            variant = terminal[1]
            if variant not in ("g", "gtilde"):
                raise ModelDefect(f"unknown mean-variance variant {variant!r}")
            self.terminal_shift = float(m * m) if variant == "gtilde" else 0.0
            self._terminal_spec = ("mean_variance", variant)
            term_cap = (2.0 * m * m - 1.0) if variant == "gtilde" else (m - 1.0) ** 2
            term_lip = 2.0 * m * m
        elif tkind == "table":
            vals = np.asarray(terminal[1], dtype=float)
            if vals.shape != (m,):
                raise ModelDefect("terminal table length differs from state count")
            if vals.min() < 0.0:
                raise ModelDefect("terminal table must be nonnegative")
            self.terminal_shift = 0.0
            self._terminal_spec = ("table", vals)
            term_cap, term_lip = float(vals.max()), 0.0
        else:
            raise ModelDefect(f"unknown terminal cost kind {tkind!r}")

        self.K2 = float(K2) if K2 is not None else float(max(wmax * run_cap, term_cap))
        self.K3 = float(K3) if K3 is not None else float(wmax * run_lip + term_lip)
        self.kappa2 = None
        if isinstance(gen, AffineQuadraticModel):
            # clip argmin is 1-Lipschitz in its stationary point -h . beta
            self.kappa2 = gen.kappa1

    def _running_values(self, rho) -> np.ndarray:
        if self._running_base is None:
            return np.zeros(self.m)
        kind, payload = self._running_base
        if kind == "table":
            return payload
        mbar = label_mean(rho)
        return payload * (self._labels - mbar) ** 2

    def running_dist(self, tau: float, t: float, rho) -> np.ndarray:
        return float(self._weight(tau)) * self._running_values(rho)

    def running_dist_many(self, taus, t: float, rho) -> np.ndarray:
        w = np.atleast_1d(np.asarray(self._weight(np.asarray(taus, float)), float))
        return np.outer(w, self._running_values(rho))

    def terminal(self, tau: float, rho) -> np.ndarray:
        kind, payload = self._terminal_spec
        if kind == "table":
            return payload.copy()
        mbar = label_mean(rho)
        if payload == "g":
            return (self._labels - mbar) ** 2
        return self._labels ** 2 - mbar ** 2 + self.terminal_shift

    def terminal_many(self, taus, rho) -> np.ndarray:
        base = self.terminal(0.0, rho)
        return np.tile(base, (len(np.atleast_1d(taus)), 1))

    def control_cost(self, t: float, i: int, v: float) -> float:
        if self.control == "zero":
            return 0.0
        return 0.5 * v * v

    def control_profile_cost(self, t: float, profile) -> np.ndarray:
        u = np.asarray(profile, dtype=float)
        if self.control == "zero":
            return np.zeros(self.m)
        return 0.5 * u * u

    def argmin_profile(self, gen: GeneratorModel, t: float, h) -> np.ndarray:
        if self.control == "quadratic" and isinstance(gen, AffineQuadraticModel):
            alpha, beta = gen.coefficients_at(t)
            hv = np.asarray(h, dtype=float)
            out = np.empty(self.m)
            for i in range(self.m):
                out[i] = affine_argmin(hv, beta, admissible_interval(alpha[i], beta, i))
            return out
        if self.control == "zero":
            # flat control cost: generator term decides; ties go to the
            # smallest action via the scan in the fallback
            return super().argmin_profile(gen, t, h)
        return super().argmin_profile(gen, t, h)


class MeanVarianceCost(SeparableCost):
    """Mean-variance terminal cost (variant g or gtilde) with quadratic
    control cost and an optional tau-weighted running cost."""

    def __init__(self, m: int, variant: str = "g", tau_weight: dict | None = None,
                 running=("zero",), horizon: float = 1.0,
                 gen: GeneratorModel | None = None, **kwargs):
        super().__init__(m, running=running, control="quadratic",
                         terminal=("mean_variance", variant),
                         tau_weight=tau_weight, horizon=horizon, gen=gen, **kwargs)
        self.variant = variant
