"""Implicit finite-difference march for the three reaction-diffusion problems.

In reversed time tau = T - t every value function v in {u, w^b, w^s} solves

    v_tau = F1 v_yy + F2 v_y + F3 v + F4 v^(-theta),    v(0, y) = 1,

with F1 = a^2/2, F2 = b - (rho mu / sigma) a, F3 = -(1 - rho^2)(m + y) and
F4 = s (1 - rho^2) y, where the source scale s is 1, e^{gamma c} or
e^{-gamma c}. Each step is backward Euler in time, central in space, with
the power term linearised around the previous level, so one tridiagonal
system is solved per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import cir as cir_model
from .params import AgentKind, ValidatedConfig

PIVOT_FLOOR = 1e-300


class SolverError(RuntimeError):
    """Base class for failures of the finite-difference march."""


class PositivityError(SolverError):
    def __init__(self, level: int, node: int, value: float):
        self.level, self.node, self.value = level, node, value
        super().__init__(
            f"value surface lost positivity at time level {level}, node {node} "
            f"(value {value:.3e}); refine the grid (smaller dt or dy)")


class SolverBreakdownError(SolverError):
    def __init__(self, level: int, node: int):
        self.level, self.node = level, node
        super().__init__(
            f"tridiagonal elimination hit a zero pivot at time level {level}, node {node}")


@dataclass(frozen=True)
class CoefficientField:
    """Per-node PDE coefficients on the intensity grid (boundaries included)."""

    y: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray
    F4: np.ndarray
    theta: float


@dataclass(frozen=True)
class TridiagonalRow:
    alpha: float
    beta: float
    nu: float
    d: float


@dataclass(frozen=True)
class ValueSurface:
    """Solution levels ``values[i, j]`` at reversed time ``tau[i]`` and node ``y[j]``."""

    agent: AgentKind
    T: float
    tau: np.ndarray
    y: np.ndarray
    values: np.ndarray

    @property
    def final(self) -> np.ndarray:
        """Values at tau = T, i.e. calendar time 0."""
        return self.values[-1]

    def at(self, lambda0: float) -> float:
        """Linear interpolation of the tau = T slice at intensity ``lambda0``."""
        y = self.y
        if not y[0] <= lambda0 <= y[-1]:
            raise ValueError(
                f"lambda0 = {lambda0} lies outside the grid [{y[0]}, {y[-1]}]")
        return float(np.interp(lambda0, y, self.final))

    def to_csv(self, path) -> None:
        """Write ``tau,y,value`` rows, time-major."""
        tau = np.repeat(self.tau, self.y.size)
        y = np.tile(self.y, self.tau.size)
        with open(path, "w", newline="") as fh:
            fh.write("tau,y,value\n")
            for t, yy, v in zip(tau, y, self.values.ravel()):
                fh.write(f"{t:.12g},{yy:.12g},{v:.12g}\n")


def intensity_grid(config: ValidatedConfig) -> np.ndarray:
    g = config.grid
    return g.y_min + config.dy * np.arange(g.N + 2)


def build_coefficients(config: ValidatedConfig, agent: AgentKind,
                       intensity_override: float | None = None) -> CoefficientField:
    """Evaluate F1..F4 at every node.

    ``intensity_override`` replaces the CIR dynamics by a frozen constant
    intensity (a = b = 0, lambda(y) = const), which turns every node into an
    independent scalar ODE with a closed-form solution.
    """
    market, cir = config.market, config.cir
    y = intensity_grid(config)
    one_m = config.one_minus_rho2
    if intensity_override is None:
        a = cir_model.vol_a(y, cir)
        b = cir_model.drift_b(y, cir)
        lam = y
    else:
        if intensity_override < 0.0:
            raise ValueError("constant intensity must be >= 0")
        a = np.zeros_like(y)
        b = np.zeros_like(y)
        lam = np.full_like(y, float(intensity_override))
    risk_adj = market.correlation * market.excess_return / market.volatility
    F1 = 0.5 * a * a
    F2 = b - risk_adj * a
    F3 = -one_m * (config.sharpe_term + lam)
    F4 = agent.source_scale(config.gamma_c) * one_m * lam
    return CoefficientField(y=y, F1=F1, F2=F2, F3=F3, F4=F4, theta=config.theta)


def linearize_power(v_prev, theta: float):
    """First-order expansion of v^(-theta) around the previous level.

    Returns ``(source, diag_shift)`` with
    ``v_new^(-theta) ~ source + diag_shift * v_new``.
    """
    v_prev = np.asarray(v_prev, dtype=float)
    if np.any(v_prev <= 0.0):
        raise PositivityError(-1, int(np.argmin(v_prev)), float(np.min(v_prev)))
    p = v_prev ** (-theta)
    source = (1.0 + theta) * p
    diag_shift = -theta * p / v_prev
    if source.ndim == 0:
        return float(source), float(diag_shift)
    return source, diag_shift


def assemble_row(j: int, coeffs: CoefficientField, v_prev_j: float, dt: float, dy: float,
                 left: float | None = None, right: float | None = None) -> TridiagonalRow:
    """Row ``j`` of the implicit system with the central stencil.

    Passing the Dirichlet value of a neighbour via ``left``/``right`` folds
    its contribution into the right-hand side and zeroes that coefficient.
    """
    F1, F2, F4 = coeffs.F1[j], coeffs.F2[j], coeffs.F4[j]
    source, shift = linearize_power(v_prev_j, coeffs.theta)
    alpha = dt * F1 / dy ** 2 - dt * F2 / (2.0 * dy)
    nu = dt * F1 / dy ** 2 + dt * F2 / (2.0 * dy)
    beta = -1.0 - 2.0 * dt * F1 / dy ** 2 + dt * coeffs.F3[j] + dt * F4 * shift
    d = -v_prev_j - dt * F4 * source
    if left is not None:
        d -= alpha * left
        alpha = 0.0
    if right is not None:
        d -= nu * right
        nu = 0.0
    return TridiagonalRow(float(alpha), float(beta), float(nu), float(d))


@numba.njit(cache=True, nogil=True)
def _thomas(sub, diag, sup, rhs, out):
    """Forward elimination / back substitution; returns the failing row or -1."""
    n = diag.shape[0]
    c = np.empty(n)
    g = np.empty(n)
    denom = diag[0]
    if abs(denom) < PIVOT_FLOOR:
        return 0
    c[0] = sup[0] / denom
    g[0] = rhs[0] / denom
    for k in range(1, n):
        denom = diag[k] - sub[k] * c[k - 1]
        if abs(denom) < PIVOT_FLOOR:
            return k
        c[k] = sup[k] / denom
        g[k] = (rhs[k] - sub[k] * g[k - 1]) / denom
    out[n - 1] = g[n - 1]
    for k in range(n - 2, -1, -1):
        out[k] = g[k] - c[k] * out[k + 1]
    return -1


def thomas_solve(sub, diag, sup, rhs) -> np.ndarray:
    """Solve a tridiagonal system without pivoting.

    ``sub[0]`` and ``sup[-1]`` are ignored.
    """
    sub, diag, sup, rhs = (np.ascontiguousarray(x, dtype=float) for x in (sub, diag, sup, rhs))
    out = np.empty_like(diag)
    bad = _thomas(sub, diag, sup, rhs, out)
    if bad >= 0:
        raise SolverBreakdownError(-1, int(bad))
    return out


@numba.njit(cache=True, nogil=True)
def _march_kernel(sub, base_diag, sup, F4dt, theta, lo, hi, values):
    """March levels 1..M+1 in place; boundary columns outside [lo, hi] are preset.

    Returns (code, level, node): code 0 ok, 1 positivity loss, 2 zero pivot.
    """
    n_levels = values.shape[0]
    n = hi - lo + 1
    s = sub[lo:hi + 1].copy()
    u = sup[lo:hi + 1].copy()
    s[0] = 0.0
    u[n - 1] = 0.0
    diag = np.empty(n)
    rhs = np.empty(n)
    x = np.empty(n)
    for i in range(n_levels - 1):
        prev = values[i]
        for k in range(n):
            j = lo + k
            v = prev[j]
            p = v ** (-theta)
            diag[k] = base_diag[j] - theta * F4dt[j] * p / v
            rhs[k] = -v - (1.0 + theta) * F4dt[j] * p
        if lo > 0:
            rhs[0] -= sub[lo] * values[i + 1, lo - 1]
        if hi < values.shape[1] - 1:
            rhs[n - 1] -= sup[hi] * values[i + 1, hi + 1]
        bad = _thomas(s, diag, u, rhs, x)
        if bad >= 0:
            return 2, i + 1, lo + bad
        for k in range(n):
            values[i + 1, lo + k] = x[k]
        for k in range(n):
            if not x[k] > 0.0:
                return 1, i + 1, lo + k
    return 0, 0, 0


def boundary_values(tau: float, agent: AgentKind, config: ValidatedConfig) -> tuple[float, float]:
    """Dirichlet values ``(v(tau, y_min), v(tau, y_max))``.

    At zero intensity all three problems decay like the Merton factor
    ``exp(-(1 - rho^2) m tau)``. At ``y_max`` the agent is assumed to hold
    only the bank account, giving a closed form through the CIR survival
    probability from ``y_max``.
    """
    one_m = config.one_minus_rho2
    bottom = math.exp(-one_m * config.sharpe_term * tau)
    if agent is AgentKind.MERTON:
        return bottom, 1.0
    scale = agent.source_scale(config.gamma_c)
    surv = cir_model.survival_prob(config.grid.y_max, tau, config.cir)
    top = (scale - (scale - 1.0) * surv) ** one_m
    return bottom, top


def _stencil(coeffs: CoefficientField, dt: float, dy: float, upwind: bool):
    F1, F2 = coeffs.F1, coeffs.F2
    diff = dt * F1 / dy ** 2
    if upwind:
        sub = diff + dt * np.maximum(-F2, 0.0) / dy
        sup = diff + dt * np.maximum(F2, 0.0) / dy
    else:
        sub = diff - dt * F2 / (2.0 * dy)
        sup = diff + dt * F2 / (2.0 * dy)
    base_diag = -1.0 - 2.0 * diff + dt * coeffs.F3
    if upwind:
        base_diag -= dt * np.abs(F2) / dy
    return sub, base_diag, sup


def march(config: ValidatedConfig, agent: AgentKind,
          intensity_override: float | None = None) -> ValueSurface:
    """Solve one value function on the full (tau, y) grid."""
    grid = config.grid
    dt, dy = config.dt, config.dy
    n_levels, n_nodes = grid.M + 2, grid.N + 2
    coeffs = build_coefficients(config, agent, intensity_override)
    sub, base_diag, sup = _stencil(coeffs, dt, dy, grid.upwind_interior)
    tau = dt * np.arange(n_levels)
    tau[-1] = grid.T
    values = np.empty((n_levels, n_nodes))
    values[0] = 1.0

    if intensity_override is not None:
        # decoupled scalar ODEs: every node, boundaries included, is an unknown
        lo, hi = 0, n_nodes - 1
    else:
        lo, hi = 1, n_nodes - 2
        for i in range(1, n_levels):
            values[i, 0], values[i, -1] = boundary_values(tau[i], agent, config)
        if grid.bottom_boundary == "upwind":
            # one-sided advection row at y = 0 (F1 vanishes there)
            lo = 0
            sub[0] = 0.0
            sup[0] = dt * coeffs.F2[0] / dy
            base_diag[0] = -1.0 - sup[0] + dt * coeffs.F3[0]

    code, level, node = _march_kernel(sub, base_diag, sup, dt * coeffs.F4,
                                      coeffs.theta, lo, hi, values)
    if code == 1:
        raise PositivityError(level, node, float(values[level, node]))
    if code == 2:
        raise SolverBreakdownError(level, node)
    return ValueSurface(agent=agent, T=grid.T, tau=tau, y=coeffs.y, values=values)
