"""Independent checks for the finite-difference engine.

* a closed form for frozen (constant) intensity, where the substitution
  v = u^(1/(1 - rho^2)) turns each problem into a linear ODE;
* Monte Carlo CIR survival probabilities;
* a Monte Carlo Feynman-Kac estimate of the linear (rho = 0) problem;
* grid convergence studies built on top of those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np

from .params import AgentKind, CirParams, ValidatedConfig, validate
from . import pde

# Largest fine Monte Carlo step; the two-grid extrapolation removes the
# first-order Euler bias, leaving O(dt^2).
MC_MAX_STEP = 0.025
_BATCH_NORMALS = 2_000_000


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    n_steps: int
    seed: int

    def within(self, target: float, n_sigma: float = 3.0) -> bool:
        return abs(self.mean - target) <= n_sigma * self.std_error


@dataclass(frozen=True)
class BernoulliSolution:
    agent: AgentKind
    lam: float
    tau: np.ndarray
    v: np.ndarray
    u: np.ndarray


def bernoulli_closed_form(lambda_const: float, tau, config: ValidatedConfig,
                          agent: AgentKind) -> BernoulliSolution:
    """Exact solution of the frozen-intensity problem.

    With a = b = 0 the PDE for u becomes
    u' = -(1 - rho^2)(m + lam) u + (1 - rho^2) s lam u^(-theta); in
    v = u^(1/(1 - rho^2)) it reads v' = -(m + lam) v + s lam, v(0) = 1.
    """
    if lambda_const < 0.0:
        raise ValueError("lambda_const must be >= 0")
    tau = np.asarray(tau, dtype=float)
    s = agent.source_scale(config.gamma_c)
    k = config.sharpe_term + lambda_const
    if k == 0.0:
        v = np.ones_like(tau)
    else:
        level = s * lambda_const / k
        v = level + (1.0 - level) * np.exp(-k * tau)
    return BernoulliSolution(agent, float(lambda_const), tau, v, v ** config.one_minus_rho2)


def bernoulli_residual(sol: BernoulliSolution, config: ValidatedConfig) -> np.ndarray:
    """|v' + (m + lam) v - s lam| using the analytic derivative of v."""
    s = sol.agent.source_scale(config.gamma_c)
    k = config.sharpe_term + sol.lam
    level = s * sol.lam / k if k else 1.0
    dv = -k * (1.0 - level) * np.exp(-k * sol.tau)
    return np.abs(dv + k * sol.v - s * sol.lam)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _step_source(lam_dt, kill_dt, disc0, disc1):
    """int lambda D over one step with lambda frozen at its trapezoid average.

    D decays at the constant rate kill + lambda there, so the integral is
    lambda / (kill + lambda) * (D0 - D1) exactly.
    """
    total = lam_dt + kill_dt
    if total <= 0.0:
        return 0.0
    return lam_dt / total * (disc0 - disc1)


@numba.njit(cache=True, nogil=True)
def _cir_batch(z, lam0, alpha, lbar, phi, dt, kill, out_int, out_src, out_int_c,
               out_src_c, out_last):
    """Full-truncation Euler on a fine grid and on the grid of paired steps.

    For each path records int lambda (trapezoid) and
    int lambda_t exp(-int_0^t (kill + lambda)) dt, for both the fine and the
    coarse (2 dt) grid.
    The coarse path reuses the summed Brownian increments of the fine one.
    """
    n_paths, n_steps = z.shape
    sq = math.sqrt(dt)
    sq2 = math.sqrt(2.0 * dt)
    for p in range(n_paths):
        lf = lam0
        integ = 0.0
        src = 0.0
        disc = 1.0
        lc = lam0
        integ_c = 0.0
        src_c = 0.0
        disc_c = 1.0
        for k in range(n_steps):
            lp = lf if lf > 0.0 else 0.0
            nxt = lf + alpha * (lbar - lp) * dt + phi * math.sqrt(lp) * sq * z[p, k]
            npos = nxt if nxt > 0.0 else 0.0
            inc = 0.5 * (lp + npos) * dt
            new_disc = disc * math.exp(-(kill * dt + inc))
            src += _step_source(inc, kill * dt, disc, new_disc)
            integ += inc
            disc = new_disc
            lf = nxt
            if k % 2 == 1:
                w = (z[p, k - 1] + z[p, k]) / math.sqrt(2.0)
                cp = lc if lc > 0.0 else 0.0
                cn = lc + alpha * (lbar - cp) * 2.0 * dt + phi * math.sqrt(cp) * sq2 * w
                cpos = cn if cn > 0.0 else 0.0
                cinc = cp * dt + cpos * dt
                new_dc = disc_c * math.exp(-(kill * 2.0 * dt + cinc))
                src_c += _step_source(cinc, kill * 2.0 * dt, disc_c, new_dc)
                integ_c += cinc
                disc_c = new_dc
                lc = cn
        out_int[p] = integ
        out_src[p] = src
        out_int_c[p] = integ_c
        out_src_c[p] = src_c
        out_last[p] = lf if lf > 0.0 else 0.0


@dataclass(frozen=True)
class CirPaths:
    """Per-path results of a CIR simulation (fine and paired-step grids)."""

    terminal: np.ndarray
    integral: np.ndarray
    source: np.ndarray
    integral_coarse: np.ndarray
    source_coarse: np.ndarray
    n_steps: int
    seed: int
    antithetic: bool

    @property
    def n_paths(self) -> int:
        return self.terminal.size

    def summary(self) -> dict:
        return {
            "terminal_mean": float(self.terminal.mean()),
            "integral_mean": float(self.integral.mean()),
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "seed": self.seed,
        }


def default_steps(T: float, max_step: float = MC_MAX_STEP) -> int:
    """Even fine step count with step size at most ``max_step``."""
    return 2 * max(1, math.ceil(T / (2.0 * max_step) - 1e-9))


def mc_cir_paths(cir: CirParams, lambda0: float, T: float, n_paths: int,
                 n_steps: int | None = None, seed: int = 0, kill_rate: float = 0.0,
                 antithetic: bool = False) -> CirPaths:
    """Simulate CIR intensity paths with full-truncation Euler.

    ``kill_rate`` is an extra constant discount rate used in the running
    discount factor of the ``source`` integral. With ``antithetic`` paths
    come in adjacent pairs driven by opposite normals.
    Output is bitwise reproducible for a given seed and path count.
    """
    if lambda0 < 0.0:
        raise ValueError("lambda0 must be >= 0")
    if n_steps is None:
        n_steps = default_steps(T)
    if n_steps < 2 or n_steps % 2:
        raise ValueError("n_steps must be an even integer >= 2")
    if antithetic and n_paths % 2:
        raise ValueError("antithetic sampling needs an even number of paths")
    rng = np.random.Generator(np.random.PCG64(seed))
    dt = T / n_steps
    arrays = [np.empty(n_paths) for _ in range(5)]
    batch = max(2, _BATCH_NORMALS // n_steps) // 2 * 2
    start = 0
    while start < n_paths:
        size = min(batch, n_paths - start)
        if antithetic:
            half = rng.standard_normal((size // 2, n_steps))
            z = np.empty((size, n_steps))
            z[0::2] = half
            z[1::2] = -half
        else:
            z = rng.standard_normal((size, n_steps))
        chunk = [a[start:start + size] for a in arrays]
        _cir_batch(z, float(lambda0), cir.alpha, cir.lambda_bar, cir.phi, dt,
                   float(kill_rate), chunk[0], chunk[1], chunk[2], chunk[3], chunk[4])
        start += size
    integral, source, integral_c, source_c, terminal = arrays
    return CirPaths(terminal, integral, source, integral_c, source_c, n_steps, seed,
                    antithetic)


def _estimate(samples: np.ndarray, paths: CirPaths) -> McEstimate:
    if paths.antithetic:
        samples = samples.reshape(-1, 2).mean(axis=1)
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(float(samples.mean()), se, paths.n_paths, paths.n_steps, paths.seed)


def mc_survival(cir: CirParams, lambda0: float, T: float, n_paths: int, seed: int = 0,
                n_steps: int | None = None, antithetic: bool = False,
                extrapolate: bool = True) -> McEstimate:
    """Monte Carlo estimate of E[exp(-int_0^T lambda)].

    With ``extrapolate`` each path contributes 2 f(fine) - f(coarse), which
    cancels the first-order discretisation bias.
    """
    paths = mc_cir_paths(cir, lambda0, T, n_paths, n_steps, seed, antithetic=antithetic)
    fine = np.exp(-paths.integral)
    if extrapolate:
        fine = 2.0 * fine - np.exp(-paths.integral_coarse)
    return _estimate(fine, paths)


def mc_feynman_kac_linear(config: ValidatedConfig, y0: float, agent: AgentKind,
                          n_paths: int, seed: int = 0, n_steps: int | None = None,
                          antithetic: bool = False, extrapolate: bool = True) -> McEstimate:
    """Monte Carlo value of the rho = 0 problem at (tau = T, y0).

    At zero correlation theta = 0 and the equation is linear, so
    v(T, y0) = E[exp(-int (m + lambda)) + s int lambda_t exp(-int_0^t (m + lambda)) dt]
    under the physical CIR dynamics.
    """
    if config.market.correlation != 0.0:
        raise ValueError("the Feynman-Kac oracle requires correlation = 0")
    m = config.sharpe_term
    T = config.grid.T
    s = agent.source_scale(config.gamma_c)
    paths = mc_cir_paths(config.cir, y0, T, n_paths, n_steps, seed, kill_rate=m,
                         antithetic=antithetic)
    value = np.exp(-m * T - paths.integral) + s * paths.source
    if extrapolate:
        coarse = np.exp(-m * T - paths.integral_coarse) + s * paths.source_coarse
        value = 2.0 * value - coarse
    return _estimate(value, paths)


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceReport:
    problem: str
    steps: tuple
    errors: tuple
    orders: tuple

    @property
    def order(self) -> float:
        """Order fitted on the two finest levels."""
        return self.orders[-1]


def _orders(h, e):
    return tuple(math.log(e[k] / e[k + 1]) / math.log(h[k] / h[k + 1])
                 for k in range(len(e) - 1))


def convergence_study(problem: str, levels, config: ValidatedConfig,
                      agent: AgentKind = AgentKind.BUYER, lambda_const: float = 0.12,
                      fixed: int | None = None,
                      window: tuple[float, float] | None = (0.05, 0.75)) -> ConvergenceReport:
    """Empirical order of the march under grid refinement.

    ``problem`` is one of

    ``"bernoulli_dt"``
        frozen intensity ``lambda_const``; ``levels`` are values of ``M``;
        errors are max-norm distances to the closed form.
    ``"bernoulli_dy"``
        same problem with ``levels`` as values of ``N``; the frozen problem
        has no spatial coupling, so errors stay at the time-discretisation
        floor.
    ``"cir_dy"``
        full CIR problem; ``levels`` are interval counts ``N + 1`` that
        double from one level to the next. Without a closed form, errors
        are successive differences on the coarsest grid's nodes
        (Richardson self-convergence), restricted to ``window`` in y. The
        Dirichlet values at both ends sit on outflow boundaries and create
        thin layers that converge more slowly than the interior;
        ``window=None`` measures them too.
    """
    grid = config.grid
    if problem in ("bernoulli_dt", "bernoulli_dy"):
        key = "M" if problem == "bernoulli_dt" else "N"
        steps, errors = [], []
        for level in levels:
            changes = {key: int(level)}
            if fixed is not None:
                changes["N" if key == "M" else "M"] = fixed
            cfg = validate(config.market, config.cir, replace(grid, **changes))
            surf = pde.march(cfg, agent, intensity_override=lambda_const)
            exact = bernoulli_closed_form(lambda_const, surf.tau, cfg, agent).u
            errors.append(float(np.max(np.abs(surf.values - exact[:, None]))))
            steps.append(cfg.dt if key == "M" else cfg.dy)
        return ConvergenceReport(problem, tuple(steps), tuple(errors), _orders(steps, errors))
    if problem == "cir_dy":
        intervals = [int(n) for n in levels]
        if len(intervals) < 3 or any(b != 2 * a for a, b in zip(intervals, intervals[1:])):
            raise ValueError("cir_dy needs at least three doubling interval counts")
        finals = []
        for n in intervals:
            changes = {"N": n - 1}
            if fixed is not None:
                changes["M"] = fixed
            cfg = validate(config.market, config.cir, replace(grid, **changes))
            final = pde.march(cfg, agent).final
            finals.append(final[:: n // intervals[0]])
        coarse_y = grid.y_min + (grid.y_max - grid.y_min) / intervals[0] * np.arange(intervals[0] + 1)
        if window is not None:
            keep = (coarse_y >= window[0]) & (coarse_y <= window[1])
            finals = [f[keep] for f in finals]
        diffs = [float(np.max(np.abs(a - b))) for a, b in zip(finals, finals[1:])]
        steps = [(grid.y_max - grid.y_min) / n for n in intervals]
        return ConvergenceReport(problem, tuple(steps[:-1]), tuple(diffs),
                                 _orders(steps[:-1], diffs))
    raise ValueError(f"unknown convergence problem {problem!r}")
