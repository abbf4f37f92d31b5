"""Command-line driver: one strict JSON config in, CSV files plus a manifest out.

Every run writes into ``--out``:

* one CSV per requested combination, named by a canonical key such as
  ``curve_l0=0.02_g=0.01_rho=-0.10.csv``;
* ``manifest.json`` with the resolved configuration, the seed, the git blob
  hash of every CSV and the outcome of every embedded check.

The manifest holds no timestamps, worker counts or paths, so two runs with the
same config and seed produce byte-identical manifests. Exit status is 0 only
when every combination completed and every check passed, 1 otherwise, and 2
for a rejected configuration.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cir as cir_model
from . import oracle, pde, pricing
from .params import (GAMMA_FLOOR, REFERENCE_CIR, REFERENCE_MARKET, AgentKind, CirParams, GridSpec,
                     MarketParams, ParameterError, SolverSettings, validate)

COMMANDS = ("curve", "compare", "oracle", "surface", "convergence")
U64 = 2 ** 64


class ConfigError(ValueError):
    """The configuration file is malformed or inconsistent."""


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

NUMBER, INT, BOOL, STR, NUMBERS, INTS, STRS, PAIRS = (
    "number", "int", "bool", "str", "numbers", "ints", "strs", "pairs")

MARKET_SCHEMA = {
    "excess_return": NUMBER, "drift": NUMBER, "volatility": NUMBER, "risk_free_rate": NUMBER,
    "correlation": NUMBER, "risk_aversion": NUMBER,
}
CIR_SCHEMA = {"alpha": NUMBER, "lambda_bar": NUMBER, "phi": NUMBER}
GRID_SCHEMA = {
    "N": INT, "max_dt": NUMBER, "y_min": NUMBER, "y_max": NUMBER,
    "bottom_boundary": STR, "upwind_interior": BOOL,
}

_CONVERGENCE_DEFAULTS = {
    "T": 5.0, "lambda_const": 0.12, "agent": "buyer",
    "dt_levels": [250, 500, 1000], "dt_fixed_N": 50, "dt_order_min": 0.9,
    "dy_levels": [50, 100, 200, 400], "dy_fixed_M": 2000, "dy_order_min": 1.8,
    "dy_window": [0.05, 0.75],
}
_CONVERGENCE_SCHEMA = {
    "T": NUMBER, "lambda_const": NUMBER, "agent": STR,
    "dt_levels": INTS, "dt_fixed_N": INT, "dt_order_min": NUMBER,
    "dy_levels": INTS, "dy_fixed_M": INT, "dy_order_min": NUMBER, "dy_window": NUMBERS,
}

EXPERIMENTS = {
    "curve": ({
        "lambda0": [0.0, 0.02, 0.12, 0.5], "gamma": [0.01, 0.2, 0.7], "rho": [-0.10],
        "maturities": list(pricing.DEFAULT_MATURITIES),
    }, {"lambda0": NUMBERS, "gamma": NUMBERS, "rho": NUMBERS, "maturities": NUMBERS}),
    "compare": ({
        "lambda0": [0.02, 0.06], "gamma": [1e-4],
        "maturities": [0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0],
        "tolerance": 0.01,
    }, {"lambda0": NUMBERS, "gamma": NUMBERS, "maturities": NUMBERS, "tolerance": NUMBER}),
    "surface": ({"agents": ["merton", "buyer", "seller"], "T": 1.0},
                {"agents": STRS, "T": NUMBER}),
    "oracle": ({
        "seed": 0,
        "batteries": ["bernoulli", "survival", "feynman_kac", "convergence"],
        "bernoulli_lambdas": [0.02, 0.12, 0.5], "bernoulli_gammas": [0.01, 0.7],
        "bernoulli_T": 5.0, "bernoulli_N": 400, "bernoulli_M": 2000, "bernoulli_tol": 5e-4,
        "survival_points": [[0.0, 1.0], [0.02, 2.0], [0.06, 5.0], [0.12, 3.0], [0.5, 1.0],
                            [0.02, 10.0]],
        "survival_paths": 1_000_000,
        "fk_points": [[0.06, 5.0], [0.02, 5.0], [0.12, 2.0], [0.5, 1.0]],
        "fk_agents": ["merton", "buyer", "seller", "buyer"],
        "fk_paths": 200_000, "fk_gamma": 0.2, "fk_N": 400, "fk_max_dt": 2e-5,
        "fk_mc_step": 0.00625,
        "n_sigma": 3.0,
        **_CONVERGENCE_DEFAULTS,
    }, {
        "seed": INT, "batteries": STRS,
        "bernoulli_lambdas": NUMBERS, "bernoulli_gammas": NUMBERS, "bernoulli_T": NUMBER,
        "bernoulli_N": INT, "bernoulli_M": INT, "bernoulli_tol": NUMBER,
        "survival_points": PAIRS, "survival_paths": INT,
        "fk_points": PAIRS, "fk_agents": STRS, "fk_paths": INT, "fk_gamma": NUMBER,
        "fk_N": INT, "fk_max_dt": NUMBER, "fk_mc_step": NUMBER, "n_sigma": NUMBER,
        **_CONVERGENCE_SCHEMA,
    }),
    "convergence": (dict(_CONVERGENCE_DEFAULTS), dict(_CONVERGENCE_SCHEMA)),
}
BATTERIES = ("bernoulli", "survival", "feynman_kac", "convergence")


def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _reject_constant(name):
    raise ConfigError(f"non-standard JSON constant {name}")


def parse_config(text: str) -> dict:
    """Parse strict JSON: no duplicate keys, no NaN/Infinity, top level an object."""
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicates,
                         parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _coerce(where: str, kind: str, value):
    if kind == NUMBER:
        if not _is_number(value):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if kind == INT:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer")
        return value
    if kind == BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if kind == STR:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where} must be a non-empty list")
    if kind == NUMBERS:
        return [_coerce(f"{where}[{i}]", NUMBER, v) for i, v in enumerate(value)]
    if kind == INTS:
        return [_coerce(f"{where}[{i}]", INT, v) for i, v in enumerate(value)]
    if kind == STRS:
        return [_coerce(f"{where}[{i}]", STR, v) for i, v in enumerate(value)]
    if kind == PAIRS:
        out = []
        for i, v in enumerate(value):
            if not isinstance(v, list) or len(v) != 2:
                raise ConfigError(f"{where}[{i}] must be a two-element list")
            out.append([_coerce(f"{where}[{i}]", NUMBER, x) for x in v])
        return out
    raise AssertionError(kind)


def _block(doc: dict, name: str, schema: dict, defaults: dict) -> dict:
    raw = doc.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"block {name!r} must be an object")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in raw.items():
        out[key] = _coerce(f"{name}.{key}", schema[key], value)
    return out


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved configuration for one subcommand."""

    command: str
    market: MarketParams
    cir: CirParams
    settings: SolverSettings
    experiment: dict
    seed: int | None = None

    def as_dict(self) -> dict:
        m = self.market
        out = {
            "command": self.command,
            "market": {"excess_return": m.excess_return, "volatility": m.volatility,
                       "risk_free_rate": m.risk_free_rate, "correlation": m.correlation,
                       "risk_aversion": m.risk_aversion},
            "cir": {"alpha": self.cir.alpha, "lambda_bar": self.cir.lambda_bar,
                    "phi": self.cir.phi},
            "grid": {"N": self.settings.N, "max_dt": self.settings.max_dt,
                     "y_min": self.settings.y_min, "y_max": self.settings.y_max,
                     "bottom_boundary": self.settings.bottom_boundary,
                     "upwind_interior": self.settings.upwind_interior},
            "experiment": self.experiment,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out


def _market_from_block(block: dict, command: str) -> MarketParams:
    if "drift" in block and "excess_return" in block:
        raise ConfigError("market: give either 'drift' (raw) or 'excess_return', not both")
    defaults = REFERENCE_MARKET
    if command == "compare":
        # the classical limit only holds for a stock without excess return
        defaults = replace(defaults, excess_return=0.0)
    values = {
        "volatility": block.get("volatility", defaults.volatility),
        "risk_free_rate": block.get("risk_free_rate", defaults.risk_free_rate),
        "correlation": block.get("correlation", defaults.correlation),
        "risk_aversion": block.get("risk_aversion", defaults.risk_aversion),
    }
    if "drift" in block:
        return MarketParams.from_raw_drift(block["drift"], **values)
    return MarketParams(excess_return=block.get("excess_return", defaults.excess_return),
                        **values)


def resolve_config(doc: dict, command: str, seed: int | None = None) -> RunConfig:
    """Apply defaults and type checks to a parsed config document."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    unknown = sorted(set(doc) - {"market", "cir", "grid", "experiment"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    market = _market_from_block(_block(doc, "market", MARKET_SCHEMA, {}), command)
    cir_block = _block(doc, "cir", CIR_SCHEMA, {"alpha": REFERENCE_CIR.alpha,
                                               "lambda_bar": REFERENCE_CIR.lambda_bar,
                                               "phi": REFERENCE_CIR.phi})
    defaults = SolverSettings()
    grid = _block(doc, "grid", GRID_SCHEMA, {
        "N": defaults.N, "max_dt": defaults.max_dt, "y_min": defaults.y_min,
        "y_max": defaults.y_max, "bottom_boundary": defaults.bottom_boundary,
        "upwind_interior": defaults.upwind_interior})
    if not grid["max_dt"] > 0.0:
        raise ConfigError("grid.max_dt must be > 0")
    exp_defaults, exp_schema = EXPERIMENTS[command]
    experiment = _block(doc, "experiment", exp_schema, exp_defaults)
    if "seed" in exp_schema:
        if seed is not None:
            experiment["seed"] = seed
        if not 0 <= experiment["seed"] < U64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        seed = experiment["seed"]
    else:
        seed = None
    return RunConfig(command, market, CirParams(**cir_block), SolverSettings(**grid),
                     experiment, seed)


def load_config(path, command: str, seed: int | None = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8") if path is not None else "{}"
    return resolve_config(parse_config(text), command, seed)


# ---------------------------------------------------------------------------
# Formatting and hashing
# ---------------------------------------------------------------------------

def fmt(x: float) -> str:
    """Locale-independent 12-significant-digit rendering."""
    return f"{x:.12g}"


def git_blob_sha1(data: bytes) -> str:
    """Hash of ``data`` as ``git hash-object`` would compute it."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def derive_seed(base: int, index: int) -> int:
    """Independent 64-bit seed for job ``index`` of a run seeded with ``base``."""
    state = np.random.SeedSequence([base, index]).generate_state(1, np.uint64)
    return int(state[0])


def _cell(value) -> str:
    if isinstance(value, bool) or not _is_number(value):
        return str(value)
    return str(value) if isinstance(value, int) else fmt(value)


def _csv(header, rows) -> bytes:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    return ("\n".join(lines) + "\n").encode("ascii")


def _key(prefix: str, **parts) -> str:
    bits = []
    for name, value in parts.items():
        if name == "rho":
            bits.append(f"rho={value:.2f}")
        elif isinstance(value, str):
            bits.append(f"{name}={value}")
        else:
            bits.append(f"{name}={value:g}")
    return "_".join([prefix, *bits]) + ".csv"


@dataclass
class RunResult:
    """Collected outputs (in input order) and check outcomes of one run."""

    files: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def add_file(self, name: str, data: bytes) -> None:
        self.files.append((name, data))

    def check(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})

    def fail(self, name: str, error: Exception) -> None:
        self.failures.append({"combination": name, "error": str(error)})

    @property
    def ok(self) -> bool:
        return not self.failures and all(c["passed"] for c in self.checks)


def _agent(name: str) -> AgentKind:
    try:
        return AgentKind(name)
    except ValueError:
        raise ConfigError(f"unknown agent {name!r}; use merton, buyer or seller") from None


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _check_maturities(maturities) -> None:
    _require(all(T > 0 for T in maturities), "maturities must be positive")
    _require(all(b > a for a, b in zip(maturities, maturities[1:])),
             "maturities must be strictly increasing")


def _prevalidate(cfg: RunConfig, markets, maturities, lambdas=()) -> None:
    """Run params.validate on every (market, maturity) pair before any compute."""
    for market in markets:
        for T in maturities:
            validate(market, cfg.cir, cfg.settings.grid(T))
        if market.risk_aversion < GAMMA_FLOOR:
            raise ParameterError(
                f"risk_aversion {market.risk_aversion:g} is below {GAMMA_FLOOR:g}")
    for lam in lambdas:
        _require(cfg.settings.y_min <= lam <= cfg.settings.y_max,
                 f"lambda0 {lam:g} lies outside [y_min, y_max]")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

CURVE_HEADER = ("T", "bid_price", "ask_price", "classical_price",
                "bid_spread", "ask_spread", "classical_spread")


def _curve_rows(curve: pricing.SpreadCurve):
    return [[getattr(rec, c) for c in CURVE_HEADER] for rec in curve.records]


def run_curve(cfg: RunConfig, workers: int = 1) -> RunResult:
    exp = cfg.experiment
    lambdas, maturities = exp["lambda0"], exp["maturities"]
    _check_maturities(maturities)
    markets = [replace(cfg.market, risk_aversion=g, correlation=rho)
               for g in exp["gamma"] for rho in exp["rho"]]
    _prevalidate(cfg, markets, maturities, lambdas)
    result = RunResult()
    for market in markets:
        g, rho = market.risk_aversion, market.correlation
        names = [_key("curve", l0=lam, g=g, rho=rho) for lam in lambdas]
        try:
            curves = pricing.spread_curves(maturities, lambdas, market, cfg.cir,
                                           cfg.settings, workers)
        except pricing.PricingError as exc:
            for name in names:
                result.fail(name, exc)
            continue
        for name, curve in zip(names, curves):
            result.add_file(name, _csv(CURVE_HEADER, _curve_rows(curve)))
            problems = curve.violations()
            if curve.ordering_gap > 1e-12:
                problems.append(f"surface ordering breached by {curve.ordering_gap:.3e}")
            result.check(f"{name}: price invariants", not problems, "; ".join(problems))
    return result


COMPARE_HEADER = ("T", "bid_spread", "ask_spread", "classical_spread",
                  "bid_gap", "ask_gap", "bid_rel_gap", "ask_rel_gap")


def run_compare(cfg: RunConfig, workers: int = 1) -> RunResult:
    exp = cfg.experiment
    if cfg.market.excess_return != 0.0:
        raise ParameterError(
            "compare needs a zero excess return: only then does the small risk-aversion "
            "limit of the indifference price reduce to the classical price")
    maturities, tol = exp["maturities"], exp["tolerance"]
    _check_maturities(maturities)
    markets = [replace(cfg.market, risk_aversion=g) for g in exp["gamma"]]
    _prevalidate(cfg, markets, maturities, exp["lambda0"])
    rho = cfg.market.correlation
    result = RunResult()
    for lam in exp["lambda0"]:
        worst = []
        for market in markets:
            g = market.risk_aversion
            name = _key("compare", l0=lam, g=g, rho=rho)
            try:
                rows = pricing.classical_comparison(lam, maturities, market, cfg.cir,
                                                    cfg.settings, workers)
            except pricing.PricingError as exc:
                result.fail(name, exc)
                continue
            result.add_file(name, _csv(COMPARE_HEADER, [
                [r.T, r.bid_spread, r.ask_spread, r.classical_spread,
                 r.bid_gap, r.ask_gap, r.bid_rel_gap, r.ask_rel_gap] for r in rows]))
            rel = max(max(r.bid_rel_gap, r.ask_rel_gap) for r in rows)
            result.check(f"{name}: relative gap <= {fmt(tol)}", rel <= tol,
                         f"max relative gap {fmt(rel)}")
            worst.append((g, max(max(abs(r.bid_gap), abs(r.ask_gap)) for r in rows)))
        if len(worst) > 1:
            # larger gamma must leave the larger gap to the classical spread
            ordered = sorted(worst)
            shrinking = all(a[1] <= b[1] for a, b in zip(ordered, ordered[1:]))
            detail = ", ".join(f"g={g:g}: {fmt(gap)}" for g, gap in ordered)
            result.check(f"compare l0={lam:g}: gap shrinks with gamma", shrinking, detail)
    return result


def run_surface(cfg: RunConfig, workers: int = 1) -> RunResult:
    exp = cfg.experiment
    agents = [_agent(a) for a in exp["agents"]]
    _require(len(set(agents)) == len(agents), "surface agents must be distinct")
    config = validate(cfg.market, cfg.cir, cfg.settings.grid(exp["T"]))
    result = RunResult()
    surfaces = {}

    def job(agent):
        try:
            return pde.march(config, agent)
        except pde.SolverError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(job, agents))
    for agent, out in zip(agents, outcomes):
        name = _key("surface", agent=agent.value, T=exp["T"])
        if isinstance(out, Exception):
            result.fail(name, out)
            continue
        surfaces[agent] = out
        tau = np.repeat(out.tau, out.y.size)
        y = np.tile(out.y, out.tau.size)
        result.add_file(name, _csv(("tau", "y", "value"),
                                   zip(tau.tolist(), y.tolist(), out.values.ravel().tolist())))
    if len(surfaces) == 3:
        gap = pricing.ordering_gap(surfaces)
        result.check("surface ordering w^s <= u <= w^b", gap <= 1e-12,
                     f"largest breach {fmt(gap)}")
    return result


CONVERGENCE_HEADER = ("study", "step", "error", "order")


def _convergence(cfg: RunConfig, result: RunResult) -> None:
    exp = cfg.experiment
    agent = _agent(exp["agent"])
    window = exp["dy_window"]
    _require(len(window) == 2 and window[0] < window[1], "dy_window must be [low, high]")
    base = validate(cfg.market, cfg.cir, GridSpec(T=exp["T"], N=exp["dt_fixed_N"],
                                                  M=exp["dy_fixed_M"],
                                                  y_max=cfg.settings.y_max))
    dt_rep = oracle.convergence_study("bernoulli_dt", exp["dt_levels"], base, agent,
                                      exp["lambda_const"], fixed=exp["dt_fixed_N"])
    dy_rep = oracle.convergence_study("cir_dy", exp["dy_levels"], base, agent,
                                      fixed=exp["dy_fixed_M"], window=tuple(window))
    rows = []
    for label, rep in (("dt", dt_rep), ("dy", dy_rep)):
        for k, (h, e) in enumerate(zip(rep.steps, rep.errors)):
            rows.append([label, h, e, rep.orders[k - 1] if k else ""])
    result.add_file("convergence.csv", _csv(CONVERGENCE_HEADER, rows))
    result.check(f"dt order >= {fmt(exp['dt_order_min'])}",
                 dt_rep.order >= exp["dt_order_min"], f"order {fmt(dt_rep.order)}")
    result.check(f"dy order >= {fmt(exp['dy_order_min'])}",
                 dy_rep.order >= exp["dy_order_min"], f"order {fmt(dy_rep.order)}")


def run_convergence(cfg: RunConfig, workers: int = 1) -> RunResult:
    result = RunResult()
    _convergence(cfg, result)
    return result


MC_HEADER = ("quantity", "estimate", "std_error", "n_paths", "seed")


def _bernoulli_battery(cfg: RunConfig, result: RunResult) -> None:
    exp = cfg.experiment
    rows = []
    for g in exp["bernoulli_gammas"]:
        market = replace(cfg.market, risk_aversion=g)
        config = validate(market, cfg.cir, GridSpec(T=exp["bernoulli_T"], N=exp["bernoulli_N"],
                                                    M=exp["bernoulli_M"]))
        for lam in exp["bernoulli_lambdas"]:
            for agent in AgentKind:
                surf = pde.march(config, agent, intensity_override=lam)
                exact = oracle.bernoulli_closed_form(lam, surf.tau, config, agent)
                err = float(np.max(np.abs(surf.values - exact.u[:, None])))
                res = float(np.max(oracle.bernoulli_residual(exact, config)))
                rows.append([agent.value, lam, g, err, res])
    result.add_file("oracle_bernoulli.csv", _csv(
        ("agent", "lambda", "gamma", "max_abs_error", "max_residual"), rows))
    worst_err = max(r[3] for r in rows)
    worst_res = max(r[4] for r in rows)
    result.check(f"bernoulli march error <= {fmt(exp['bernoulli_tol'])}",
                 worst_err <= exp["bernoulli_tol"], f"max error {fmt(worst_err)}")
    result.check("bernoulli residual <= 1e-12", worst_res <= 1e-12,
                 f"max residual {fmt(worst_res)}")


def _mc_rows_and_checks(result, label, jobs, n_sigma):
    rows = []
    for quantity, est, target in jobs:
        rows.append([quantity, est.mean, est.std_error, est.n_paths, est.seed])
        z = (est.mean - target) / est.std_error if est.std_error > 0 else math.inf
        result.check(f"{label} {quantity}: within {fmt(n_sigma)} sigma",
                     est.within(target, n_sigma),
                     f"target {fmt(target)}, z {z:+.3f}")
    return rows


def _survival_battery(cfg: RunConfig, result: RunResult, workers: int) -> None:
    exp = cfg.experiment
    points = exp["survival_points"]
    for lam, T in points:
        _require(lam >= 0 and T > 0, "survival points need lambda0 >= 0 and T > 0")
    seeds = [derive_seed(cfg.seed, k) for k in range(len(points))]

    def job(k):
        lam, T = points[k]
        return oracle.mc_survival(cfg.cir, lam, T, exp["survival_paths"], seed=seeds[k])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        estimates = list(pool.map(job, range(len(points))))
    jobs = [(f"survival_l0={lam:g}_T={T:g}", est, cir_model.survival_prob(lam, T, cfg.cir))
            for (lam, T), est in zip(points, estimates)]
    result.add_file("oracle_survival.csv",
                    _csv(MC_HEADER, _mc_rows_and_checks(result, "survival", jobs,
                                                        exp["n_sigma"])))


def _feynman_kac_battery(cfg: RunConfig, result: RunResult, workers: int) -> None:
    exp = cfg.experiment
    points, agents = exp["fk_points"], [_agent(a) for a in exp["fk_agents"]]
    _require(len(points) == len(agents), "fk_points and fk_agents must have equal length")
    _require(exp["fk_mc_step"] > 0 and exp["fk_max_dt"] > 0, "fk step sizes must be > 0")
    market = replace(cfg.market, correlation=0.0, risk_aversion=exp["fk_gamma"])
    offset = len(exp["survival_points"])
    seeds = [derive_seed(cfg.seed, offset + k) for k in range(len(points))]
    configs = [validate(market, cfg.cir, GridSpec.for_maturity(
        T, N=exp["fk_N"], max_dt=exp["fk_max_dt"], y_max=cfg.settings.y_max))
        for _, T in points]

    def job(k):
        y0 = points[k][0]
        steps = oracle.default_steps(points[k][1], exp["fk_mc_step"])
        est = oracle.mc_feynman_kac_linear(configs[k], y0, agents[k], exp["fk_paths"],
                                           seed=seeds[k], n_steps=steps)
        return est, pde.march(configs[k], agents[k]).at(y0)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(job, range(len(points))))
    jobs = [(f"fk_agent={agent.value}_y0={y0:g}_T={T:g}", est, target)
            for (y0, T), agent, (est, target) in zip(points, agents, outcomes)]
    result.add_file("oracle_feynman_kac.csv",
                    _csv(MC_HEADER, _mc_rows_and_checks(result, "feynman-kac", jobs,
                                                        exp["n_sigma"])))


def run_oracle(cfg: RunConfig, workers: int = 1) -> RunResult:
    batteries = cfg.experiment["batteries"]
    unknown = sorted(set(batteries) - set(BATTERIES))
    _require(not unknown, f"unknown oracle batteries: {', '.join(unknown)}")
    result = RunResult()
    for name in BATTERIES:
        if name not in batteries:
            continue
        try:
            if name == "bernoulli":
                _bernoulli_battery(cfg, result)
            elif name == "survival":
                _survival_battery(cfg, result, workers)
            elif name == "feynman_kac":
                _feynman_kac_battery(cfg, result, workers)
            else:
                _convergence(cfg, result)
        except pde.SolverError as exc:
            result.fail(name, exc)
    return result


RUNNERS = {
    "curve": run_curve, "compare": run_compare, "oracle": run_oracle,
    "surface": run_surface, "convergence": run_convergence,
}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def build_manifest(cfg: RunConfig, result: RunResult) -> bytes:
    manifest = {
        "config": cfg.as_dict(),
        "outputs": [{"file": name, "git_sha1": git_blob_sha1(data), "bytes": len(data)}
                    for name, data in result.files],
        "checks": result.checks,
        "failures": result.failures,
        "status": "ok" if result.ok else "failed",
    }
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("ascii")


def write_outputs(out_dir, cfg: RunConfig, result: RunResult) -> str:
    """Write every CSV and the manifest; return the manifest's SHA-256."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, data in result.files:
        (out / name).write_bytes(data)
    manifest = build_manifest(cfg, result)
    (out / "manifest.json").write_bytes(manifest)
    return hashlib.sha256(manifest).hexdigest()


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="indiffbond",
        description="Indifference bid/ask pricing of defaultable bonds under CIR intensity.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "curve": "bid/ask/classical spread curves per (lambda0, gamma, rho)",
        "compare": "indifference vs classical spreads at small risk aversion",
        "oracle": "closed-form, Monte Carlo and convergence cross-checks",
        "surface": "dump marched value surfaces",
        "convergence": "empirical time and space orders of the march",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=_positive_int, default=1,
                       help="concurrent pricing/oracle jobs")
        p.add_argument("--seed", type=_u64, default=None,
                       help="base seed for Monte Carlo jobs (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, args.seed)
        result = RUNNERS[args.command](cfg, args.workers)
    except (ConfigError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    digest = write_outputs(args.out, cfg, result)
    for check in result.checks:
        status = "PASS" if check["passed"] else "FAIL"
        detail = f" ({check['detail']})" if check["detail"] else ""
        print(f"{status} {check['name']}{detail}")
    for failure in result.failures:
        print(f"FAILED {failure['combination']}: {failure['error']}")
    print(f"manifest sha256 {digest}")
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
