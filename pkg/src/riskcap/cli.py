"""Command-line front end: ``riskcap solve | simulate | check``.

Exit codes: 0 success, 1 failed check, 2 configuration error,
3 infeasible parameters, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, InfeasibilityError, ModelError, NumericalError
from .functionals import DeterministicControl, read_control_csv, write_control_csv
from .market import MarketModel
from .riskmeasures import RiskSpec, es_t, quantile_Q, var_t
from .special import F_alpha, iota, mills_ratio, normal_quantile
from . import es_solver, var_solver
from .weights import family

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    market: MarketModel
    measure: str = "var"
    alpha: float = 0.01
    zeta: float = 0.1
    x: float = 1.0
    out: Path = Path("out")
    grid: int = 512
    paths: int = 100_000
    seed: int = 0

    def risk_spec(self) -> RiskSpec | None:
        if self.measure == "none":
            return None
        return RiskSpec(self.alpha, self.zeta, self.measure)

    def output_grid(self) -> np.ndarray:
        g = np.union1d(np.linspace(0.0, self.market.T, self.grid + 1), self.market.breakpoints)
        g[-1] = self.market.T
        return g


_RUN_KEYS = ("measure", "alpha", "zeta", "x", "out", "grid", "paths", "seed")


def load_config(args: argparse.Namespace) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict) or "market" not in data:
        raise ConfigError(f"{path}: expected an object with a 'market' entry")
    market = MarketModel.from_dict(data["market"])
    run = dict(data.get("run", {}))
    unknown = set(run) - set(_RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown run settings: {sorted(unknown)}")
    for key in _RUN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    try:
        cfg = RunConfig(
            market=market,
            measure=str(run.get("measure", "var")).lower(),
            alpha=float(run.get("alpha", 0.01)),
            zeta=float(run.get("zeta", 0.1)),
            x=float(run.get("x", 1.0)),
            out=Path(run.get("out", "out")),
            grid=int(run.get("grid", 512)),
            paths=int(run.get("paths", 100_000)),
            seed=int(run.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad run setting: {exc}") from exc
    if cfg.measure not in ("var", "es", "none"):
        raise ConfigError(f"measure must be var, es or none, got {cfg.measure!r}")
    if not (cfg.x > 0 and math.isfinite(cfg.x)):
        raise ConfigError("x must be positive")
    if cfg.grid < 1 or cfg.paths < 1:
        raise ConfigError("grid and paths must be positive")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.measure != "none":
        RiskSpec(cfg.alpha, cfg.zeta, cfg.measure)
    return cfg


def _solve(cfg: RunConfig):
    m = cfg.market
    if cfg.measure == "none":
        ctrl, J = var_solver.solve_unconstrained(cfg.x, m)
        A = var_solver.A_of_x(cfg.x, m)
        sol = _BaseSolution(control=ctrl, J=J, A=A, x=cfg.x, kappa0=m.T / (m.T + 1), theta_norm=m.theta_norm)
        return sol
    solver = var_solver.solve_var if cfg.measure == "var" else es_solver.solve_es
    return solver(cfg.x, m, cfg.risk_spec())


@dataclass(frozen=True)
class _BaseSolution:
    control: DeterministicControl
    J: float
    A: float
    x: float
    kappa0: float
    theta_norm: float
    regime: str = "unconstrained-base"

    def weight(self, t):
        return np.ones(np.shape(t))

    def summary(self) -> dict:
        return {"measure": "none", "regime": self.regime, "gamma": self.kappa0, "lambda": 0.0,
                "rho": self.theta_norm, "J": self.J, "A": self.A, "Gamma": self.J - self.A, "x": self.x,
                "conditions": []}


def cmd_solve(cfg: RunConfig) -> int:
    sol = _solve(cfg)
    m = cfg.market
    cfg.out.mkdir(parents=True, exist_ok=True)
    grid = cfg.output_grid()
    extra = {"weight": sol.weight(grid)}
    spec = cfg.risk_spec()
    if spec is not None:
        bench = cfg.x * np.exp(m.discount_R(grid))
        Q = quantile_Q(cfg.x, sol.control, m, spec.alpha, grid)
        risk = var_t(cfg.x, sol.control, m, spec.alpha, grid) if spec.kind == "var" \
            else es_t(cfg.x, sol.control, m, spec.alpha, grid)
        extra.update({"Q_t": Q, "risk_t": risk, "risk_ratio": risk / (spec.zeta * bench)})
    write_control_csv(cfg.out / "solution.csv", sol.control, grid, extra)
    summary = sol.summary()
    summary["market"] = m.to_dict()
    summary["output_grid"] = cfg.grid
    (cfg.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{summary['regime']}: J={sol.J!r} gamma={summary['gamma']!r} -> {cfg.out}")
    return EXIT_OK


@dataclass(frozen=True)
class _LoadedSolution:
    control: DeterministicControl
    J: float


def cmd_simulate(cfg: RunConfig, from_dir: str | None = None) -> int:
    from .montecarlo import verify_solution

    spec = cfg.risk_spec()
    if spec is not None and cfg.paths * spec.alpha < 1:
        raise ConfigError(f"paths * alpha = {cfg.paths * spec.alpha:g} < 1: too few paths for alpha={spec.alpha}")
    if from_dir:
        d = Path(from_dir)
        try:
            summary = json.loads((d / "summary.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {d / 'summary.json'}: {exc}") from exc
        if not (d / "solution.csv").is_file():
            raise ConfigError(f"missing {d / 'solution.csv'}")
        sol = _LoadedSolution(read_control_csv(d / "solution.csv", cfg.market), float(summary["J"]))
    else:
        sol = _solve(cfg)
    report = verify_solution(sol, cfg.x, cfg.market, spec, cfg.paths, cfg.seed)
    report["regime"] = getattr(sol, "regime", None)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    failed = [ch for ch in report["checks"] if not ch["pass"]]
    print(f"{len(report['checks']) - len(failed)}/{len(report['checks'])} checks passed -> {cfg.out / 'verify.json'}")
    return EXIT_OK if not failed else EXIT_CHECK


# -- invariant suite ---------------------------------------------------------------------------


def run_checks(m: MarketModel, alpha: float, zeta: float, perturb_rho: float = 0.0) -> list[dict]:
    """Invariant checks for one market; each entry has ``name`` and ``status``."""
    out = []

    def record(name, ok, detail=None):
        out.append({"name": name, "status": "pass" if ok else "fail", "detail": detail})

    def skip(name, why):
        out.append({"name": name, "status": "skipped", "detail": why})

    ys = np.logspace(-2, math.log10(50), 400)
    w = np.asarray(mills_ratio(ys))
    record("mills_ratio_bounds", bool(np.all((1 / ys - 1 / ys**3 < w) & (w < 1 / ys))))
    q = -normal_quantile(alpha)
    record("iota_above_quantile", bool(np.all(np.asarray(iota(np.linspace(0, 20, 401), q)) >= q)))
    record("F_alpha_at_quantile", F_alpha(q, alpha) == 1.0)

    names = ("root_residual", "inverse_round_trip", "Phi_decreasing", "weight_decreasing")
    if m.theta_norm == 0.0:
        for kind in ("var", "es"):
            for n in names:
                skip(f"{kind}:{n}", "theta is identically zero")
        return out
    for kind in ("var", "es"):
        try:
            fam = family(m, alpha, kind)
            lmax = fam.lambda_max
        except InfeasibilityError as exc:
            for n in names:
                skip(f"{kind}:{n}", str(exc))
            continue
        lams = np.linspace(0, lmax, 51)[:-1]
        res = [abs(fam.G(fam.rho(l) * (1 + perturb_rho), l) - 1) for l in lams]
        record(f"{kind}:root_residual", max(res) < 1e-10, {"max": max(res)})
        amax = min(-math.log1p(-zeta), fam.Phi0)
        a_vals = np.linspace(amax / 50, amax, 50)
        rt = [abs(fam.Phi(fam.phi_of_budget(a)) - a) for a in a_vals]
        record(f"{kind}:inverse_round_trip", max(rt) < 1e-9, {"max": max(rt)})
        conds = (var_solver.var_conditions if kind == "var" else es_solver.es_conditions)(m, alpha, zeta)
        if not conds["quantile_dominates_theta"].holds:
            skip(f"{kind}:Phi_decreasing", "monotonicity condition on |q_alpha| does not hold")
            skip(f"{kind}:weight_decreasing", "monotonicity condition on |q_alpha| does not hold")
            continue
        h = 1e-5 * lmax
        pts = np.linspace(h, lmax - h, 20)
        phis = [fam.Phi(l + h) - fam.Phi(l) for l in pts]
        record(f"{kind}:Phi_decreasing", max(phis) < 0, {"max_step": max(phis)})
        ts = np.linspace(0, m.T, 20)
        steps = [np.max(fam.weight(ts, l + h) - fam.weight(ts, l)) for l in pts]
        record(f"{kind}:weight_decreasing", max(steps) < 0, {"max_step": float(max(steps))})
    return out


def cmd_check(cfg: RunConfig, perturb_rho: float = 0.0) -> int:
    results = run_checks(cfg.market, cfg.alpha, cfg.zeta, perturb_rho)
    for r in results:
        print(json.dumps(r))
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "check.json").write_text(json.dumps(results, indent=2) + "\n")
    return EXIT_OK if all(r["status"] != "fail" for r in results) else EXIT_CHECK


# -- entry point --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON file with 'market' and optional 'run' objects")
    common.add_argument("--measure", choices=("var", "es", "none"))
    common.add_argument("--alpha", type=float)
    common.add_argument("--zeta", type=float)
    common.add_argument("--x", type=float, help="initial wealth")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--paths", type=int, help="Monte Carlo paths")
    common.add_argument("--seed", type=int, help="unsigned 64-bit master seed")
    common.add_argument("--grid", type=int, help="uniform output cells (breakpoints are added)")

    p = argparse.ArgumentParser(prog="riskcap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve and write solution.csv / summary.json")
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo verification -> verify.json")
    sim.add_argument("--from-dir", metavar="DIR", help="verify a previous solve output instead of re-solving")
    chk = sub.add_parser("check", parents=[common], help="run the invariant suite")
    chk.add_argument("--perturb-rho", type=float, default=0.0, help=argparse.SUPPRESS)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.from_dir)
        return cmd_check(cfg, args.perturb_rho)
    except (ConfigError, ModelError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibilityError as exc:
        print(f"infeasible: {exc} [condition: {exc.condition}]", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc} (last estimates: {exc.estimates})", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
