"""Exact-law Monte Carlo for wealth under deterministic controls.

``ln X_t`` is a Gaussian process with deterministic mean and independent
increments, so paths are sampled exactly at the requested times; there is
no time-stepping error.

Randomness comes from a counter-based Philox stream keyed by the master
seed. The variate for path ``p`` and time index ``k`` is word
``p * n_times + k`` of that stream, so any chunking of the paths over
worker threads reproduces the same ensemble bit for bit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .functionals import DeterministicControl, wealth_log_mean_and_var
from .market import MarketModel
from .riskmeasures import RiskSpec, es_t, quantile_Q, tail_mean_m, var_t
from .special import norm_ppf, normal_quantile

_CHUNK_PATHS = 1 << 15  # multiple of 4: Philox emits 4 words per counter step
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit value, else ``RISKCAP_THREADS`` (0 = all cores)."""
    if workers is None:
        raw = os.environ.get("RISKCAP_THREADS", "0")
        try:
            workers = int(raw)
        except ValueError:
            raise DomainError(f"RISKCAP_THREADS must be an integer, got {raw!r}") from None
    if workers < 0:
        raise DomainError("worker count must be >= 0")
    return workers or (os.cpu_count() or 1)


def standard_normals(master_seed: int, first_word: int, count: int) -> np.ndarray:
    """Normals for stream words ``first_word .. first_word + count - 1``."""
    if first_word % 4:
        raise DomainError("stream offsets must be multiples of 4")
    bg = np.random.Philox(key=int(master_seed) & ((1 << 128) - 1))
    bg.advance(first_word // 4)
    raw = bg.random_raw(count)
    # 53-bit midpoint uniforms lie strictly inside (0, 1).
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return np.asarray(norm_ppf(u))


def _gaussian_paths(mean: np.ndarray, var: np.ndarray, n_paths: int, master_seed: int,
                    workers: int | None) -> np.ndarray:
    """Paths of a Gaussian process with given mean and independent increments."""
    n_t = mean.size
    inc_sd = np.sqrt(np.maximum(np.diff(np.concatenate(([0.0], var))), 0.0))
    out = np.empty((n_paths, n_t))
    starts = list(range(0, n_paths, _CHUNK_PATHS))

    def fill(p0):
        p1 = min(p0 + _CHUNK_PATHS, n_paths)
        z = standard_normals(master_seed, p0 * n_t, (p1 - p0) * n_t).reshape(p1 - p0, n_t)
        np.cumsum(z * inc_sd, axis=1, out=out[p0:p1])
        out[p0:p1] += mean

    nw = min(resolve_workers(workers), len(starts))
    if nw <= 1:
        for p0 in starts:
            fill(p0)
    else:
        with ThreadPoolExecutor(nw) as ex:
            list(ex.map(fill, starts))
    return out


@dataclass(frozen=True, eq=False)
class WealthSampleEnsemble:
    times: np.ndarray
    log_samples: np.ndarray  # (n_paths, n_times)
    master_seed: int
    n_paths: int
    x: float
    benchmark: np.ndarray  # x e^{R_t}
    log_mean: np.ndarray
    log_var: np.ndarray

    def column(self, t: float) -> np.ndarray:
        hit = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12 * max(1.0, abs(t))))
        if hit.size == 0:
            raise DomainError(f"time {t} was not sampled")
        return self.log_samples[:, hit[0]]

    def benchmark_at(self, t: float) -> float:
        hit = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12 * max(1.0, abs(t))))
        if hit.size == 0:
            raise DomainError(f"time {t} was not sampled")
        return float(self.benchmark[hit[0]])


def sample_ensemble(x: float, c: DeterministicControl, m: MarketModel, times, n_paths: int,
                    master_seed: int, workers: int | None = None) -> WealthSampleEnsemble:
    """Sample ``ln X`` jointly at ``times`` from its exact Gaussian law."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0):
        raise DomainError("times must be a sorted non-empty 1-d sequence")
    if times[0] < 0 or times[-1] > m.T * (1 + 1e-14):
        raise DomainError(f"times must lie in [0, {m.T}]")
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    mean, var = wealth_log_mean_and_var(x, c, m, times)
    samples = _gaussian_paths(mean, var, int(n_paths), int(master_seed), workers)
    return WealthSampleEnsemble(times=times, log_samples=samples, master_seed=int(master_seed),
                                n_paths=int(n_paths), x=float(x), benchmark=x * np.exp(m.discount_R(times)),
                                log_mean=mean, log_var=var)


def _rank(alpha: float, n: int) -> int:
    if alpha * n < 1 - 1e-9:
        raise DomainError(f"n * alpha = {n * alpha:g} < 1: the lower tail is empty")
    return max(1, math.ceil(alpha * n - 1e-9 * alpha * n))


def empirical_quantile(e: WealthSampleEnsemble, alpha: float, t: float) -> float:
    """Lower empirical alpha-quantile of ``X_t``: the ``ceil(alpha n)``-th smallest sample."""
    col = e.column(t)
    k = _rank(alpha, col.size)
    return float(math.exp(np.partition(col, k - 1)[k - 1]))


def empirical_tail_mean(e: WealthSampleEnsemble, alpha: float, t: float) -> float:
    """Mean of the samples at or below the empirical quantile."""
    col = e.column(t)
    k = _rank(alpha, col.size)
    part = np.partition(col, k - 1)
    q = part[k - 1]
    tail = part[part <= q]
    return float(np.mean(np.exp(tail)))


def empirical_var(e: WealthSampleEnsemble, alpha: float, t: float) -> float:
    return e.benchmark_at(t) - empirical_quantile(e, alpha, t)


def empirical_es(e: WealthSampleEnsemble, alpha: float, t: float) -> float:
    """``x e^{R_t}`` minus the empirical lower-tail mean."""
    return e.benchmark_at(t) - empirical_tail_mean(e, alpha, t)


def write_samples_csv(path, e: WealthSampleEnsemble) -> None:
    with open(path, "w") as fh:
        fh.write("path,t,lnX\n")
        for p in range(e.n_paths):
            for k, t in enumerate(e.times):
                fh.write(f"{p},{float(t)!r},{float(e.log_samples[p, k])!r}\n")


# -- verification ------------------------------------------------------------------------


def _quantile_se(Q: float, sd: float, alpha: float, n: int) -> float:
    """Asymptotic standard error of the lognormal sample quantile."""
    if sd == 0.0:
        return 0.0
    q = normal_quantile(alpha)
    dens = math.exp(-0.5 * q * q) * _INV_SQRT_2PI / (Q * sd)
    return math.sqrt(alpha * (1 - alpha) / n) / dens


def _tail_mean_se(col: np.ndarray, alpha: float) -> float:
    """Asymptotic standard error of the mean of the lowest ``alpha n`` samples."""
    n = col.size
    k = _rank(alpha, n)
    part = np.exp(np.partition(col, k - 1)[:k])
    q = part.max()
    mt = part.mean()
    v = part.var() + (1 - alpha) * (mt - q) ** 2
    return math.sqrt(v / (n * alpha))


def _check(name, t, closed, empirical, se, tol_se=5.0, abs_floor=1e-12):
    diff = empirical - closed
    ok = abs(diff) <= tol_se * se + abs_floor * max(1.0, abs(closed))
    return {"name": name, "t": t, "closed_form": closed, "empirical": empirical, "std_error": se,
            "z": (diff / se) if se > 0 else 0.0, "pass": bool(ok)}


def mc_cost(x: float, c: DeterministicControl, m: MarketModel, n_paths: int, seed: int,
            n_steps: int = 128, workers: int | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of ``E[int_0^T ln(v_t X_t) dt + ln X_T]`` and its standard error.

    The time integral is the trapezoid rule on ``n_steps`` uniform steps;
    paths are generated in index-ordered chunks to bound memory.
    """
    grid = np.linspace(0.0, m.T, n_steps + 1)
    mean, var = wealth_log_mean_and_var(x, c, m, grid)
    ln_v = np.log(c.v_at(grid))
    trap = np.full(grid.size, m.T / n_steps)
    trap[0] = trap[-1] = 0.5 * m.T / n_steps
    const = float(trap @ ln_v)
    tw = trap.copy()
    tw[-1] += 1.0  # terminal utility ln X_T
    total = 0.0
    total_sq = 0.0
    block = 1 << 14
    for b0 in range(0, n_paths, block):
        nb = min(block, n_paths - b0)
        # Each block draws from its own seed-derived key so memory stays bounded
        # while the estimate remains a deterministic function of (seed, n_paths).
        lx = _gaussian_paths(mean, var, nb, _subseed(seed, b0), workers=1)
        vals = lx @ tw + const
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
    est = total / n_paths
    var_est = max(total_sq / n_paths - est * est, 0.0) * n_paths / max(n_paths - 1, 1)
    return est, math.sqrt(var_est / n_paths)


def _subseed(seed: int, index: int) -> int:
    return (int(seed) & ((1 << 64) - 1)) | ((int(index) + 1) << 64)


def verify_solution(sol, x: float, m: MarketModel, spec: RiskSpec | None, n_paths: int, seed: int,
                    n_times: int = 8, workers: int | None = None, cost_paths: int | None = None) -> dict:
    """Closed-form versus empirical risk, constraint ratio and optimal value.

    ``sol`` is a solver result (or anything with ``control`` and ``J``).
    Checks run at ``n_times`` equally spaced times in ``(0, T]``; every
    comparison passes when it agrees within 5 standard errors.
    """
    c = sol.control
    times = m.T * np.arange(1, n_times + 1) / n_times
    checks = []
    if spec is not None:
        _rank(spec.alpha, n_paths)
        e = sample_ensemble(x, c, m, times, n_paths, seed, workers)
        Qc = np.atleast_1d(quantile_Q(x, c, m, spec.alpha, times))
        varc = np.atleast_1d(var_t(x, c, m, spec.alpha, times))
        esc = np.atleast_1d(es_t(x, c, m, spec.alpha, times))
        mc = np.atleast_1d(tail_mean_m(x, c, m, spec.alpha, times))
        for k, t in enumerate(times):
            t = float(t)
            col = e.log_samples[:, k]
            sd = math.sqrt(e.log_var[k])
            bench = float(e.benchmark[k])
            Qe = empirical_quantile(e, spec.alpha, t)
            se_q = _quantile_se(float(Qc[k]), sd, spec.alpha, n_paths)
            se_m = _tail_mean_se(col, spec.alpha) if sd > 0 else 0.0
            me = empirical_tail_mean(e, spec.alpha, t)
            checks.append(_check("quantile", t, float(Qc[k]), Qe, se_q))
            checks.append(_check("var", t, float(varc[k]), bench - Qe, se_q))
            checks.append(_check("es", t, float(esc[k]), bench - me, se_m))
            risk_c = float(varc[k] if spec.kind == "var" else esc[k])
            risk_e = bench - (Qe if spec.kind == "var" else me)
            se_r = se_q if spec.kind == "var" else se_m
            cap = spec.zeta * bench
            checks.append({
                "name": "constraint_ratio", "t": t, "closed_form": risk_c / cap, "empirical": risk_e / cap,
                "std_error": se_r / cap,
                "pass": bool(risk_c / cap <= 1 + 1e-9 and risk_e / cap <= 1 + 5 * se_r / cap + 1e-12),
            })
            if spec.kind == "es" and k == n_times - 1:
                checks.append(_check("tail_mean_ratio_T", t, float(mc[k]) / bench, me / bench, se_m / bench))
    J_mc, J_se = mc_cost(x, c, m, cost_paths or n_paths, seed, workers=workers)
    checks.append(_check("J", m.T, float(sol.J), J_mc, J_se))
    return {
        "n_paths": n_paths,
        "seed": seed,
        "times": [float(t) for t in times],
        "checks": checks,
        "all_pass": all(ch["pass"] for ch in checks),
    }
