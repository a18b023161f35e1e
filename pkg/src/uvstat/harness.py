"""Monte Carlo experiments that verify the limit theorems at desk scale.

Five experiment kinds:

* LLN       -- statistic vs. exact per-path limit across a grid of n;
               reports median errors and the fitted log-log rate.
* CLT_jump  -- standardized sqrt(n)(V^n - V)/sqrt(cond. variance) tested
               against N(0,1), plus a two-sample comparison with draws
               from the sampled limit law on independent paths.
* CLT_mixed -- same for the Y-statistic and its mixed limit law.
* RNP       -- two-sample comparison of the discrete jump neighborhoods
               R(n,p) with the extension-space R_k draws.
* GRID      -- the jump-size lattice scan of the grid-test kernel.
* ZTRUNC    -- truncated limit sums Z(m) vs. the full Z(J).

Replication r of an experiment uses seeds derived by hashing
(base_seed, stream, n, r) through numpy's SeedSequence, so streams never
overlap, results do not depend on the parallelism degree, and any plan
re-runs bit-identically from its manifest.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import kolmogorov
from scipy.stats import ks_2samp as _scipy_ks_2samp
from scipy.stats import norm

from uvstat.kernels import KernelSpec, check_admissibility, grid_test_kernel, kernel_to_text
from uvstat.limits import cond_var_jump, cond_var_mixed, jump_limit, mixed_limit
from uvstat.sampler import augment, sample_U_jump, sample_V_mixed, truncated_Z
from uvstat.simulate import ModelConfig, SamplePath, jump_neighborhood, simulate_path
from uvstat.simulate import config_to_dict
from uvstat.stats import v_stat, y_stat

__all__ = [
    "ExperimentPlan",
    "ExperimentReport",
    "HarnessError",
    "derive_seed",
    "ks_1samp_normal",
    "ks_statistic",
    "ks_2samp",
    "run_lln",
    "run_clt",
    "run_rnp_check",
    "run_ztrunc",
    "grid_scan",
    "run_plan",
    "EXPERIMENT_KINDS",
]

EXPERIMENT_KINDS = ("LLN", "CLT_jump", "CLT_mixed", "RNP", "GRID", "ZTRUNC")

_JUMP_REGIMES = ("JumpLLN", "JumpCLT", "GridTest")
_KIND_REGIMES = {
    "CLT_jump": ("JumpCLT", "GridTest"),
    "CLT_mixed": ("MixedCLT",),
    "GRID": ("GridTest",),
    "ZTRUNC": ("JumpCLT", "GridTest"),
}


class HarnessError(ValueError):
    """Invalid experiment plan or refused run."""


def derive_seed(base_seed: int, *indices: int) -> int:
    """Counter-based seed derivation: hash of (base_seed, *indices).

    SeedSequence mixes the entropy tuple through a hash with avalanche
    properties, so distinct index tuples give independent streams by
    construction.
    """
    ss = np.random.SeedSequence((int(base_seed),) + tuple(int(i) for i in indices))
    return int(ss.generate_state(1, np.uint64)[0])


# streams
_S_PATH, _S_PATH2, _S_AUG, _S_FIELD = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov helpers
# ---------------------------------------------------------------------------


def ks_statistic(sample: np.ndarray, cdf) -> float:
    """One-sample KS statistic, straight from the max-deviation definition."""
    x = np.sort(np.asarray(sample, dtype=float))
    m = len(x)
    f = cdf(x)
    lo = np.arange(m) / m
    hi = np.arange(1, m + 1) / m
    return float(max(np.max(f - lo), np.max(hi - f)))


def ks_1samp_normal(sample: np.ndarray) -> tuple:
    """(statistic, asymptotic p-value) against the standard normal."""
    d = ks_statistic(sample, norm.cdf)
    m = len(sample)
    return d, float(kolmogorov(math.sqrt(m) * d))


def ks_2samp(a: np.ndarray, b: np.ndarray) -> tuple:
    res = _scipy_ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# Plans and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    kind: str
    model: ModelConfig
    kernel: Optional[KernelSpec]
    t: float
    n_list: tuple
    reps: int
    base_seed: int
    beta_grid: tuple = ()
    m_list: tuple = ()
    require_jumps: Optional[int] = None
    collect_samples: bool = False

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "beta_grid", tuple(float(b) for b in self.beta_grid))
        object.__setattr__(self, "m_list", tuple(int(m) for m in self.m_list))
        if self.kind not in EXPERIMENT_KINDS:
            raise HarnessError(f"unknown experiment kind {self.kind!r}")
        if self.reps < 1:
            raise HarnessError(f"reps must be >= 1, got {self.reps}")
        if not self.n_list:
            raise HarnessError("n_list must not be empty")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise HarnessError(f"n_list must be strictly increasing, got {self.n_list}")
        if not self.t > 0:
            raise HarnessError(f"t must be > 0, got {self.t}")
        if self.kind == "GRID" and not self.beta_grid:
            raise HarnessError("GRID experiments need a beta_grid")
        if any(b <= 0 for b in self.beta_grid):
            raise HarnessError(f"beta_grid values must be > 0, got {self.beta_grid}")
        if self.kind != "RNP" and self.kernel is None and self.kind != "GRID":
            raise HarnessError(f"{self.kind} experiments need a kernel")
        if self.kernel is not None:
            allowed = _KIND_REGIMES.get(self.kind)
            if allowed and self.kernel.regime not in allowed:
                raise HarnessError(
                    f"{self.kind} needs a kernel in regime {allowed}, got {self.kernel.regime}"
                )
            report = check_admissibility(self.kernel)
            if not report.passed:
                raise HarnessError(
                    "kernel fails admissibility for its declared regime:\n" + report.summary()
                )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "model": config_to_dict(self.model),
            "kernel": kernel_to_text(self.kernel) if self.kernel is not None else None,
            "t": self.t,
            "n_list": list(self.n_list),
            "reps": self.reps,
            "base_seed": self.base_seed,
            "beta_grid": list(self.beta_grid),
            "m_list": list(self.m_list),
            "require_jumps": self.require_jumps,
            "collect_samples": self.collect_samples,
        }


@dataclass
class ExperimentReport:
    kind: str
    plan: dict
    tables: dict
    rows: list = field(default_factory=list)
    samples: Optional[dict] = None

    def to_json(self) -> str:
        doc = {"kind": self.kind, "plan": self.plan, "tables": self.tables}
        if self.samples is not None:
            doc["samples"] = self.samples
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    def rows_csv(self) -> str:
        if not self.rows:
            return ""
        cols = list(self.rows[0].keys())
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join(_csv_cell(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _map_ordered(fn, count: int, threads: int):
    """Evaluate fn(0..count-1), preserving index order in the output."""
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def _is_jump_route(kernel: KernelSpec) -> bool:
    return kernel.regime in _JUMP_REGIMES


def _stat_and_limit(path: SamplePath, kernel: KernelSpec, t: float):
    if _is_jump_route(kernel):
        stat = v_stat(path, kernel, t=t).value
        lim = jump_limit(path, kernel, t=t).value
    else:
        stat = y_stat(path, kernel, t=t).value
        lim = mixed_limit(path, kernel, t=t).value
    return stat, lim


def _collision_count(path: SamplePath) -> int:
    seen: dict = {}
    for r in path.jumps:
        seen[r.interval_index] = seen.get(r.interval_index, 0) + 1
    return sum(1 for c in seen.values() if c > 1)


def _quantiles(values: np.ndarray) -> dict:
    return {
        "median": float(np.median(values)),
        "q25": float(np.quantile(values, 0.25)),
        "q75": float(np.quantile(values, 0.75)),
    }


# ---------------------------------------------------------------------------
# LLN
# ---------------------------------------------------------------------------


def run_lln(plan: ExperimentPlan, threads: int = 1) -> ExperimentReport:
    """Median statistic-vs-limit errors per n, plus the fitted log-log rate."""
    if plan.kind != "LLN":
        raise HarnessError(f"run_lln got plan of kind {plan.kind}")
    kernel = plan.kernel
    rows = []
    per_n = {}
    for n in plan.n_list:

        def one(r, n=n):
            seed = derive_seed(plan.base_seed, _S_PATH, n, r)
            path = simulate_path(plan.model, n, plan.t, seed)
            stat, lim = _stat_and_limit(path, kernel, plan.t)
            return {
                "n": n,
                "rep": r,
                "seed": seed,
                "stat": stat,
                "limit": lim,
                "error": stat - lim,
                "n_jumps": len(path.jumps),
                "n_collisions": _collision_count(path),
            }

        results = _map_ordered(one, plan.reps, threads)
        rows.extend(results)
        abs_err = np.array([abs(r["error"]) for r in results])
        denom = np.array([max(abs(r["limit"]), 1e-300) for r in results])
        per_n[str(n)] = {
            "abs_error": _quantiles(abs_err),
            "rel_error": _quantiles(abs_err / denom),
            "collision_reps": int(sum(1 for r in results if r["n_collisions"] > 0)),
        }
    med = [per_n[str(n)]["abs_error"]["median"] for n in plan.n_list]
    slope = None
    if len(plan.n_list) >= 2 and all(m > 0 for m in med):
        slope = float(
            np.polyfit(np.log(np.array(plan.n_list, dtype=float)), np.log(med), 1)[0]
        )
    tables = {"per_n": per_n, "log_log_slope": slope}
    return ExperimentReport(kind="LLN", plan=plan.to_dict(), tables=tables, rows=rows)


# ---------------------------------------------------------------------------
# CLT
# ---------------------------------------------------------------------------


def run_clt(plan: ExperimentPlan, threads: int = 1) -> ExperimentReport:
    """Standardized CLT errors vs N(0,1), plus the limit-law two-sample check.

    Z_r = sqrt(n) (statistic - limit) / sqrt(ground-truth conditional
    variance); reps whose conditional variance is zero (no jumps) are
    excluded from Z and counted.  The marginal-law comparison pits
    sqrt(n)(statistic - limit) against limit draws on independent paths.
    """
    if plan.kind not in ("CLT_jump", "CLT_mixed"):
        raise HarnessError(f"run_clt got plan of kind {plan.kind}")
    kernel = plan.kernel
    mixed = plan.kind == "CLT_mixed"
    rows = []
    per_n = {}
    for n in plan.n_list:

        def one(r, n=n):
            seed = derive_seed(plan.base_seed, _S_PATH, n, r)
            path = simulate_path(plan.model, n, plan.t, seed)
            stat, lim = _stat_and_limit(path, kernel, plan.t)
            cv = (
                cond_var_mixed(path, kernel, t=plan.t)
                if mixed
                else cond_var_jump(path, kernel, t=plan.t)
            )
            raw = math.sqrt(n) * (stat - lim)
            excluded = cv.total <= 0.0 or (mixed and path.clamped)
            z = raw / math.sqrt(cv.total) if not excluded else None

            seed2 = derive_seed(plan.base_seed, _S_PATH2, n, r)
            path2 = simulate_path(plan.model, n, plan.t, seed2)
            aug = augment(path2, derive_seed(plan.base_seed, _S_AUG, n, r))
            if mixed:
                draw = sample_V_mixed(
                    path2,
                    kernel,
                    aug,
                    seed=derive_seed(plan.base_seed, _S_FIELD, n, r),
                    t=plan.t,
                ).value
            else:
                draw = sample_U_jump(path2, kernel, aug, t=plan.t).value
            draw_excluded = len(path2.jumps_until(plan.t)) == 0 or (mixed and path2.clamped)
            return {
                "n": n,
                "rep": r,
                "seed": seed,
                "scaled_error": raw,
                "cond_var": cv.total,
                "z": z,
                "excluded": excluded,
                "limit_draw": draw,
                "draw_excluded": draw_excluded,
            }

        results = _map_ordered(one, plan.reps, threads)
        rows.extend(results)
        zs = np.array([r["z"] for r in results if not r["excluded"]])
        n_excluded = sum(1 for r in results if r["excluded"])
        table = {"reps": plan.reps, "excluded": int(n_excluded)}
        if len(zs) >= 10:
            d, p = ks_1samp_normal(zs)
            table.update(
                {
                    "ks_stat": d,
                    "ks_pvalue": p,
                    "z_mean": float(np.mean(zs)),
                    "z_var": float(np.var(zs, ddof=1)),
                }
            )
        else:
            table["degenerate"] = "no-jump degenerate"
        # marginal-law comparison conditioned on the F-measurable event
        # "path has jumps": the degenerate atom at 0 is removed from both
        # samples symmetrically (stable convergence survives conditioning)
        raws = np.array([r["scaled_error"] for r in results if not r["excluded"]])
        draws = np.array([r["limit_draw"] for r in results if not r["draw_excluded"]])
        table["draw_excluded"] = int(sum(1 for r in results if r["draw_excluded"]))
        if len(raws) >= 10 and len(draws) >= 10:
            d2, p2 = ks_2samp(raws, draws)
            table.update({"two_sample_ks_stat": d2, "two_sample_ks_pvalue": p2})
        per_n[str(n)] = table
    report = ExperimentReport(
        kind=plan.kind, plan=plan.to_dict(), tables={"per_n": per_n}, rows=rows
    )
    if plan.collect_samples:
        report.samples = {
            str(n): {
                "z": [r["z"] for r in rows if r["n"] == n and not r["excluded"]],
                "scaled_error": [r["scaled_error"] for r in rows if r["n"] == n],
                "limit_draw": [r["limit_draw"] for r in rows if r["n"] == n],
            }
            for n in plan.n_list
        }
    return report


# ---------------------------------------------------------------------------
# R(n,p) convergence
# ---------------------------------------------------------------------------


def run_rnp_check(plan: ExperimentPlan, threads: int = 1) -> ExperimentReport:
    """Two-sample KS between discrete R(n,p) draws and extension-space R draws.

    One draw per replication and side: the first jump that sits alone in
    its grid interval (discrete side) vs. the first jump's R_k
    (extension side), on independent paths.
    """
    if plan.kind != "RNP":
        raise HarnessError(f"run_rnp_check got plan of kind {plan.kind}")
    rows = []
    per_n = {}
    for n in plan.n_list:

        def one(r, n=n):
            seed = derive_seed(plan.base_seed, _S_PATH, n, r)
            path = simulate_path(plan.model, n, plan.t, seed)
            discrete = None
            for p in range(len(path.jumps)):
                nb = jump_neighborhood(path, p)
                if not nb.shared_interval:
                    discrete = nb.r
                    break
            seed2 = derive_seed(plan.base_seed, _S_PATH2, n, r)
            path2 = simulate_path(plan.model, n, plan.t, seed2)
            limit_r = None
            if path2.jumps:
                aug = augment(path2, derive_seed(plan.base_seed, _S_AUG, n, r))
                limit_r = float(aug.r[0])
            return {"n": n, "rep": r, "seed": seed, "r_discrete": discrete, "r_limit": limit_r}

        results = _map_ordered(one, plan.reps, threads)
        rows.extend(results)
        a = np.array([r["r_discrete"] for r in results if r["r_discrete"] is not None])
        b = np.array([r["r_limit"] for r in results if r["r_limit"] is not None])
        table = {"n_discrete": int(len(a)), "n_limit": int(len(b))}
        if len(a) >= 10 and len(b) >= 10:
            d, p = ks_2samp(a, b)
            table.update({"ks_stat": d, "ks_pvalue": p})
        per_n[str(n)] = table
    return ExperimentReport(kind="RNP", plan=plan.to_dict(), tables={"per_n": per_n}, rows=rows)


# ---------------------------------------------------------------------------
# grid test
# ---------------------------------------------------------------------------


def grid_scan(
    data,
    beta_grid,
    t: Optional[float] = None,
    n: Optional[int] = None,
    power: float = 4.0,
) -> ExperimentReport:
    """Scan the lattice-test statistic over beta.

    For each beta the d = l = 2 grid-test statistic is computed (no
    n-normalization), normalized by its beta-independent envelope
    (sum |Delta X|^4)^2 / 2, and, when the data is a simulated path with
    ground truth, accompanied by the exact limit L(beta) and the
    studentized value using the jump-case conditional variance.
    """
    beta_grid = tuple(float(b) for b in beta_grid)
    if not beta_grid:
        raise HarnessError("beta_grid must not be empty")
    if any(b <= 0 for b in beta_grid):
        raise HarnessError(f"beta values must be > 0, got {beta_grid}")
    is_path = isinstance(data, SamplePath)
    rows = []
    envelope = None
    for beta in beta_grid:
        kernel = grid_test_kernel(beta, power=power)
        sv = v_stat(data, kernel, t=t, n=n)
        if envelope is None:
            # beta-independent bound: sin^2 <= 1 replaced by its mean 1/2
            from uvstat.stats import power_variation

            pv = power_variation(data, p=2 * power, scaled=False, t=t, n=n).value
            envelope = 0.5 * pv * pv
        normalized = sv.value / envelope if envelope > 0 else math.nan
        row = {"beta": beta, "statistic": sv.value, "normalized": normalized}
        if is_path:
            lim = jump_limit(data, kernel, t=t).value
            cv = cond_var_jump(data, kernel, t=t).total
            row["limit"] = lim
            row["cond_var"] = cv
            nn = data.n
            row["studentized"] = (
                math.sqrt(nn) * (sv.value - lim) / math.sqrt(cv) if cv > 0 else None
            )
        rows.append(row)
    finite = [r for r in rows if not math.isnan(r["normalized"])]
    best = min(finite, key=lambda r: r["normalized"]) if finite else None
    tables = {
        "envelope": envelope,
        "beta_min_normalized": best["beta"] if best else None,
        "min_normalized": best["normalized"] if best else None,
    }
    plan = {
        "kind": "GRID",
        "beta_grid": list(beta_grid),
        "power": power,
        "input": "sample_path" if is_path else "increments",
    }
    return ExperimentReport(kind="GRID", plan=plan, tables=tables, rows=rows)


def _find_path_with_jumps(plan: ExperimentPlan, n: int) -> SamplePath:
    tries = 10_000
    for k in range(tries):
        seed = derive_seed(plan.base_seed, _S_PATH, n, k)
        path = simulate_path(plan.model, n, plan.t, seed)
        if plan.require_jumps is None or len(path.jumps) == plan.require_jumps:
            return path
    raise HarnessError(
        f"no path with exactly {plan.require_jumps} jumps found in {tries} seeds"
    )


def run_grid(plan: ExperimentPlan, threads: int = 1) -> ExperimentReport:
    """Grid scan on a freshly simulated path (ground truth available)."""
    if plan.kind != "GRID":
        raise HarnessError(f"run_grid got plan of kind {plan.kind}")
    n = plan.n_list[-1]
    path = _find_path_with_jumps(plan, n)
    report = grid_scan(path, plan.beta_grid, t=plan.t)
    report.plan = plan.to_dict()
    return report


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------


def run_ztrunc(plan: ExperimentPlan, threads: int = 1) -> ExperimentReport:
    """Median |Z(m) - Z(J)| across augmentation seeds, per truncation level m."""
    if plan.kind != "ZTRUNC":
        raise HarnessError(f"run_ztrunc got plan of kind {plan.kind}")
    kernel = plan.kernel
    n = plan.n_list[-1]
    path = _find_path_with_jumps(plan, n)
    J = len(path.jumps)
    if J == 0:
        raise HarnessError("truncation experiment needs a path with jumps")
    m_list = plan.m_list if plan.m_list else tuple(range(J + 1))

    def one(r):
        aug = augment(path, derive_seed(plan.base_seed, _S_AUG, n, r))
        zj = truncated_Z(path, kernel, m=J, aug=aug, t=plan.t)
        row = {"rep": r, "n": n}
        for m in m_list:
            row[f"gap_m{m}"] = abs(truncated_Z(path, kernel, m=m, aug=aug, t=plan.t) - zj)
        return row

    rows = _map_ordered(one, plan.reps, threads)
    medians = {
        str(m): float(np.median([row[f"gap_m{m}"] for row in rows])) for m in m_list
    }
    ordered = [medians[str(m)] for m in sorted(m_list)]
    tables = {
        "n_jumps": J,
        "median_gap": medians,
        "nonincreasing": bool(all(b <= a + 1e-15 for a, b in zip(ordered, ordered[1:]))),
    }
    return ExperimentReport(kind="ZTRUNC", plan=plan.to_dict(), tables=tables, rows=rows)


_RUNNERS = {
    "LLN": run_lln,
    "CLT_jump": run_clt,
    "CLT_mixed": run_clt,
    "RNP": run_rnp_check,
    "GRID": run_grid,
    "ZTRUNC": run_ztrunc,
}


def run_plan(plan: ExperimentPlan, threads: int = 1) -> ExperimentReport:
    return _RUNNERS[plan.kind](plan, threads=threads)
