"""Strong-convergence experiments on coupled step ladders.

One experiment generates, per path, a single fine fBM realization at the
reference level 2^k_ref, integrates the implicit scheme there, then re-runs
the scheme at each coarser level 2^k using block-summed increments of the
same realization.  Errors are sup norms over the reference nodes:

* ``x_interp``  sup_t |X^{h_k}(t) - X^{ref}(t)| with the coarse path read
  through its piecewise-linear interpolant (carries the sqrt-log factor),
* ``x_node``    max over shared nodes of the raw node difference,
* ``y_interp``/``y_node``  the same after mapping X back to original
  coordinates through Y = X^l.

Per level, the L^p estimate is (mean over paths of e^p)^{1/p} with a
bootstrap standard error; empirical orders come from least squares on
log e vs log h, optionally after dividing out the logarithmic correction
sqrt(log(1 + 1/h)) (positive-power transforms) or log(1 + 1/h)
(negative-power transforms).

Everything is deterministic given the plan: paths are seeded by
``mix_seed(master_seed, path_index)`` and aggregation folds results in path
order, so the report is identical for any worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .drifts import ModelSpec
from .errors import IntegrationError, ParameterError, UsageError
from .fbm import CholeskySampler, CirculantSampler, Hurst, TimeGrid, mix_seed, subsample
from .solver import SchemeConfig, SolutionPath, check_step_bound, integrate

__all__ = [
    "ExperimentPlan",
    "LevelEstimate",
    "OrderFit",
    "ConvergenceReport",
    "MomentProbe",
    "run_strong_error",
    "fit_order",
    "moment_probe",
    "reference_bias_check",
    "critical_horizon",
]

ERROR_KINDS = ("x_interp", "x_node", "y_interp", "y_node")
BOOTSTRAP_RESAMPLES = 1000
# Path index reserved for the bootstrap RNG stream; far above any real path.
BOOTSTRAP_STREAM = 1 << 62
# Default admissible horizon for critical (alpha = 1) models at p <= 2.
CRITICAL_HORIZON_DEFAULT = 1.0


@dataclass(frozen=True)
class ExperimentPlan:
    """A coupled step-ladder experiment: levels 2^k_min .. 2^k_max against 2^k_ref."""

    model: ModelSpec
    horizon: float
    p: float
    k_min: int
    k_max: int
    k_ref: int
    paths: int
    master_seed: int
    method: str = "circulant"
    tol_abs: float = 1e-12
    tol_rel: float = 1e-12
    max_iter: int = 200
    bracket_growth: float = 2.0

    def __post_init__(self):
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ParameterError(f"horizon must be positive, got {self.horizon}")
        if self.p < 1.0:
            raise ParameterError(f"error moment order p must be >= 1, got {self.p}")
        if not (1 <= self.k_min <= self.k_max):
            raise ParameterError(
                f"need 1 <= k_min <= k_max, got k_min={self.k_min}, k_max={self.k_max}"
            )
        if self.k_max - self.k_min < 2:
            raise ParameterError(
                "order fits need at least 3 ladder levels "
                f"(k_max - k_min >= 2), got k in [{self.k_min}, {self.k_max}]"
            )
        if self.k_ref < self.k_max + 3:
            raise ParameterError(
                f"reference level k_ref={self.k_ref} must be at least "
                f"k_max + 3 = {self.k_max + 3} to keep reference bias negligible"
            )
        if self.paths < 2:
            raise ParameterError(f"need at least 2 paths, got {self.paths}")
        if self.method not in ("circulant", "cholesky"):
            raise ParameterError(f"unknown sampler method {self.method!r}")
        cert = self.model.drift()[1]
        check_step_bound(cert, self.horizon / 2**self.k_min)
        if cert.alpha_regime == "critical" and (
            self.horizon > CRITICAL_HORIZON_DEFAULT or self.p > 2.0
        ):
            warnings.warn(
                "critical-regime model (alpha = 1): the convergence guarantee "
                f"holds only for small horizons; T={self.horizon}, p={self.p} "
                f"exceeds the default window T<={CRITICAL_HORIZON_DEFAULT}, p<=2",
                stacklevel=2,
            )

    @property
    def levels(self) -> list[int]:
        return list(range(self.k_min, self.k_max + 1))

    def scheme_config(self, steps: int) -> SchemeConfig:
        return SchemeConfig(
            steps=steps,
            horizon=self.horizon,
            sigma=self.model.sigma_x,
            x0=self.model.x0,
            tol_abs=self.tol_abs,
            tol_rel=self.tol_rel,
            max_iter=self.max_iter,
            bracket_growth=self.bracket_growth,
        )


@dataclass(frozen=True)
class LevelEstimate:
    k: int
    steps: int
    h: float
    estimates: dict  # kind -> {"e": float, "stderr": float}


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    slope_stderr: float
    correction: str


@dataclass(frozen=True)
class ConvergenceReport:
    plan: dict
    levels: list[LevelEstimate]
    fits: dict  # kind -> {correction_name: OrderFit}
    targets: dict  # kind -> float
    order_band: dict  # {"kind", "mode", "tolerance", "target", "observed", "passed"}
    trend_ok: bool
    incomplete: bool
    failures: list
    per_path_errors: dict | None = None

    @property
    def passed(self) -> bool:
        return bool(self.order_band["passed"]) and not self.incomplete

    def to_dict(self) -> dict:
        return {
            "plan": self.plan,
            "levels": [
                {
                    "k": lv.k,
                    "steps": lv.steps,
                    "h": lv.h,
                    "errors": lv.estimates,
                }
                for lv in self.levels
            ],
            "fits": {
                kind: {
                    corr: {
                        "slope": f.slope,
                        "intercept": f.intercept,
                        "slope_stderr": f.slope_stderr,
                    }
                    for corr, f in by_corr.items()
                }
                for kind, by_corr in self.fits.items()
            },
            "targets": self.targets,
            "order_band": self.order_band,
            "trend_ok": self.trend_ok,
            "incomplete": self.incomplete,
            "failures": self.failures,
            "passed": self.passed,
        }


def _log_correction(h: np.ndarray, name: str) -> np.ndarray:
    if name == "none":
        return np.ones_like(h)
    if name == "sqrt_log":
        return np.sqrt(np.log1p(1.0 / h))
    if name == "log":
        return np.log1p(1.0 / h)
    raise UsageError(f"unknown correction {name!r}")


def fit_order(
    levels: Iterable[tuple[float, float, float]], correction: str = "none"
) -> OrderFit:
    """Least-squares slope of log(e / corr(h)) against log h.

    ``levels`` yields (h, e, stderr) triples; at least three are required and
    all error estimates must be positive.  The slope standard error is the
    usual OLS one.
    """
    rows = list(levels)
    if len(rows) < 3:
        raise UsageError(f"order fit needs at least 3 levels, got {len(rows)}")
    h = np.array([row[0] for row in rows], dtype=float)
    e = np.array([row[1] for row in rows], dtype=float)
    if np.any(e <= 0.0):
        raise UsageError("order fit requires strictly positive error estimates")
    x = np.log(h)
    y = np.log(e / _log_correction(h, correction))
    n = x.size
    x_bar, y_bar = x.mean(), y.mean()
    sxx = float(np.sum((x - x_bar) ** 2))
    slope = float(np.sum((x - x_bar) * (y - y_bar)) / sxx)
    intercept = y_bar - slope * x_bar
    resid = y - (intercept + slope * x)
    variance = float(np.sum(resid**2)) / max(n - 2, 1)
    return OrderFit(
        slope=slope,
        intercept=float(intercept),
        slope_stderr=math.sqrt(variance / sxx),
        correction=correction,
    )


def _sampler(plan: ExperimentPlan, grid: TimeGrid):
    hurst = Hurst(plan.model.hurst)
    if plan.method == "cholesky":
        return CholeskySampler(hurst, grid)
    return CirculantSampler(hurst, grid)


def _sup_errors(
    coarse: SolutionPath,
    ref_values: np.ndarray,
    factor: int,
    inverse_exponent: float,
) -> dict:
    """Sup-norm errors of one coarse solution against the reference nodes."""
    # piecewise-linear read of the coarse path at every reference node, done
    # with index arithmetic (reference nodes subdivide each coarse cell into
    # ``factor`` equal parts)
    n_coarse = coarse.grid.steps
    cv = coarse.values
    j = np.arange(len(ref_values))
    frac = (j % factor) / factor
    cell = np.minimum(j // factor, n_coarse - 1)
    frac = np.where(j // factor == n_coarse, 1.0, frac)
    interp = (1.0 - frac) * cv[cell] + frac * cv[cell + 1]
    y_interp = interp**inverse_exponent
    y_ref = ref_values**inverse_exponent
    node_idx = np.arange(0, len(ref_values), factor)
    return {
        "x_interp": float(np.max(np.abs(interp - ref_values))),
        "x_node": float(np.max(np.abs(cv - ref_values[node_idx]))),
        "y_interp": float(np.max(np.abs(y_interp - y_ref))),
        "y_node": float(np.max(np.abs(cv**inverse_exponent - y_ref[node_idx]))),
    }


def _strong_error_one_path(
    plan: ExperimentPlan, path_index: int
) -> tuple[int, dict | None, tuple | None]:
    """Errors of every ladder level for one path; (index, errors, failure)."""
    n_ref = 2**plan.k_ref
    grid = TimeGrid(plan.horizon, n_ref)
    fine = _sampler_cached(plan, grid).sample(plan.master_seed, path_index)
    drift, cert = plan.model.drift()
    try:
        ref = integrate(drift, plan.scheme_config(n_ref), fine.increments, cert)
    except IntegrationError as exc:
        return path_index, None, (path_index, plan.k_ref, exc.step)
    l_exp = plan.model.inverse_exponent
    out: dict[int, dict] = {}
    for k in plan.levels:
        factor = 2 ** (plan.k_ref - k)
        coarse_noise = subsample(fine, factor).increments
        try:
            sol = integrate(
                drift, plan.scheme_config(2**k), coarse_noise, cert
            )
        except IntegrationError as exc:
            return path_index, None, (path_index, k, exc.step)
        out[k] = _sup_errors(sol, ref.values, factor, l_exp)
    return path_index, out, None


# Sampler construction is costly for the Cholesky method; cache per process.
_SAMPLER_CACHE: dict = {}


def _sampler_cached(plan: ExperimentPlan, grid: TimeGrid):
    key = (plan.method, plan.model.hurst, grid.horizon, grid.steps)
    sampler = _SAMPLER_CACHE.get(key)
    if sampler is None:
        sampler = _sampler(plan, grid)
        _SAMPLER_CACHE[key] = sampler
    return sampler


def _p_mean(values: np.ndarray, p: float) -> float:
    return float(np.mean(values**p) ** (1.0 / p))


def _bootstrap_stderr(values: np.ndarray, p: float, rng: np.random.Generator) -> float:
    n = values.size
    draws = rng.integers(0, n, size=(BOOTSTRAP_RESAMPLES, n))
    stats = np.mean(values[draws] ** p, axis=1) ** (1.0 / p)
    return float(np.std(stats, ddof=1))


def _y_correction(model: ModelSpec) -> str:
    return "sqrt_log" if model.inverse_exponent > 0.0 else "log"


def _targets(model: ModelSpec) -> dict:
    hurst = model.hurst
    l_abs = abs(model.inverse_exponent)
    if model.inverse_exponent > 0.0:
        y_target = hurst * min(l_abs, 1.0)
    else:
        y_target = (2.0 * hurst - 1.0) * min(l_abs, 1.0)
    return {
        "x_interp": hurst,
        "x_node": hurst,
        "y_interp": y_target,
        "y_node": y_target,
    }


def run_strong_error(
    plan: ExperimentPlan, workers: int = 1, keep_paths: bool = False
) -> ConvergenceReport:
    """Execute the coupled ladder experiment and fit empirical orders.

    With ``workers > 1`` paths are processed by a process pool; results are
    folded in path order either way, so the report does not depend on the
    pool size.  Failed paths are recorded as (path, level, step) triples and
    excluded from the aggregates, marking the report incomplete.
    """
    indices = range(plan.paths)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(
                    _strong_error_one_path,
                    [plan] * plan.paths,
                    indices,
                    chunksize=max(1, plan.paths // (4 * workers)),
                )
            )
    else:
        results = [_strong_error_one_path(plan, i) for i in indices]
    results.sort(key=lambda item: item[0])

    failures = [failure for _, _, failure in results if failure is not None]
    per_level: dict[int, dict[str, list[float]]] = {
        k: {kind: [] for kind in ERROR_KINDS} for k in plan.levels
    }
    kept_paths = []
    for index, errors, failure in results:
        if failure is not None:
            continue
        kept_paths.append(index)
        for k in plan.levels:
            for kind in ERROR_KINDS:
                per_level[k][kind].append(errors[k][kind])

    boot_rng = np.random.default_rng(mix_seed(plan.master_seed, BOOTSTRAP_STREAM))
    levels: list[LevelEstimate] = []
    for k in plan.levels:
        steps = 2**k
        h = plan.horizon / steps
        estimates = {}
        for kind in ERROR_KINDS:
            e = np.asarray(per_level[k][kind])
            estimates[kind] = {
                "e": _p_mean(e, plan.p),
                "stderr": _bootstrap_stderr(e, plan.p, boot_rng),
            }
        levels.append(LevelEstimate(k=k, steps=steps, h=h, estimates=estimates))

    fits: dict[str, dict[str, OrderFit]] = {}
    y_corr = _y_correction(plan.model)
    for kind in ERROR_KINDS:
        rows = [(lv.h, lv.estimates[kind]["e"], lv.estimates[kind]["stderr"]) for lv in levels]
        corr = y_corr if kind.startswith("y") else "sqrt_log"
        fits[kind] = {
            "none": fit_order(rows, "none"),
            corr: fit_order(rows, corr),
        }

    targets = _targets(plan.model)
    corrected = fits["y_interp"][y_corr].slope
    band_tol = 0.15
    if plan.model.inverse_exponent > 0.0:
        passed = abs(corrected - targets["y_interp"]) <= band_tol
        mode = "two_sided"
    else:
        # the theoretical rate is an upper bound on the error, so only
        # undershoot fails
        passed = corrected >= targets["y_interp"] - band_tol
        mode = "lower"
    order_band = {
        "kind": "y_interp",
        "correction": y_corr,
        "mode": mode,
        "tolerance": band_tol,
        "target": targets["y_interp"],
        "observed": corrected,
        "passed": bool(passed),
    }

    trend_ok = _monotone_trend(levels, "y_interp")

    per_path_errors = None
    if keep_paths:
        per_path_errors = {
            "paths": kept_paths,
            "errors": {
                str(k): {kind: per_level[k][kind] for kind in ERROR_KINDS}
                for k in plan.levels
            },
        }

    return ConvergenceReport(
        plan=_plan_dict(plan),
        levels=levels,
        fits=fits,
        targets=targets,
        order_band=order_band,
        trend_ok=trend_ok,
        incomplete=bool(failures),
        failures=[list(f) for f in failures],
        per_path_errors=per_path_errors,
    )


def _monotone_trend(levels: list[LevelEstimate], kind: str) -> bool:
    """Errors should fall as the grid refines; one statistical inversion is allowed."""
    inversions = 0
    for prev, cur in zip(levels, levels[1:]):
        e_prev, se_prev = prev.estimates[kind]["e"], prev.estimates[kind]["stderr"]
        e_cur, se_cur = cur.estimates[kind]["e"], cur.estimates[kind]["stderr"]
        if e_cur > e_prev + 2.0 * math.hypot(se_prev, se_cur):
            inversions += 1
    return inversions <= 1


def _plan_dict(plan: ExperimentPlan) -> dict:
    model = plan.model
    block = {"family": model.family}
    for name in model.__dataclass_fields__:
        block[name] = getattr(model, name)
    return {
        "model": block,
        "horizon": plan.horizon,
        "p": plan.p,
        "k_min": plan.k_min,
        "k_max": plan.k_max,
        "k_ref": plan.k_ref,
        "paths": plan.paths,
        "master_seed": plan.master_seed,
        "method": plan.method,
    }


def reference_bias_check(plan: ExperimentPlan) -> dict:
    """Relative change of every level estimate when the reference is refined.

    The fine noise is generated once at k_ref + 1 and block-summed down, so
    the two references share their driving paths and the comparison isolates
    the reference-discretization bias from Monte Carlo noise.
    """
    n_fine = 2 ** (plan.k_ref + 1)
    grid = TimeGrid(plan.horizon, n_fine)
    sampler = _sampler(plan, grid)
    drift, cert = plan.model.drift()
    l_exp = plan.model.inverse_exponent
    acc = {
        ref_k: {k: {kind: [] for kind in ERROR_KINDS} for k in plan.levels}
        for ref_k in (plan.k_ref, plan.k_ref + 1)
    }
    for i in range(plan.paths):
        fine = sampler.sample(plan.master_seed, i)
        refs = {}
        for ref_k in (plan.k_ref, plan.k_ref + 1):
            n_ref = 2**ref_k
            noise = subsample(fine, n_fine // n_ref).increments
            refs[ref_k] = integrate(drift, plan.scheme_config(n_ref), noise, cert)
        for k in plan.levels:
            sol = integrate(
                drift,
                plan.scheme_config(2**k),
                subsample(fine, n_fine // 2**k).increments,
                cert,
            )
            for ref_k, ref in refs.items():
                factor = 2 ** (ref_k - k)
                errs = _sup_errors(sol, ref.values, factor, l_exp)
                for kind in ERROR_KINDS:
                    acc[ref_k][k][kind].append(errs[kind])
    out = {}
    for k in plan.levels:
        out[k] = {}
        for kind in ERROR_KINDS:
            base = _p_mean(np.asarray(acc[plan.k_ref][k][kind]), plan.p)
            fine_est = _p_mean(np.asarray(acc[plan.k_ref + 1][k][kind]), plan.p)
            out[k][kind] = abs(fine_est - base) / base
    return out


# ---------------------------------------------------------------------------
# Moment and modulus probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentProbe:
    """Monte Carlo estimates of extreme-value moments and modulus ratios."""

    p_list: tuple[float, ...]
    negative_moments: dict  # p -> E max_n X_n^{-p}
    positive_moments: dict  # p -> E max_n X_n^{p}
    ladder_h: tuple[float, ...]
    modulus_ratios: tuple[float, ...]
    steps: int
    paths: int
    horizon: float
    master_seed: int

    def to_dict(self) -> dict:
        return {
            "p_list": list(self.p_list),
            "negative_moments": {str(k): v for k, v in self.negative_moments.items()},
            "positive_moments": {str(k): v for k, v in self.positive_moments.items()},
            "ladder_h": list(self.ladder_h),
            "modulus_ratios": list(self.modulus_ratios),
            "steps": self.steps,
            "paths": self.paths,
            "horizon": self.horizon,
            "master_seed": self.master_seed,
        }


def _window_modulus(values: np.ndarray, window: int) -> float:
    """sup |X_t - X_s| over node pairs at most ``window`` indices apart."""
    view = np.lib.stride_tricks.sliding_window_view(values, window + 1)
    return float(np.max(view.max(axis=1) - view.min(axis=1)))


def _modulus_envelope(h: np.ndarray, hurst: float) -> np.ndarray:
    return h + h**hurst * np.sqrt(np.log1p(1.0 / h))


def moment_probe(
    model: ModelSpec,
    hurst: float | Hurst,
    horizon: float,
    steps: int,
    paths: int,
    p_list: Iterable[float],
    master_seed: int,
    ladder_rungs: int = 6,
) -> MomentProbe:
    """Estimate E sup X^{-p}, E sup X^{p}, and modulus-of-continuity ratios.

    The modulus ladder uses window widths h * 2^j, j = 0..ladder_rungs-1, and
    reports E modulus(h_j) divided by the envelope h + h^H sqrt(log(1 + 1/h)).
    For critical-regime models the admissible horizon shrinks with p; a
    warning is emitted when (horizon, max p) exceeds it.
    """
    h_value = hurst.value if isinstance(hurst, Hurst) else float(hurst)
    if h_value != model.hurst:
        raise UsageError(
            f"hurst={h_value} disagrees with the model's hurst={model.hurst}"
        )
    p_list = tuple(float(p) for p in p_list)
    if not p_list or any(p <= 0.0 for p in p_list):
        raise UsageError("p_list must contain positive orders")
    if steps < 1 or paths < 1:
        raise UsageError("need steps >= 1 and paths >= 1")
    drift, cert = model.drift()
    if cert.alpha_regime == "critical":
        t_admissible = critical_horizon(cert, model.hurst, max(p_list))
        if horizon > t_admissible:
            warnings.warn(
                f"critical-regime model: negative moments of order {max(p_list)} "
                f"are only guaranteed up to T~{t_admissible:.4g}, got T={horizon}",
                stacklevel=2,
            )

    grid = TimeGrid(horizon, steps)
    sampler = CirculantSampler(Hurst(model.hurst), grid)
    config = SchemeConfig(
        steps=steps, horizon=horizon, sigma=model.sigma_x, x0=model.x0
    )
    rungs = min(ladder_rungs, int(math.log2(steps)) - 1)
    windows = [2**j for j in range(rungs)]
    neg = {p: 0.0 for p in p_list}
    pos = {p: 0.0 for p in p_list}
    modulus = np.zeros(len(windows))
    for i in range(paths):
        path = sampler.sample(master_seed, i)
        sol = integrate(drift, config, path.increments, cert)
        values = sol.values
        v_max, v_min = float(values.max()), float(values.min())
        for p in p_list:
            neg[p] += v_min**-p
            pos[p] += v_max**p
        for w, window in enumerate(windows):
            modulus[w] += _window_modulus(values, window)
    for p in p_list:
        neg[p] /= paths
        pos[p] /= paths
    modulus /= paths
    ladder_h = grid.h * np.asarray(windows, dtype=float)
    ratios = modulus / _modulus_envelope(ladder_h, model.hurst)
    return MomentProbe(
        p_list=p_list,
        negative_moments=neg,
        positive_moments=pos,
        ladder_h=tuple(float(v) for v in ladder_h),
        modulus_ratios=tuple(float(v) for v in ratios),
        steps=steps,
        paths=paths,
        horizon=horizon,
        master_seed=master_seed,
    )


def critical_horizon(cert, hurst: float, p: float) -> float:
    """Largest T with h1_min >= ((p+1) v q) H T^{2H-1} exp(K^+ T).

    This is the admissibility window for negative moments of order p in the
    critical alpha = 1 regime.  The right-hand side is strictly increasing in
    T, so the crossing is found by bisection; returns ``inf`` when the bound
    never binds within astronomically large horizons.
    """
    factor = max(p + 1.0, cert.q) * hurst

    def rhs(t: float) -> float:
        return factor * t ** (2.0 * hurst - 1.0) * math.exp(max(cert.K, 0.0) * t)

    if rhs(1e12) <= cert.h1_min:
        return math.inf
    lo, hi = 0.0, 1.0
    while rhs(hi) <= cert.h1_min:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rhs(mid) <= cert.h1_min:
            lo = mid
        else:
            hi = mid
    return lo
