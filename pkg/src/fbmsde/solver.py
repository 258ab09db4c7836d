"""Drift-implicit (backward) Euler scheme with a safeguarded scalar root solver.

One step of the scheme solves

    X_{n+1} = X_n + B(X_{n+1}) h + sigma * dB_{n+1},

i.e. the scalar equation  g(x) = B(x) h - x + c = 0  with
c = X_n + sigma * dB_{n+1}.  For the drifts handled here g decreases through
zero on (0, inf) and blows up at 0+, so the unique root is positive for every
real c whenever h is below the certificate's h0; implicitness is what makes
the scheme positivity preserving.

The root solver brackets first (geometric expansion or shrinkage from
max(c, 1e-30)) and then runs Newton safeguarded by bisection: a Newton step is
accepted only if it stays inside the bracket and reduces |g|.  Convergence is
declared on the residual test |g(x)| <= tol_abs + tol_rel * x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .drifts import AssumptionCertificate, DriftFn
from .errors import (
    IntegrationError,
    NumericalError,
    ParameterError,
    RootBracketError,
    UsageError,
)
from .fbm import TimeGrid

__all__ = [
    "SchemeConfig",
    "SolutionPath",
    "Interpolant",
    "implicit_step",
    "integrate",
    "interpolate",
    "power_path",
]

X_FLOOR = 1e-30
BRACKET_CEILING = 1e300
BRACKET_FLOOR = 1e-300


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization and root-solver parameters for one integration.

    ``steps`` and ``horizon`` define h = horizon / steps; callers must keep h
    below the drift certificate's h0 (and below 1/K when K > 0), which
    :func:`integrate` enforces when given the certificate.
    """

    steps: int
    horizon: float
    sigma: float
    x0: float
    tol_abs: float = 1e-12
    tol_rel: float = 1e-12
    max_iter: int = 200
    bracket_growth: float = 2.0

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ParameterError(f"horizon must be positive, got {self.horizon}")
        if self.sigma == 0.0:
            raise ParameterError("sigma must be nonzero")
        if not self.x0 > 0.0:
            raise ParameterError(f"x0 must be positive, got {self.x0}")
        if not (self.tol_abs > 0.0 and self.tol_rel > 0.0):
            raise ParameterError("tolerances must be positive")
        if self.max_iter < 8:
            raise ParameterError(f"max_iter must be >= 8, got {self.max_iter}")
        if not self.bracket_growth > 1.0:
            raise ParameterError(
                f"bracket_growth must exceed 1, got {self.bracket_growth}"
            )

    @property
    def h(self) -> float:
        return self.horizon / self.steps


@dataclass(frozen=True)
class SolutionPath:
    """Discrete trajectory of the scheme plus per-step solver records.

    ``values`` has length steps + 1 with values[0] = x0 and every node
    strictly positive; ``residuals[n]`` and ``iterations[n]`` describe the
    root solve that produced values[n + 1].  ``increments`` references the
    driving noise.  Immutable after construction.
    """

    grid: TimeGrid
    values: np.ndarray
    residuals: np.ndarray
    iterations: np.ndarray
    increments: np.ndarray


class Interpolant:
    """Piecewise-linear interpolant of a solution path.

    Exact at nodes; between nodes it is the affine combination with weights
    (t_{n+1} - t)/h and (t - t_n)/h.
    """

    def __init__(self, path: SolutionPath):
        self.path = path

    def __call__(self, t):
        return interpolate(self.path, t)


def check_step_bound(certificate: AssumptionCertificate, h: float) -> None:
    """Enforce h < h0 and, when K > 0, h < 1/K."""
    if not h < certificate.h0:
        raise ParameterError(
            f"step size h={h:.6g} must stay below the implicit-step bound "
            f"h0={certificate.h0:.6g} for the unique-positive-root guarantee"
        )
    if certificate.K > 0.0 and not h < 1.0 / certificate.K:
        raise ParameterError(
            f"step size h={h:.6g} must stay below 1/K={1.0 / certificate.K:.6g}"
        )


def implicit_step(
    drift: DriftFn,
    h: float,
    c: float,
    tol_abs: float = 1e-12,
    tol_rel: float = 1e-12,
    max_iter: int = 200,
    bracket_growth: float = 2.0,
) -> tuple[float, float, int]:
    """Solve B(x) h - x + c = 0 for the unique positive root.

    Returns ``(root, residual, iterations)`` where ``residual`` is the signed
    value of the equation at the root and ``iterations`` counts function
    evaluations beyond the initial guess.  Raises :class:`RootBracketError`
    when no sign change is found (the unique-positive-root hypothesis fails
    at runtime) and :class:`NumericalError` on non-finite drift values.
    """
    if not (h > 0.0 and math.isfinite(h)):
        raise ParameterError(f"step size must be positive and finite, got {h}")
    value = drift.value
    deriv = drift.deriv1

    def g(x: float) -> float:
        try:
            bx = value(x)
        except OverflowError:
            # Python float pow overflows for strongly singular drifts near the
            # bracket floor; IEEE semantics (inf with the drift's sign) are
            # exactly the information bracketing needs, so re-evaluate through
            # numpy scalars.
            with np.errstate(over="ignore"):
                bx = float(value(np.float64(x)))
        gx = bx * h - x + c
        if math.isnan(gx):
            raise NumericalError(
                f"drift evaluation produced NaN at x={x!r} inside the bracket"
            )
        return gx

    def slope(x: float) -> float:
        try:
            return deriv(x) * h - 1.0
        except OverflowError:
            return -math.inf  # forces the bisection safeguard

    x = c if c > X_FLOOR else X_FLOOR
    gx = g(x)
    iterations = 0
    if abs(gx) <= tol_abs + tol_rel * x:
        return x, gx, iterations

    # Bracket [lo, hi] with g(lo) >= 0 >= g(hi); g decreases through the root.
    lo, glo = x, gx
    hi, ghi = x, gx
    if gx > 0.0:
        while ghi > 0.0:
            if iterations >= max_iter or hi > BRACKET_CEILING:
                raise RootBracketError(
                    "no sign change of B(x) h - x + c found while expanding to "
                    f"[{lo:.3e}, {hi:.3e}]; the implicit step equation appears "
                    "to lack a positive root (unique-positive-root hypothesis)",
                    interval=(lo, hi),
                )
            lo, glo = hi, ghi
            hi *= bracket_growth
            ghi = g(hi)
            iterations += 1
    else:
        while glo < 0.0:
            if iterations >= max_iter or lo < BRACKET_FLOOR:
                raise RootBracketError(
                    "no sign change of B(x) h - x + c found while shrinking to "
                    f"[{lo:.3e}, {hi:.3e}]; the implicit step equation appears "
                    "to lack a positive root (unique-positive-root hypothesis)",
                    interval=(lo, hi),
                )
            hi, ghi = lo, glo
            lo /= bracket_growth
            glo = g(lo)
            iterations += 1

    # Safeguarded Newton inside [lo, hi].
    if abs(glo) <= abs(ghi):
        x, gx = lo, glo
    else:
        x, gx = hi, ghi
    while iterations < max_iter:
        if abs(gx) <= tol_abs + tol_rel * x:
            return x, gx, iterations
        trial = None
        gp = slope(x)
        if math.isfinite(gp) and gp != 0.0:
            candidate = x - gx / gp
            if lo < candidate < hi:
                trial = candidate
        if trial is None:
            trial = 0.5 * (lo + hi)
            gt = g(trial)
            iterations += 1
        else:
            gt = g(trial)
            iterations += 1
            if abs(gt) >= abs(gx):
                # Newton did not reduce the residual: fall back to bisection,
                # but keep the information the failed step added to the bracket.
                if gt > 0.0:
                    lo, glo = max(lo, trial), gt
                else:
                    hi, ghi = min(hi, trial), gt
                trial = 0.5 * (lo + hi)
                gt = g(trial)
                iterations += 1
        if gt > 0.0:
            lo, glo = trial, gt
        else:
            hi, ghi = trial, gt
        x, gx = trial, gt
        if hi - lo <= np.spacing(lo):
            if abs(gx) <= tol_abs + tol_rel * x:
                return x, gx, iterations
            raise NumericalError(
                f"root isolated to machine precision at x={x!r} but the residual "
                f"{gx:.3e} misses the tolerance {tol_abs + tol_rel * x:.3e}"
            )
    raise NumericalError(
        f"implicit step did not converge within max_iter={max_iter} "
        f"(bracket [{lo:.6e}, {hi:.6e}], residual {gx:.3e})"
    )


def integrate(
    drift: DriftFn,
    config: SchemeConfig,
    noise: np.ndarray,
    certificate: AssumptionCertificate | None = None,
) -> SolutionPath:
    """Run the backward Euler recursion over the whole increment array.

    ``noise`` holds the driving increments dB_1..dB_N (unscaled; the noise
    intensity comes from ``config.sigma``).  With ``certificate`` given, the
    step-size bounds h < h0 and h < 1/K are enforced up front.  A pure
    function of its arguments: rerunning it reproduces the path bit for bit.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (config.steps,):
        raise UsageError(
            f"noise must have length {config.steps}, got shape {noise.shape}"
        )
    if certificate is not None:
        check_step_bound(certificate, config.h)

    h = config.h
    sigma = config.sigma
    tol_abs, tol_rel = config.tol_abs, config.tol_rel
    max_iter, growth = config.max_iter, config.bracket_growth
    values = np.empty(config.steps + 1)
    residuals = np.empty(config.steps)
    iters = np.empty(config.steps, dtype=np.int64)
    values[0] = x = config.x0
    noise_list = noise.tolist()
    for n in range(config.steps):
        c = x + sigma * noise_list[n]
        try:
            x, res, it = implicit_step(
                drift, h, c, tol_abs, tol_rel, max_iter, growth
            )
        except (NumericalError, ParameterError) as exc:
            raise IntegrationError(
                f"implicit step failed at step {n}: {exc}", step=n
            ) from exc
        if not x > 0.0:
            raise IntegrationError(
                f"positivity lost at step {n}: root {x!r}", step=n
            )
        values[n + 1] = x
        residuals[n] = res
        iters[n] = it
    for arr in (values, residuals, iters):
        arr.setflags(write=False)
    return SolutionPath(
        grid=TimeGrid(config.horizon, config.steps),
        values=values,
        residuals=residuals,
        iterations=iters,
        increments=noise,
    )


def interpolate(path: SolutionPath, t):
    """Evaluate the piecewise-linear interpolant at time(s) t in [0, T].

    Node queries return the node value exactly; interior queries use the
    affine weights (t_{n+1} - t)/h and (t - t_n)/h.
    """
    times = path.grid.times
    values = path.values
    t_arr = np.asarray(t, dtype=float)
    t_max = times[-1]
    if np.any(t_arr < 0.0) or np.any(t_arr > t_max):
        raise ParameterError(
            f"interpolation time outside [0, {t_max!r}]"
        )
    idx = np.clip(
        np.searchsorted(times, t_arr, side="right") - 1, 0, path.grid.steps - 1
    )
    h = path.grid.h
    w_hi = (t_arr - times[idx]) / h
    w_lo = (times[idx + 1] - t_arr) / h
    out = w_lo * values[idx] + w_hi * values[idx + 1]
    # exact node hits bypass the weight arithmetic entirely
    at_lo = t_arr == times[idx]
    at_hi = t_arr == times[idx + 1]
    out = np.where(at_lo, values[idx], np.where(at_hi, values[idx + 1], out))
    return float(out) if np.ndim(t) == 0 else out


def power_path(path: SolutionPath, exponent: float) -> np.ndarray:
    """Elementwise power of the node values, used to undo Lamperti transforms.

    The scheme guarantees positive nodes, so any real nonzero exponent is
    well defined; a nonpositive node here means an internal invariant was
    broken upstream.
    """
    if exponent == 0.0:
        raise UsageError("power exponent must be nonzero")
    if np.any(path.values <= 0.0):
        raise NumericalError(
            "internal invariant violation: nonpositive node in a solution path"
        )
    return path.values**exponent
