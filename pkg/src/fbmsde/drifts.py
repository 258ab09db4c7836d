"""Transformed drifts for the interest-rate model families.

Both supported models are reduced by a power change of variables (a Lamperti
transform) to an additive-noise equation

    dX_t = B(X_t) dt + sigma_x dB^H_t,   X_0 > 0,

whose drift blows up like ``x^{-alpha}`` at the origin and is one-sidedly
Lipschitz.  This module builds the closed-form drifts with their first two
derivatives, plus a certificate of the growth and singularity constants that
the implicit solver and the convergence experiments consume:

* ``K``      one-sided Lipschitz constant, ``(B(x)-B(y))(x-y) <= K (x-y)^2``
* ``alpha``  singularity exponent, ``B(x) >= h1_min x^{-alpha}`` for x <= x1
* ``theta``  negative-power growth, ``B(x) <= h4 (1 + x + x^{-theta})``
* ``q``      superlinear growth of the negative part, ``B(x)^- <= h3 (1+x^q)``
* ``p1,p2``  derivative growth, ``|B'| + |B''| <= c_h2 (1 + x^{p1} + x^{-p2})``
* ``h0``     maximal step size for which ``B(x) h - x + c = 0`` has a unique
             positive root for every real c

``K`` and ``c_h2`` are determined numerically as suprema over a wide
logarithmic grid rather than trusted from closed-form claims.  ``x1`` is the
crossover below which the singular term dominates twice the combined
magnitude of all other terms, which makes ``h1_min`` equal to half the
singular coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ParameterError, UsageError
from .fbm import Hurst

__all__ = [
    "DriftFn",
    "AssumptionCertificate",
    "AuditCheck",
    "AuditReport",
    "MeanRevertingModel",
    "AitSahaliaModel",
    "ModelSpec",
    "mean_reverting_drift",
    "ait_sahalia_drift",
    "lamperti_forward",
    "lamperti_inverse",
    "audit_assumptions",
    "validate_certificate",
]

# Grid used to compute numeric suprema (K, c_h2) and the singularity crossover.
_CERT_GRID = np.geomspace(1e-4, 1e4, 641)


@dataclass(frozen=True)
class DriftFn:
    """A drift B with closed-form first and second derivatives.

    The callables accept positive floats or numpy arrays.  Raw callables may
    be used directly in tests; the model constructors below produce audited
    instances.
    """

    value: Callable
    deriv1: Callable
    deriv2: Callable
    name: str


@dataclass(frozen=True)
class AssumptionCertificate:
    """Constants certifying the drift's growth and singularity structure."""

    K: float
    alpha: float
    x1: float
    h1_min: float
    theta: float
    h4: float
    q: float
    h3: float
    p1: float
    p2: float
    c_h2: float
    h0: float
    alpha_regime: str  # "critical" when alpha == 1, else "standard"

    def __post_init__(self):
        if self.theta < self.alpha - 1e-12:
            raise ParameterError(
                f"theta={self.theta} must be >= alpha={self.alpha}"
            )
        if not self.h0 > 0.0:
            raise ParameterError(f"h0 must be positive, got {self.h0}")
        if not self.alpha > 0.0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")


def validate_certificate(cert: AssumptionCertificate, hurst: Hurst | float) -> None:
    """Check the singularity exponent against the configured Hurst parameter.

    The positivity theory requires ``alpha > 1/H - 1``; violating it is a hard
    error because nothing downstream is trustworthy without it.
    """
    h = hurst.value if isinstance(hurst, Hurst) else float(hurst)
    bound = 1.0 / h - 1.0
    if not cert.alpha > bound:
        raise ParameterError(
            f"singularity exponent alpha={cert.alpha:.6g} must exceed "
            f"1/H - 1 = {bound:.6g} for H={h}"
        )


def _numeric_sup(fn: Callable, grid: np.ndarray) -> float:
    return float(np.max(fn(grid)))


def _singularity_window(
    singular_coef: float,
    singular_exp: float,
    other_terms: list[tuple[float, float]],
    grid: np.ndarray,
) -> tuple[float, float]:
    """Largest x1 such that the singular term dominates twice the rest below it.

    ``other_terms`` is a list of (coefficient, exponent) monomials.  Returns
    ``(x1, h1_min)`` with ``h1_min = singular_coef / 2``: below the crossover,
    B(x) >= singular/2 >= (singular_coef/2) x^{-alpha}.
    """
    h1_min = 0.5 * singular_coef
    if not other_terms:
        return math.inf, h1_min
    singular = singular_coef * grid ** (-singular_exp)
    rest = np.zeros_like(grid)
    for coef, exponent in other_terms:
        rest += abs(coef) * grid**exponent
    dominated = singular >= 2.0 * rest
    if not dominated[0]:
        raise ParameterError(
            "singular term does not dominate at the bottom of the scan grid; "
            "cannot certify the lower bound near zero"
        )
    idx = int(np.argmin(dominated)) - 1 if not dominated.all() else len(grid) - 1
    x1 = math.inf if dominated.all() else float(grid[idx])
    return x1, h1_min


def mean_reverting_drift(
    a1: float, a2: float, gamma: float
) -> tuple[DriftFn, AssumptionCertificate]:
    """Transformed drift of the mean-reverting stochastic-volatility model.

    The original dynamics dY = (a1 - a2 Y) dt + sigma Y^gamma dB^H map under
    X = Y^{1-gamma} to the additive-noise drift

        B(x) = (1 - gamma) a1 x^{-gamma/(1-gamma)} - a2 (1 - gamma) x,

    with alpha = theta = gamma/(1-gamma).  gamma = 1/2 is the square-root
    (CIR) diffusion and sits at the critical alpha = 1 regime.
    """
    if not (0.0 < gamma < 1.0):
        raise ParameterError(f"gamma must lie in (0, 1), got {gamma}")
    if gamma < 0.5:
        raise ParameterError(
            f"gamma must lie in [1/2, 1) for the singular-drift regime, got {gamma}"
        )
    if not a1 > 0.0:
        raise ParameterError(f"a1 must be positive, got {a1}")
    alpha = gamma / (1.0 - gamma)
    c_sing = (1.0 - gamma) * a1
    c_lin = a2 * (1.0 - gamma)
    d1_sing = gamma * a1  # coefficient of x^{-(alpha+1)} in -B'
    d2_sing = gamma * a1 / (1.0 - gamma)  # coefficient of x^{-(alpha+2)} in B''

    def value(x, c=c_sing, lin=c_lin, e=alpha):
        return c * x**-e - lin * x

    def deriv1(x, c=d1_sing, lin=c_lin, e=alpha + 1.0):
        return -c * x**-e - lin

    def deriv2(x, c=d2_sing, e=alpha + 2.0):
        return c * x**-e

    drift = DriftFn(value, deriv1, deriv2, f"mean_reverting(a1={a1}, a2={a2}, gamma={gamma})")

    other = [(c_lin, 1.0)] if a2 != 0.0 else []
    x1, h1_min = _singularity_window(c_sing, alpha, other, _CERT_GRID)
    p1, p2 = 0.0, alpha + 2.0
    cert = AssumptionCertificate(
        K=max(0.0, _numeric_sup(deriv1, _CERT_GRID)),
        alpha=alpha,
        x1=x1,
        h1_min=h1_min,
        theta=alpha,
        h4=max(c_sing, max(-c_lin, 0.0)),
        q=1.0 if a2 > 0.0 else 0.0,
        h3=c_lin if a2 > 0.0 else 0.0,
        p1=p1,
        p2=p2,
        c_h2=_derivative_growth_constant(deriv1, deriv2, p1, p2),
        # The implicit step is solvable for all h whenever 1 + a2(1-gamma) h > 0.
        h0=math.inf if a2 >= 0.0 else 1.0 / (-a2 * (1.0 - gamma)),
        alpha_regime="critical" if gamma == 0.5 else "standard",
    )
    return drift, cert


def ait_sahalia_drift(
    a_m1: float, a0: float, a1: float, a2: float, r: float, rho: float
) -> tuple[DriftFn, AssumptionCertificate]:
    """Transformed drift of the Ait-Sahalia type interest-rate model.

    The original dynamics
    dY = (a_{-1} Y^{-1} - a0 + a1 Y - a2 Y^r) dt + sigma Y^rho dB^H
    map under X = Y^{1-rho} (note 1 - rho < 0) to

        B(x) = b1 x^{-(r-rho)/(rho-1)} - b2 x + b3 x^{rho/(rho-1)}
               - b4 x^{(rho+1)/(rho-1)},

    with (b1, b2, b3, b4) = (rho-1) * (a2, a1, a0, a_{-1}).  The admissible
    step bound h0 = 4 (rho-1) b4 (rho+1) / (b3^2 rho^2) makes the implicit
    equation's derivative strictly negative, hence the root unique.
    """
    for label, value_ in (("a_m1", a_m1), ("a0", a0), ("a1", a1), ("a2", a2)):
        if not value_ > 0.0:
            raise ParameterError(f"{label} must be positive, got {value_}")
    if not rho > 1.0:
        raise ParameterError(f"rho must exceed 1, got {rho}")
    if not r + 1.0 > 2.0 * rho:
        raise ParameterError(
            f"constraint r + 1 > 2*rho violated: r={r}, rho={rho}"
        )
    r_floor = min(2.0, rho) + 1.0
    if not r >= r_floor:
        raise ParameterError(
            f"constraint r >= min(2, rho) + 1 violated: r={r} < {r_floor}"
        )

    b1 = (rho - 1.0) * a2
    b2 = (rho - 1.0) * a1
    b3 = (rho - 1.0) * a0
    b4 = (rho - 1.0) * a_m1
    alpha = (r - rho) / (rho - 1.0)
    e3 = rho / (rho - 1.0)
    e4 = (rho + 1.0) / (rho - 1.0)

    def value(x, b1=b1, b2=b2, b3=b3, b4=b4, ea=alpha, e3=e3, e4=e4):
        return b1 * x**-ea - b2 * x + b3 * x**e3 - b4 * x**e4

    def deriv1(x, c1=alpha * b1, b2=b2, c3=e3 * b3, c4=e4 * b4, ea=alpha + 1.0,
               f3=e3 - 1.0, f4=e4 - 1.0):
        return -c1 * x**-ea - b2 + c3 * x**f3 - c4 * x**f4

    def deriv2(x, c1=alpha * (alpha + 1.0) * b1, c3=e3 * (e3 - 1.0) * b3,
               c4=e4 * (e4 - 1.0) * b4, ea=alpha + 2.0, f3=e3 - 2.0, f4=e4 - 2.0):
        return c1 * x**-ea + c3 * x**f3 - c4 * x**f4

    drift = DriftFn(
        value,
        deriv1,
        deriv2,
        f"ait_sahalia(a={{-1:{a_m1}, 0:{a0}, 1:{a1}, 2:{a2}}}, r={r}, rho={rho})",
    )

    # Peak of the positive non-singular part b3 u^rho - b4 u^{rho+1} in u = x^{1/(rho-1)}.
    u_star = rho * b3 / ((rho + 1.0) * b4)
    hump = max(0.0, b3 * u_star**rho - b4 * u_star ** (rho + 1.0))
    x1, h1_min = _singularity_window(
        b1, alpha, [(b2, 1.0), (b3, e3), (b4, e4)], _CERT_GRID
    )
    p1, p2 = e4 - 1.0, alpha + 2.0
    cert = AssumptionCertificate(
        K=max(0.0, _numeric_sup(deriv1, _CERT_GRID)),
        alpha=alpha,
        x1=x1,
        h1_min=h1_min,
        theta=alpha,
        h4=max(b1, hump),
        q=e4,
        h3=b2 + b4,
        p1=p1,
        p2=p2,
        c_h2=_derivative_growth_constant(deriv1, deriv2, p1, p2),
        h0=4.0 * (rho - 1.0) * b4 * (rho + 1.0) / (b3**2 * rho**2),
        alpha_regime="standard",
    )
    return drift, cert


def _derivative_growth_constant(
    deriv1: Callable, deriv2: Callable, p1: float, p2: float
) -> float:
    envelope = 1.0 + _CERT_GRID**p1 + _CERT_GRID**-p2
    return float(np.max((np.abs(deriv1(_CERT_GRID)) + np.abs(deriv2(_CERT_GRID))) / envelope))


# ---------------------------------------------------------------------------
# Model specifications and the Lamperti transform pair
# ---------------------------------------------------------------------------


class _LampertiModel:
    """Shared behavior of the two model families.

    Subclasses are frozen dataclasses exposing ``transform_exponent`` (the m
    in X = Y^m) plus original-coordinates parameters.  The inverse map is
    Y = X^{1/m} and the transformed noise intensity is sigma * m.
    """

    @property
    def transform_exponent(self) -> float:
        raise NotImplementedError

    @property
    def inverse_exponent(self) -> float:
        """Exponent l with Y = X^l; negative for the Ait-Sahalia family."""
        return 1.0 / self.transform_exponent

    @property
    def sigma_x(self) -> float:
        return self.sigma * self.transform_exponent

    @property
    def x0(self) -> float:
        return float(self.y0**self.transform_exponent)

    def drift(self) -> tuple[DriftFn, AssumptionCertificate]:
        return _drift_cache(self)

    def _common_validate(self):
        if self.sigma == 0.0:
            raise ParameterError("sigma must be nonzero")
        if not self.y0 > 0.0:
            raise ParameterError(f"y0 must be positive, got {self.y0}")
        Hurst(self.hurst)  # range check
        validate_certificate(self.drift()[1], self.hurst)


@dataclass(frozen=True)
class MeanRevertingModel(_LampertiModel):
    """dY = (a1 - a2 Y) dt + sigma Y^gamma dB^H in original coordinates."""

    a1: float
    a2: float
    gamma: float
    sigma: float
    y0: float
    hurst: float

    def __post_init__(self):
        self._common_validate()

    @property
    def transform_exponent(self) -> float:
        return 1.0 - self.gamma

    def _make_drift(self):
        return mean_reverting_drift(self.a1, self.a2, self.gamma)

    @property
    def family(self) -> str:
        return "mean_reverting"


@dataclass(frozen=True)
class AitSahaliaModel(_LampertiModel):
    """dY = (a_m1/Y - a0 + a1 Y - a2 Y^r) dt + sigma Y^rho dB^H."""

    a_m1: float
    a0: float
    a1: float
    a2: float
    r: float
    rho: float
    sigma: float
    y0: float
    hurst: float

    def __post_init__(self):
        self._common_validate()

    @property
    def transform_exponent(self) -> float:
        return 1.0 - self.rho

    def _make_drift(self):
        return ait_sahalia_drift(self.a_m1, self.a0, self.a1, self.a2, self.r, self.rho)

    @property
    def family(self) -> str:
        return "ait_sahalia"


ModelSpec = MeanRevertingModel | AitSahaliaModel


@lru_cache(maxsize=64)
def _drift_cache(model: ModelSpec) -> tuple[DriftFn, AssumptionCertificate]:
    return model._make_drift()


def _positive_power(arg, exponent, what: str):
    arr = np.asarray(arg, dtype=float)
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise ParameterError(f"{what} must be positive and finite")
    # extended precision keeps forward/inverse a numerical bijection: forming
    # 1/m in double would leave m * (1/m) off by an ulp, an error that |log y|
    # amplifies to several ulps across wide ranges
    out = np.asarray(arr.astype(np.longdouble) ** exponent, dtype=float)
    return float(out) if np.ndim(arg) == 0 else out


def lamperti_forward(model: ModelSpec, y):
    """Map original coordinates to transformed ones: X = Y^m, m = transform exponent."""
    return _positive_power(y, np.longdouble(model.transform_exponent), "y")


def lamperti_inverse(model: ModelSpec, x):
    """Map transformed coordinates back: Y = X^{1/m}."""
    return _positive_power(
        x, np.longdouble(1.0) / np.longdouble(model.transform_exponent), "x"
    )


# ---------------------------------------------------------------------------
# Assumption audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditCheck:
    name: str
    passed: bool
    worst_margin: float
    worst_x: float
    tolerance: float
    description: str


@dataclass(frozen=True)
class AuditReport:
    drift_name: str
    checks: tuple[AuditCheck, ...]

    @property
    def all_passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def table(self) -> str:
        header = f"{'check':<24} {'status':<6} {'worst margin':>14} {'at x':>12}"
        lines = [header, "-" * len(header)]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(
                f"{c.name:<24} {status:<6} {c.worst_margin:>14.6g} {c.worst_x:>12.6g}"
            )
        return "\n".join(lines)


def _finite_difference_checks(drift: DriftFn, grid: np.ndarray) -> list[AuditCheck]:
    # Central differences with a step proportional to x.  A fixed absolute
    # step would make the truncation error of the x^{-alpha} terms swamp the
    # tolerance at the small-x end of the grid.
    checks = []
    rtol = 1e-6
    for name, fn, dfn in (
        ("fd_consistency_deriv1", drift.value, drift.deriv1),
        ("fd_consistency_deriv2", drift.deriv1, drift.deriv2),
    ):
        delta = 1e-6 * grid
        f_hi = np.asarray(fn(grid + delta), dtype=float)
        f_lo = np.asarray(fn(grid - delta), dtype=float)
        fd = (f_hi - f_lo) / (2.0 * delta)
        exact = np.asarray(dfn(grid), dtype=float)
        # tolerance: relative part plus the cancellation noise floor of the
        # difference quotient itself
        eps = np.finfo(float).eps
        allowed = rtol * np.abs(exact) + 8.0 * eps * np.maximum(
            np.abs(f_hi), np.abs(f_lo)
        ) / delta + 1e-300
        err = np.abs(fd - exact)
        margin = allowed - err
        worst = int(np.argmin(margin / allowed))
        checks.append(
            AuditCheck(
                name=name,
                passed=bool(np.all(err <= allowed)),
                worst_margin=float((margin / allowed)[worst]),
                worst_x=float(grid[worst]),
                tolerance=rtol,
                description="closed-form derivative vs central difference",
            )
        )
    return checks


def audit_assumptions(
    drift: DriftFn,
    cert: AssumptionCertificate,
    audit_grid: np.ndarray | None = None,
    pair_count: int = 1000,
    seed: int = 7,
) -> AuditReport:
    """Numerically probe the certificate's inequalities on a wide grid.

    Violations are reported, never raised: the audit is a diagnostic.  The
    grid must span at least [1e-4, 1e4].
    """
    grid = _CERT_GRID if audit_grid is None else np.asarray(audit_grid, dtype=float)
    if grid.min() > 1e-4 or grid.max() < 1e4 or np.any(grid <= 0.0):
        raise UsageError("audit grid must be positive and span at least [1e-4, 1e4]")
    if pair_count < 1:
        raise UsageError("pair_count must be >= 1")

    rng = np.random.default_rng(seed)
    b_vals = np.asarray(drift.value(grid), dtype=float)
    checks: list[AuditCheck] = []

    # one-sided Lipschitz condition on sampled pairs, normalized by (x - y)^2
    i = rng.integers(0, grid.size, size=pair_count)
    j = rng.integers(0, grid.size, size=pair_count)
    keep = i != j
    x, y = grid[i[keep]], grid[j[keep]]
    slope = (b_vals[i[keep]] - b_vals[j[keep]]) / (x - y)
    tol_a1 = 1e-6 * (1.0 + abs(cert.K))
    worst = int(np.argmax(slope))
    checks.append(
        AuditCheck(
            "one_sided_lipschitz",
            passed=bool(np.all(slope <= cert.K + tol_a1)),
            worst_margin=float(cert.K - slope[worst]),
            worst_x=float(x[worst]),
            tolerance=tol_a1,
            description="(B(x)-B(y))(x-y) <= K (x-y)^2 on sampled grid pairs",
        )
    )

    # singular lower bound below the crossover x1, relative to x^{-alpha}
    near = grid <= cert.x1
    if near.any():
        ratio = b_vals[near] / grid[near] ** -cert.alpha
        margin = ratio - cert.h1_min
        worst = int(np.argmin(margin))
        checks.append(
            AuditCheck(
                "singular_lower_bound",
                passed=bool(np.all(margin >= -1e-9 * cert.h1_min)),
                worst_margin=float(margin[worst]),
                worst_x=float(grid[near][worst]),
                tolerance=1e-9,
                description="B(x) >= h1_min x^{-alpha} for x <= x1",
            )
        )

    # upper growth bound
    envelope = cert.h4 * (1.0 + grid + grid**-cert.theta)
    margin = (envelope - b_vals) / envelope
    worst = int(np.argmin(margin))
    checks.append(
        AuditCheck(
            "upper_growth",
            passed=bool(np.all(margin >= -1e-9)),
            worst_margin=float(margin[worst]),
            worst_x=float(grid[worst]),
            tolerance=1e-9,
            description="B(x) <= h4 (1 + x + x^{-theta})",
        )
    )

    # growth of the negative part
    neg = np.maximum(-b_vals, 0.0)
    envelope = cert.h3 * (1.0 + grid**cert.q) + 1e-300
    margin = (envelope - neg) / envelope
    worst = int(np.argmin(margin))
    checks.append(
        AuditCheck(
            "negative_part_growth",
            passed=bool(np.all(neg <= cert.h3 * (1.0 + grid**cert.q) + 1e-12)),
            worst_margin=float(margin[worst]),
            worst_x=float(grid[worst]),
            tolerance=1e-12,
            description="B(x)^- <= h3 (1 + x^q)",
        )
    )

    # derivative growth envelope
    lhs = np.abs(np.asarray(drift.deriv1(grid), dtype=float)) + np.abs(
        np.asarray(drift.deriv2(grid), dtype=float)
    )
    envelope = cert.c_h2 * (1.0 + grid**cert.p1 + grid**-cert.p2)
    margin = (envelope - lhs) / envelope
    worst = int(np.argmin(margin))
    checks.append(
        AuditCheck(
            "derivative_growth",
            passed=bool(np.all(margin >= -1e-6)),
            worst_margin=float(margin[worst]),
            worst_x=float(grid[worst]),
            tolerance=1e-6,
            description="|B'(x)| + |B''(x)| <= c (1 + x^{p1} + x^{-p2})",
        )
    )

    checks.extend(_finite_difference_checks(drift, grid))
    return AuditReport(drift_name=drift.name, checks=tuple(checks))
