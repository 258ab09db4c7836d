"""Exact-in-distribution sampling of fractional Brownian motion on uniform grids.

A fractional Brownian motion (fBM) with Hurst parameter ``H`` is the centered
Gaussian process with covariance

    R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2.

Only the long-memory regime ``1/2 < H < 1`` is supported.  Two exact samplers
are provided:

``CholeskySampler``
    Factors the Toeplitz covariance of the increment process (fractional
    Gaussian noise) once, then draws each path as ``L @ z``.  O(N^3) setup,
    O(N^2) per path.  The reference method for cross-validation.

``CirculantSampler``
    Davies-Harte style circulant embedding of the increment covariance,
    diagonalized by the FFT.  O(N log N) per path, the workhorse for fine
    grids.

Both samplers draw the increment vector first and accumulate node values with
a sequential cumulative sum, so ``np.cumsum(path.increments)`` reproduces
``path.values[1:]`` bitwise for every freshly generated path.

Reproducibility contract: each path is drawn from its own PCG64 generator
seeded with ``mix_seed(master_seed, path_index)``.  Path ``i`` of a batch is
therefore the same bit pattern regardless of scheduling, batching, or how many
worker threads/processes the caller uses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    EmbeddingError,
    FactorizationError,
    NumericalError,
    ParameterError,
    UsageError,
)

__all__ = [
    "Hurst",
    "TimeGrid",
    "FbmPath",
    "mix_seed",
    "fbm_covariance",
    "CholeskySampler",
    "CirculantSampler",
    "sample_fbm_cholesky",
    "sample_fbm_circulant",
    "subsample",
    "empirical_increment_moment",
]

# SplitMix64 finalizer constants (Steele, Lea, Flood 2014).
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1

# Relative tolerance for clamping tiny negative circulant eigenvalues, which
# are rounding noise: the embedding is nonnegative definite in exact
# arithmetic for H in (1/2, 1).
EIGENVALUE_CLAMP_REL = 1e-10


def mix_seed(master_seed: int, path_index: int) -> int:
    """Derive the per-path RNG seed from a master seed and a path index.

    The SplitMix64 finalizer is applied to
    ``master_seed + (path_index + 1) * 0x9E3779B97F4A7C15`` (mod 2^64).  The
    mix is counter based: any path's seed is computable without touching its
    predecessors, which is what makes parallel batch generation deterministic.
    """
    if path_index < 0:
        raise UsageError(f"path_index must be nonnegative, got {path_index}")
    z = (int(master_seed) + (int(path_index) + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class Hurst:
    """Hurst parameter restricted to the long-memory regime (1/2, 1)."""

    value: float

    def __post_init__(self):
        v = self.value
        if not (0.5 < v < 1.0):
            raise ParameterError(
                f"Hurst parameter must lie strictly inside (1/2, 1), got {v}"
            )


def as_hurst(hurst: "Hurst | float") -> Hurst:
    """Coerce a float to :class:`Hurst`, validating the admissible range."""
    return hurst if isinstance(hurst, Hurst) else Hurst(float(hurst))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_n = n * horizon / steps for n = 0..steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ParameterError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.steps + 1, dtype=float) * self.h
        t.setflags(write=False)
        return t


@dataclass(frozen=True)
class FbmPath:
    """One realized fBM path on a uniform grid.

    ``values`` has length ``steps + 1`` with ``values[0] == 0.0``;
    ``increments`` has length ``steps``.  Arrays are read-only: a path is an
    immutable value object, safe to share across threads.  ``master_seed`` and
    ``path_index`` record the draw's provenance.
    """

    grid: TimeGrid
    hurst: Hurst
    values: np.ndarray
    increments: np.ndarray
    master_seed: int
    path_index: int

    def __post_init__(self):
        n = self.grid.steps
        if self.values.shape != (n + 1,):
            raise UsageError(
                f"values must have length {n + 1}, got shape {self.values.shape}"
            )
        if self.increments.shape != (n,):
            raise UsageError(
                f"increments must have length {n}, got shape {self.increments.shape}"
            )
        if self.values[0] != 0.0:
            raise UsageError("fBM paths start at zero: values[0] must be 0.0")
        if not (np.isfinite(self.values).all() and np.isfinite(self.increments).all()):
            raise NumericalError("fBM path contains non-finite values")


def _read_only(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _path_from_increments(
    grid: TimeGrid,
    hurst: Hurst,
    increments: np.ndarray,
    master_seed: int,
    path_index: int,
) -> FbmPath:
    values = np.empty(grid.steps + 1)
    values[0] = 0.0
    np.cumsum(increments, out=values[1:])
    return FbmPath(
        grid, hurst, _read_only(values), _read_only(increments), master_seed, path_index
    )


def fbm_covariance(t, s, hurst: Hurst | float):
    """Covariance R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2.

    Accepts scalars or arrays (broadcast); times must be nonnegative.
    """
    h2 = 2.0 * as_hurst(hurst).value
    ta = np.asarray(t, dtype=float)
    sa = np.asarray(s, dtype=float)
    if np.any(ta < 0.0) or np.any(sa < 0.0):
        raise ParameterError("fbm_covariance requires nonnegative times")
    out = 0.5 * (ta**h2 + sa**h2 - np.abs(ta - sa) ** h2)
    if np.ndim(t) == 0 and np.ndim(s) == 0:
        return float(out)
    return out


def _fgn_autocovariance(hurst: Hurst, h: float, lags: int) -> np.ndarray:
    """Autocovariance of the increment sequence at lags 0..lags-1.

    gamma(k) = h^{2H} * (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) / 2.
    """
    k = np.arange(lags, dtype=float)
    two_h = 2.0 * hurst.value
    gamma = 0.5 * ((k + 1.0) ** two_h - 2.0 * k**two_h + np.abs(k - 1.0) ** two_h)
    return gamma * h**two_h


def _cholesky_lower(matrix: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        match = re.search(r"(\d+)", str(exc))
        pivot = int(match.group(1)) if match else None
        at = f" at pivot {pivot}" if pivot is not None else ""
        raise FactorizationError(
            f"Cholesky factorization lost positive definiteness{at}: {exc}",
            pivot=pivot,
        ) from exc


class CholeskySampler:
    """Exact fBM sampler from the Cholesky factor of the increment covariance.

    The increment (fractional Gaussian noise) covariance is Toeplitz and, for
    H in (1/2, 1), positive definite; its lower factor ``L`` is computed once
    at construction.  Each path draws ``z ~ N(0, I)`` and sets the increments
    to ``L @ z``, so node values carry exactly the covariance R_H on the grid.

    Instances are immutable after construction and safe to share across
    threads.
    """

    def __init__(self, hurst: Hurst | float, grid: TimeGrid):
        self.hurst = as_hurst(hurst)
        self.grid = grid
        gamma = _fgn_autocovariance(self.hurst, grid.h, grid.steps)
        self._factor = _read_only(_cholesky_lower(scipy.linalg.toeplitz(gamma)))

    def sample(self, master_seed: int, path_index: int = 0) -> FbmPath:
        rng = np.random.default_rng(mix_seed(master_seed, path_index))
        z = rng.standard_normal(self.grid.steps)
        return _path_from_increments(
            self.grid, self.hurst, self._factor @ z, master_seed, path_index
        )

    def sample_paths(
        self, master_seed: int, count: int, start_index: int = 0
    ) -> list[FbmPath]:
        return [self.sample(master_seed, start_index + i) for i in range(count)]


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


class CirculantSampler:
    """Exact O(N log N) fBM sampler via circulant embedding of the increments.

    The N x N Toeplitz increment covariance is embedded in a circulant of size
    ``M = next_pow2(2N)`` whose first row carries the true autocovariances up
    to lag M/2, mirrored:

        row = [gamma(0), ..., gamma(M/2), gamma(M/2 - 1), ..., gamma(1)].

    Any such extension leaves the law of the first N increments unchanged, so
    rounding M up to a power of two for the FFT is purely a speed choice.  In
    exact arithmetic the circulant eigenvalues are nonnegative for H in
    (1/2, 1); eigenvalues within ``EIGENVALUE_CLAMP_REL * max(eig)`` of zero
    are clamped to zero as rounding noise, anything more negative raises
    :class:`EmbeddingError` with the worst offender.

    Per path, ``M`` standard normals are drawn in a fixed, documented order
    (the two real modes first, then the real and imaginary interior blocks)
    and combined in the frequency domain; the first N entries of the real part
    of the transform are the increments.
    """

    def __init__(self, hurst: Hurst | float, grid: TimeGrid):
        self.hurst = as_hurst(hurst)
        self.grid = grid
        size = _next_pow2(max(2 * grid.steps, 2))
        half = size // 2
        gamma = _fgn_autocovariance(self.hurst, grid.h, half + 1)
        row = np.empty(size)
        row[: half + 1] = gamma
        row[half + 1 :] = gamma[1:half][::-1]
        eigs = np.fft.fft(row).real
        tol = EIGENVALUE_CLAMP_REL * float(eigs.max())
        most_negative = float(eigs.min())
        if most_negative < -tol:
            raise EmbeddingError(
                "circulant embedding is not nonnegative definite: most negative "
                f"eigenvalue {most_negative:.6e} exceeds clamp tolerance {tol:.6e}",
                most_negative=most_negative,
                tolerance=tol,
            )
        self._size = size
        self._half = half
        self._weights = _read_only(np.sqrt(np.where(eigs < 0.0, 0.0, eigs) / size))

    def sample(self, master_seed: int, path_index: int = 0) -> FbmPath:
        rng = np.random.default_rng(mix_seed(master_seed, path_index))
        size, half = self._size, self._half
        xi = np.zeros(size, dtype=complex)
        xi[0] = rng.standard_normal()
        xi[half] = rng.standard_normal()
        if half > 1:
            re_part = rng.standard_normal(half - 1)
            im_part = rng.standard_normal(half - 1)
            interior = (re_part + 1j * im_part) * np.sqrt(0.5)
            xi[1:half] = interior
            xi[half + 1 :] = np.conj(interior[::-1])
        spectrum = np.fft.fft(self._weights * xi)
        increments = np.ascontiguousarray(spectrum.real[: self.grid.steps])
        return _path_from_increments(
            self.grid, self.hurst, increments, master_seed, path_index
        )

    def sample_paths(
        self, master_seed: int, count: int, start_index: int = 0
    ) -> list[FbmPath]:
        return [self.sample(master_seed, start_index + i) for i in range(count)]


def sample_fbm_cholesky(
    hurst: Hurst | float, grid: TimeGrid, seed: int, path_index: int = 0
) -> FbmPath:
    """One-shot Cholesky draw.  For batches, build a :class:`CholeskySampler`
    once and reuse it: the factorization dominates the cost."""
    return CholeskySampler(hurst, grid).sample(seed, path_index)


def sample_fbm_circulant(
    hurst: Hurst | float, grid: TimeGrid, seed: int, path_index: int = 0
) -> FbmPath:
    """One-shot circulant-embedding draw (see :class:`CirculantSampler`)."""
    return CirculantSampler(hurst, grid).sample(seed, path_index)


def block_sums(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments.

    Each block is reduced by numpy's deterministic pairwise summation over the
    contiguous block, always in the same order, so results are reproducible
    bit for bit.
    """
    n = increments.shape[0]
    if factor < 1 or n % factor != 0:
        raise UsageError(f"block factor {factor} does not divide {n} increments")
    return increments.reshape(-1, factor).sum(axis=1)


def subsample(path: FbmPath, factor: int) -> FbmPath:
    """Restrict a path to every ``factor``-th node over the same horizon.

    Node values are taken by index, hence bitwise equal to the source at
    shared nodes.  Increments are block sums of the source increments (see
    :func:`block_sums`), which is the coupling used by step-ladder
    experiments.  The two arrays are each exact with respect to the source;
    their mutual cumulative-sum identity holds only up to rounding because
    block summation reassociates additions.
    """
    factor = int(factor)
    if factor < 1:
        raise UsageError(f"subsample factor must be >= 1, got {factor}")
    if path.grid.steps % factor != 0:
        raise UsageError(
            f"subsample factor {factor} does not divide step count {path.grid.steps}"
        )
    if factor == 1:
        return path
    coarse = TimeGrid(path.grid.horizon, path.grid.steps // factor)
    return FbmPath(
        coarse,
        path.hurst,
        _read_only(path.values[::factor].copy()),
        _read_only(block_sums(path.increments, factor)),
        path.master_seed,
        path.path_index,
    )


def empirical_increment_moment(
    paths: Iterable[FbmPath] | Sequence[FbmPath], p: float, lag: int
) -> float:
    """Monte Carlo estimate of E|B_{t + lag*h} - B_t|^p.

    Averages over all start nodes and all paths; the analytic value is
    C(p) * (lag * h)^{pH}, with C(2) = 1, which is what generator validation
    compares against.
    """
    paths = list(paths)
    if not paths:
        raise UsageError("empirical_increment_moment requires at least two paths")
    if len(paths) < 2:
        raise UsageError("empirical_increment_moment requires at least two paths")
    if p < 1.0:
        raise UsageError(f"moment order p must be >= 1, got {p}")
    grid, hurst = paths[0].grid, paths[0].hurst
    for path in paths[1:]:
        if path.grid != grid or path.hurst != hurst:
            raise UsageError("all paths must share the same grid and Hurst parameter")
    lag = int(lag)
    if not (1 <= lag <= grid.steps):
        raise UsageError(f"lag must lie in [1, {grid.steps}], got {lag}")
    stacked = np.stack([path.values for path in paths])
    diffs = stacked[:, lag:] - stacked[:, :-lag]
    return float(np.mean(np.abs(diffs) ** p))
