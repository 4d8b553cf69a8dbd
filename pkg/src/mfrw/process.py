"""Conditionally Gaussian MFRW paths and the two reference processes.

Given a measure draw ``M``, the increments ``dX_j`` over blocks of the grid
are centred Gaussian with covariance
``sum_{u in j, v in k} M_u M_v Kbar(u, v)`` where ``Kbar`` is the cell-pair
average of ``c_H |u - v|**(2H - 2)``, ``c_H = H (2H - 1)``.  With this
constant, a Lebesgue measure on ``[0, 1]`` gives unit-variance fBm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.linalg import lapack

from .cascade import MeasureGrid, synth_measure
from .errors import ConditionRefused, DataError, DomainError, NumericalError
from .scaling import CascadeConfig, ScalingModel, check_conditions
from .seeding import mix64, stream_rng

#: relative diagonal jitters tried, in order, when a factorisation fails
JITTER_SCHEDULE = (1e-12, 1e-10)
DEFAULT_REFINE = 8

_SERIES_FROM = 4.0
_SERIES_TERMS = 24


def _check_kernel_H(H: float) -> None:
    if not (0.5 < H < 1.0):
        raise DomainError(f"the |u-v|^(2H-2) kernel needs 1/2 < H < 1, got {H}")


@lru_cache(maxsize=64)
def _binomial_even(alpha: float) -> np.ndarray:
    # C(alpha, 2k) for k = 1.._SERIES_TERMS
    coef, out = 1.0, []
    for n in range(1, 2 * _SERIES_TERMS + 1):
        coef *= (alpha - n + 1) / n
        if n % 2 == 0:
            out.append(coef)
    return np.array(out)


def second_difference(H: float, d) -> np.ndarray:
    """``(|d+1|^{2H} + |d-1|^{2H} - 2|d|^{2H}) / 2`` without cancellation.

    A binomial series in ``1/d`` is used for ``|d| >= 4``.
    """
    d = np.abs(np.asarray(d, dtype=float))
    alpha = 2.0 * H
    out = np.empty_like(d)
    near = d < _SERIES_FROM
    dn = d[near]
    out[near] = 0.5 * ((dn + 1) ** alpha + np.abs(dn - 1) ** alpha - 2 * dn ** alpha)
    far = d[~near]
    if far.size:
        x2 = far ** -2.0
        acc = np.zeros_like(far)
        for c in _binomial_even(alpha)[::-1]:
            acc = (acc + c) * x2
        out[~near] = far ** alpha * acc
    return out if out.ndim else float(out)


def fgn_autocovariance(H: float, lag, spacing: float = 1.0):
    """Autocovariance of fractional Gaussian noise at the given spacing."""
    return spacing ** (2 * H) * second_difference(H, lag)


def cell_kernel_integral(H: float, j, k, delta: float):
    """``int int c_H |u - v|^{2H-2}`` over cells ``j`` and ``k`` of width ``delta``."""
    _check_kernel_H(H)
    if not delta > 0:
        raise DomainError("delta must be positive")
    return delta ** (2 * H) * second_difference(H, np.asarray(j) - np.asarray(k))


@dataclass(frozen=True)
class FbmKernel:
    H: float

    def __post_init__(self):
        _check_kernel_H(self.H)

    @property
    def c_H(self) -> float:
        return self.H * (2 * self.H - 1)


# --------------------------------------------------------------------------
# conditional covariance

def _cholesky(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower factor with the bounded jitter policy; returns (factor, jitter)."""
    factor, info = lapack.dpotrf(sigma, lower=1, clean=1)
    if info == 0:
        return factor, 0.0
    scale = float(np.mean(np.diag(sigma)))
    for eps in JITTER_SCHEDULE:
        jitter = eps * scale
        factor, info = lapack.dpotrf(sigma + jitter * np.eye(len(sigma)), lower=1, clean=1)
        if info == 0:
            return factor, jitter
    raise NumericalError(f"Cholesky failed at pivot index {info - 1} after jitter "
                         f"{JITTER_SCHEDULE[-1]:g} x mean(diag)")


@dataclass(frozen=True, eq=False)
class ConditionalCovariance:
    """Covariance of the ``m_n`` block increments given one measure draw."""

    sigma: np.ndarray
    H: float
    spacing: float
    model: ScalingModel | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.ascontiguousarray(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DomainError("sigma must be square")
        s.flags.writeable = False
        object.__setattr__(self, "sigma", s)

    @property
    def m_n(self) -> int:
        return self.sigma.shape[0]

    @cached_property
    def a(self) -> np.ndarray:
        """Conditional standard deviations of the increments."""
        return np.sqrt(np.diag(self.sigma))

    @cached_property
    def rho(self) -> np.ndarray:
        """Conditional correlation matrix."""
        return self.sigma / np.outer(self.a, self.a)

    @cached_property
    def _factor(self):
        return _cholesky(np.array(self.sigma))

    @property
    def cholesky(self) -> np.ndarray:
        return self._factor[0]

    @property
    def jitter(self) -> float:
        return self._factor[1]


@lru_cache(maxsize=8)
def _kernel_table(H: float, n_offsets: int, delta: float) -> np.ndarray:
    # cell-pair kernel average Kbar at integer offsets 0..n_offsets
    table = cell_kernel_integral(H, np.arange(n_offsets + 1), 0, delta) / delta ** 2
    table.flags.writeable = False
    return table


def _validated_masses(measure: MeasureGrid, m_n: int, refine: int | None) -> tuple[np.ndarray, int]:
    if measure.beta != 1.0:
        raise DomainError("conditional covariance needs the beta = 1 measure")
    if refine is None:
        refine = measure.n_cells // m_n
    if m_n < 1 or refine < 1 or m_n * refine != measure.n_cells:
        raise DomainError(f"n_cells={measure.n_cells} != m_n * refine = {m_n} * {refine}")
    masses = np.asarray(measure.masses)
    if not np.all(np.isfinite(masses)):
        raise DataError("measure contains non-finite masses")
    return masses.reshape(m_n, refine), refine


def build_conditional_covariance(measure: MeasureGrid, H: float, m_n: int,
                                 refine: int | None = None) -> ConditionalCovariance:
    """Assemble the increment covariance over ``m_n`` blocks of ``refine`` cells."""
    _check_kernel_H(H)
    blocks, r = _validated_masses(measure, m_n, refine)
    kbar = _kernel_table(H, m_n * r, measure.step)
    idx = np.subtract.outer(np.arange(m_n), np.arange(m_n)) * r
    sigma = np.zeros((m_n, m_n))
    # group sub-cell pairs (a, b) by their offset e = a - b
    for e in range(-(r - 1), r):
        b = np.arange(max(0, -e), min(r, r - e))
        pair_mass = blocks[:, b + e] @ blocks[:, b].T
        sigma += pair_mass * kbar[np.abs(idx + e)]
    sigma = 0.5 * (sigma + sigma.T)
    return ConditionalCovariance(
        sigma, float(H), measure.config.domain_length / m_n, measure.model,
        {"measure_seed": measure.seed, "H": float(H), "refine": r,
         "config": measure.config.to_dict(), "model": measure.model.to_dict()})


def increment_scales(measure: MeasureGrid, H: float, m_n: int,
                     refine: int | None = None) -> np.ndarray:
    """The diagonal ``a_j`` of the conditional covariance, without the full matrix."""
    _check_kernel_H(H)
    blocks, r = _validated_masses(measure, m_n, refine)
    kbar = _kernel_table(H, m_n * r, measure.step)
    local = kbar[np.abs(np.subtract.outer(np.arange(r), np.arange(r)))]
    return np.sqrt(np.einsum("ja,ab,jb->j", blocks, local, blocks))


def coarsen_covariance(cov: ConditionalCovariance, factor: int) -> ConditionalCovariance:
    """Covariance of sums of ``factor`` adjacent increments."""
    m = cov.m_n
    if factor < 1 or m % factor:
        raise DomainError(f"factor {factor} does not divide m_n={m}")
    k = m // factor
    sigma = cov.sigma.reshape(k, factor, k, factor).sum(axis=(1, 3))
    prov = dict(cov.provenance)
    prov["refine"] = prov.get("refine", 1) * factor
    return ConditionalCovariance(sigma, cov.H, cov.spacing * factor, cov.model, prov)


# --------------------------------------------------------------------------
# paths

@dataclass(frozen=True, eq=False)
class PathSample:
    """One path on a regular grid; ``cumulative[0] == 0``."""

    increments: np.ndarray
    cumulative: np.ndarray
    seed: int
    spacing: float = 1.0

    @classmethod
    def from_cumulative(cls, cumulative, seed: int, spacing: float) -> "PathSample":
        cum = np.ascontiguousarray(cumulative, dtype=float)
        if cum.ndim != 1 or cum.size < 2 or cum[0] != 0.0:
            raise DataError("cumulative must be a 1-D array starting at 0")
        inc = np.diff(cum)
        cum.flags.writeable = False
        inc.flags.writeable = False
        return cls(inc, cum, seed, spacing)

    @classmethod
    def from_increments(cls, increments, seed: int, spacing: float) -> "PathSample":
        inc = np.asarray(increments, dtype=float)
        return cls.from_cumulative(np.concatenate(([0.0], np.cumsum(inc))), seed, spacing)

    @property
    def m_n(self) -> int:
        return self.increments.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.m_n + 1) * self.spacing


def conditional_increments(cov: ConditionalCovariance, n_paths: int, seed: int) -> np.ndarray:
    """``(n_paths, m_n)`` array of draws ``L z``; path ``i`` uses stream ``i`` of ``seed``."""
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    z = np.stack([stream_rng(seed, i).standard_normal(cov.m_n) for i in range(n_paths)])
    return z @ cov.cholesky.T


def sample_conditional_paths(cov: ConditionalCovariance, n_paths: int,
                             seed: int) -> list[PathSample]:
    inc = conditional_increments(cov, n_paths, seed)
    return [PathSample.from_increments(row, mix64(seed, i), cov.spacing)
            for i, row in enumerate(inc)]


@lru_cache(maxsize=16)
def _fgn_embedding(H: float, n: int, spacing: float) -> np.ndarray:
    cov = fgn_autocovariance(H, np.arange(n + 1), spacing)
    row = np.concatenate((cov, cov[-2:0:-1]))
    eig = np.fft.fft(row).real
    if eig.min() < -1e-12 * eig.max():
        raise NumericalError(f"fGn circulant embedding has eigenvalue {eig.min():.3e}")
    amp = np.sqrt(np.clip(eig, 0.0, None) / row.size)
    amp.flags.writeable = False
    return amp


def _fgn_rows(H: float, n: int, spacing: float, seed: int, streams) -> np.ndarray:
    amp = _fgn_embedding(H, n, spacing)
    z = np.empty((len(streams), amp.size), dtype=complex)
    for row, s in enumerate(streams):
        rng = stream_rng(seed, s)
        z[row].real = rng.standard_normal(amp.size)
        z[row].imag = rng.standard_normal(amp.size)
    return np.fft.fft(amp * z, axis=1).real[:, :n]


def synth_fgn_exact(H: float, m_n: int, seed: int) -> PathSample:
    """Exact fGn at spacing ``1/m_n`` (unit-variance fBm on ``[0, 1]``)."""
    if not (0.0 < H < 1.0):
        raise DomainError(f"H must lie in (0, 1), got {H}")
    spacing = 1.0 / m_n
    inc = _fgn_rows(H, m_n, spacing, seed, [0])[0]
    return PathSample.from_increments(inc, seed, spacing)


def integral_increments(measure: MeasureGrid, H: float, m_n: int, n_paths: int,
                        seed: int, chunk: int = 64) -> np.ndarray:
    """Draw block increments as ``sum_u (M_u / du) dB^H_u`` over sub-cells.

    The conditional law is exactly ``N(0, sigma)`` with ``sigma`` from
    :func:`build_conditional_covariance`, at ``O(N log N)`` cost per path.
    """
    _check_kernel_H(H)
    blocks, r = _validated_masses(measure, m_n, None)
    density = (blocks / measure.step).ravel()
    out = np.empty((n_paths, m_n))
    for start in range(0, n_paths, chunk):
        rows = list(range(start, min(n_paths, start + chunk)))
        noise = _fgn_rows(H, measure.n_cells, measure.step, seed, rows)
        out[start:start + len(rows)] = (noise * density).reshape(len(rows), m_n, r).sum(axis=2)
    return out


def synth_mfrw(model: ScalingModel, config: CascadeConfig, H: float, m_n: int,
               refine: int = DEFAULT_REFINE, seed: int = 0, n_paths: int = 1):
    """Measure draw, its conditional covariance and ``n_paths`` conditional paths.

    Refuses with :class:`ConditionRefused` when the existence condition on
    ``(H, psi(2))`` fails.
    """
    report = check_conditions(model, H, 2)
    if not report.checks["h1"].passed or not (0.5 < H < 1):
        raise ConditionRefused("MFRW synthesis refused: condition h1 fails", report)
    if config.n_cells != m_n * refine:
        raise DomainError(f"config.n_cells={config.n_cells} != m_n * refine")
    measure = synth_measure(model, config, mix64(seed, 0))
    cov = build_conditional_covariance(measure, H, m_n, refine)
    paths = sample_conditional_paths(cov, n_paths, mix64(seed, 1))
    return measure, cov, paths


def synth_subordinated(measure: MeasureGrid, H: float, seed: int,
                       m_n: int | None = None) -> PathSample:
    """fBm in multifractal time, ``B^H(M[0, t_j])``, by dense Cholesky."""
    if not (0.0 < H < 1.0):
        raise DomainError(f"H must lie in (0, 1), got {H}")
    if measure.beta != 1.0:
        raise DomainError("subordination needs the beta = 1 measure")
    cum = measure.cumulative()
    if m_n is not None:
        if measure.n_cells % m_n:
            raise DomainError("m_n must divide n_cells")
        cum = cum[:: measure.n_cells // m_n]
    theta = cum[1:]
    a = theta ** (2 * H)
    cov = 0.5 * (a[:, None] + a[None, :] - np.abs(np.subtract.outer(theta, theta)) ** (2 * H))
    factor, _ = _cholesky(cov)
    path = factor @ stream_rng(seed, 0).standard_normal(theta.size)
    spacing = measure.config.domain_length / theta.size
    return PathSample.from_cumulative(np.concatenate(([0.0], path)), seed, spacing)
