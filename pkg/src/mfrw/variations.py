"""L^p-variation statistics, Hermite machinery and the zeta(p) estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite_e
from scipy.special import gamma as gamma_fn
from scipy.stats import norm, t as student_t

from .errors import DataError, DegenerateDataError, DomainError
from .process import ConditionalCovariance, PathSample, coarsen_covariance

CI_LEVEL = 0.95
DEFAULT_R_MAX = 8
_QUAD_NODES = 80


def _check_even(p, name="p") -> int:
    if int(p) != p or p < 2 or int(p) % 2:
        raise DomainError(f"{name} must be an even integer >= 2, got {p}")
    return int(p)


def gaussian_abs_moment(p: float) -> float:
    """``E|Z|^p`` for a standard normal ``Z``."""
    if not p > 0:
        raise DomainError(f"p must be positive, got {p}")
    return float(2 ** (p / 2) * gamma_fn((p + 1) / 2) / math.sqrt(math.pi))


# --------------------------------------------------------------------------
# Hermite expansion of G(x) = |x|^p - c_p

@dataclass(frozen=True)
class HermiteExpansion:
    p: int
    coeffs: np.ndarray
    r_max: int

    @property
    def l2_norm(self) -> float:
        """Exact ``E G(Z)^2 = c_{2p} - c_p^2``."""
        return gaussian_abs_moment(2 * self.p) - gaussian_abs_moment(self.p) ** 2

    def weights(self) -> np.ndarray:
        """``g_r^2 r!`` for ``r = 0..r_max``."""
        fact = np.array([math.factorial(r) for r in range(self.r_max + 1)], dtype=float)
        return self.coeffs ** 2 * fact

    @property
    def truncation_error(self) -> float:
        """``sum_{r > r_max} g_r^2 r!``; zero when ``r_max >= p``."""
        return max(0.0, self.l2_norm - float(self.weights().sum()))


@lru_cache(maxsize=None)
def _hermite_nodes(n: int):
    x, w = hermite_e.hermegauss(n)
    return x, w / math.sqrt(2 * math.pi)


def hermite_coeffs(p: int, r_max: int = DEFAULT_R_MAX) -> HermiteExpansion:
    """``g_r = E[G(Z) He_r(Z)] / r!`` by Gauss-Hermite quadrature."""
    p = _check_even(p)
    if r_max < 2 or r_max % 2:
        raise DomainError(f"r_max must be an even integer >= 2, got {r_max}")
    x, w = _hermite_nodes(_QUAD_NODES)
    g = np.abs(x) ** p - gaussian_abs_moment(p)
    coeffs = np.empty(r_max + 1)
    for r in range(r_max + 1):
        basis = np.zeros(r + 1)
        basis[r] = 1.0
        coeffs[r] = np.dot(w, g * hermite_e.hermeval(x, basis)) / math.factorial(r)
    # odd coefficients vanish by symmetry; clear quadrature round-off
    coeffs[1::2] = 0.0
    coeffs[0] = 0.0
    coeffs.flags.writeable = False
    return HermiteExpansion(p, coeffs, r_max)


# --------------------------------------------------------------------------
# structure functions

def _as_cumulative(paths) -> tuple[np.ndarray, float]:
    if isinstance(paths, PathSample):
        paths = [paths]
    if len(paths) == 0:
        raise DataError("no paths supplied")
    if isinstance(paths, np.ndarray):
        cum = np.atleast_2d(np.asarray(paths, dtype=float))
        return cum, 1.0 / (cum.shape[1] - 1)
    sizes = {p.m_n for p in paths}
    if len(sizes) != 1:
        raise DataError("paths must share m_n")
    return np.stack([p.cumulative for p in paths]), paths[0].spacing


def coarsen_path(path: PathSample, factor: int) -> PathSample:
    """Sample the cumulative path every ``factor`` points."""
    if factor < 1 or path.m_n % factor:
        raise DomainError(f"factor {factor} does not divide m_n={path.m_n}")
    return PathSample.from_cumulative(path.cumulative[::factor], path.seed,
                                      path.spacing * factor)


@dataclass
class StructureFunctionTable:
    """Rows ``(level, tau, p, raw_mean, count)`` plus optional per-path means.

    ``per_path[p]`` has shape ``(n_paths, n_levels)`` when available; the
    replication confidence interval needs it.
    """

    levels: list[int]
    p_list: list[float]
    tau: dict[int, float]
    raw_mean: dict[tuple[float, int], float]
    count: dict[int, int]
    per_path: dict[float, np.ndarray] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)

    def rows(self):
        for p in self.p_list:
            for n in self.levels:
                yield n, self.tau[n], p, self.raw_mean[(p, n)], self.count[n]

    @property
    def degenerate(self) -> bool:
        return any(v <= 0 for v in self.raw_mean.values())

    def series(self, p: float) -> np.ndarray:
        return np.array([self.raw_mean[(p, n)] for n in self.levels])

    @classmethod
    def from_rows(cls, rows) -> "StructureFunctionTable":
        levels, p_list, tau, raw, count = [], [], {}, {}, {}
        for n, t, p, value, c in rows:
            n, c = int(n), int(c)
            if n not in tau:
                levels.append(n)
                tau[n], count[n] = float(t), c
            if p not in p_list:
                p_list.append(p)
            if (p, n) in raw:
                raise DataError(f"duplicate row for level {n}, p {p}")
            raw[(p, n)] = float(value)
        if not raw:
            raise DataError("structure-function table is empty")
        for p in p_list:
            for n in levels:
                if (p, n) not in raw:
                    raise DataError(f"missing row for level {n}, p {p}")
        return cls(sorted(levels), p_list, tau, raw, count)


def structure_function(paths, p_list, levels=None) -> StructureFunctionTable:
    """Empirical ``(1/m) sum |dX|^p`` at dyadic levels, averaged over paths.

    ``paths`` is a list of :class:`PathSample` or an array of cumulative
    paths (one per row).  Level ``n`` uses ``2**n`` increments.
    """
    cum, spacing = _as_cumulative(paths)
    m = cum.shape[1] - 1
    if m & (m - 1):
        raise DataError(f"path length {m} is not a power of two")
    top = m.bit_length() - 1
    levels = list(range(1, top + 1)) if levels is None else sorted(int(n) for n in levels)
    if not levels or levels[0] < 0 or levels[-1] > top:
        raise DomainError(f"levels must lie in [0, {top}]")
    p_list = [float(p) for p in p_list]
    if any(p <= 0 for p in p_list):
        raise DomainError("p must be positive")
    domain = spacing * m
    per_path = {p: np.empty((cum.shape[0], len(levels))) for p in p_list}
    for i, n in enumerate(levels):
        absinc = np.abs(np.diff(cum[:, :: m >> n], axis=1))
        for p in p_list:
            per_path[p][:, i] = np.mean(absinc ** p, axis=1)
    raw = {(p, n): float(np.mean(per_path[p][:, i]))
           for p in p_list for i, n in enumerate(levels)}
    seeds = [] if isinstance(paths, np.ndarray) else [p.seed for p in paths]
    return StructureFunctionTable(levels, p_list, {n: domain * 2.0 ** -n for n in levels},
                                  raw, {n: 1 << n for n in levels}, per_path, seeds)


# --------------------------------------------------------------------------
# conditional CLT quantities

def z_statistic(path, cov: ConditionalCovariance, p: int):
    """``(1/sqrt(m)) sum_j (|dX_j|^p - c_p a_j^p)``; vectorised over rows of an array."""
    p = _check_even(p)
    inc = path.increments if isinstance(path, PathSample) else np.asarray(path, dtype=float)
    if inc.shape[-1] != cov.m_n:
        raise DomainError(f"path has {inc.shape[-1]} increments, covariance {cov.m_n}")
    if np.any(cov.a <= 0):
        raise DomainError("all conditional scales a_j must be positive")
    centre = gaussian_abs_moment(p) * cov.a ** p
    z = (np.abs(inc) ** p - centre).sum(axis=-1) / math.sqrt(cov.m_n)
    return float(z) if np.ndim(z) == 0 else z


def gamma_n(cov: ConditionalCovariance, r: int, p: int) -> float:
    """``(1/m) sum_{j,k} rho(j,k)^r a_j^p a_k^p``."""
    r, p = _check_even(r, "r"), _check_even(p)
    ap = cov.a ** p
    return float(ap @ (cov.rho ** r) @ ap) / cov.m_n


def gamma_total(cov: ConditionalCovariance, p: int, r_max: int = DEFAULT_R_MAX) -> float:
    """``sum_r g_r^2 r! Gamma_n(r, p)``, the conditional variance of ``Z_n(p)``."""
    w = hermite_coeffs(p, r_max).weights()
    return float(sum(w[r] * gamma_n(cov, r, p) for r in range(2, r_max + 1, 2) if w[r]))


def _model_of(cov: ConditionalCovariance):
    if cov.model is None:
        raise DomainError("covariance carries no model provenance")
    return cov.model


def b_from_scales(a, H: float, model, p: int) -> float:
    """``(m^{pH - psi(p)} / m) sum_j c_p a_j^p`` from the scales alone."""
    m = len(a)
    scale = m ** (p * H - model.psi(p)) / m
    return float(scale * gaussian_abs_moment(p) * np.sum(np.asarray(a) ** p))


def b_statistic(cov: ConditionalCovariance, p: int) -> float:
    """Normalised conditional mean ``B_n(p)`` of the p-variation."""
    p = _check_even(p)
    return b_from_scales(cov.a, cov.H, _model_of(cov), p)


def standardized_z(z, cov: ConditionalCovariance, p: int, r_max: int = DEFAULT_R_MAX):
    """``Z_n(p)`` divided by its conditional standard deviation.

    The normalising powers of ``m_n`` in the limit theorem cancel here.
    """
    return np.asarray(z) / math.sqrt(gamma_total(cov, p, r_max))


def clt_relative_sd(cov: ConditionalCovariance, p: int, r_max: int = DEFAULT_R_MAX) -> float:
    """Conditional standard deviation of ``ln S_n(p)`` to first order.

    Equals ``Gamma_n(p)^{1/2} / (B_n(p) m^{1/2 + psi(p) - psi(2p)/2})`` after
    dividing by the model normalisations.
    """
    p = _check_even(p)
    model = _model_of(cov)
    m = cov.m_n
    norm_g = m ** (2 * p * cov.H - model.psi(2 * p))
    g = norm_g * gamma_total(cov, p, r_max)
    return math.sqrt(g) / (b_statistic(cov, p) * m ** (0.5 + model.psi(p) - model.psi(2 * p) / 2))


# --------------------------------------------------------------------------
# zeta estimator

@dataclass(frozen=True)
class ZetaEstimate:
    p: float
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    levels: tuple
    method: str
    stderr: float = 0.0

    def to_dict(self) -> dict:
        return {"p": self.p, "slope": self.slope, "intercept": self.intercept,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "levels": list(self.levels), "method": self.method}


def default_scale_range(levels) -> list[int]:
    """Drop the two coarsest levels and the finest one."""
    levels = sorted(levels)
    return levels[2:-1]


def _ols_weights(x: np.ndarray) -> np.ndarray:
    xc = x - x.mean()
    return xc / np.dot(xc, xc)


def estimate_zeta(table: StructureFunctionTable, p: float, scale_range=None,
                  method: str | None = None, cov: ConditionalCovariance | None = None,
                  r_max: int = DEFAULT_R_MAX) -> ZetaEstimate:
    """OLS of ``log2 raw_mean`` on level; the estimate is minus the slope.

    ``method`` is ``"replication"`` (spread of per-path means, default when
    available), ``"ols-residual"`` or ``"conditional-clt"`` (needs ``cov``
    at the finest path resolution).
    """
    p = float(p)
    if p not in table.p_list:
        raise DataError(f"p={p} not in table")
    levels = default_scale_range(table.levels) if scale_range is None else sorted(scale_range)
    missing = [n for n in levels if n not in table.tau]
    if missing:
        raise DataError(f"levels {missing} not in table")
    if len(levels) < 3:
        raise DataError("need at least 3 levels in the scale range")
    y = np.array([table.raw_mean[(p, n)] for n in levels])
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DegenerateDataError("nonpositive raw_mean in the scale range")
    x = np.array(levels, dtype=float)
    ly = np.log2(y)
    w = _ols_weights(x)
    slope = float(np.dot(w, ly))
    intercept = float(ly.mean() - slope * x.mean())

    if method is None:
        if cov is not None:
            method = "conditional-clt"
        elif p in table.per_path and table.per_path[p].shape[0] > 1:
            method = "replication"
        else:
            method = "ols-residual"

    if method == "replication":
        data = table.per_path.get(p)
        if data is None or data.shape[0] < 2:
            raise DataError("replication CI needs per-path means from >= 2 paths")
        idx = [table.levels.index(n) for n in levels]
        sub = data[:, idx]
        grad = w / (y * math.log(2))
        var = float(grad @ np.atleast_2d(np.cov(sub, rowvar=False)) @ grad) / sub.shape[0]
        # small-sample quantile; the spread is estimated from the same paths
        quantile = float(student_t.ppf(0.5 + CI_LEVEL / 2, sub.shape[0] - 1))
    elif method == "ols-residual":
        resid = ly - (intercept + slope * x)
        dof = len(x) - 2
        var = float(np.dot(resid, resid) / dof * np.dot(w, w))
    elif method == "conditional-clt":
        if cov is None:
            raise DomainError("conditional-clt CI needs a ConditionalCovariance")
        p_int = _check_even(p)
        top = cov.m_n.bit_length() - 1
        if cov.m_n != 1 << top or levels[-1] > top:
            raise DomainError("covariance resolution does not cover the scale range")
        sd = np.array([clt_relative_sd(coarsen_covariance(cov, 1 << (top - n)), p_int, r_max)
                       for n in levels]) / math.log(2)
        n_paths = max(1, next(iter(table.per_path.values())).shape[0]) if table.per_path else 1
        var = float(np.sum((w * sd) ** 2)) / n_paths
    else:
        raise DomainError(f"unknown CI method {method!r}")

    se = math.sqrt(max(var, 0.0))
    if method != "replication":
        quantile = float(norm.ppf(0.5 + CI_LEVEL / 2))
    half = quantile * se
    zeta_hat = -slope
    return ZetaEstimate(p, zeta_hat, intercept, zeta_hat - half, zeta_hat + half,
                        tuple(levels), method, se)
