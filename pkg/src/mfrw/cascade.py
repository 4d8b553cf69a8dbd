"""Log-correlated Gaussian field and the discretised multifractal measure.

The field ``w_l`` is stationary Gaussian with covariance
``lambda2 * rho_l(|t - s|)`` and mean ``drift * rho_l(0)``.  It is sampled by
circulant embedding; when the embedding is not numerically PSD the sampler
falls back to a dense Cholesky factorisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg

from .errors import DomainError, SynthesisError
from .scaling import CascadeConfig, ScalingModel, omega_law, rho_l
from .seeding import make_rng

#: negative embedding eigenvalues above this are clamped to zero
EMBEDDING_CLAMP = 1e-9
#: largest grid for the dense Cholesky fallback
DENSE_FALLBACK_MAX = 8192


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LogField:
    values: np.ndarray
    config: CascadeConfig
    model: ScalingModel
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (self.config.n_cells,):
            raise DomainError("field length must equal n_cells")

    @property
    def times(self) -> np.ndarray:
        """Cell midpoints."""
        return (np.arange(self.config.n_cells) + 0.5) * self.config.step


@dataclass(frozen=True, eq=False)
class MeasureGrid:
    """Cell masses of the discretised measure on ``[0, domain_length]``."""

    masses: np.ndarray
    beta: float
    config: CascadeConfig
    model: ScalingModel
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "masses", _frozen(self.masses))
        if self.masses.shape != (self.config.n_cells,):
            raise DomainError("masses length must equal n_cells")
        if self.beta not in (1.0, 0.5):
            raise DomainError(f"beta must be 1 or 1/2, got {self.beta}")

    @property
    def n_cells(self) -> int:
        return self.config.n_cells

    @property
    def step(self) -> float:
        return self.config.step

    @property
    def t_left(self) -> np.ndarray:
        return np.arange(self.n_cells) * self.step

    def total(self) -> float:
        """Total mass via the dyadic pairwise tree used by :func:`coarsen_measure`."""
        return float(_pairwise_reduce(self.masses, 1)[0])

    def cumulative(self) -> np.ndarray:
        """``M[0, t_j]`` at the grid points ``t_0 = 0, ..., t_n``."""
        return np.concatenate(([0.0], np.cumsum(self.masses)))

    def provenance(self) -> dict:
        return {"model": self.model.to_dict(), "config": self.config.to_dict(),
                "beta": self.beta, "seed": self.seed}


def _pairwise_reduce(x: np.ndarray, n_out: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    while x.size > n_out:
        x = x[0::2] + x[1::2]
    return x


@lru_cache(maxsize=16)
def _embedding(lambda2: float, T: float, l: float, step: float, n: int):
    lags = np.arange(n + 1) * step
    cov = lambda2 * rho_l(lags, l, T)
    row = np.concatenate((cov, cov[-2:0:-1]))
    eig = np.fft.fft(row).real
    lo = float(eig.min())
    meta = {"method": "circulant", "min_eigenvalue": lo, "clamp_tolerance": EMBEDDING_CLAMP,
            "clamped": int(np.sum(eig < 0))}
    if lo < -EMBEDDING_CLAMP:
        return None, meta
    amp = np.sqrt(np.clip(eig, 0.0, None) / row.size)
    amp.flags.writeable = False
    return amp, meta


@lru_cache(maxsize=4)
def _dense_factor(lambda2: float, T: float, l: float, step: float, n: int):
    if n > DENSE_FALLBACK_MAX:
        raise SynthesisError(f"circulant embedding failed and n={n} is too large for "
                             "the dense fallback")
    cov = lambda2 * rho_l(np.arange(n) * step, l, T)
    mat = linalg.toeplitz(cov)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        worst = float(np.linalg.eigvalsh(mat).min())
        raise SynthesisError(f"log-field covariance is not PSD: most negative "
                             f"eigenvalue {worst:.3e}") from None


def _field_values(model: ScalingModel, config: CascadeConfig, rng: np.random.Generator):
    n = config.n_cells
    l, T = config.cutoff, config.T
    mean = model.drift * rho_l(0.0, l, T)
    if model.lambda2 == 0:
        return np.full(n, mean), {"method": "degenerate"}
    amp, meta = _embedding(model.lambda2, T, l, config.step, n)
    if amp is not None:
        z = rng.standard_normal(amp.size) + 1j * rng.standard_normal(amp.size)
        return mean + np.fft.fft(amp * z).real[:n], dict(meta)
    factor = _dense_factor(model.lambda2, T, l, config.step, n)
    return mean + factor @ rng.standard_normal(n), {**meta, "method": "cholesky"}


def synth_log_field(model: ScalingModel, config: CascadeConfig, seed: int) -> LogField:
    """Draw ``w_l`` at the cell midpoints; deterministic in ``(model, config, seed)``."""
    values, meta = _field_values(model, config, make_rng(seed))
    return LogField(values, config, model, seed, meta)


def field_to_measure(field: LogField, beta: float = 1.0) -> MeasureGrid:
    """Midpoint-rule cell masses of ``exp(beta * w_l)``.

    For ``beta = 1/2`` the density is renormalised by ``exp(-psi(1/2) rho_l(0))``
    so that each cell has expected mass equal to its length.
    """
    cfg = field.config
    if beta == 1:
        masses = cfg.step * np.exp(field.values)
    elif beta == 0.5:
        renorm = math.exp(-field.model.psi(0.5) * rho_l(0.0, cfg.cutoff, cfg.T))
        masses = cfg.step * renorm * np.exp(0.5 * field.values)
    else:
        raise DomainError(f"beta must be 1 or 1/2, got {beta}")
    return MeasureGrid(masses, float(beta), cfg, field.model, field.seed)


def synth_measure(model: ScalingModel, config: CascadeConfig, seed: int,
                  beta: float = 1.0) -> MeasureGrid:
    return field_to_measure(synth_log_field(model, config, seed), beta)


def coarsen_measure(measure: MeasureGrid, level: int) -> MeasureGrid:
    """Aggregate to ``2**level`` cells by repeated pairwise summation."""
    if level < 1 or (1 << level) > measure.n_cells:
        raise DomainError(f"2**{level} cells cannot be formed from n_cells={measure.n_cells}")
    cfg = measure.config
    new_cfg = CascadeConfig(T=cfg.T, domain_length=cfg.domain_length, n_cells=1 << level,
                            l=cfg.cutoff)
    masses = _pairwise_reduce(measure.masses, 1 << level)
    return MeasureGrid(masses, measure.beta, new_cfg, measure.model, measure.seed)


def sample_omega(model: ScalingModel, lambda_ratio: float, seed: int, size=None):
    """Draw the scale factor ``Omega_lambda`` (Gaussian for the log-normal model)."""
    mean, var = omega_law(model, lambda_ratio)
    draw = make_rng(seed).standard_normal(size)
    out = mean + math.sqrt(var) * draw
    return float(out) if size is None else out
