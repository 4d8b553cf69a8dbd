"""Moment structure of the log-normal cascade and its admissibility conditions.

All functions here are pure.  The cascade is described by its cumulant
function ``psi`` (``E exp(q P(A)) = exp(psi(q) mu(A))``), normalised so that
``psi(1) = 0``.  Only the log-normal family is shipped; other infinitely
divisible families plug in by subclassing :class:`CumulantModel`.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidConfigError

#: epsilon grid on which the existential condition [A1] is checked
A1_EPS_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)

#: the general-T kernel replaces ln(1/.) by ln(T/.); recorded in reports
KERNEL_ASSUMPTION = (
    "rho_l(v) = ln(T/l) + 1 - v/l for v <= l, ln(T/v) for l < v <= T, 0 beyond T"
)
HALF_MEASURE_READING = (
    "M^{1/2} density read as exp(-psi(1/2) rho_l(0)) * exp(w_l/2), the "
    "renormaliser that makes E M^{1/2}[0,t] = t"
)


def _arr(q):
    return np.asarray(q, dtype=float)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


class CumulantModel(ABC):
    """Evaluation seam for the cascade's cumulant function."""

    @abstractmethod
    def psi(self, q):
        ...

    @abstractmethod
    def psi_prime(self, q):
        ...

    @abstractmethod
    def psi_second(self, q):
        ...

    @abstractmethod
    def to_dict(self) -> dict:
        ...


@dataclass(frozen=True)
class ScalingModel(CumulantModel):
    """Log-normal cascade, ``psi(q) = lambda2 (q**2 - q) / 2``."""

    lambda2: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.lambda2) or self.lambda2 < 0:
            raise DomainError(f"lambda2 must be finite and >= 0, got {self.lambda2}")

    @property
    def drift(self) -> float:
        # fixed by psi(1) = 0
        return 0.0 - 0.5 * self.lambda2

    def psi(self, q):
        return _scalar(self.drift * _arr(q) + 0.5 * self.lambda2 * _arr(q) ** 2)

    def psi_prime(self, q):
        return _scalar(self.drift + self.lambda2 * _arr(q))

    def psi_second(self, q):
        return _scalar(self.lambda2 + 0.0 * _arr(q))

    def to_dict(self) -> dict:
        return {"family": "log-normal", "lambda2": self.lambda2, "drift": self.drift}


@dataclass(frozen=True)
class CascadeConfig:
    """Geometry of a cascade synthesis.

    ``l`` defaults to the grid step ``domain_length / n_cells``.
    """

    T: float = 1.0
    domain_length: float = 1.0
    n_cells: int = 4096
    l: float | None = None

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise InvalidConfigError(f"T must be positive, got {self.T}")
        if not (self.domain_length > 0 and math.isfinite(self.domain_length)):
            raise InvalidConfigError(f"domain_length must be positive, got {self.domain_length}")
        n = int(self.n_cells)
        if n != self.n_cells or n < 2 or n & (n - 1):
            raise InvalidConfigError(f"n_cells must be a power of two >= 2, got {self.n_cells}")
        cut = self.cutoff
        if not (0 < cut <= self.T):
            raise InvalidConfigError(f"cutoff l must satisfy 0 < l <= T, got l={cut}, T={self.T}")

    @property
    def step(self) -> float:
        return self.domain_length / self.n_cells

    @property
    def cutoff(self) -> float:
        return self.step if self.l is None else float(self.l)

    def to_dict(self) -> dict:
        return {"T": self.T, "l": self.cutoff, "domain_length": self.domain_length,
                "n_cells": self.n_cells}


def psi(model: CumulantModel, q):
    return model.psi(q)


def zeta(model: CumulantModel, q):
    """Moment scaling exponent of the measure, ``q - psi(q)``."""
    return q - model.psi(q)


def rho_l(v, l: float, T: float = 1.0):
    """Covariance kernel of the log field at cutoff ``l`` and integral scale ``T``.

    Vectorised over ``v``; continuous, nonincreasing, zero beyond ``T``.
    """
    if not (l > 0) or l > T:
        raise InvalidConfigError(f"need 0 < l <= T, got l={l}, T={T}")
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise DomainError("rho_l is defined for v >= 0")
    inner = math.log(T / l) + 1.0 - v / l
    with np.errstate(divide="ignore"):
        middle = np.log(T / np.maximum(v, l))
    out = np.where(v <= l, inner, np.where(v <= T, middle, 0.0))
    return float(out) if out.ndim == 0 else out


def delta_m(model: CumulantModel, m: int) -> float:
    """Second difference ``psi(m) + psi(m-2) - 2 psi(m-1)``."""
    if m < 2 or int(m) != m:
        raise DomainError(f"delta_m needs an integer m >= 2, got {m}")
    return float(model.psi(m) + model.psi(m - 2) - 2.0 * model.psi(m - 1))


def omega_law(model: ScalingModel, lambda_ratio: float) -> tuple[float, float]:
    """Mean and variance of the Gaussian scale factor ``Omega_lambda``.

    ``E exp(q Omega) = lambda_ratio ** (-psi(q))`` for every real q.
    """
    if not (0.0 < lambda_ratio < 1.0):
        raise DomainError(f"lambda_ratio must lie in (0, 1), got {lambda_ratio}")
    log_inv = -math.log(lambda_ratio)
    return model.psi_prime(0.0) * log_inv, model.psi_second(0.0) * log_inv


# --------------------------------------------------------------------------
# admissibility conditions

@dataclass(frozen=True)
class ConditionCheck:
    passed: bool
    margin: float

    def to_dict(self) -> dict:
        return {"pass": bool(self.passed), "margin": float(self.margin)}


CONDITION_NAMES = ("a1", "a_q", "a_2q", "h1", "h_half", "h1_2p", "a_p", "h_range")


@dataclass
class ConditionReport:
    """Named pass/fail map with signed margins (positive means satisfied)."""

    H: float
    p: int
    model: dict
    checks: dict[str, ConditionCheck]
    conjectural: dict[str, ConditionCheck] = field(default_factory=dict)
    eps_grid: tuple = A1_EPS_GRID

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self, names=None) -> list[str]:
        names = CONDITION_NAMES if names is None else names
        return [n for n in names if not self.checks[n].passed]

    def to_dict(self) -> dict:
        return {
            "H": self.H,
            "p": self.p,
            "model": self.model,
            **{name: self.checks[name].to_dict() for name in CONDITION_NAMES},
            "conjectural": {k: v.to_dict() for k, v in self.conjectural.items()},
            "a1_eps_grid": list(self.eps_grid),
            "kernel_assumption": KERNEL_ASSUMPTION,
            "half_measure_reading": HALF_MEASURE_READING,
        }


def _check(margin: float) -> ConditionCheck:
    return ConditionCheck(bool(margin > 0), float(margin))


def check_conditions(model: CumulantModel, H: float, p: int) -> ConditionReport:
    """Evaluate every admissibility condition for ``(model, H, p)``.

    Never raises on a failing condition; failures are carried in the report.
    The conjectured sufficient condition ``2pH - 1 - psi(2p) > 0`` is
    reported under ``conjectural`` and is not part of :attr:`passed`.
    """
    if p < 2 or p % 2:
        raise DomainError(f"p must be an even integer >= 2, got {p}")
    a1_margin = max(float(zeta(model, 1 + e)) - 1.0 for e in A1_EPS_GRID)
    h1_2p = min(2 * H - 1 - delta_m(model, m) for m in range(2, 2 * p + 1))
    checks = {
        "a1": _check(a1_margin),
        "a_q": _check(float(zeta(model, p)) - 1.0),
        "a_2q": _check(float(zeta(model, 2 * p)) - 1.0),
        "h1": _check(H - float(model.psi(2.0)) / 2 - 0.5),
        "h_half": _check(H + float(model.psi(0.5)) - 0.5),
        "h1_2p": _check(h1_2p),
        "a_p": _check(float(model.psi(2.0 * p)) + 1 - 2 * p * float(model.psi_prime(2.0 * p))),
        "h_range": _check(min(H - 0.5, 0.75 - H)),
    }
    conjectural = {"moment_2p": _check(2 * p * H - 1 - float(model.psi(2.0 * p)))}
    return ConditionReport(H=float(H), p=int(p), model=model.to_dict(), checks=checks,
                           conjectural=conjectural)
