"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MFRWError(Exception):
    """Base class for all package errors."""


class DomainError(MFRWError, ValueError):
    """An argument lies outside the domain of an operation."""


class InvalidConfigError(DomainError):
    """A cascade or run configuration is inconsistent."""


class DataError(MFRWError, ValueError):
    """Input data is malformed, non-finite or empty."""


class DegenerateDataError(DataError):
    """Data carries no scaling information (e.g. all increments zero)."""


class NumericalError(MFRWError, ArithmeticError):
    """A factorisation or quadrature failed to converge."""


class SynthesisError(NumericalError):
    """A Gaussian field could not be synthesised from its covariance."""


class ConditionRefused(MFRWError):
    """An operation refused to run because admissibility conditions fail.

    The offending :class:`~mfrw.scaling.ConditionReport` is kept on
    ``self.report`` so callers can serialise it.
    """

    def __init__(self, message: str, report):
        super().__init__(message)
        self.report = report
