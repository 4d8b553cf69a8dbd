import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import hermite_e

from mfrw.errors import DomainError, InvalidConfigError
from mfrw.scaling import (CONDITION_NAMES, CascadeConfig, ScalingModel, check_conditions,
                          delta_m, omega_law, psi, rho_l, zeta)

lambdas = st.floats(0.0, 1.5)


def test_psi_examples():
    m = ScalingModel(0.1)
    assert psi(m, 1) == 0.0
    assert psi(m, 0) == 0.0
    assert psi(m, 2) == pytest.approx(0.1, abs=1e-15)
    assert m.drift == -0.05


def test_zeta_examples():
    assert zeta(ScalingModel(0.0), 3.7) == 3.7
    assert zeta(ScalingModel(0.1), 2) == pytest.approx(1.9, abs=1e-15)
    assert zeta(ScalingModel(0.1), 4) == pytest.approx(3.4, abs=1e-15)


@given(lambdas)
def test_psi_normalisation_and_convexity(lam):
    m = ScalingModel(lam)
    assert m.psi(0.0) == 0.0 and m.psi(1.0) == 0.0
    q = np.arange(-2.0, 10.0001, 0.1)
    assert np.all(np.diff(m.psi(q), 2) >= -1e-12)
    assert np.all(np.diff(zeta(m, q), 2) <= 1e-12)
    assert zeta(m, 1.0) == 1.0


def test_negative_lambda_rejected():
    with pytest.raises(DomainError):
        ScalingModel(-0.1)


def test_rho_examples():
    assert rho_l(0.0, 0.01, 1.0) == pytest.approx(math.log(100) + 1, rel=1e-15)
    assert rho_l(1.0, 0.01, 1.0) == 0.0
    assert rho_l(0.01, 0.01, 1.0) == pytest.approx(math.log(100), rel=1e-15)
    assert rho_l(5.0, 0.01, 1.0) == 0.0


@pytest.mark.parametrize("l,T", [(2.0, 1.0), (0.0, 1.0), (-1.0, 1.0)])
def test_rho_invalid_config(l, T):
    with pytest.raises(InvalidConfigError):
        rho_l(0.0, l, T)


@given(st.floats(1e-4, 1.0), st.floats(1.0, 50.0))
def test_rho_monotone_and_continuous(l_frac, T):
    l = l_frac * T
    v = np.linspace(0, 1.5 * T, 2001)
    r = rho_l(v, l, T)
    assert np.all(np.diff(r) <= 1e-12)
    assert np.all(r <= rho_l(0.0, l, T))
    # both branches agree at v = l, and the kernel vanishes at T
    assert rho_l(l * (1 - 1e-12), l, T) == pytest.approx(rho_l(l * (1 + 1e-12), l, T), abs=1e-9)
    assert rho_l(T, l, T) == pytest.approx(0.0, abs=1e-12)


def test_delta_m():
    assert delta_m(ScalingModel(0.1), 2) == pytest.approx(0.1)
    assert delta_m(ScalingModel(0.0), 5) == 0.0
    m = ScalingModel(0.2)
    assert delta_m(m, 7) == pytest.approx(m.psi(7) + m.psi(5) - 2 * m.psi(6))
    for k in range(2, 12):
        assert delta_m(m, k) == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(DomainError):
        delta_m(m, 1)


def test_check_conditions_examples():
    rep = check_conditions(ScalingModel(0.1), 0.7, 2)
    assert rep.passed
    assert rep.checks["a_p"].margin == pytest.approx(0.2, abs=1e-12)
    rep = check_conditions(ScalingModel(0.5), 0.7, 2)
    assert not rep.checks["h1"].passed
    assert rep.checks["h1"].margin == pytest.approx(-0.05, abs=1e-12)
    assert "h1" in rep.failures()
    assert check_conditions(ScalingModel(0.0), 0.7, 4).passed


def test_check_conditions_serialisation():
    d = check_conditions(ScalingModel(0.1), 0.7, 2).to_dict()
    for name in CONDITION_NAMES:
        assert set(d[name]) == {"pass", "margin"}
    assert "moment_2p" in d["conjectural"]
    assert d["a1_eps_grid"] == [0.01, 0.05, 0.1, 0.5, 1.0]


def test_conjectural_condition_does_not_gate():
    # h_range fails at H = 0.8 but the conjectured moment condition is irrelevant to .passed
    rep = check_conditions(ScalingModel(0.0), 0.8, 2)
    assert rep.conjectural["moment_2p"].passed
    assert rep.failures() == ["h_range"]


def test_check_conditions_rejects_odd_p():
    with pytest.raises(DomainError):
        check_conditions(ScalingModel(0.1), 0.7, 3)


def test_omega_law_examples():
    mean, var = omega_law(ScalingModel(0.1), 1 / 256)
    assert mean == pytest.approx(-0.05 * math.log(256), rel=1e-14)
    assert var == pytest.approx(0.1 * math.log(256), rel=1e-14)
    mean, var = omega_law(ScalingModel(0.1), 1 - 1e-12)
    assert abs(mean) < 1e-12 and abs(var) < 1e-12
    for bad in (0.0, 1.0, 2.0):
        with pytest.raises(DomainError):
            omega_law(ScalingModel(0.1), bad)


@pytest.mark.parametrize("ratio", [1 / 2, 1 / 16, 1 / 1024])
@pytest.mark.parametrize("q", [1, 2, 3])
def test_omega_moment_identity(ratio, q):
    m = ScalingModel(0.1)
    mean, var = omega_law(m, ratio)
    assert math.exp(q * mean + q * q * var / 2) == pytest.approx(ratio ** -m.psi(q), rel=1e-12)
    # Gauss-Hermite quadrature of E exp(q Omega)
    x, w = hermite_e.hermegauss(60)
    quad = np.dot(w, np.exp(q * (mean + math.sqrt(var) * x))) / math.sqrt(2 * math.pi)
    assert quad == pytest.approx(ratio ** -m.psi(q), rel=1e-10)


@given(lambdas, st.floats(0.01, 0.99))
def test_omega_unit_mean(lam, ratio):
    mean, var = omega_law(ScalingModel(lam), ratio)
    assert math.exp(mean + var / 2) == pytest.approx(1.0, abs=1e-12)


def test_omega_variance_additivity():
    m = ScalingModel(0.1)
    _, v_half = omega_law(m, 0.5)
    mean_n, v_n = omega_law(m, 2.0 ** -10)
    assert v_n == pytest.approx(10 * v_half, rel=1e-14)
    assert mean_n == pytest.approx(10 * omega_law(m, 0.5)[0], rel=1e-14)


def test_cascade_config_defaults_and_validation():
    cfg = CascadeConfig(n_cells=1024)
    assert cfg.cutoff == cfg.step == 1 / 1024
    assert CascadeConfig(T=0.5, domain_length=2.0, n_cells=8).cutoff == 0.25
    for kwargs in ({"n_cells": 1000}, {"n_cells": 1}, {"T": 0.0}, {"l": 2.0},
                   {"domain_length": -1.0}):
        with pytest.raises(InvalidConfigError):
            CascadeConfig(**kwargs)
