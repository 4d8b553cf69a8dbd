"""Acceptance criteria 1-11 at their stated sizes and tolerances.

Each test records one PASS/FAIL line (printed in the terminal summary) and
then asserts.  Criteria that are known to be unattainable as stated still
run in full and fail.
"""

import math
import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from numpy.polynomial import hermite_e
from scipy import integrate

from mfrw.cli import main as cli_main
from mfrw.experiments import (exp_bias, exp_conditional_clt, exp_correlation_envelope,
                              exp_degenerate_limit, exp_gamma_stabilization, exp_linearization,
                              exp_measure_scaling)
from mfrw.process import cell_kernel_integral, synth_mfrw
from mfrw.scaling import CascadeConfig, ScalingModel
from mfrw.variations import gaussian_abs_moment, hermite_coeffs

WORKERS = os.cpu_count() or 1


def summarise(report):
    failed = [c.name for c in report.checks if not c.passed]
    return "all checks pass" if not failed else "failed: " + ", ".join(failed)


def fgn_gamma(H, m, lags):
    """fGn autocovariance at spacing 1/m, cancellation-free for large lags."""
    d = np.asarray(lags, dtype=float)
    g = np.where(d == 0, 1.0, 2 ** (2 * H - 1) - 1)
    far = d >= 2
    df = d[far]
    g[far] = 0.5 * df ** (2 * H) * (np.expm1(2 * H * np.log1p(1 / df))
                                    + np.expm1(2 * H * np.log1p(-1 / df)))
    return m ** (-2 * H) * g


def test_criterion_01_degenerate_reduction(record_criterion):
    start = time.perf_counter()
    H, m = 0.7, 512
    _, cov, paths = synth_mfrw(ScalingModel(0.0), CascadeConfig(n_cells=m * 8), H, m, 8, 0, 2000)
    sq = np.array([np.mean(p.increments ** 2) for p in paths])
    target = m ** (-2 * H)
    se = sq.std(ddof=1) / math.sqrt(len(sq))
    moment_ok = abs(sq.mean() - target) <= 3 * se
    lag = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
    oracle = fgn_gamma(H, m, lag)
    rel = float(np.max(np.abs(cov.sigma - oracle) / np.abs(oracle)))
    runtime = time.perf_counter() - start
    ok = moment_ok and rel <= 1e-12 and runtime < 60
    record_criterion(1, ok, f"E|dX|^2={sq.mean():.6g} vs {target:.6g} (3SE={3 * se:.2g}); "
                            f"max rel cov err={rel:.2g}; {runtime:.1f}s")
    assert ok


def kernel_oracle(H, d, delta):
    # double integral over a cell pair reduces to int_{-1}^{1} c_H |d+s|^{2H-2} (1-|s|) ds
    c = H * (2 * H - 1)
    a = 2 * H - 2
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200)
    if d == 0:
        # symmetric; singular at s=0 with weight s^a
        val = 2 * integrate.quad(lambda s: c * (1 - s), 0, 1, weight="alg", wvar=(a, 0), **opts)[0]
    elif d == 1:
        left = integrate.quad(lambda s: c * (1 + s), -1, 0, weight="alg", wvar=(a, 0), **opts)[0]
        right = integrate.quad(lambda s: c * (1 + s) ** a * (1 - s), 0, 1, **opts)[0]
        val = left + right
    else:
        f = lambda s: c * (d + s) ** a * (1 - abs(s))
        val = integrate.quad(f, -1, 0, **opts)[0] + integrate.quad(f, 0, 1, **opts)[0]
    return delta ** (2 * H) * val


def test_criterion_02_kernel_integrals(record_criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(20240611)
    worst = 0.0
    for _ in range(50):
        H = float(rng.uniform(0.51, 0.99))
        d = int(rng.choice([0, 1, 2, 3, 4, 5]) if rng.random() < 0.4
                else np.exp(rng.uniform(np.log(2), np.log(5000))))
        delta = float(2.0 ** -rng.integers(0, 12))
        j = int(rng.integers(0, 10_000))
        got = cell_kernel_integral(H, j + d, j, delta)
        ref = kernel_oracle(H, d, delta)
        worst = max(worst, abs(got - ref) / abs(ref))
    runtime = time.perf_counter() - start
    ok = worst <= 1e-10
    record_criterion(2, ok, f"max rel err over 50 pairs={worst:.2g}; {runtime:.1f}s")
    assert ok


def test_criterion_03_measure_scaling(record_criterion):
    start = time.perf_counter()
    rep = exp_measure_scaling(ScalingModel(0.1), CascadeConfig(n_cells=4096), (1.0, 2.0),
                              (0.125, 0.25, 0.5), replicas=10_000, seed=0, workers=WORKERS)
    runtime = time.perf_counter() - start
    ok = rep.passed and runtime < 120
    record_criterion(3, ok, f"{summarise(rep)}; {runtime:.1f}s")
    assert ok


def test_criterion_04_degenerate_limit(record_criterion):
    start = time.perf_counter()
    rep = exp_degenerate_limit(ScalingModel(0.2), 0.7, 1.0, 1.0,
                               [2.0 ** -k for k in range(4, 15)])
    runtime = time.perf_counter() - start
    ratio = rep.check("naive_final_over_initial").statistic
    halving = rep.check("renormalized_cauchy_halving").statistic
    record_criterion(4, rep.passed, f"{summarise(rep)}; final/initial={ratio:.3f}, "
                                    f"contraction={halving:.3f}; {runtime:.1f}s")
    assert rep.passed


def test_criterion_05_correlation_envelope(record_criterion):
    start = time.perf_counter()
    rep = exp_correlation_envelope(ScalingModel(0.1), 0.7, (128, 256), replicas=100, seed=5,
                                   refine=8, workers=WORKERS)
    runtime = time.perf_counter() - start
    ok = rep.passed and runtime < 120
    record_criterion(5, ok, f"{summarise(rep)}; C ratio="
                            f"{rep.check('envelope_stable').statistic:.3f}; {runtime:.1f}s")
    assert ok


def test_criterion_06_conditional_clt(record_criterion):
    start = time.perf_counter()
    details, ok = [], True
    for lam in (0.05, 0.0):
        rep = exp_conditional_clt(ScalingModel(lam), 0.7, 2, 1024, measure_seed=0,
                                  path_replicas=4000, seed=1)
        stats = ", ".join(f"{c.name}={c.statistic:.3g}" for c in rep.checks)
        details.append(f"lambda2={lam}: {summarise(rep)} ({stats})")
        ok &= rep.passed
    runtime = time.perf_counter() - start
    ok &= runtime < 300
    record_criterion(6, ok, "; ".join(details) + f"; {runtime:.1f}s")
    assert ok


def test_criterion_07_gamma_stabilization(record_criterion):
    start = time.perf_counter()
    details, ok = [], True
    for lam in (0.05, 0.0):
        rep = exp_gamma_stabilization(ScalingModel(lam), 0.7, 2, 2, (8, 9, 10, 11),
                                      replicas=100, seed=4, workers=WORKERS)
        c = rep.check("normalized_gamma_stabilizes")
        details.append(f"lambda2={lam}: variation={c.statistic:.3f} (<{c.tolerance})")
        ok &= rep.passed
    runtime = time.perf_counter() - start
    ok &= runtime < 180
    record_criterion(7, ok, "; ".join(details) + f"; {runtime:.1f}s")
    assert ok


def test_criterion_08_bias(record_criterion):
    start = time.perf_counter()
    rep = exp_bias(ScalingModel(0.05), 0.7, 2, (8, 9, 10, 11), replicas=500, seed=2,
                   workers=WORKERS)
    runtime = time.perf_counter() - start
    ok = rep.passed and runtime < 300
    rv = rep.check("ln_b_stabilizes").statistic
    rate = rep.check("fluctuation_rate")
    record_criterion(8, ok, f"{summarise(rep)}; median variation={rv:.3f}, "
                            f"rate slope={rate.statistic:.3f} vs {rate.target:.3f}; {runtime:.1f}s")
    assert ok


def test_criterion_09_linearization(record_criterion):
    start = time.perf_counter()
    rep = exp_linearization(ScalingModel(0.2), 0.7, (1, 2, 3, 4), tuple(range(6, 13)),
                            replicas=200, seed=3, omega_draws=10_000, workers=WORKERS)
    runtime = time.perf_counter() - start
    ok = rep.passed and runtime < 180
    rec = rep.check("p4_near_linear_target").statistic
    var = rep.check("omega_clt_variance").statistic
    record_criterion(9, ok, f"{summarise(rep)}; p=4 exponent={rec:.3f} (target 2.4), "
                            f"Omega var={var:.4f}; {runtime:.1f}s")
    assert ok


def test_criterion_10_hermite(record_criterion):
    start = time.perf_counter()
    errs = [abs(gaussian_abs_moment(2) - 1.0), abs(gaussian_abs_moment(4) - 3.0)]
    phi = lambda x: math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
    for p, norm in ((2, 2.0), (4, 96.0)):
        h = hermite_coeffs(p)
        cp = gaussian_abs_moment(p)
        for r in range(h.r_max + 1):
            basis = np.zeros(r + 1)
            basis[r] = 1.0
            f = lambda x: (abs(x) ** p - cp) * hermite_e.hermeval(x, basis) * phi(x)
            with warnings.catch_warnings():
                # odd r integrates to zero; quad flags round-off it cannot beat
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                ref = sum(integrate.quad(f, a, b, epsabs=1e-13, limit=200)[0]
                          for a, b in ((-np.inf, 0.0), (0.0, np.inf))) / math.factorial(r)
            errs.append(abs(h.coeffs[r] - ref))
        # polynomial algebra: |x|^p - c_p in the He basis
        mono = np.zeros(p + 1)
        mono[p], mono[0] = 1.0, -cp
        exact = hermite_e.poly2herme(mono)
        errs.append(float(np.max(np.abs(h.coeffs[:p + 1] - exact))))
        errs.append(abs(h.weights().sum() - norm))
    worst = max(errs)
    runtime = time.perf_counter() - start
    ok = worst <= 1e-9
    record_criterion(10, ok, f"max abs err={worst:.2g}; {runtime:.1f}s")
    assert ok


# default experiment sizes; only the seed is pinned
DETERMINISM_CONFIG = "run.seed = 11\n"


def run_suite(root: Path, cfg: Path, workers: int) -> None:
    common = ["--config", str(cfg)]
    for name in ("measure-scaling", "degenerate-limit", "conditional-clt", "bias",
                 "linearization", "gamma-stabilization", "correlation-envelope"):
        code = cli_main(common + ["experiment", name, "--out", str(root / "experiments"),
                                  "--workers", str(workers)])
        assert code in (0, 1), name
    for kind in ("measure", "path", "fgn", "subordinated"):
        assert cli_main(common + ["synth", "--kind", kind, "--out", str(root / "synth")]) == 0
    table = root / "structure.csv"
    assert cli_main(common + ["structure", "--p", "1,2,4", "--out", str(table)]) == 0
    assert cli_main(common + ["estimate", str(table), "--p", "2", "--levels", "2..6",
                              "--out", str(root / "estimate.json")]) == 0


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and not p.name.endswith(".timing.txt")}


def test_criterion_11_determinism(tmp_path, record_criterion, monkeypatch):
    monkeypatch.delenv("MFRW_SEED", raising=False)
    cfg = tmp_path / "suite.cfg"
    cfg.write_text(DETERMINISM_CONFIG)
    start = time.perf_counter()
    run_suite(tmp_path / "a", cfg, workers=1)
    run_suite(tmp_path / "b", cfg, workers=2)
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    csv_json = [k for k in a if k.endswith((".csv", ".json"))]
    ok = a == b and len(csv_json) == len(a) and len(a) > 20
    diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    runtime = time.perf_counter() - start
    detail = (f"{len(a)} files byte-identical across re-run and workers 1/2" if ok
              else f"differing files: {diff}")
    record_criterion(11, ok, f"{detail}; {runtime:.1f}s")
    assert ok
