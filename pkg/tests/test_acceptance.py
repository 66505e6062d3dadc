"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy import integrate

from coloredshe import analysis as A
from coloredshe import cli
from coloredshe import kernel as K
from coloredshe.rng import RngSpec
from coloredshe.smallball import (fit_exponent, rate_linearity_in_T, running_sup, scaled_config,
                                  small_ball_table, splitting_small_ball)
from coloredshe.solver import SigmaSpec, factorization_check, scheme_variance, solve_general


def test_criterion_01_heat_kernel(record):
    start = time.perf_counter()
    t = np.logspace(-4, math.log10(4), 40)
    x = np.linspace(-1, 1, 41)
    T, X = np.meshgrid(t, x, indexing="ij")
    dual = float(np.max(np.abs(K.heat_kernel_image(T, X) - K.heat_kernel_spectral(T, X))))
    mass = max(abs(integrate.quad(lambda z: K.heat_kernel(s, z), -1, 1, epsabs=1e-13, limit=200,
                                  points=[0.0])[0] - 1) for s in (1e-3, 0.05, 0.3, 1.0))
    z = np.linspace(-1, 1, 8001)[:-1]
    semigroup = max(abs(np.sum(K.heat_kernel(0.05, xx - z) * K.heat_kernel(0.1, z)) * (2 / z.size)
                        - K.heat_kernel(0.15, xx)) for xx in x)
    elapsed = time.perf_counter() - start
    ok = dual < 1e-10 and mass < 1e-10 and semigroup < 1e-8 and elapsed < 10
    record(1, ok, f"dual={dual:.1e} mass={mass:.1e} semigroup={semigroup:.1e} ({elapsed:.1f}s)")
    assert ok


def test_criterion_02_riesz_coefficients(record):
    start = time.perf_counter()
    parts, ok = [], True
    for g in (0.25, 0.5, 0.75):
        k = K.riesz_coefficients(g, 4096)
        slope, _, _ = k.envelope(16, 4096)
        good = bool(np.all(k.q >= 0)) and abs(slope - (g - 1)) <= 0.02
        ok &= good
        parts.append(f"g={g}: slope={slope:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    record(2, ok, ", ".join(parts) + f" ({elapsed:.1f}s)")
    assert ok


def test_criterion_03_lattice_vs_series(record, kernel_4096):
    start = time.perf_counter()
    t, dt, dx, R = 1e-3, 2.5e-4, 1 / 16, 10_000
    k = kernel_4096.truncated(256)  # default mode count max(256, 4 / dx)
    u = solve_general(k, SigmaSpec.constant(1.0), None, t, dt, dx, RngSpec(303), trials=R, keep="final")
    col = u[:, 0]
    mc = float(np.mean(col**2))
    se = float(np.std(col**2, ddof=1) / math.sqrt(R))
    series = A.variance_of_N(kernel_4096, t)
    scheme = scheme_variance(k, t, dt, dx)
    bias = scheme - series
    elapsed = time.perf_counter() - start
    # the lattice matches its own exact variance, and the continuum up to that bias
    ok = abs(mc - series) <= abs(bias) + 3 * se and abs(mc - scheme) <= 3 * se and elapsed < 120
    record(3, ok, f"mc={mc:.5g} scheme={scheme:.5g} series={series:.5g} bias={bias:.3g} se={se:.2g} "
                  f"({elapsed:.1f}s)")
    assert ok


def test_criterion_04_scaling(record, kernel_4096):
    start = time.perf_counter()
    slope, _, _ = A.variance_slope(kernel_4096, 1e-5, 1e-2, 13)
    dec = A.covariance_decay(kernel_4096, 1e-6, np.logspace(math.log10(0.005), math.log10(0.5), 9))
    t1, R = 1e-3, 10_000
    gen = RngSpec(404).generator(0)
    a, b = A._sample_state(kernel_4096, t1, R, gen)
    n = np.arange(kernel_4096.mode_count + 1)
    seps = np.array([0.0, 0.05, 0.25])
    f0 = a.sum(axis=1)
    fd = a @ np.cos(np.pi * np.multiply.outer(n, seps)) + b @ np.sin(np.pi * np.multiply.outer(n[1:], seps))
    prod = f0[:, None] * fd
    z = np.abs(prod.mean(axis=0) - A.covariance_of_N(kernel_4096, t1, seps)) / (prod.std(axis=0, ddof=1) / math.sqrt(R))
    elapsed = time.perf_counter() - start
    ok = abs(slope - 0.75) <= 0.05 and abs(dec.slope + 0.5) <= 0.1 and np.all(z <= 3) and elapsed < 120
    record(4, ok, f"var slope={slope:.4f} cov slope={dec.slope:.4f} max|z|={z.max():.2f} ({elapsed:.1f}s)")
    assert ok


def test_criterion_05_eta_chain(record, kernel_4096):
    start = time.perf_counter()
    sweep = A.eta_sweep(kernel_4096, 0.2, [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    admissible = sweep.norm_11 < 1 / 3
    elapsed = time.perf_counter() - start
    ok = (bool(np.any(admissible)) and bool(np.all(sweep.eta_l1[admissible] <= 0.5)) and sweep.monotone
          and sweep.implication_holds and elapsed < 60)
    record(5, ok, f"admissible C0={list(sweep.C0[admissible])} max eta_l1 there="
                  f"{sweep.eta_l1[admissible].max():.3f}, monotone={sweep.monotone} ({elapsed:.1f}s)")
    assert ok


def test_criterion_06_regularity(record, kernel_4096):
    start = time.perf_counter()
    space = A.regularity_scan(kernel_4096, "space", 1.0, np.logspace(math.log10(0.0025), -1, 8),
                              10_000, RngSpec(606).substream(0))
    tm = A.regularity_scan(kernel_4096, "time", 1.0, np.logspace(-6, -4, 8), 10_000,
                           RngSpec(606).substream(1))
    elapsed = time.perf_counter() - start
    ok = space.passes and tm.passes and elapsed < 180
    record(6, ok, f"space slope={space.slope:.4f} (1.5), time slope={tm.slope:.4f} (0.75) ({elapsed:.1f}s)")
    assert ok


def test_criterion_07_tails(record, kernel_4096):
    start = time.perf_counter()
    inc = A.increment_tail_check(kernel_4096, ((0.5, 0.0), (0.5, 0.1)), trials=10_000, rng=RngSpec(707))
    ratio, expected, first, second = A.beta_doubling_ratio(kernel_4096, 1.0, 0.3, 10_000, RngSpec(708))
    elapsed = time.perf_counter() - start
    ok = (inc.passes and first.passes and second.passes and abs(ratio / expected - 1) <= 0.2
          and elapsed < 300)
    record(7, ok, f"increment c1={inc.c1:.2f} c2={inc.c2:.2f}; sup below envelope; "
                  f"beta ratio={ratio:.3f} expected={expected:.3f} ({elapsed:.1f}s)")
    assert ok


def test_criterion_08_factorization(record):
    start = time.perf_counter()
    errs = [factorization_check(0.2, n, 0.05, 1e-5, RngSpec(808), path_dt=1e-5).rel_err for n in range(5)]
    # refinement with the Brownian path held fixed
    path = np.random.default_rng(809).standard_normal(50) * math.sqrt(1e-3)
    ref = [factorization_check(0.2, 1, 0.05, d, None, increments=path, path_dt=1e-3).rel_err
           for d in (1e-3 / 4, 1e-3 / 16, 1e-3 / 64)]
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 1e-2 and ref[0] > ref[1] > ref[2] and elapsed < 60
    record(8, ok, f"max rel_err={max(errs):.2e}, refinement {ref[0]:.1e} > {ref[1]:.1e} > {ref[2]:.1e} "
                  f"({elapsed:.1f}s)")
    assert ok


@pytest.mark.slow
def test_criterion_09_small_ball(record):
    start = time.perf_counter()
    eps_list = [0.35, 0.3, 0.25, 0.2]
    base = RngSpec(909)
    results = [splitting_small_ball(e, [1.0], 20_000, scaled_config(e), base.substream(i))[0]
               for i, e in enumerate(eps_list)]
    fit = fit_exponent(results, 0.5)
    horizons = splitting_small_ball(0.35, [0.5, 1.0, 2.0], 20_000, scaled_config(0.35), base.substream(10))
    lin = rate_linearity_in_T(horizons)
    # pathwise monotonicity on shared trials (direct Monte Carlo, one lattice)
    sups = running_sup(scaled_config(0.35), [0.5, 1.0, 2.0], 20_000, base.substream(11))
    grid_eps = [0.2, 0.25, 0.3, 0.35, 0.5, 0.7, 1.0]
    table = small_ball_table(sups, grid_eps, [0.5, 1.0, 2.0])
    hits = np.array([r.hits for r in table]).reshape(3, len(grid_eps))
    pathwise = bool(np.all(np.diff(hits, axis=0) <= 0) and np.all(np.diff(hits, axis=1) >= 0))
    split_monotone = all(np.diff([r.log_p_hat for r in horizons]) <= 0) and all(
        np.diff([r.log_p_hat for r in results]) <= 0)
    elapsed = time.perf_counter() - start
    ok = fit.inside and lin.r_squared >= 0.95 and pathwise and split_monotone and elapsed < 1800
    record(9, ok, f"theta_hat={fit.theta_hat:.3f} +- {fit.stderr:.3f} bracket=(3.333, 6.667), "
                  f"R^2={lin.r_squared:.4f}, monotone={pathwise and split_monotone} ({elapsed:.0f}s)")
    assert ok


def test_criterion_10_gaussian_correlation(record):
    start = time.perf_counter()
    gen = np.random.default_rng(1010)
    margins, ok = [], True
    for i in range(10):
        dim = int(gen.integers(2, 9))
        cov, Kb, Lb = A.random_box_pair(dim, gen)
        rep = A.gaussian_correlation_spotcheck(dim, cov, Kb, Lb, 100_000, RngSpec(1011).substream(i))
        ok &= rep.passes
        margins.append(rep.margin / rep.se if rep.se > 0 else 0.0)
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    record(10, ok, f"min margin/se={min(margins):.2f} over 10 pairs ({elapsed:.1f}s)")
    assert ok


CHEAP_RUNS = {
    "kernel-check": ["--modes", "512"],
    "simulate": ["--trials", "1000", "--modes", "64", "--dx", "0.125", "--dt", "1e-4"],
    "smallball": ["--eps", "0.35,0.3,0.25", "--trials", "1600"],
    "exponent-fit": None,
    "variance": ["--trials", "500", "--modes", "512"],
    "regularity": ["--trials", "300", "--modes", "256"],
    "tails": ["--trials", "2000", "--modes", "256"],
    "eta": ["--eps", "0.5", "--C0", "1e-3,1e-1", "--modes", "256"],
    "factorize": ["--max-mode", "1", "--dt-fine", "1e-4"],
}


def test_criterion_11_determinism(record, tmp_path):
    same = {}
    for name, extra in CHEAP_RUNS.items():
        if name == "exponent-fit":
            extra = ["--in", str(tmp_path / "smallball-a" / "smallball.csv")]
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{name}-{tag}"
            code = cli.run([name, "--seed", "11", "--out", str(out)] + extra)
            assert code == 0, name
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same[name] = outs[0] == outs[1]
    # a manifest alone reproduces the run
    manifest = json.loads((tmp_path / "eta-a" / "manifest.json").read_text())
    assert manifest["seed"] == 11
    code = cli.run(["eta", "--config", str(tmp_path / "eta-a" / "config.txt"), "--out", str(tmp_path / "eta-c")])
    same["eta (from config.txt)"] = code == 0 and (tmp_path / "eta-c" / "eta.csv").read_bytes() == (
        tmp_path / "eta-a" / "eta.csv").read_bytes()
    ok = all(same.values())
    record(11, ok, f"{sum(same.values())}/{len(same)} runs byte-identical")
    assert ok
