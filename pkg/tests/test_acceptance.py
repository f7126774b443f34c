"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as they happen (visible with ``-s``) and again in the
terminal summary. The Taylor second-order weight used for the whole gate is
set by ETRACK_TAYLOR_HALF (``on`` by default, see the README); criteria 1
and 6 also print the other weight for reference.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from etrack import cli, oracles
from etrack.simharness import run_monte_carlo, segment_bounds

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
HALF = os.environ.get("ETRACK_TAYLOR_HALF", "on") == "on"
WEIGHT = "1/2" if HALF else "verbatim"
CORES = os.cpu_count() or 1
THREADS = int(os.environ.get("ETRACK_THREADS", CORES))


def record(num, passed, text):
    line = f"criterion {num}: {'PASS' if passed else 'FAIL'}  {text}"
    ACCEPTANCE_LINES[num] = line
    print(line)
    return passed


def run(check, seed=0, scale=1.0):
    return oracles.run_check(check, seed, scale, HALF)


def test_criterion_1_closed_form_accuracy():
    t0 = time.perf_counter()
    rows = oracles.nu_sweep(HALF)
    secs = time.perf_counter() - t0
    err = max(r[4] for r in rows)
    other = max(r[4] for r in oracles.nu_sweep(not HALF))
    ok = err < 0.10 and secs < 5.0
    record(1, ok, f"max |nu_closed - nu_opt| / nu_opt = {err:.4f} (< 0.10), {WEIGHT} weight, "
                  f"{len(rows)} grid points, {secs:.2f} s (< 5 s); other weight {other:.4f}")
    assert ok


def test_criterion_2_reduction_identity():
    r = run(oracles.check_reduction_identity)
    ok = r.passed and r.tol <= 1e-10 and r.seconds < 1.0
    record(2, ok, f"{r.detail}; max rel err {r.error:.2e} (< 1e-10), {r.seconds:.2f} s (< 1 s)")
    assert ok


def test_criterion_3_volume_preservation():
    r = run(oracles.check_volume_preservation)
    ok = r.passed and r.tol <= 1e-9 and r.seconds < 5.0
    record(3, ok, f"{r.detail}; max rel err {r.error:.2e} (< 1e-9), {r.seconds:.2f} s (< 5 s)")
    assert ok


def test_criterion_4_kl_projection():
    fixed = run(oracles.check_kl_fixed_point)
    grid = run(oracles.check_kl_grid_d1)
    secs = fixed.seconds + grid.seconds
    ok = fixed.passed and fixed.tol <= 1e-8 and grid.passed and secs < 30.0
    record(4, ok, f"fixed point err {fixed.error:.2e} (< 1e-8, {fixed.detail}); "
                  f"d = 1 grid {'agrees' if grid.passed else 'disagrees'} ({grid.detail}); {secs:.1f} s (< 30 s)")
    assert ok


def test_criterion_5_property_suite():
    checks = (
        (oracles.check_vec_identity, 1e-9),
        (oracles.check_trigamma_inequality, 0.0),
        (oracles.check_trigamma_vec_inequality, 0.0),
        (oracles.check_multigamma_derivative, None),
        (oracles.check_power_derivative, None),
        (oracles.check_transition_deterministic, None),
        (oracles.check_transition_marginal, 0.02),
        (oracles.check_iw_moments, 0.01),
        (oracles.check_mixture_moments, 0.01),
        (oracles.check_volume_coupled, None),
    )
    results = [(run(c), tol) for c, tol in checks]
    secs = sum(r.seconds for r, _ in results)
    bad = [r.name for r, tol in results if not r.passed or (tol is not None and r.tol > tol)]
    ok = not bad and secs < 300.0
    parts = ", ".join(f"{r.name} {r.error:.1e}" for r, _ in results)
    record(5, ok, f"{len(results)} checks, failing: {bad or 'none'}; {secs:.0f} s (< 300 s); {parts}")
    assert ok


def test_criterion_6_taylor_expectations():
    r = run(oracles.check_taylor)
    ok = r.passed and r.tol <= 0.02 and r.seconds < 120.0
    record(6, ok, f"{WEIGHT} weight configured, worst entry-wise err {r.error:.2%} (< 2%) up to 10 deg; "
                  f"{r.detail}; {r.seconds:.0f} s (< 120 s)")
    assert ok


def _load(name):
    cfg = cli.load_scenario(CONFIGS / f"{name}.toml")
    return cli.apply_overrides(cfg, runs=900, half_factor=HALF)


@pytest.fixture(scope="module")
def simulations():
    out = {}
    t0 = time.perf_counter()
    for name in ("scenario1", "scenario2"):
        cfg = _load(name)
        out[name] = (cfg, run_monte_carlo(cfg, threads=THREADS))
    out["seconds"] = time.perf_counter() - t0
    return out


def test_criterion_7_simulation(simulations):
    cfg1, rep1 = simulations["scenario1"]
    cfg2, rep2 = simulations["scenario2"]
    start, stop, _ = next(b for b in segment_bounds(cfg1) if b[2] != 0.0)
    turn = slice(start, stop)
    late = slice((start + stop) // 2, stop)
    gw = {n: rep1.gw[n][turn].mean() for n in rep1.estimators}
    gw_late = {n: rep1.gw[n][late].mean() for n in rep1.estimators}
    ext = {n: rep1.anees_ext[n][turn].mean() for n in rep1.estimators}

    ok_a = gw["M2"] < gw["M1"] and gw["M3"] < gw["M1"]
    share = float(np.mean(rep2.gw["M3"] <= rep2.gw["M2"]))
    ok_b = share >= 0.5
    ok_c = ext["M1"] > ext["M2"] and ext["M1"] > ext["M3"]

    # single-thread seconds spread over 8 cores (runs are independent)
    secs = simulations["seconds"]
    projected = secs * min(THREADS, CORES) / 8
    ok_t = projected < 600.0
    gain = float(np.max(1 - rep1.gw["M3"] / rep1.gw["M2"]))
    ext_rel = (ext["M1"] - ext["M3"]) / ext["M1"]
    diverged = {n: len(v) for r in (rep1, rep2) for n, v in r.diverged.items() if v}
    ok = ok_a and ok_b and ok_c and ok_t
    record(
        7,
        ok,
        f"N = 900, {WEIGHT} weight. "
        f"(a) {'PASS' if ok_a else 'FAIL'} turn-segment mean GW M1 {gw['M1']:.2f}, M2 {gw['M2']:.2f}, "
        f"M3 {gw['M3']:.2f} [late half: {gw_late['M1']:.2f}/{gw_late['M2']:.2f}/{gw_late['M3']:.2f}]; "
        f"(b) {'PASS' if ok_b else 'FAIL'} M3 <= M2 on {share:.0%} of variable-turn steps (>= 50%); "
        f"(c) {'PASS' if ok_c else 'FAIL'} turn extent ANEES M1 {ext['M1']:.2f}, M2 {ext['M2']:.2f}, "
        f"M3 {ext['M3']:.2f}; runtime {secs:.0f} s on {min(THREADS, CORES)} core(s), "
        f"{projected:.0f} s projected on 8 (< 600 s); soft: peak M3-vs-M2 GW gain "
        f"{gain:.1%} (ref ~8.7%), M1-vs-M3 extent ANEES rel diff {ext_rel:.1%} (ref ~32.7%); "
        f"diverged runs {diverged or 'none'}",
    )
    assert ok


def test_criterion_8_determinism():
    cfg = cli.apply_overrides(_load("scenario1"), runs=16, seed=11)
    one = run_monte_carlo(cfg, threads=1).to_bytes()
    eight = run_monte_carlo(cfg, threads=8).to_bytes()
    ok = one == eight
    record(8, ok, f"MetricsReport bytes identical for 1 and 8 workers ({len(one)} bytes, 16 runs)")
    assert ok
