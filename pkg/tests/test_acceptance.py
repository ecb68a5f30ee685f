"""End-to-end acceptance checks.

Each test prints one ``ACCEPT <n> PASS|FAIL`` line with the measured numbers.
"Observed rate" is the least-squares slope of log(error) against log(h) over
the listed mesh sizes; the per-pair rates are printed next to it.
"""
import time

import numpy as np
import pytest
from scipy import linalg

from fraclap.krylov import CgConfig
from fraclap.pde import (AllenCahnConfig, ManufacturedFn, allen_cahn_run, build_operator,
                         poisson_study, truncation_study)
from fraclap.stencil import FracParams, build_stencil, norm_const
from fraclap.toeplitz import Field, GridSpec, assemble_operator

pytestmark = pytest.mark.slow

H4 = ["1/16", "1/32", "1/64", "1/128"]


@pytest.fixture
def report(capsys):
    def emit(num, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPT {num} {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


def rates_text(rep):
    pairs = "/".join(f"{r:.3f}" for r in rep.rates_inf)
    return f"fit {rep.fitted_rate_inf:.3f} (pairs {pairs})"


def within(value, target, rel):
    return abs(value - target) <= rel * abs(target)


def test_1_truncation_rough(report):
    expected = {0.1: 5.704e-4, 0.4: 4.250e-3, 0.7: 1.350e-2}
    ok, parts = True, []
    for alpha, e16 in expected.items():
        rep = truncation_study(FracParams(2, alpha), 1, H4, "1/1024")
        good = (abs(rep.fitted_rate_inf - (1 - alpha)) <= 0.10
                and within(rep.err_inf[0], e16, 0.25))
        ok &= good
        parts.append(f"alpha={alpha}: e16={rep.err_inf[0]:.4e} (expected {e16:.3e}), "
                     f"{rates_text(rep)} target {1 - alpha:.2f}")
    report(1, ok, "; ".join(parts))
    assert ok


def test_2_truncation_s2(report):
    expected = {1.0: 3.017e-3, 1.4: 8.871e-3}
    ok, parts = True, []
    for alpha, e16 in expected.items():
        rep = truncation_study(FracParams(2, alpha), 2, H4, "1/1024")
        good = (abs(rep.fitted_rate_inf - (2 - alpha)) <= 0.15
                and within(rep.err_inf[0], e16, 0.25))
        ok &= good
        parts.append(f"alpha={alpha}: e16={rep.err_inf[0]:.4e} (expected {e16:.3e}), "
                     f"{rates_text(rep)} target {2 - alpha:.2f}")
    report(2, ok, "; ".join(parts))
    assert ok


def test_3_second_order_regime(report):
    ok, parts = True, []
    for alpha in (0.5, 1.5):
        s = 2 + alpha + 0.1
        rep = truncation_study(FracParams(2, alpha), s, H4, "1/1024")
        ok &= abs(rep.fitted_rate_inf - 2.0) <= 0.1
        parts.append(f"2D alpha={alpha}: {rates_text(rep)}")
    t0 = time.perf_counter()
    for alpha in (0.5, 1.5):
        s = 2 + alpha + 0.1
        rep = truncation_study(FracParams(3, alpha), s, ["1/8", "1/16", "1/32"], "1/128")
        ok &= abs(rep.fitted_rate_inf - 2.0) <= 0.1
        parts.append(f"3D alpha={alpha}: {rates_text(rep)}")
    seconds = time.perf_counter() - t0
    ok &= seconds <= 15 * 60
    report(3, ok, "; ".join(parts) + f"; 3D wall time {seconds:.0f} s")
    assert ok


def test_4_gamma_sensitivity(report):
    alpha, s = 1.5, 2 + 1.5 + 0.1
    low = truncation_study(FracParams(2, alpha, 1.6), s, H4, "1/2048")
    high = truncation_study(FracParams(2, alpha, 2.0), s, H4, "1/1024")
    ok = (abs(low.fitted_rate_inf - 0.5) <= 0.15
          and abs(high.fitted_rate_inf - 2.0) <= 0.1)
    report(4, ok, f"gamma=1.6: {rates_text(low)} target 0.5; "
                  f"gamma=2: {rates_text(high)} target 2.0")
    assert ok


def test_5_poisson_manufactured(report):
    ok, parts = True, []
    cg = CgConfig(tol=1e-12)
    for alpha in (0.4, 1.0, 1.4):
        rep = poisson_study(FracParams(2, alpha), H4, "1/1024", "manufactured:s=2", cg)
        good = abs(rep.fitted_rate_inf - 2.0) <= 0.1
        if alpha == 0.4:
            good &= within(rep.err_inf[0], 1.658e-4, 0.25)
        ok &= good
        parts.append(f"alpha={alpha}: e16={rep.err_inf[0]:.4e}, {rates_text(rep)}")
    report(5, ok, "; ".join(parts) + " (expected e16 at alpha=0.4: 1.658e-4)")
    assert ok


def test_6_poisson_constant_rhs(report):
    ok, parts = True, []
    for alpha in (0.5, 1.0, 1.5):
        rep = poisson_study(FracParams(2, alpha), H4, rhs="one", compare="successive")
        where = rep.metadata["argmax_boundary_distance"]
        good = abs(rep.fitted_rate_inf - alpha / 2) <= 0.1 and max(where) <= 2
        ok &= good
        parts.append(f"alpha={alpha}: {rates_text(rep)} target {alpha / 2:.2f}, "
                     f"max error {where} h from the boundary")
    report(6, ok, "; ".join(parts))
    assert ok


def _classical_laplacian(grid, u):
    """Minus the 5/7-point Laplacian with zero exterior values."""
    arr = np.pad(u.as_array(), 1)
    inner = (slice(1, -1),) * grid.d
    out = 2 * grid.d * arr[inner]
    for ax in range(grid.d):
        for shift in (-1, 1):
            out = out - np.roll(arr, shift, axis=ax)[inner]
    return out / grid.h**2


def test_7_classical_limit(report):
    alpha = 1.999
    ok, parts = True, []
    for d, h in ((2, "1/32"), (3, "1/16")):
        grid = GridSpec.box(-1, 1, d, h)
        params = FracParams(d, alpha)
        st = build_stencil(params, grid.N, grid.h)
        lead = norm_const(d, alpha) * st.entry(*((1,) + (0,) * (d - 1))) * grid.h**2
        u = Field.from_function(grid, ManufacturedFn(4, d))
        frac = assemble_operator(st, grid).apply(u).as_array()
        classical = _classical_laplacian(grid, u)
        rel = np.abs(frac - classical).max() / np.abs(classical).max()
        good = abs(lead - 1) <= 0.01 and rel <= 0.02
        ok &= good
        parts.append(f"{d}D h={h}: c*a_e1*h^2={lead:.5f}, rel diff vs "
                     f"{2 * d + 1}-point {rel:.3e}")
    report(7, ok, "; ".join(parts))
    assert ok


def _random_case(rng):
    d = int(rng.choice([2, 3]))
    alpha = float(rng.uniform(0.05, 1.95))
    gamma = 2.0 if rng.random() < 0.5 else float(rng.uniform(alpha, 2.0))
    gamma = min(max(gamma, alpha + 1e-3), 2.0)
    cap = 64 if d == 2 else 16
    while True:
        h = 1.0 / int(rng.integers(2, 17))
        counts = [int(rng.integers(1, cap + 1)) for _ in range(d)]
        lows = [int(rng.integers(-8, 8)) / 8 for _ in range(d)]
        bounds = [(lo, lo + (n + 1) * h) for lo, n in zip(lows, counts)]
        grid = GridSpec.from_bounds(bounds, h)
        if grid.size <= 4096:
            return FracParams(d, alpha, gamma), grid


def test_8_operator_oracle(report):
    rng = np.random.default_rng(8)
    worst_apply = worst_sym = 0.0
    spd_ok = True
    sizes = []
    for _ in range(50):
        params, grid = _random_case(rng)
        op = build_operator(params, grid)
        dense = op.to_dense()
        x = rng.standard_normal(grid.size)
        ref = dense @ x
        worst_apply = max(worst_apply,
                          np.abs(op.apply(x) - ref).max() / np.abs(ref).max())
        worst_sym = max(worst_sym, np.abs(dense - dense.T).max() / np.abs(dense).max())
        try:
            linalg.cholesky(dense, lower=True)
        except linalg.LinAlgError:
            spd_ok = False
        sizes.append(grid.size)
    ok = worst_apply <= 1e-12 and worst_sym == 0.0 and spd_ok
    report(8, ok, f"50 cases, M in [{min(sizes)}, {max(sizes)}]: worst FFT/dense rel diff "
                  f"{worst_apply:.2e}, worst asymmetry {worst_sym:.1e}, "
                  f"Cholesky {'ok' if spd_ok else 'FAILED'}")
    assert ok


def _monotone_after(series, start=5):
    m = [v for _, v in series]
    return all(b < a for a, b in zip(m[start:], m[start + 1:]))


def test_9_allen_cahn(report):
    grid = GridSpec.box(0, 1, 2, "1/256")
    t0 = time.perf_counter()
    fast = allen_cahn_run(AllenCahnConfig(alpha=1.9, t_end=0.05, snapshot_every=5), grid)
    slow = allen_cahn_run(AllenCahnConfig(alpha=0.7, t_end=0.3, snapshot_every=10), grid)
    seconds = time.perf_counter() - t0

    m_fast = [v for _, v in fast.mass_series]
    first_merge = fast.merged.index(True) if any(fast.merged) else None
    decayed = (first_merge is not None
               and min(m_fast[int(round(fast.snapshot_times[first_merge] / 1e-3)):])
               < 0.1 * m_fast[0])
    checks = {
        "merge at 1.9": first_merge is not None,
        "mass < 10% after merge": decayed,
        "no merge at 0.7": not any(slow.merged),
        "monotone mass": _monotone_after(fast.mass_series) and _monotone_after(slow.mass_series),
        "|u| <= 1.1": max(fast.max_abs, slow.max_abs) <= 1.1,
        "runtime": seconds <= 30 * 60,
    }
    ok = all(checks.values())
    m_slow = [v for _, v in slow.mass_series]
    merge_t = None if first_merge is None else fast.snapshot_times[first_merge]
    report(9, ok, f"alpha=1.9 merged at t={merge_t}, final mass {m_fast[-1] / m_fast[0]:.2e} "
                  f"of initial; alpha=0.7 merged={any(slow.merged)}, final mass "
                  f"{m_slow[-1] / m_slow[0]:.3f} of initial; max|u| "
                  f"{max(fast.max_abs, slow.max_abs):.4f}; Picard max "
                  f"{max(fast.picard_iters + slow.picard_iters)}; {seconds:.0f} s; "
                  + ", ".join(f"{k}: {'ok' if v else 'NO'}" for k, v in checks.items()))
    assert ok
