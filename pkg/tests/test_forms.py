"""Bilinear Hilbert form: hand values, SVD oracle, testing constants."""

import math

import numpy as np
import pytest

from twoweight.dyadic import (
    ShiftedDyadicSystem,
    conditional_expectation,
    martingale_difference,
)
from twoweight.forms import (
    basic_bound_check,
    build_form,
    evaluate,
    hilbert_of_indicator,
    operator_norm,
    testing_constants as report_constants,
    truncation_eps_grid,
    truncation_sup,
    weak_boundedness,
    windowed_kn,
)
from twoweight.grid import (
    GridFunction,
    GridInterval,
    GridMeasure,
    indicator,
    interval_mass,
    norm_l2,
)

SCALE = 0


def two_atom_form():
    sigma = GridMeasure(SCALE, {0: 2.0})
    w = GridMeasure(SCALE, {3: 5.0})
    return build_form(sigma, w)


def test_hand_value_two_atoms():
    form = two_atom_form()
    one = GridFunction(SCALE, {0: 1.0, 3: 1.0})
    # B(1,1) = 2 * 5 / (x_3 - x_0) = 10 / 3
    assert evaluate(form, one, one) == pytest.approx(10.0 / 3.0)
    # antisymmetry of the kernel flips the sign with the measures swapped
    swapped = build_form(GridMeasure(SCALE, {3: 5.0}), GridMeasure(SCALE, {0: 2.0}))
    assert evaluate(swapped, one, one) == pytest.approx(-10.0 / 3.0)


def test_zero_diagonal_common_atom():
    # a single shared atom never pairs with itself
    form = build_form(GridMeasure(SCALE, {4: 3.0}), GridMeasure(SCALE, {4: 7.0}))
    one = GridFunction(SCALE, {4: 1.0})
    assert evaluate(form, one, one) == 0.0
    rep = report_constants(form)
    assert rep.c == 0.0 and rep.h == 0.0 and rep.w == 0.0


def test_build_form_rejects_scale_mismatch():
    with pytest.raises(ValueError):
        build_form(GridMeasure(0, {0: 1.0}), GridMeasure(1, {0: 1.0}))


def test_bilinearity():
    rng = np.random.default_rng(2)
    sigma = GridMeasure(SCALE, {k: float(rng.exponential()) + 0.1 for k in range(10)})
    w = GridMeasure(SCALE, {k: float(rng.exponential()) + 0.1 for k in range(3, 14)})
    form = build_form(sigma, w)
    f1 = GridFunction(SCALE, {k: float(rng.normal()) for k in sigma.cells})
    f2 = GridFunction(SCALE, {k: float(rng.normal()) for k in sigma.cells})
    g = GridFunction(SCALE, {k: float(rng.normal()) for k in w.cells})
    lhs = evaluate(form, f1.scaled(1.75) + f2, g)
    rhs = 1.75 * evaluate(form, f1, g) + evaluate(form, f2, g)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_hilbert_of_indicator_matches_evaluate():
    rng = np.random.default_rng(4)
    sigma = GridMeasure(SCALE, {k: float(rng.exponential()) + 0.1 for k in range(8)})
    w = GridMeasure(SCALE, {k: float(rng.exponential()) + 0.1 for k in range(8)})
    form = build_form(sigma, w)
    iv = GridInterval(1, 4, SCALE)
    transform = hilbert_of_indicator(form, iv, density="sigma")
    g = GridFunction(SCALE, {k: float(rng.normal()) for k in w.cells})
    direct = evaluate(form, indicator(iv), g)
    paired = sum(w.cells[k] * transform[k] * g[k] for k in w.cells)
    assert direct == pytest.approx(paired, rel=1e-12)


def norm_oracle(sigma, w):
    """Top singular value of the weighted kernel matrix, via LAPACK."""
    si = sorted(sigma.cells)
    wi = sorted(w.cells)
    mat = np.zeros((len(wi), len(si)))
    for a, k in enumerate(wi):
        for b, j in enumerate(si):
            if k != j:
                mat[a, b] = (
                    math.sqrt(w.cells[k])
                    * math.sqrt(sigma.cells[j])
                    / ((k - j) * 2.0 ** (-SCALE))
                )
    return float(np.linalg.svd(mat, compute_uv=False)[0]) if mat.size else 0.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_operator_norm_against_svd(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 20))
    sigma = GridMeasure(
        SCALE, {int(k): float(rng.exponential()) + 1e-3 for k in rng.choice(40, n, replace=False)}
    )
    w = GridMeasure(
        SCALE, {int(k): float(rng.exponential()) + 1e-3 for k in rng.choice(40, n, replace=False)}
    )
    form = build_form(sigma, w)
    assert operator_norm(form) == pytest.approx(norm_oracle(sigma, w), rel=5e-9)
    assert operator_norm(form, method="dense") == pytest.approx(
        norm_oracle(sigma, w), rel=1e-10
    )


def local_testing_oracle(sigma, w):
    """H by brute force: every contiguous cell range of the joint hull."""
    cells = sorted(set(sigma.cells) | set(w.cells))
    lo, hi = cells[0], cells[-1]
    best = 0.0
    for left in range(lo, hi + 1):
        for right in range(left, hi + 1):
            mass = sum(m for k, m in sigma.cells.items() if left <= k <= right)
            if mass <= 0.0:
                continue
            value = 0.0
            for k, wk in w.cells.items():
                if not left <= k <= right:
                    continue
                h = sum(
                    sj / (k - j)
                    for j, sj in sigma.cells.items()
                    if left <= j <= right and j != k
                )
                value += wk * h * h
            best = max(best, value / mass)
    return math.sqrt(best)


def test_local_testing_constant_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(5):
        sigma = GridMeasure(
            SCALE, {int(k): float(rng.exponential()) + 0.01 for k in rng.choice(12, 5, replace=False)}
        )
        w = GridMeasure(
            SCALE, {int(k): float(rng.exponential()) + 0.01 for k in rng.choice(12, 5, replace=False)}
        )
        rep = report_constants(build_form(sigma, w))
        assert rep.h == pytest.approx(local_testing_oracle(sigma, w), rel=1e-10)


def test_testing_chain_and_duality():
    rng = np.random.default_rng(21)
    for _ in range(6):
        sigma = GridMeasure(SCALE, {int(k): float(rng.exponential()) + 1e-3
                                    for k in rng.choice(30, 9, replace=False)})
        w = GridMeasure(SCALE, {int(k): float(rng.exponential()) + 1e-3
                                for k in rng.choice(30, 9, replace=False)})
        form = build_form(sigma, w)
        rep = report_constants(form)
        slack = 1.0 + 1e-12
        assert rep.h <= rep.h_glob * slack
        assert rep.h_star <= rep.h_glob_star * slack
        assert rep.h_off <= rep.h_glob * slack
        assert rep.h_off_star <= rep.h_glob_star * slack
        assert max(rep.h_glob, rep.h_glob_star, rep.w) <= rep.c * slack
        # duality: swapping the measures swaps the starred constants
        dual = report_constants(build_form(w, sigma))
        assert dual.h == pytest.approx(rep.h_star, rel=1e-10, abs=1e-12)
        assert dual.h_glob == pytest.approx(rep.h_glob_star, rel=1e-10, abs=1e-12)


def test_interval_sources_ordered():
    # the dyadic family is a sub-family, so its suprema cannot exceed
    # the exhaustive ones; the norm itself ignores the family
    rng = np.random.default_rng(33)
    sigma = GridMeasure(SCALE, {int(k): float(rng.exponential()) + 1e-3
                                for k in rng.choice(25, 8, replace=False)})
    w = GridMeasure(SCALE, {int(k): float(rng.exponential()) + 1e-3
                            for k in rng.choice(25, 8, replace=False)})
    form = build_form(sigma, w)
    ex = report_constants(form, interval_source="grid-exhaustive")
    dy = report_constants(form, interval_source="dyadic-shifted")
    assert ex.interval_source == "grid-exhaustive"
    assert dy.interval_source == "dyadic-shifted"
    for name in ("h", "h_star", "h_glob", "h_glob_star", "h_off", "h_off_star", "w"):
        assert getattr(dy, name) <= getattr(ex, name) * (1.0 + 1e-9), name
    assert dy.c == pytest.approx(ex.c, rel=1e-12)
    with pytest.raises(ValueError):
        report_constants(form, interval_source="nope")


def weak_boundedness_oracle(sigma, w):
    cells = sorted(set(sigma.cells) | set(w.cells))
    lo, hi = cells[0], cells[-1]
    best = 0.0
    one = GridFunction(SCALE, {k: 1.0 for k in range(lo, hi + 1)})
    form = build_form(sigma, w)
    for l1 in range(lo, hi + 1):
        for r1 in range(l1, hi + 1):
            i_iv = GridInterval(l1, r1, SCALE)
            mi = interval_mass(sigma, i_iv)
            if mi <= 0:
                continue
            for l2 in range(lo, hi + 1):
                for r2 in range(l2, hi + 1):
                    j_iv = GridInterval(l2, r2, SCALE)
                    mj = interval_mass(w, j_iv)
                    if mj <= 0:
                        continue
                    val = abs(evaluate(form, indicator(i_iv), indicator(j_iv)))
                    best = max(best, val / math.sqrt(mi * mj))
    return best


def test_weak_boundedness_brute_force():
    rng = np.random.default_rng(13)
    sigma = GridMeasure(SCALE, {int(k): float(rng.exponential()) + 0.05
                                for k in rng.choice(9, 4, replace=False)})
    w = GridMeasure(SCALE, {int(k): float(rng.exponential()) + 0.05
                            for k in rng.choice(9, 4, replace=False)})
    assert weak_boundedness(build_form(sigma, w)) == pytest.approx(
        weak_boundedness_oracle(sigma, w), rel=1e-10
    )


def test_windowed_kn_profile():
    rng = np.random.default_rng(44)
    sigma = GridMeasure(SCALE, {k: float(rng.exponential()) + 0.1 for k in range(20)})
    w = GridMeasure(SCALE, {k: float(rng.exponential()) + 0.1 for k in range(20)})
    form = build_form(sigma, w)
    rep = report_constants(form)
    values = [windowed_kn(form, n) for n in range(7)]
    assert values[0] == 0.0  # zero-diagonal: a one-cell window holds no pair
    assert all(a <= b * (1 + 1e-12) for a, b in zip(values, values[1:]))
    for n, kn in enumerate(values):
        assert kn <= 2.0 ** (n + 1) * rep.w * (1.0 + 1e-9)
    # windows wider than the support reproduce the full norm
    assert values[6] == pytest.approx(rep.c, rel=1e-10)
    with pytest.raises(ValueError):
        windowed_kn(form, -1)


def test_truncation_grid_and_sup():
    form = two_atom_form()
    grid = truncation_eps_grid(form)
    assert grid[0] == 2.0 ** (-SCALE - 1)
    assert grid[-1] >= form.diameter()
    assert all(b == 2.0 * a for a, b in zip(grid, grid[1:]))
    # the smallest cutoff keeps the single pair at distance 3
    sup = truncation_sup(form)
    assert sup == pytest.approx(10.0 / 3.0 / math.sqrt(2.0 * 5.0), rel=1e-9)


def test_basic_bound_structure():
    rng = np.random.default_rng(9)
    sigma = GridMeasure(SCALE, {k: float(rng.exponential()) + 0.1 for k in range(16)})
    w = GridMeasure(SCALE, {k: float(rng.exponential()) + 0.1 for k in range(16)})
    form = build_form(sigma, w)
    system = ShiftedDyadicSystem(GridInterval(0, 15, SCALE), shift=0)
    f = GridFunction(SCALE, {k: float(rng.normal()) for k in range(16)})
    g = GridFunction(SCALE, {k: float(rng.normal()) for k in range(16)})
    wbp = weak_boundedness(form)
    i_iv, j_iv = GridInterval(0, 7, SCALE), GridInterval(4, 7, SCALE)
    rows = basic_bound_check(form, system, f, g, i_iv, j_iv, wbp=wbp)
    assert [r[0] for r in rows] == ["dd", "ed", "de", "ee"]
    for _, lhs, rhs in rows:
        assert lhs <= rhs * (1.0 + 1e-9) + 1e-300
    # the right sides carry exactly the constants (2, sqrt2, sqrt2, 1)
    df = martingale_difference(f, i_iv, sigma, system)
    dg = martingale_difference(g, j_iv, w, system)
    ef = conditional_expectation(f, i_iv, sigma)
    eg = conditional_expectation(g, j_iv, w)
    expected = {
        "dd": 2.0 * wbp * norm_l2(df, sigma) * norm_l2(dg, w),
        "ed": math.sqrt(2.0) * wbp * norm_l2(ef, sigma) * norm_l2(dg, w),
        "de": math.sqrt(2.0) * wbp * norm_l2(df, sigma) * norm_l2(eg, w),
        "ee": wbp * norm_l2(ef, sigma) * norm_l2(eg, w),
    }
    for label, _, rhs in rows:
        assert rhs == pytest.approx(expected[label], rel=1e-12)
