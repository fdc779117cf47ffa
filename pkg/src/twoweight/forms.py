"""The two-weight Hilbert bilinear form and its derived constants.

For a pair of grid measures (sigma, w) at the same scale, the form is

    B(f, g) = sum_{p != q} w_p g_p sigma_q f_q / (x_p - x_q),

with the zero-diagonal kernel convention: pairs living on the same cell
contribute nothing.  This is the canonical antisymmetric extension of
the form off disjoint supports, and it reproduces the classical
discrete Hilbert transform when sigma = w = counting measure.

The module computes, all as exact finite expressions over the joint
support:

* pointwise transforms H(1_I dmu) and form evaluations,
* the operator norm (best constant C with |B| <= C ||f||_sigma ||g||_w),
* kernel truncations and their norm supremum over a geometric cutoff grid,
* local / global / off-support interval testing constants and their duals,
* the weak boundedness constant over pairs of intervals,
* the windowed constants K_n over 2^n consecutive minimal cells.

Interval suprema are genuine suprema over *all* grid intervals: a
testing value only depends on the trapped range of joint-support cells,
so scanning contiguous index ranges is exhaustive.  A faster mode
restricted to two shifted dyadic families is available for large
supports; reports record which mode produced each constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dyadic import (
    ShiftedDyadicSystem,
    conditional_expectation,
    enumerate_intervals,
    martingale_difference,
)
from .grid import (
    GridFunction,
    GridInterval,
    GridMeasure,
    InvariantViolation,
    joint_hull,
    norm_l2,
)
from .linalg import DEFAULT_REL_TOL, top_singular_value, top_singular_value_dense

INTERVAL_SOURCES = ("grid-exhaustive", "dyadic-shifted")


class HilbertForm:
    """Dense realization of the form over the joint support.

    Parameters
    ----------
    sigma, w : GridMeasure
        Column-side and row-side measures; equal scale exponents.
    truncation : float
        Kernel entries with |x_p - x_q| <= truncation are zeroed.  The
        default 0.0 only removes the diagonal.
    """

    def __init__(self, sigma: GridMeasure, w: GridMeasure, truncation: float = 0.0):
        if sigma.scale != w.scale:
            raise ValueError(
                f"scale mismatch: sigma at {sigma.scale}, w at {w.scale}"
            )
        if truncation < 0.0:
            raise ValueError(f"negative truncation {truncation}")
        self.sigma = sigma
        self.w = w
        self.truncation = float(truncation)

    @property
    def scale(self) -> int:
        return self.sigma.scale

    @cached_property
    def support(self) -> np.ndarray:
        """Sorted union of the two supports (cell indices)."""
        return np.union1d(self.sigma.indices, self.w.indices).astype(np.int64)

    @cached_property
    def positions(self) -> np.ndarray:
        return (self.support + 0.5) * 2.0 ** (-self.scale)

    @cached_property
    def sigma_masses(self) -> np.ndarray:
        return np.array(
            [self.sigma.cells.get(int(k), 0.0) for k in self.support], dtype=float
        )

    @cached_property
    def w_masses(self) -> np.ndarray:
        return np.array(
            [self.w.cells.get(int(k), 0.0) for k in self.support], dtype=float
        )

    @cached_property
    def kernel(self) -> np.ndarray:
        """Matrix 1/(x_p - x_q), zero on the diagonal and inside the cutoff."""
        diff = self.positions[:, None] - self.positions[None, :]
        kern = np.zeros_like(diff)
        off = diff != 0.0
        kern[off] = 1.0 / diff[off]
        if self.truncation > 0.0:
            kern[np.abs(diff) <= self.truncation] = 0.0
        return kern

    @cached_property
    def scaled_matrix(self) -> np.ndarray:
        """diag(sqrt(w)) . kernel . diag(sqrt(sigma)); its top singular
        value is the best constant in |B(f,g)| <= C ||f||_sigma ||g||_w."""
        return (
            np.sqrt(self.w_masses)[:, None]
            * self.kernel
            * np.sqrt(self.sigma_masses)[None, :]
        )

    def transpose(self) -> "HilbertForm":
        """The form with the roles of sigma and w exchanged."""
        return HilbertForm(self.w, self.sigma, self.truncation)

    def diameter(self) -> float:
        if len(self.support) < 2:
            return 0.0
        return float(self.positions[-1] - self.positions[0])

    def __repr__(self) -> str:
        return (
            f"HilbertForm(scale={self.scale}, support={len(self.support)}, "
            f"truncation={self.truncation:g})"
        )


def build_form(sigma: GridMeasure, w: GridMeasure) -> HilbertForm:
    """Construct the bilinear form for the pair (sigma, w)."""
    return HilbertForm(sigma, w)


def evaluate(form: HilbertForm, f: GridFunction, g: GridFunction) -> float:
    """B(f, g) as an exact double sum over the joint support."""
    if f.scale != form.scale or g.scale != form.scale:
        raise ValueError("scale mismatch between form and arguments")
    if len(form.support) == 0:
        return 0.0
    fv = f.values_at(form.support) * form.sigma_masses
    gv = g.values_at(form.support) * form.w_masses
    return float(gv @ (form.kernel @ fv))


def hilbert_of_indicator(
    form: HilbertForm, interval: GridInterval, density: str = "sigma"
) -> GridFunction:
    """The transform H(1_I dmu) as a function on the joint support.

    ``density`` selects mu in {"sigma", "w"}.  Values are

        H(1_I dmu)(x_p) = sum_{q in I, q != p} mu_q / (x_p - x_q),

    honoring the form's truncation.
    """
    if interval.scale != form.scale:
        raise ValueError("scale mismatch")
    if density == "sigma":
        masses = form.sigma_masses
    elif density == "w":
        masses = form.w_masses
    else:
        raise ValueError(f"density must be 'sigma' or 'w', got {density!r}")
    support = form.support
    lo = int(np.searchsorted(support, interval.left, side="left"))
    hi = int(np.searchsorted(support, interval.right, side="right"))
    if hi <= lo:
        return GridFunction(form.scale)
    vals = form.kernel[:, lo:hi] @ masses[lo:hi]
    return GridFunction(
        form.scale, {int(k): float(v) for k, v in zip(support, vals)}
    )


def operator_norm(
    form: HilbertForm, method: str = "power", rel_tol: float = DEFAULT_REL_TOL
) -> float:
    """Best constant C in |B(f,g)| <= C ||f||_sigma ||g||_w.

    ``method`` is "power" (deterministic power iteration, the default)
    or "dense" (full singular value decomposition, the certification
    oracle for moderate sizes).
    """
    if len(form.support) == 0:
        return 0.0
    if method == "power":
        return top_singular_value(form.scaled_matrix, rel_tol=rel_tol)
    if method == "dense":
        return top_singular_value_dense(form.scaled_matrix)
    raise ValueError(f"unknown method {method!r}")


# ---- truncations -----------------------------------------------------------


def truncated_form(form: HilbertForm, eps: float) -> HilbertForm:
    """The form with kernel zeroed where |x_p - x_q| <= eps."""
    if eps <= 0.0:
        raise ValueError(f"truncation cutoff must be positive, got {eps}")
    return HilbertForm(form.sigma, form.w, truncation=eps)


def truncation_eps_grid(form: HilbertForm) -> List[float]:
    """Geometric cutoff grid spanning [2^-m-1, diameter], ratio 2."""
    eps = 2.0 ** (-form.scale - 1)
    diameter = form.diameter()
    grid = [eps]
    while eps < diameter:
        eps *= 2.0
        grid.append(eps)
    return grid


def truncation_sup(
    form: HilbertForm,
    eps_grid: Optional[Sequence[float]] = None,
    method: str = "power",
) -> float:
    """Largest operator norm among the truncated forms on the grid."""
    if eps_grid is None:
        eps_grid = truncation_eps_grid(form)
    best = 0.0
    for eps in eps_grid:
        best = max(best, operator_norm(truncated_form(form, float(eps)), method=method))
    return best


# ---- interval testing constants --------------------------------------------


@dataclass
class TestingReport:
    """Interval testing constants of a form, with argmax witnesses.

    ``h``/``h_star`` are the local (Sawyer-type) constants, ``h_glob``
    the global ones, ``h_off`` the off-support ones; ``w`` is the weak
    boundedness constant over interval pairs and ``c`` the operator
    norm.  Witnesses map each constant name to the smallest interval
    attaining the supremum (a pair of intervals for "w", None for "c").
    """

    h: float
    h_star: float
    h_glob: float
    h_glob_star: float
    h_off: float
    h_off_star: float
    w: float
    c: float
    interval_source: str
    witnesses: Dict[str, object] = field(default_factory=dict)


def _ranges_by_a(
    support: np.ndarray, intervals: Iterable[GridInterval]
) -> Dict[int, np.ndarray]:
    """Deduplicated support index ranges trapped by the intervals."""
    seen: Dict[int, set] = {}
    for interval in intervals:
        a = int(np.searchsorted(support, interval.left, side="left"))
        b = int(np.searchsorted(support, interval.right, side="right")) - 1
        if b >= a:
            seen.setdefault(a, set()).add(b)
    return {a: np.array(sorted(bs), dtype=np.int64) for a, bs in seen.items()}


def _dyadic_interval_family(form: HilbertForm) -> List[GridInterval]:
    """Two shifted dyadic families over a power-of-two envelope of the hull."""
    hull = joint_hull(form.sigma, form.w)
    if hull is None:
        return []
    size = 1 << (hull.n_cells - 1).bit_length()
    top = GridInterval(hull.left, hull.left + size - 1, form.scale)
    shifts = [0] if size < 2 else [0, size // 2]
    intervals: List[GridInterval] = []
    for shift in shifts:
        system = ShiftedDyadicSystem(top, shift=shift)
        intervals.extend(enumerate_intervals(system))
    return intervals


def _one_sided_testing(
    kernel: np.ndarray,
    source_masses: np.ndarray,
    target_masses: np.ndarray,
    ranges: Optional[Dict[int, np.ndarray]],
) -> Dict[str, Tuple[float, Optional[Tuple[int, int]]]]:
    """Suprema of the glob/local/off testing values over index ranges.

    The testing value of a range [a, b] (cells of the source measure
    trapped by an interval I) is ||target_restriction H(1_I dsource)|| /
    source(I)^{1/2}; the three flavors restrict the target norm to the
    whole line, to I, and to its complement.  ``ranges`` of None means
    every contiguous range.  Local sums are taken from the same prefix
    array as global ones, so local <= glob and off <= glob hold exactly
    even in floating point.
    """
    m = kernel.shape[0]
    best: Dict[str, Tuple[float, Optional[Tuple[int, int]]]] = {
        "glob": (0.0, None),
        "local": (0.0, None),
        "off": (0.0, None),
    }
    if m == 0:
        return best
    # prefix of kernel columns weighted by the source masses
    d_prefix = np.zeros((m, m + 1))
    np.cumsum(kernel * source_masses[None, :], axis=1, out=d_prefix[:, 1:])
    source_prefix = np.concatenate([[0.0], np.cumsum(source_masses)])
    a_values = range(m) if ranges is None else sorted(ranges)
    for a in a_values:
        bs = np.arange(a, m) if ranges is None else ranges[a]
        source_in = source_prefix[bs + 1] - source_prefix[a]
        usable = source_in > 0.0
        if not usable.any():
            continue
        d = d_prefix[:, bs + 1] - d_prefix[:, a : a + 1]
        cum = np.cumsum(target_masses[:, None] * d * d, axis=0)
        glob_sq = cum[-1, :]
        local_sq = cum[bs, np.arange(len(bs))]
        if a > 0:
            local_sq = local_sq - cum[a - 1, :]
        off_sq = glob_sq - local_sq
        for key, num_sq in (("glob", glob_sq), ("local", local_sq), ("off", off_sq)):
            vals = np.where(usable, num_sq / np.where(usable, source_in, 1.0), -1.0)
            j = int(np.argmax(vals))
            value = float(vals[j])
            if value > best[key][0]:
                best[key] = (value, (a, int(bs[j])))
    return {k: (math.sqrt(max(v, 0.0)), rng) for k, (v, rng) in best.items()}


def _weak_boundedness_scan(
    form: HilbertForm, ranges: Optional[Dict[int, np.ndarray]]
) -> Tuple[float, Optional[Tuple[Tuple[int, int], Tuple[int, int]]]]:
    """sup |B(1_I, 1_J)| / (sigma(I) w(J))^{1/2} over index range pairs.

    Candidate sigma-ranges are visited in decreasing order of their
    global testing value, which dominates every pair value sharing that
    sigma-range (Cauchy-Schwarz in the w-variable); the scan stops as
    soon as the bound drops below the best value found, so the result
    is still the exact supremum.
    """
    m = len(form.support)
    if m == 0:
        return 0.0, None
    sigma = form.sigma_masses
    w = form.w_masses
    kernel = form.kernel
    sigma_prefix = np.concatenate([[0.0], np.cumsum(sigma)])
    w_prefix = np.concatenate([[0.0], np.cumsum(w)])

    row_prefix = np.zeros((m, m + 1))
    np.cumsum(kernel * sigma[None, :], axis=1, out=row_prefix[:, 1:])

    # phase 1: Cauchy-Schwarz bound per sigma-range
    cand_a: List[int] = []
    cand_b: List[int] = []
    cand_bound: List[np.ndarray] = []
    a_values = range(m) if ranges is None else sorted(ranges)
    for a in a_values:
        bs = np.arange(a, m) if ranges is None else ranges[a]
        source_in = sigma_prefix[bs + 1] - sigma_prefix[a]
        usable = source_in > 0.0
        if not usable.any():
            continue
        d = row_prefix[:, bs + 1] - row_prefix[:, a : a + 1]
        glob_sq = w @ (d * d)
        bound_sq = np.where(usable, glob_sq / np.where(usable, source_in, 1.0), -1.0)
        cand_a.extend([a] * len(bs))
        cand_b.extend(int(b) for b in bs)
        cand_bound.append(bound_sq)
    if not cand_a:
        return 0.0, None
    bounds = np.concatenate(cand_bound)
    order = np.argsort(-bounds, kind="stable")
    cand_a_arr = np.array(cand_a, dtype=np.int64)
    cand_b_arr = np.array(cand_b, dtype=np.int64)

    if ranges is None:
        w_cs = np.arange(m)
        w_ds = None  # all pairs c <= d via matrices
    else:
        w_cs = np.array(
            [a for a in sorted(ranges) for _ in ranges[a]], dtype=np.int64
        )
        w_ds = np.array(
            [int(b) for a in sorted(ranges) for b in ranges[a]], dtype=np.int64
        )

    best_sq = 0.0
    best_key: Optional[Tuple[int, int, int, int]] = None
    for t in order:
        if bounds[t] < best_sq or bounds[t] <= 0.0:
            break
        a, b = int(cand_a_arr[t]), int(cand_b_arr[t])
        source_in = sigma_prefix[b + 1] - sigma_prefix[a]
        u = row_prefix[:, b + 1] - row_prefix[:, a]  # H(1_I dsigma) rows
        u = u * w
        u_prefix = np.concatenate([[0.0], np.cumsum(u)])
        if w_ds is None:
            numer = u_prefix[None, 1:] - u_prefix[:-1, None]
            denom = w_prefix[None, 1:] - w_prefix[:-1, None]
            valid = (np.arange(m)[None, :] >= np.arange(m)[:, None]) & (denom > 0.0)
            vals = np.where(
                valid, numer * numer / np.where(valid, denom, 1.0), -1.0
            ) / source_in
            flat = int(np.argmax(vals))
            c, dd = divmod(flat, m)
            value = float(vals[c, dd])
        else:
            numer = u_prefix[w_ds + 1] - u_prefix[w_cs]
            denom = w_prefix[w_ds + 1] - w_prefix[w_cs]
            valid = denom > 0.0
            vals = np.where(
                valid, numer * numer / np.where(valid, denom, 1.0), -1.0
            ) / source_in
            flat = int(np.argmax(vals))
            c, dd = int(w_cs[flat]), int(w_ds[flat])
            value = float(vals[flat])
        if value < 0.0:
            continue
        key = (a, b - a, c, dd - c)
        if best_key is None or value > best_sq or (value == best_sq and key < best_key):
            best_sq = value
            best_key = key
    if best_key is None:
        return 0.0, None
    a, blen, c, dlen = best_key
    return math.sqrt(max(best_sq, 0.0)), ((a, a + blen), (c, c + dlen))


def _range_interval(form: HilbertForm, rng: Optional[Tuple[int, int]]) -> Optional[GridInterval]:
    if rng is None:
        return None
    a, b = rng
    return GridInterval(int(form.support[a]), int(form.support[b]), form.scale)


def weak_boundedness(form: HilbertForm) -> float:
    """sup over interval pairs of |B(1_I, 1_J)| / (sigma(I) w(J))^{1/2}."""
    value, _ = _weak_boundedness_scan(form, None)
    return value


def basic_bound_check(
    form: HilbertForm,
    system: ShiftedDyadicSystem,
    f: GridFunction,
    g: GridFunction,
    i_interval: GridInterval,
    j_interval: GridInterval,
    wbp: Optional[float] = None,
) -> List[Tuple[str, float, float]]:
    """The four block bounds on B against expectations and differences.

    |B(D_I f, D_J g)| <= 2 W ||D_I f|| ||D_J g||, the mixed E/D cases
    carry sqrt(2) and the E/E case 1: each argument is constant on one
    or two mass blocks, each block pair is controlled by the weak
    boundedness constant W, and Cauchy-Schwarz over the blocks costs
    sqrt(#blocks) per side.  Returns (label, lhs, rhs) triples; a
    violation beyond float slack raises InvariantViolation.
    """
    if wbp is None:
        wbp = weak_boundedness(form)
    sqrt2 = math.sqrt(2.0)
    cases = (
        ("dd", 2.0,
         martingale_difference(f, i_interval, form.sigma, system),
         martingale_difference(g, j_interval, form.w, system)),
        ("ed", sqrt2,
         conditional_expectation(f, i_interval, form.sigma),
         martingale_difference(g, j_interval, form.w, system)),
        ("de", sqrt2,
         martingale_difference(f, i_interval, form.sigma, system),
         conditional_expectation(g, j_interval, form.w)),
        ("ee", 1.0,
         conditional_expectation(f, i_interval, form.sigma),
         conditional_expectation(g, j_interval, form.w)),
    )
    records = []
    for label, c, left, right in cases:
        lhs = abs(evaluate(form, left, right))
        rhs = c * wbp * norm_l2(left, form.sigma) * norm_l2(right, form.w)
        if lhs > rhs * (1.0 + 1e-9) + 1e-300:
            raise InvariantViolation(
                f"block bound {label} violated on {i_interval} x {j_interval}: "
                f"{lhs} > {c:g} * {wbp} * norms = {rhs}"
            )
        records.append((label, lhs, rhs))
    return records


def testing_constants(
    form: HilbertForm, interval_source: str = "grid-exhaustive"
) -> TestingReport:
    """Local, global and off-support testing constants with duals.

    ``interval_source`` chooses the supremum family: "grid-exhaustive"
    scans every contiguous joint-support range (the true supremum over
    all grid intervals), "dyadic-shifted" only the members of two
    shifted dyadic systems over a power-of-two envelope of the hull.
    Intervals carrying no source mass are skipped.
    """
    if interval_source not in INTERVAL_SOURCES:
        raise ValueError(
            f"interval_source must be one of {INTERVAL_SOURCES}, got {interval_source!r}"
        )
    ranges: Optional[Dict[int, np.ndarray]] = None
    if interval_source == "dyadic-shifted":
        ranges = _ranges_by_a(form.support, _dyadic_interval_family(form))

    kernel = form.kernel
    forward = _one_sided_testing(kernel, form.sigma_masses, form.w_masses, ranges)
    dual = _one_sided_testing(kernel, form.w_masses, form.sigma_masses, ranges)
    wbp, wbp_ranges = _weak_boundedness_scan(form, ranges)
    c = operator_norm(form)

    witnesses: Dict[str, object] = {
        "h": _range_interval(form, forward["local"][1]),
        "h_star": _range_interval(form, dual["local"][1]),
        "h_glob": _range_interval(form, forward["glob"][1]),
        "h_glob_star": _range_interval(form, dual["glob"][1]),
        "h_off": _range_interval(form, forward["off"][1]),
        "h_off_star": _range_interval(form, dual["off"][1]),
        "w": None
        if wbp_ranges is None
        else (
            _range_interval(form, wbp_ranges[0]),
            _range_interval(form, wbp_ranges[1]),
        ),
        "c": None,
    }
    return TestingReport(
        h=forward["local"][0],
        h_star=dual["local"][0],
        h_glob=forward["glob"][0],
        h_glob_star=dual["glob"][0],
        h_off=forward["off"][0],
        h_off_star=dual["off"][0],
        w=wbp,
        c=c,
        interval_source=interval_source,
        witnesses=witnesses,
    )


# ---- windowed a-priori constants -------------------------------------------


def windowed_kn(form: HilbertForm, n: int) -> float:
    """Largest restricted norm over windows of 2^n consecutive cells.

    Only maximal trapped support ranges matter (restriction to a larger
    window dominates), so at most one singular value per distinct right
    end is computed.
    """
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    support = form.support
    m = len(support)
    if m == 0:
        return 0.0
    width = 1 << n
    scaled = form.scaled_matrix
    best = 0.0
    prev_b = -1
    for a in range(m):
        b = int(np.searchsorted(support, support[a] + width, side="left")) - 1
        if b == prev_b:
            continue
        prev_b = b
        block = scaled[a : b + 1, a : b + 1]
        best = max(best, top_singular_value(block))
    return best
