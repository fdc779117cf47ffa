"""Shifted dyadic systems, martingale differences and tripled systems.

A shifted system at scale m consists of the intervals

    [omega + t * 2^(j-m), omega + (t+1) * 2^(j-m)),   t integer, j >= 0,

with shift omega an integer multiple of 2^-m.  The module provides

* enumeration of the system intervals meeting a top interval I0,
* the good/bad classification dist(I, J^c) <= |I|^gamma |J|^(1-gamma)
  against ancestors J = I^(k), k >= r, |J| <= |I0|,
* measure-adapted martingale differences, Haar vectors and the exact
  expansion f = (top averages) + sum of differences,
* the three tripled systems D^u, u = 0, 1, 2, that partition the
  collection {3I : I in D}, and the selector I^u(K).

Degenerate convention throughout: averages over zero-mass intervals are
zero, so differences vanish there and Pythagoras holds exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .grid import GridFunction, GridInterval, GridMeasure, dot


# ---- shifted dyadic systems ------------------------------------------------


@dataclass(frozen=True)
class ShiftedDyadicSystem:
    """Dyadic lattice shifted by whole cells, with goodness parameters.

    Parameters
    ----------
    top : GridInterval
        Reference interval I0; its cell count must be a power of two.
    shift : int
        Shift omega in units of minimal cells.
    gamma, r : float, int
        Goodness parameters; defaults 1/4 and 8.
    """

    top: GridInterval
    shift: int = 0
    gamma: float = 0.25
    r: int = 8

    def __post_init__(self):
        n = self.top.n_cells
        if n & (n - 1):
            raise ValueError(f"top interval must span a power-of-two cell count, got {n}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0,1), got {self.gamma}")
        if self.r < 0:
            raise ValueError("r must be nonnegative")

    @property
    def scale(self) -> int:
        return self.top.scale

    @property
    def n_levels(self) -> int:
        return self.top.n_cells.bit_length() - 1

    # -- lattice arithmetic --

    def level_of(self, interval: GridInterval) -> int:
        n = interval.n_cells
        if n & (n - 1):
            raise ValueError(f"not a system interval: {interval}")
        j = n.bit_length() - 1
        if (interval.left - self.shift) % n:
            raise ValueError(f"interval not aligned with the shifted lattice: {interval}")
        return j

    def contains(self, interval: GridInterval) -> bool:
        try:
            self.level_of(interval)
        except ValueError:
            return False
        return True

    def interval_at(self, level: int, cell: int) -> GridInterval:
        """The unique level-j system interval containing the given cell."""
        size = 1 << level
        t = (cell - self.shift) // size
        left = self.shift + t * size
        return GridInterval(left, left + size - 1, self.scale)

    def parent(self, interval: GridInterval) -> GridInterval:
        return self.ancestor(interval, 1)

    def ancestor(self, interval: GridInterval, k: int) -> GridInterval:
        j = self.level_of(interval)
        return self.interval_at(j + k, interval.left)

    def children(self, interval: GridInterval) -> List[GridInterval]:
        j = self.level_of(interval)
        if j == 0:
            return []
        half = 1 << (j - 1)
        return [
            GridInterval(interval.left, interval.left + half - 1, self.scale),
            GridInterval(interval.left + half, interval.right, self.scale),
        ]

    def intervals_at_level(self, level: int) -> List[GridInterval]:
        """Level-j system intervals intersecting the top interval."""
        size = 1 << level
        lo, hi = self.top.left, self.top.right
        t_lo = math.ceil((lo - size + 1 - self.shift) / size)
        t_hi = (hi - self.shift) // size
        out = []
        for t in range(t_lo, t_hi + 1):
            left = self.shift + t * size
            out.append(GridInterval(left, left + size - 1, self.scale))
        return out

    def top_intervals(self) -> List[GridInterval]:
        return self.intervals_at_level(self.n_levels)


def enumerate_intervals(system: ShiftedDyadicSystem) -> List[GridInterval]:
    """All system intervals meeting I0 with length between one cell and |I0|.

    Ordered by level (finest first); each interval's parent is found via
    ``system.parent``.
    """
    out: List[GridInterval] = []
    for j in range(system.n_levels + 1):
        out.extend(system.intervals_at_level(j))
    return out


def is_bad(interval: GridInterval, system: ShiftedDyadicSystem) -> bool:
    """Whether the interval sits too close to the boundary of a distant ancestor.

    Bad means dist(I, J^c) <= |I|^gamma |J|^(1-gamma) for some ancestor
    J = I^(k) with k >= r and |J| <= |I0|.  Intervals with no admissible
    ancestor are good.
    """
    j = system.level_of(interval)
    len_i = interval.length
    for k in range(system.r, system.n_levels - j + 1):
        anc = system.ancestor(interval, k)
        d = min(
            interval.left_endpoint - anc.left_endpoint,
            anc.right_endpoint - interval.right_endpoint,
        )
        if d <= len_i**system.gamma * anc.length ** (1.0 - system.gamma):
            return True
    return False


# ---- averages and martingale differences -----------------------------------


def interval_average(f: GridFunction, interval: GridInterval, measure: GridMeasure) -> float:
    """mu-average of f over the interval; zero when the interval carries no mass."""
    if len(measure) == 0:
        return 0.0
    idx = measure.indices
    lo = int(np.searchsorted(idx, interval.left, side="left"))
    hi = int(np.searchsorted(idx, interval.right, side="right"))
    if hi <= lo:
        return 0.0
    masses = measure.masses[lo:hi]
    total = float(masses.sum())
    if total <= 0.0:
        return 0.0
    integral = 0.0
    for pos in range(lo, hi):
        k = int(idx[pos])
        v = f.values.get(k)
        if v:
            integral += measure.masses[pos] * v
    return integral / total


def conditional_expectation(
    f: GridFunction, interval: GridInterval, measure: GridMeasure
) -> GridFunction:
    """E_I f: the average of f on I, materialized on the charged cells of I."""
    avg = interval_average(f, interval, measure)
    if avg == 0.0:
        return GridFunction(measure.scale)
    return GridFunction(
        measure.scale,
        {k: avg for k in measure.cells if interval.left <= k <= interval.right},
    )


def martingale_difference(
    f: GridFunction,
    interval: GridInterval,
    measure: GridMeasure,
    system: ShiftedDyadicSystem,
) -> GridFunction:
    """Delta_I f = sum over children of E_child f minus E_I f.

    Returns the zero function when the interval is minimal or carries no
    mass; the result is supported on the charged cells of I and has zero
    mu-mean.
    """
    kids = system.children(interval)
    if not kids:
        return GridFunction(measure.scale)
    avg_parent = interval_average(f, interval, measure)
    values: Dict[int, float] = {}
    for child in kids:
        avg_child = interval_average(f, child, measure)
        for k in measure.cells:
            if child.left <= k <= child.right:
                v = avg_child - avg_parent
                if v != 0.0:
                    values[k] = v
    return GridFunction(measure.scale, values)


@dataclass
class HaarVector:
    """Unit vector spanning the range of Delta_I, or a zero marker.

    The function is positive on the left child, negative on the right,
    normalized to ||h||_{L^2(mu)} = 1.  ``is_zero`` marks degenerate
    intervals (minimal, or a child without mass) where Delta_I == 0.
    """

    interval: GridInterval
    fn: GridFunction
    is_zero: bool

    def coefficient(self, f: GridFunction, measure: GridMeasure) -> float:
        """<f, h_I>_mu; the Haar coefficient of f."""
        if self.is_zero:
            return 0.0
        return dot(f, self.fn, measure)


def haar_vector(
    interval: GridInterval, measure: GridMeasure, system: ShiftedDyadicSystem
) -> HaarVector:
    kids = system.children(interval)
    if not kids:
        return HaarVector(interval, GridFunction(measure.scale), True)
    from .grid import interval_mass

    m_left = interval_mass(measure, kids[0])
    m_right = interval_mass(measure, kids[1])
    m_total = m_left + m_right
    if m_left <= 0.0 or m_right <= 0.0:
        return HaarVector(interval, GridFunction(measure.scale), True)
    a = math.sqrt(m_right / (m_left * m_total))
    b = -math.sqrt(m_left / (m_right * m_total))
    values = {}
    for k in measure.cells:
        if kids[0].left <= k <= kids[0].right:
            values[k] = a
        elif kids[1].left <= k <= kids[1].right:
            values[k] = b
    return HaarVector(interval, GridFunction(measure.scale, values), False)


def expand_and_reconstruct(
    f: GridFunction, system: ShiftedDyadicSystem, measure: GridMeasure
) -> Tuple[GridFunction, Dict[GridInterval, GridFunction]]:
    """Split f into top-interval averages plus martingale differences.

    Returns (E-term, {I: Delta_I f}) over all enumerated intervals with a
    nonvanishing difference.  The pieces sum back to f on every charged
    cell, and ||f||^2 = ||E||^2 + sum ||Delta_I f||^2 exactly.
    """
    top = system.top
    for k in f.values:
        if not (top.left <= k <= top.right):
            raise ValueError(f"support of f leaves the top interval at cell {k}")
    e_term = GridFunction(measure.scale)
    for t in system.top_intervals():
        e_term = e_term + conditional_expectation(f, t, measure)
    deltas: Dict[GridInterval, GridFunction] = {}
    for interval in enumerate_intervals(system):
        d = martingale_difference(f, interval, measure, system)
        if d.values:
            deltas[interval] = d
    return e_term, deltas


def good_bad_split(
    f: GridFunction, system: ShiftedDyadicSystem, measure: GridMeasure
) -> Tuple[GridFunction, GridFunction]:
    """Sum of good-interval differences and of bad-interval differences.

    Together with the E-term of ``expand_and_reconstruct`` these give
    back f; badness shrinks as r grows, so the bad part is monotone.
    """
    _, deltas = expand_and_reconstruct(f, system, measure)
    f_good = GridFunction(measure.scale)
    f_bad = GridFunction(measure.scale)
    for interval, d in deltas.items():
        if is_bad(interval, system):
            f_bad = f_bad + d
        else:
            f_good = f_good + d
    return f_good, f_bad


# ---- tripled systems --------------------------------------------------------

# Residue (mod 3) of the core-interval index at each dyadic level; one
# constant family and two families alternating with level parity.  At every
# level the three residues are distinct, which makes the tripled intervals
# of the three families partition {3I : I in D}.


def _tripled_residue(u: int, level: int) -> int:
    if u == 0:
        return 1
    if u == 1:
        return 0 if level % 2 == 0 else 2
    if u == 2:
        return 2 if level % 2 == 0 else 0
    raise ValueError(f"u must be 0, 1 or 2, got {u}")


@dataclass(frozen=True)
class TripledInterval:
    """3I for a core dyadic interval I = [shift + a*2^k, shift + (a+1)*2^k) cells."""

    a: int
    level: int
    u: int
    shift: int
    scale: int

    @property
    def left(self) -> int:
        return self.shift + (self.a - 1) * (1 << self.level)

    @property
    def n_cells(self) -> int:
        return 3 * (1 << self.level)

    @property
    def right(self) -> int:
        return self.left + self.n_cells - 1

    @property
    def length(self) -> float:
        return self.n_cells * 2.0 ** (-self.scale)

    def as_grid_interval(self) -> GridInterval:
        return GridInterval(self.left, self.right, self.scale)

    def contains_cell(self, k: int) -> bool:
        return self.left <= k <= self.right

    def contains(self, other: "TripledInterval") -> bool:
        return self.left <= other.left and other.right <= self.right

    def parent(self) -> "TripledInterval":
        """Unique next-scale member of the same tripled family containing self."""
        want = _tripled_residue(self.u, self.level + 1)
        hits = []
        for cand in (self.a // 2 - 1, self.a // 2, self.a // 2 + 1):
            if cand % 3 != want:
                continue
            up = TripledInterval(cand, self.level + 1, self.u, self.shift, self.scale)
            if up.contains(self):
                hits.append(up)
        if len(hits) != 1:  # the residue schedule guarantees uniqueness
            raise RuntimeError(f"tripled parent not unique for {self}: {hits}")
        return hits[0]

    def ancestor(self, j: int) -> "TripledInterval":
        node = self
        for _ in range(j):
            node = node.parent()
        return node


def tripled_members_at_level(
    level: int, u: int, shift: int, scale: int, cell_lo: int, cell_hi: int
) -> List[TripledInterval]:
    """Members of D^u at the given level whose triple meets [cell_lo, cell_hi]."""
    size = 1 << level
    res = _tripled_residue(u, level)
    a_lo = math.ceil((cell_lo - shift - 2 * size + 1) / size)
    a_hi = math.floor((cell_hi - shift + size) / size)
    out = []
    for a in range(a_lo, a_hi + 1):
        if a % 3 == res:
            out.append(TripledInterval(a, level, u, shift, scale))
    return out


def tripled_of(interval: GridInterval, system: ShiftedDyadicSystem) -> TripledInterval:
    """The tripled interval 3I of a system interval, tagged with its family."""
    j = system.level_of(interval)
    a = (interval.left - system.shift) >> j
    for u in range(3):
        if a % 3 == _tripled_residue(u, j):
            return TripledInterval(a, j, u, system.shift, system.scale)
    raise RuntimeError("unreachable: residues cover 0,1,2")


def tripled_iu(
    interval: GridInterval, u: int, shift: int = 0
) -> Optional[TripledInterval]:
    """The unique member I^u(K) of D^u with 3K inside and 9|K| < |I^u(K)| <= 18|K|.

    For any cell count n there is exactly one candidate side 3*2^k in
    (9n, 18n], namely 2^k the unique power of two in (3n, 6n]; the
    residue class then admits at most one position.  Returns None when
    3K straddles a boundary of that family.
    """
    n = interval.n_cells
    level = (3 * n).bit_length()  # unique k with 3n < 2^k <= 6n
    size = 1 << level
    res = _tripled_residue(u, level)
    lo_cell = interval.left - n
    hi_cell = interval.right + n
    a_lo = math.ceil((hi_cell + 1 - shift) / size) - 2
    a_hi = math.floor((lo_cell - shift) / size) + 1
    found = None
    for a in range(a_lo, a_hi + 1):
        if a % 3 != res:
            continue
        cand = TripledInterval(a, level, u, shift, interval.scale)
        if cand.left <= lo_cell and hi_cell <= cand.right:
            if found is not None:
                raise RuntimeError(f"I^u(K) not unique for {interval}, u={u}")
            found = cand
    return found
