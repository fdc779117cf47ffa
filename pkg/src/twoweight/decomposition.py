"""Stopping trees and the exact splitting of the below form.

The bilinear form of a weight pair is compared against dyadic model sums
by expanding both arguments in martingale differences and re-grouping the
pairs (I, J) with I deeply inside J.  The re-grouping runs along a tree of
stopping intervals: children of a stopping interval are the maximal
subintervals on which either the w-average of g or the w-energy of the
transform of the local indicator jumps by a factor of four.  The tree
carries half-mass and Carleson bounds, and splitting the below form along
it is *exact* -- the local piece, the tail pieces and two families of
named average terms recombine to the original double sum up to float
rounding, which the checks here surface as explicit residuals.

The remaining exports feed the Poisson-profile layer: the families of
maximal energy cubes attached to each stopping interval, the admissible
interval pairs with their size functional, and the product boxes over the
tripled families on which the corner sums of a profile become a positive
dyadic form in two dimensions (exactly, with a factor of four).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .dyadic import (
    ShiftedDyadicSystem,
    TripledInterval,
    _tripled_residue,
    expand_and_reconstruct,
    haar_vector,
    interval_average,
    is_bad,
    martingale_difference,
    tripled_iu,
)
from .forms import HilbertForm, evaluate, hilbert_of_indicator
from .grid import (
    GridFunction,
    GridInterval,
    GridMeasure,
    InvariantViolation,
    dot,
    identity_on,
    indicator,
    interval_mass,
    norm_l2,
)
from .poisson import (
    PoissonProfile,
    first_containing_ancestor,
    merge_member,
    poisson_Q,
)
from .positive import CubeMeasure, LambdaEntry, PositiveDyadicForm

__all__ = [
    "StoppingTree",
    "build_stopping_tree",
    "carleson_embedding_check",
    "projections",
    "b_below",
    "b_above",
    "SplitResiduals",
    "split_identities",
    "phi_function",
    "phi_tilde_function",
    "local_form",
    "tail_forms",
    "ExtractionLedger",
    "extraction",
    "monotonicity_check",
    "MONOTONE_LOWER_CONSTANT",
    "kk_family",
    "projection_energy_on",
    "kj_family",
    "family_overlap",
    "AdmissiblePairs",
    "admissible_q",
    "size_of_q",
    "tripled_children",
    "TripledBox",
    "mu_atom_point",
    "box_pairing",
    "box_form",
]

# Ratio by which a child average must beat its parent to stop, and the
# resulting mass bounds: children keep at most half of the parent mass,
# subtrees at most twice it, and the embedding sum at most eight times
# the squared norm.
_STOPPING_RATIO = 4.0
_EMBEDDING_BOUND = 8.0

# Lower constant asserted for the pairing bound of the monotonicity
# principle.  The kernel comparison chain supports 1/4; the assert keeps
# a wide margin so it never trips on rounding.
MONOTONE_LOWER_CONSTANT = 1.0 / 20.0

_REL_SLACK = 1e-9
_TINY = 1e-300


# ---- stopping trees ---------------------------------------------------------


@dataclass
class StoppingTree:
    """Stopping intervals of a weight pair, with their trigger records.

    ``nodes`` lists the stopping intervals in breadth-first order starting
    from the root; ``children`` maps each node to its (disjoint, maximal)
    stopping children, and ``triggers`` records which of the two stopping
    conditions fired for every non-root node as ``(mass, energy)``.
    """

    system: ShiftedDyadicSystem
    sigma: GridMeasure
    w: GridMeasure
    root: GridInterval
    nodes: List[GridInterval]
    children: Dict[GridInterval, List[GridInterval]]
    triggers: Dict[GridInterval, Tuple[bool, bool]]
    w_of: Dict[GridInterval, float]

    def __post_init__(self):
        self._members: Set[GridInterval] = set(self.nodes)

    def is_node(self, interval: GridInterval) -> bool:
        return interval in self._members

    def stopping_parent(self, interval: GridInterval) -> GridInterval:
        """The smallest stopping interval containing the given one.

        The argument must be a system interval inside the root; a node is
        its own stopping parent.
        """
        if not self.root.contains(interval):
            raise ValueError(f"{interval} is not contained in the root {self.root}")
        node = interval
        while node not in self._members:
            node = self.system.parent(node)
        return node


def _abs_mass(g: GridFunction, interval: GridInterval, w: GridMeasure) -> float:
    """int_I |g| dw as an exact finite sum."""
    total = 0.0
    for k, v in g.values.items():
        if interval.contains_cell(k):
            m = w.cells.get(k)
            if m:
                total += m * abs(v)
    return total


def _energy_mass(h: GridFunction, interval: GridInterval, sigma: GridMeasure) -> float:
    """int_I |h|^2 dsigma as an exact finite sum."""
    total = 0.0
    for k, v in h.values.items():
        if interval.contains_cell(k):
            m = sigma.cells.get(k)
            if m:
                total += m * v * v
    return total


def _check_support(f: GridFunction, top: GridInterval, name: str) -> None:
    for k in f.values:
        if not top.contains_cell(k):
            raise ValueError(
                f"support of {name} leaves the base interval at cell {k}"
            )


def build_stopping_tree(
    f: GridFunction,
    g: GridFunction,
    sigma: GridMeasure,
    w: GridMeasure,
    form: HilbertForm,
    s_zero: GridInterval,
    gamma: float = 0.25,
    r: int = 8,
    shift: int = 0,
) -> StoppingTree:
    """Grow the stopping tree of (g, w, sigma) below the base interval.

    A subinterval S' of a node S stops when, in multiplied-out form, either

        w(S) * int_{S'} |g| dw      > 4 * w(S') * int_S |g| dw, or
        w(S) * int_{S'} |T 1_S|^2 dsigma > 4 * w(S') * int_S |T 1_S|^2 dsigma,

    where T 1_S is the transform of the w-mass of S.  Children are the
    maximal subintervals satisfying one of the two.  The multiplied-out
    comparisons keep the conditions meaningful on w-null candidates: a
    w-null interval can still stop through its sigma-energy, after which
    it spawns no further children.

    ``f`` rides along only for the shared support and scale checks; the
    tree itself is determined by g, w and sigma.
    """
    if sigma.scale != w.scale or s_zero.scale != w.scale:
        raise ValueError("sigma, w and the base interval must share one scale")
    system = ShiftedDyadicSystem(s_zero, shift=shift, gamma=gamma, r=r)
    if system.level_of(s_zero) != system.n_levels:
        raise ValueError("base interval is not aligned with the shifted lattice")
    if interval_mass(w, s_zero) <= 0.0:
        raise ValueError("the base interval carries no w-mass")
    _check_support(f, s_zero, "f")
    _check_support(g, s_zero, "g")

    nodes: List[GridInterval] = []
    children: Dict[GridInterval, List[GridInterval]] = {}
    triggers: Dict[GridInterval, Tuple[bool, bool]] = {}
    w_of: Dict[GridInterval, float] = {}

    queue = [s_zero]
    while queue:
        s = queue.pop(0)
        nodes.append(s)
        w_s = interval_mass(w, s)
        w_of[s] = w_s
        mass_base = _abs_mass(g, s, w)
        transform = hilbert_of_indicator(form, s, density="w")
        energy_base = _energy_mass(transform, s, sigma)

        found: List[GridInterval] = []
        stack = list(reversed(system.children(s)))
        while stack:
            cand = stack.pop()
            w_c = interval_mass(w, cand)
            mass_hit = w_s * _abs_mass(g, cand, w) > _STOPPING_RATIO * w_c * mass_base
            energy_hit = (
                w_s * _energy_mass(transform, cand, sigma)
                > _STOPPING_RATIO * w_c * energy_base
            )
            if mass_hit or energy_hit:
                found.append(cand)
                triggers[cand] = (mass_hit, energy_hit)
            else:
                stack.extend(reversed(system.children(cand)))
        found.sort(key=lambda iv: iv.left)
        children[s] = found
        queue.extend(found)

        kept = sum(interval_mass(w, c) for c in found)
        if kept > 0.5 * w_s * (1.0 + _REL_SLACK) + _TINY:
            raise InvariantViolation(
                f"stopping children of {s} carry {kept} > half of w(S) = {w_s}"
            )

    # Subtree Carleson bound: the halving of the child masses makes every
    # subtree sum at most twice its root mass.
    subtree: Dict[GridInterval, float] = {}
    for s in reversed(nodes):
        subtree[s] = w_of[s] + sum(subtree[c] for c in children[s])
        if subtree[s] > 2.0 * w_of[s] * (1.0 + _REL_SLACK) + _TINY:
            raise InvariantViolation(
                f"subtree mass {subtree[s]} exceeds twice w(S) = {w_of[s]} at {s}"
            )

    return StoppingTree(
        system=system,
        sigma=sigma,
        w=w,
        root=s_zero,
        nodes=nodes,
        children=children,
        triggers=triggers,
        w_of=w_of,
    )


def carleson_embedding_check(tree: StoppingTree, g: GridFunction, w: GridMeasure) -> float:
    """sum_S w(S) <g>_S^2 / ||g||^2 over the stopping intervals; at most 8.

    Returns 0 for g vanishing in L^2(w).
    """
    denom = dot(g, g, w)
    if denom <= 0.0:
        return 0.0
    num = 0.0
    for s in tree.nodes:
        avg = interval_average(g, s, w)
        num += interval_mass(w, s) * avg * avg
    ratio = num / denom
    if ratio > _EMBEDDING_BOUND * (1.0 + _REL_SLACK):
        raise InvariantViolation(
            f"embedding sum {ratio} exceeds the Carleson bound {_EMBEDDING_BOUND}"
        )
    return ratio


# ---- expansions and projections ---------------------------------------------


def _integral(f: GridFunction, measure: GridMeasure) -> float:
    total = 0.0
    for k, v in f.values.items():
        m = measure.cells.get(k)
        if m:
            total += m * v
    return total


def _checked_expansion(
    f: GridFunction,
    measure: GridMeasure,
    system: ShiftedDyadicSystem,
    name: str,
) -> Dict[GridInterval, GridFunction]:
    """Martingale differences of an admissible argument.

    Admissible means: supported inside the base interval and free of
    energy on bad intervals.  Arguments carrying bad components are
    rejected rather than silently truncated; the good part of
    ``good_bad_split`` always passes.  Means are harmless -- every sum
    built here uses differences only -- so they are not policed.
    """
    _check_support(f, system.top, name)
    scale_ref = norm_l2(f, measure)
    _, deltas = expand_and_reconstruct(f, system, measure)
    bad_energy = 0.0
    for interval, d in deltas.items():
        if is_bad(interval, system):
            bad_energy += dot(d, d, measure)
    if math.sqrt(bad_energy) > _REL_SLACK * (scale_ref + _TINY):
        raise ValueError(
            f"{name} carries energy on bad intervals; keep only the good part"
        )
    return deltas


def projections(
    f: GridFunction, tree: StoppingTree, measure: GridMeasure
) -> Tuple[Dict[GridInterval, GridFunction], Dict[GridInterval, GridFunction]]:
    """Stopping projections of f: the direct family and the shifted one.

    The first dictionary collects, for each stopping interval S, the sum
    of the differences of f over intervals whose stopping parent is S;
    the second groups by the stopping parent of the r-fold ancestor
    instead.  Intervals too close to the top for an r-fold ancestor are
    left out of the second family; nodes without components are absent.
    """
    system = tree.system
    deltas = _checked_expansion(f, measure, system, "argument")
    direct: Dict[GridInterval, GridFunction] = {}
    shifted: Dict[GridInterval, GridFunction] = {}
    zero = GridFunction(measure.scale)
    for interval, d in deltas.items():
        s = tree.stopping_parent(interval)
        direct[s] = direct.get(s, zero) + d
        if system.level_of(interval) + system.r <= system.n_levels:
            above = tree.stopping_parent(system.ancestor(interval, system.r))
            shifted[above] = shifted.get(above, zero) + d
    return direct, shifted


# ---- the below and above forms ----------------------------------------------


class _WindowEngine:
    """Prefix sums of w * T(Delta_I f) for interval-window evaluations.

    ``B(Delta_I f, 1_X)`` for lattice windows X reduces to a difference of
    two prefix sums once the transform of each difference is computed --
    one matrix product per interval instead of one per pair.
    """

    def __init__(
        self,
        form: HilbertForm,
        deltas_f: Mapping[GridInterval, GridFunction],
    ):
        self.support = form.support
        kernel = form.kernel
        smass = form.sigma_masses
        wmass = form.w_masses
        self._prefix: Dict[GridInterval, np.ndarray] = {}
        for interval, d in deltas_f.items():
            transformed = kernel @ (smass * d.values_at(self.support))
            self._prefix[interval] = np.concatenate(
                [[0.0], np.cumsum(wmass * transformed)]
            )

    def window(self, interval: GridInterval, window: GridInterval) -> float:
        """B(Delta_I f, 1_X) for the stored interval I and a window X."""
        lo = int(np.searchsorted(self.support, window.left, side="left"))
        hi = int(np.searchsorted(self.support, window.right, side="right"))
        acc = self._prefix[interval]
        return float(acc[hi] - acc[lo])


def _deep_pairs(
    deltas_f: Mapping[GridInterval, GridFunction],
    deltas_g: Mapping[GridInterval, GridFunction],
    system: ShiftedDyadicSystem,
) -> List[Tuple[GridInterval, GridInterval]]:
    """Pairs (I, J) of active intervals with I more than r levels inside J."""
    level = system.level_of
    fine = sorted(deltas_f, key=lambda iv: (level(iv), iv.left))
    coarse = sorted(deltas_g, key=lambda iv: (level(iv), iv.left))
    out = []
    for j in coarse:
        lj = level(j)
        for i in fine:
            if level(i) + system.r >= lj:
                break
            if j.contains(i):
                out.append((i, j))
    return out


def _pair_value(
    engine: _WindowEngine,
    i: GridInterval,
    j: GridInterval,
    deltas_g: Mapping[GridInterval, GridFunction],
    w: GridMeasure,
    system: ShiftedDyadicSystem,
) -> float:
    kids = system.children(j)
    child = kids[0] if kids[0].contains(i) else kids[1]
    avg = interval_average(deltas_g[j], child, w)
    if avg == 0.0:
        return 0.0
    return engine.window(i, child) * avg


def b_below(
    f: GridFunction, g: GridFunction, form: HilbertForm, system: ShiftedDyadicSystem
) -> float:
    """sum_J sum_{I deep in J} B(Delta_I f, 1_{J_I}) <Delta_J g>_{J_I}.

    ``deep`` means I sits inside J with |I| < 2^-r |J|, and J_I is the
    child of J containing I.  Arguments must be supported in the base
    interval and carry no bad-interval energy; means are ignored by
    every difference.
    """
    deltas_f = _checked_expansion(f, form.sigma, system, "f")
    deltas_g = _checked_expansion(g, form.w, system, "g")
    engine = _WindowEngine(form, deltas_f)
    total = 0.0
    for i, j in _deep_pairs(deltas_f, deltas_g, system):
        total += _pair_value(engine, i, j, deltas_g, form.w, system)
    return total


def b_above(
    f: GridFunction, g: GridFunction, form: HilbertForm, system: ShiftedDyadicSystem
) -> float:
    """sum_I sum_{J deep in I} <Delta_I f>_{I_J} B(1_{I_J}, Delta_J g).

    Mirror of ``b_below`` with the roles of the arguments exchanged; the
    sign accounts for the antisymmetry of the kernel under transposition.
    """
    return -b_below(g, f, form.transpose(), system)


# ---- the exact splitting ----------------------------------------------------


def _pi_maps(
    tree: StoppingTree,
    intervals: Sequence[GridInterval],
    shifted: bool,
) -> Dict[GridInterval, Optional[GridInterval]]:
    system = tree.system
    out: Dict[GridInterval, Optional[GridInterval]] = {}
    for interval in intervals:
        if shifted:
            if system.level_of(interval) + system.r > system.n_levels:
                out[interval] = None
                continue
            target = system.ancestor(interval, system.r)
        else:
            target = interval
        out[interval] = tree.stopping_parent(target)
    return out


def _restricted(
    deltas: Mapping[GridInterval, GridFunction],
    keep: Sequence[GridInterval],
    scale: int,
) -> GridFunction:
    total = GridFunction(scale)
    for interval in keep:
        total = total + deltas[interval]
    return total


def _dust_floor(deltas: Mapping[GridInterval, GridFunction], measure: GridMeasure) -> float:
    """Norm level below which a sum of differences is rounding debris.

    Cancellations in upstream sums can leave differences of size eps
    relative to the data; groups whose norm sits at that level carry no
    information and are skipped rather than re-expanded.
    """
    energy = sum(dot(d, d, measure) for d in deltas.values())
    return 1e-12 * math.sqrt(energy)


@dataclass(frozen=True)
class SplitResiduals:
    """Float residuals of the three re-grouping identities of the below form."""

    split: float
    resplit: float
    resplit2: float

    @property
    def largest(self) -> float:
        return max(self.split, self.resplit, self.resplit2)


def split_identities(
    f: GridFunction, g: GridFunction, tree: StoppingTree, form: HilbertForm
) -> SplitResiduals:
    """Verify the three exact re-groupings of the below form.

    First the double sum splits over pairs of stopping intervals grouped
    by the shifted parent of I and the parent of J; then the diagonal
    re-splits through the direct projections; finally the off-diagonal
    re-indexes along the ancestor chains.  Each identity is pure algebra,
    so the returned residuals stay at rounding level.  The projection
    sides are recomputed through the public entry points on materialized
    projection functions -- nothing is shared with the direct evaluation
    beyond the inputs.
    """
    system = tree.system
    sigma, w = form.sigma, form.w
    deltas_f = _checked_expansion(f, sigma, system, "f")
    deltas_g = _checked_expansion(g, w, system, "g")
    engine = _WindowEngine(form, deltas_f)
    pairs = _deep_pairs(deltas_f, deltas_g, system)
    below = sum(
        _pair_value(engine, i, j, deltas_g, w, system) for i, j in pairs
    )

    pi_f = _pi_maps(tree, list(deltas_f), shifted=False)
    pi_rf = _pi_maps(tree, list(deltas_f), shifted=True)
    pi_g = _pi_maps(tree, list(deltas_g), shifted=False)

    # Every deep pair must fall in a diagonal or upward group; anything
    # else voids the re-grouping.
    for i, j in pairs:
        s = pi_rf[i]
        if s is None or not pi_g[j].contains(s):
            raise InvariantViolation(f"pair {(i, j)} escapes the stopping groups")

    f_floor = _dust_floor(deltas_f, sigma)
    g_floor = _dust_floor(deltas_g, w)

    def group_form(keep_f: Sequence[GridInterval], keep_g: Sequence[GridInterval]) -> float:
        """Below form of two restricted groups through the public entry point.

        Groups at rounding level are skipped -- their true contribution
        is dust and re-expanding them is meaningless.
        """
        if not keep_f or not keep_g:
            return 0.0
        part_f = _restricted(deltas_f, keep_f, sigma.scale)
        part_g = _restricted(deltas_g, keep_g, w.scale)
        if norm_l2(part_f, sigma) <= f_floor or norm_l2(part_g, w) <= g_floor:
            return 0.0
        return b_below(part_f, part_g, form, system)

    keys_f = list(deltas_f)
    keys_g = list(deltas_g)
    diag = 0.0
    upward = 0.0
    for s in tree.nodes:
        keep_f = [iv for iv in keys_f if pi_rf[iv] == s]
        for t in tree.nodes:
            keep_g = [iv for iv in keys_g if pi_g[iv] == t]
            if t == s:
                diag += group_form(keep_f, keep_g)
            elif t.contains(s):
                upward += group_form(keep_f, keep_g)
    res_split = abs(below - diag - upward)

    # Diagonal terms re-split through the direct projections: components
    # whose direct and shifted parents differ migrate to the chain terms.
    diag_direct = 0.0
    chain = 0.0
    for s in tree.nodes:
        diag_direct += group_form(
            [iv for iv in keys_f if pi_f[iv] == s],
            [iv for iv in keys_g if pi_g[iv] == s],
        )
    for s in tree.nodes:
        for t in tree.nodes:
            if t.contains(s) and t != s:
                chain += group_form(
                    [iv for iv in keys_f if pi_f[iv] == s and pi_rf[iv] == t],
                    [iv for iv in keys_g if pi_g[iv] == t],
                )
    res_resplit = abs(diag - diag_direct - chain)

    # The chain part re-indexed by the height k of the exit level: the
    # components of depth r-k below S pair with the chain of intervals
    # strictly between the k-fold ancestor and its stopping parent.
    reindexed = 0.0
    for s in tree.nodes:
        level_s = system.level_of(s)
        for k in range(1, system.r + 1):
            if level_s + k > system.n_levels:
                continue
            depth = system.r - k
            if level_s - depth < 0:
                continue
            keep = [
                iv
                for iv in deltas_f
                if pi_f[iv] == s and system.level_of(iv) == level_s - depth
            ]
            if not keep:
                continue
            part = _restricted(deltas_f, keep, sigma.scale)
            part_engine = _WindowEngine(form, {s: part})
            anchor = system.ancestor(s, k)
            j = anchor
            top = tree.stopping_parent(anchor)
            while j != top:
                j = system.parent(j)
                dg = deltas_g.get(j)
                if dg is None:
                    continue
                kids = system.children(j)
                child = kids[0] if kids[0].contains(anchor) else kids[1]
                avg = interval_average(dg, child, w)
                if avg:
                    reindexed += part_engine.window(s, child) * avg
    res_resplit2 = abs(chain - reindexed)

    return SplitResiduals(res_split, res_resplit, res_resplit2)


# ---- ladder functions and the extraction ------------------------------------


def _maximal_values(g: GridFunction, system: ShiftedDyadicSystem, w: GridMeasure) -> Dict[int, float]:
    """Dyadic maximal function of g over the charged cells."""
    absg = GridFunction(g.scale, {k: abs(v) for k, v in g.values.items()})
    out: Dict[int, float] = {}
    for k in w.cells:
        best = 0.0
        for level in range(system.n_levels + 1):
            best = max(best, interval_average(absg, system.interval_at(level, k), w))
        out[k] = best
    return out


def phi_function(
    g: GridFunction, tree: StoppingTree, s: GridInterval, w: GridMeasure
) -> GridFunction:
    """The ladder of upward averages outside S: sum_{J ) S} 1_{J \\ J_S} <g>_J.

    Each charged cell outside S picks up the average over the smallest
    ancestor of S containing it, so the function is dominated by the
    dyadic maximal function of g away from S; both facts are asserted.
    """
    system = tree.system
    system.level_of(s)
    if not system.top.contains(s):
        raise ValueError(f"{s} is not contained in the base interval")
    values: Dict[int, float] = {}
    prev = s
    while prev != system.top:
        j = system.parent(prev)
        avg = interval_average(g, j, w)
        if avg != 0.0:
            for k in w.cells:
                if j.contains_cell(k) and not prev.contains_cell(k):
                    values[k] = avg
        prev = j
    fn = GridFunction(w.scale, values)
    maximal = _maximal_values(g, system, w)
    for k, v in fn.values.items():
        if s.contains_cell(k):
            raise InvariantViolation("ladder function charged a cell inside S")
        if abs(v) > maximal[k] * (1.0 + _REL_SLACK) + _TINY:
            raise InvariantViolation("ladder value exceeds the maximal function")
    return fn


def phi_tilde_function(
    g: GridFunction, tree: StoppingTree, anchor: GridInterval, w: GridMeasure
) -> GridFunction:
    """Recentred ladder between an interval and its stopping parent.

    Same upward averages as ``phi_function`` but only along the chain up
    to the stopping parent of the anchor, each term recentred by the
    average over that parent.  Dominated by twice the maximal function
    away from the anchor; zero when the anchor is itself a stopping
    interval.
    """
    system = tree.system
    top = tree.stopping_parent(anchor)
    values: Dict[int, float] = {}
    if top != anchor:
        head = interval_average(g, top, w)
        prev = anchor
        while prev != top:
            j = system.parent(prev)
            avg = interval_average(g, j, w) - head
            if avg != 0.0:
                for k in w.cells:
                    if j.contains_cell(k) and not prev.contains_cell(k):
                        values[k] = avg
            prev = j
    fn = GridFunction(w.scale, values)
    maximal = _maximal_values(g, system, w)
    for k, v in fn.values.items():
        if anchor.contains_cell(k):
            raise InvariantViolation("recentred ladder charged a cell inside the anchor")
        if abs(v) > 2.0 * maximal[k] * (1.0 + _REL_SLACK) + _TINY:
            raise InvariantViolation("recentred ladder exceeds twice the maximal function")
    return fn


def local_form(
    f: GridFunction, g: GridFunction, tree: StoppingTree, form: HilbertForm
) -> float:
    """Diagonal part of the split: sum_S of the below form of both direct
    projections at S."""
    system = tree.system
    deltas_f = _checked_expansion(f, form.sigma, system, "f")
    deltas_g = _checked_expansion(g, form.w, system, "g")
    pi_f = _pi_maps(tree, list(deltas_f), shifted=False)
    pi_g = _pi_maps(tree, list(deltas_g), shifted=False)
    f_floor = _dust_floor(deltas_f, form.sigma)
    g_floor = _dust_floor(deltas_g, form.w)
    total = 0.0
    for s in tree.nodes:
        keep_f = [iv for iv in deltas_f if pi_f[iv] == s]
        keep_g = [iv for iv in deltas_g if pi_g[iv] == s]
        if not keep_f or not keep_g:
            continue
        part_f = _restricted(deltas_f, keep_f, form.scale)
        part_g = _restricted(deltas_g, keep_g, form.scale)
        if norm_l2(part_f, form.sigma) <= f_floor or norm_l2(part_g, form.w) <= g_floor:
            continue
        total += b_below(part_f, part_g, form, system)
    return total


def tail_forms(
    f: GridFunction, g: GridFunction, tree: StoppingTree, form: HilbertForm, k: int
) -> float:
    """The k-th tail form of the splitting, k between 0 and r.

    k = 0 pairs the shifted projections with the ladder outside their
    stopping interval; k >= 1 pairs the depth-(r-k) components with the
    recentred ladder between the k-fold ancestor and its stopping parent.
    """
    system = tree.system
    if not 0 <= k <= system.r:
        raise ValueError(f"k must lie in 0..{system.r}, got {k}")
    sigma, w = form.sigma, form.w
    deltas_f = _checked_expansion(f, sigma, system, "f")
    _checked_expansion(g, w, system, "g")
    total = 0.0
    if k == 0:
        pi_rf = _pi_maps(tree, list(deltas_f), shifted=True)
        for s in tree.nodes:
            keep = [iv for iv in deltas_f if pi_rf[iv] == s]
            if not keep:
                continue
            ladder = phi_function(g, tree, s, w)
            if ladder.values:
                total += evaluate(form, _restricted(deltas_f, keep, sigma.scale), ladder)
        return total
    pi_f = _pi_maps(tree, list(deltas_f), shifted=False)
    for s in tree.nodes:
        level_s = system.level_of(s)
        depth = system.r - k
        if level_s + k > system.n_levels or level_s - depth < 0:
            continue
        keep = [
            iv
            for iv in deltas_f
            if pi_f[iv] == s and system.level_of(iv) == level_s - depth
        ]
        if not keep:
            continue
        ladder = phi_tilde_function(g, tree, system.ancestor(s, k), w)
        if ladder.values:
            total += evaluate(form, _restricted(deltas_f, keep, sigma.scale), ladder)
    return total


@dataclass(frozen=True)
class ExtractionLedger:
    """All pieces of the exact splitting of the below form.

    ``below`` equals ``local`` plus all tails plus the two families of
    average terms exactly; ``residual`` is the float leftover.  The
    stop-average term pairs each shifted projection with the indicator of
    its own stopping interval, recentred by the average over the root so
    the identity needs no centring of g; the chain-average terms do the
    same at every exit height with differences of consecutive averages.
    """

    below: float
    local: float
    tails: Tuple[float, ...]
    stop_average: float
    chain_averages: Tuple[float, ...]

    @property
    def residual(self) -> float:
        return abs(
            self.below
            - self.local
            - sum(self.tails)
            - self.stop_average
            - sum(self.chain_averages)
        )


def extraction(
    f: GridFunction, g: GridFunction, tree: StoppingTree, form: HilbertForm
) -> ExtractionLedger:
    """Split the below form into local, tail and named average pieces."""
    system = tree.system
    sigma, w = form.sigma, form.w
    deltas_f = _checked_expansion(f, sigma, system, "f")
    deltas_g = _checked_expansion(g, w, system, "g")
    engine = _WindowEngine(form, deltas_f)
    below = sum(
        _pair_value(engine, i, j, deltas_g, w, system)
        for i, j in _deep_pairs(deltas_f, deltas_g, system)
    )
    local = local_form(f, g, tree, form)
    tails = tuple(tail_forms(f, g, tree, form, k) for k in range(system.r + 1))

    pi_f = _pi_maps(tree, list(deltas_f), shifted=False)
    pi_rf = _pi_maps(tree, list(deltas_f), shifted=True)

    # The stop-average term carries the telescoped upward averages; the
    # base average is subtracted so the identity holds for uncentred g.
    stop_average = 0.0
    base_avg = interval_average(g, tree.root, w)
    for s in tree.nodes:
        keep = [iv for iv in deltas_f if pi_rf[iv] == s]
        if not keep:
            continue
        part = _restricted(deltas_f, keep, sigma.scale)
        avg = interval_average(g, s, w)
        if avg:
            stop_average += evaluate(form, part, indicator(s)) * avg
        if base_avg:
            stop_average -= evaluate(form, part, indicator(tree.root)) * base_avg

    chain_averages = []
    for k in range(1, system.r + 1):
        value = 0.0
        for s in tree.nodes:
            level_s = system.level_of(s)
            depth = system.r - k
            if level_s + k > system.n_levels or level_s - depth < 0:
                continue
            keep = [
                iv
                for iv in deltas_f
                if pi_f[iv] == s and system.level_of(iv) == level_s - depth
            ]
            if not keep:
                continue
            anchor = system.ancestor(s, k)
            drop = interval_average(g, anchor, w) - interval_average(
                g, tree.stopping_parent(anchor), w
            )
            if drop:
                value += (
                    evaluate(
                        form,
                        _restricted(deltas_f, keep, sigma.scale),
                        indicator(anchor),
                    )
                    * drop
                )
        chain_averages.append(value)

    return ExtractionLedger(
        below=below,
        local=local,
        tails=tails,
        stop_average=stop_average,
        chain_averages=tuple(chain_averages),
    )


# ---- the monotonicity principle ----------------------------------------------


def monotonicity_check(
    f: GridFunction,
    intervals: Sequence[GridInterval],
    j_interval: GridInterval,
    g: GridFunction,
    h: GridFunction,
    form: HilbertForm,
    system: ShiftedDyadicSystem,
) -> Tuple[float, float, float]:
    """Compare a difference sum against its sign-aligned envelope.

    For intervals inside J and test functions supported outside J with
    |g| <= h, returns

        lhs = |B(sum Delta_I f, g)|,
        mid = B(sum eps_I Delta_I f, h),
        rhs = (sum eps_I <Delta_I f, x>) * Q(h dw, J),

    where eps_I aligns each difference with the identity.  Asserts
    lhs <= mid and mid >= MONOTONE_LOWER_CONSTANT * rhs.
    """
    for interval in intervals:
        if not j_interval.contains(interval):
            raise ValueError(f"interval {interval} is not contained in {j_interval}")
    for name, fn in (("g", g), ("h", h)):
        for k in fn.values:
            if j_interval.contains_cell(k):
                raise ValueError(f"support of {name} meets J at cell {k}")
    for k in h.values:
        if h.values[k] < 0.0:
            raise ValueError(f"h must be nonnegative, got {h.values[k]} at cell {k}")
    for k, v in g.values.items():
        if abs(v) > h[k]:
            raise ValueError(f"|g| exceeds h at cell {k}")

    id_fn = identity_on(form.sigma.cells, form.scale)
    plain = GridFunction(form.scale)
    signed = GridFunction(form.scale)
    pairing = 0.0
    for interval in intervals:
        d = martingale_difference(f, interval, form.sigma, system)
        plain = plain + d
        coef = dot(d, id_fn, form.sigma)
        eps = 1.0 if coef >= 0.0 else -1.0
        signed = signed + d.scaled(eps)
        pairing += eps * coef

    lhs = abs(evaluate(form, plain, g))
    mid = evaluate(form, signed, h)
    rhs = pairing * poisson_Q(h, form.w, j_interval)

    slack = _REL_SLACK * (abs(lhs) + abs(mid)) + _TINY
    if lhs > mid + slack:
        raise InvariantViolation(f"envelope failed: lhs {lhs} > mid {mid}")
    slack = _REL_SLACK * (abs(mid) + abs(rhs)) + _TINY
    if mid + slack < MONOTONE_LOWER_CONSTANT * rhs:
        raise InvariantViolation(
            f"pairing lower bound failed: mid {mid} < {MONOTONE_LOWER_CONSTANT} * {rhs}"
        )
    return lhs, mid, rhs


# ---- energy cube families ----------------------------------------------------


def kk_family(tree: StoppingTree, s_node: GridInterval, k: int) -> List[GridInterval]:
    """Maximal good cubes of height k attached to a stopping interval.

    For k >= 1 these are the good intervals exactly r-k levels below S
    whose stopping parent is S; for k = 0 the maximal good intervals at
    least r levels below S whose r-fold ancestor has stopping parent S.
    """
    system = tree.system
    if not tree.is_node(s_node):
        raise ValueError(f"{s_node} is not a stopping interval")
    if not 0 <= k <= system.r:
        raise ValueError(f"k must lie in 0..{system.r}, got {k}")
    level_s = system.level_of(s_node)
    if k >= 1:
        level = level_s - (system.r - k)
        if level < 0:
            return []
        out = []
        size = 1 << level
        for left in range(s_node.left, s_node.right + 1, size):
            cand = GridInterval(left, left + size - 1, system.scale)
            if not is_bad(cand, system) and tree.stopping_parent(cand) == s_node:
                out.append(cand)
        return out
    start = level_s - system.r
    if start < 0:
        return []
    out = []
    size = 1 << start
    stack = [
        GridInterval(left, left + size - 1, system.scale)
        for left in range(s_node.right + 1 - size, s_node.left - 1, -size)
    ]
    while stack:
        cand = stack.pop()
        if not is_bad(cand, system) and (
            tree.stopping_parent(system.ancestor(cand, system.r)) == s_node
        ):
            out.append(cand)
        elif system.level_of(cand) > 0:
            stack.extend(reversed(system.children(cand)))
    out.sort(key=lambda iv: iv.left)
    return out


def projection_energy_on(
    tree: StoppingTree,
    s_node: GridInterval,
    k: int,
    cube: GridInterval,
    sigma: GridMeasure,
) -> float:
    """Squared energy of the identity under the (S, k) projection on a cube.

    Sums <x, h_I>^2 over the good intervals I inside the cube belonging
    to the (S, k) group; the group members inside a maximal cube are
    pairwise orthogonal, so the restriction is exact.
    """
    system = tree.system
    level_s = system.level_of(s_node)
    id_fn = identity_on(sigma.cells, sigma.scale)

    def participates(interval: GridInterval) -> bool:
        if is_bad(interval, system):
            return False
        if k >= 1:
            return (
                system.level_of(interval) == level_s - (system.r - k)
                and tree.stopping_parent(interval) == s_node
            )
        if system.level_of(interval) + system.r > system.n_levels:
            return False
        return tree.stopping_parent(system.ancestor(interval, system.r)) == s_node

    total = 0.0
    stack = [cube]
    while stack:
        node = stack.pop()
        if participates(node):
            coef = haar_vector(node, sigma, system).coefficient(id_fn, sigma)
            total += coef * coef
        if system.level_of(node) > 0:
            stack.extend(system.children(node))
    return total


def kj_family(
    tree: StoppingTree, j_interval: GridInterval, k: int, u: int
) -> List[GridInterval]:
    """Energy cubes whose tripled selector lands inside J while their
    stopping interval does not: the family whose overlap stays at most r."""
    system = tree.system
    out = []
    for s in tree.nodes:
        if j_interval.contains(s):
            continue
        for cube in kk_family(tree, s, k):
            selector = tripled_iu(cube, u, shift=system.shift)
            if selector is None:
                continue
            if j_interval.left <= selector.left and selector.right <= j_interval.right:
                out.append(cube)
    out.sort(key=lambda iv: (iv.left, iv.n_cells))
    return out


def family_overlap(family: Sequence[GridInterval]) -> int:
    """Largest number of family members covering a single cell."""
    events: Dict[int, int] = {}
    for interval in family:
        events[interval.left] = events.get(interval.left, 0) + 1
        events[interval.right + 1] = events.get(interval.right + 1, 0) - 1
    best = 0
    running = 0
    for cell in sorted(events):
        running += events[cell]
        best = max(best, running)
    return best


# ---- admissible pairs and their size -----------------------------------------


@dataclass(frozen=True)
class AdmissiblePairs:
    """A collection of deep interval pairs below one stopping interval.

    Both defining properties are verified on construction: every pair
    (I, J) has I deep inside J strictly inside S, and the collection is
    convex in J over good intervals.
    """

    system: ShiftedDyadicSystem
    s_node: GridInterval
    pairs: Tuple[Tuple[GridInterval, GridInterval], ...]
    i_family: Tuple[GridInterval, ...]
    j_family: Tuple[GridInterval, ...]

    def __post_init__(self):
        system = self.system
        members = set(self.pairs)
        for i, j in self.pairs:
            if not (
                j.contains(i)
                and system.level_of(i) + system.r < system.level_of(j)
                and self.s_node.contains(j)
                and j != self.s_node
            ):
                raise InvariantViolation(f"pair {(i, j)} is not deep inside {self.s_node}")
        by_i: Dict[GridInterval, List[GridInterval]] = {}
        for i, j in self.pairs:
            by_i.setdefault(i, []).append(j)
        for i, js in by_i.items():
            js.sort(key=lambda iv: iv.n_cells)
            for lo in js:
                for hi in js:
                    if lo.n_cells >= hi.n_cells:
                        continue
                    mid = system.parent(lo)
                    while mid.n_cells < hi.n_cells:
                        if not is_bad(mid, system) and (i, mid) not in members:
                            raise InvariantViolation(
                                f"collection is not convex in J at {(i, mid)}"
                            )
                        mid = system.parent(mid)


def admissible_q(
    f: GridFunction, g: GridFunction, tree: StoppingTree, s_node: GridInterval
) -> AdmissiblePairs:
    """The particular admissible collection below one stopping interval.

    Pairs (I, J) of good intervals strictly inside S with I deep inside J,
    the stopping parent of I equal to S and the stopping parent of the
    parent of J equal to S.  The arguments are validated like every other
    splitting input; the collection itself does not depend on them.
    """
    system = tree.system
    if not tree.is_node(s_node):
        raise ValueError(f"{s_node} is not a stopping interval")
    _checked_expansion(f, tree.sigma, system, "f")
    _checked_expansion(g, tree.w, system, "g")

    level_s = system.level_of(s_node)
    goods: List[GridInterval] = []
    for level in range(level_s):
        size = 1 << level
        for left in range(s_node.left, s_node.right + 1, size):
            cand = GridInterval(left, left + size - 1, system.scale)
            if not is_bad(cand, system):
                goods.append(cand)

    i_side = [iv for iv in goods if tree.stopping_parent(iv) == s_node]
    j_side = [
        iv for iv in goods if tree.stopping_parent(system.parent(iv)) == s_node
    ]
    pairs = []
    for j in j_side:
        lj = system.level_of(j)
        for i in i_side:
            if system.level_of(i) + system.r < lj and j.contains(i):
                pairs.append((i, j))
    pairs.sort(key=lambda p: (p[1].n_cells, p[1].left, p[0].n_cells, p[0].left))
    i_family = sorted({i for i, _ in pairs}, key=lambda iv: (iv.n_cells, iv.left))
    j_family = sorted({j for _, j in pairs}, key=lambda iv: (iv.n_cells, iv.left))
    return AdmissiblePairs(
        system=system,
        s_node=s_node,
        pairs=tuple(pairs),
        i_family=tuple(i_family),
        j_family=tuple(j_family),
    )


def size_of_q(
    pairs: AdmissiblePairs,
    form: HilbertForm,
    sigma: GridMeasure,
    w: GridMeasure,
    s_node: GridInterval,
) -> float:
    """Size of an admissible collection, exactly from Haar data.

    The square of the size is the largest, over cubes K drawn from either
    family, of the squared tail kernel of the w-mass outside K times the
    identity energy of the first family inside K, normalized by w(K).
    A w-null cube with positive numerator makes the size infinite.
    """
    if not pairs.pairs:
        return 0.0
    system = pairs.system
    id_fn = identity_on(sigma.cells, sigma.scale)
    coefs = {
        i: haar_vector(i, sigma, system).coefficient(id_fn, sigma)
        for i in pairs.i_family
    }
    best = 0.0
    ring_cells = {k: 1.0 for k in w.cells if s_node.contains_cell(k)}
    for cube in sorted(set(pairs.i_family) | set(pairs.j_family)):
        energy = sum(c * c for i, c in coefs.items() if cube.contains(i))
        if energy == 0.0:
            continue
        ring = GridFunction(
            w.scale,
            {k: v for k, v in ring_cells.items() if not cube.contains_cell(k)},
        )
        tail = poisson_Q(ring, w, cube)
        numerator = tail * tail * energy
        if numerator <= 0.0:
            continue
        w_k = interval_mass(w, cube)
        if w_k <= 0.0:
            return math.inf
        best = max(best, numerator / w_k)
    return math.sqrt(best)


# ---- product boxes over the tripled families ---------------------------------


def tripled_children(interval: TripledInterval) -> List[TripledInterval]:
    """The two next-scale members tiling a tripled interval."""
    if interval.level == 0:
        return []
    level = interval.level - 1
    res = _tripled_residue(interval.u, level)
    kids = [
        TripledInterval(2 * interval.a - 1, level, interval.u, interval.shift, interval.scale),
        TripledInterval(2 * interval.a + 2, level, interval.u, interval.shift, interval.scale),
    ]
    for kid in kids:
        if kid.a % 3 != res:  # the residue schedule tiles every member
            raise RuntimeError(f"tripled child {kid} breaks the residue schedule")
    return kids


@dataclass(frozen=True)
class TripledBox:
    """Product box over a tripled interval: base times a height strip.

    The strip index counts height windows of one core length, so boxes
    halve in both directions from parent to child and the whole family is
    a dyadic lattice of squares -- the shape the positive-form operations
    expect from their cubes.
    """

    base: TripledInterval
    strip: int

    def __post_init__(self):
        if self.strip < 0:
            raise ValueError("height strips start at zero")

    @property
    def level(self) -> int:
        return self.base.level

    def parent(self) -> "TripledBox":
        return TripledBox(self.base.parent(), self.strip >> 1)

    def children(self) -> Tuple["TripledBox", ...]:
        return tuple(
            TripledBox(kid, s)
            for kid in tripled_children(self.base)
            for s in (2 * self.strip, 2 * self.strip + 1)
        )

    def contains(self, other: "TripledBox") -> bool:
        gap = self.level - other.level
        return (
            gap >= 0
            and self.base.contains(other.base)
            and (other.strip >> gap) == self.strip
        )

    def contains_point(self, point: Sequence[int]) -> bool:
        x, height = int(point[0]), int(point[1])
        return (
            height >= 0
            and self.base.contains_cell(x)
            and (height >> self.level) == self.strip
        )

    def join(self, other: "TripledBox") -> Optional["TripledBox"]:
        met = merge_member(self.base, other.base)
        if met is None:
            return None
        s_self = self.strip >> (met.level - self.level)
        s_other = other.strip >> (met.level - other.level)
        lift = (s_self ^ s_other).bit_length()
        return TripledBox(met.ancestor(lift), s_self >> lift)


def mu_atom_point(interval: TripledInterval) -> Tuple[int, int]:
    """Plane coordinates of the profile atom of a tripled interval.

    The atom sits over the centre of the interval at three quarters of
    its core length; both coordinates are exact cell integers and the
    strip membership test reproduces interval containment.
    """
    return (
        interval.left + ((3 << interval.level) >> 1),
        (3 << interval.level) >> 2,
    )


def box_pairing(
    profile: PoissonProfile,
    w: GridMeasure,
    h: GridFunction,
    phi: Mapping[TripledInterval, float],
) -> float:
    """Corner sum of a profile: sum_J |J|^-2 int_{ring J} h dw int_{box J} phi dmu.

    The ring of J is its parent minus J and the box of J collects the
    profile atoms of its subintervals.  Expanding the product over pairs
    of one w-cell and one profile atom leaves a single J per pair -- the
    child, toward the atom, of the first ancestor reaching the cell -- so
    the double sum is evaluated exactly without enumerating members.
    """
    if h.scale != w.scale or profile.scale != w.scale:
        raise ValueError("scale mismatch")
    total = 0.0
    for key, coeff in profile.coefficients.items():
        weight_mu = coeff * phi.get(key, 0.0)
        if weight_mu == 0.0:
            continue
        for cell, mass in w.cells.items():
            weight_w = mass * h[cell]
            if weight_w == 0.0 or key.contains_cell(cell):
                continue
            met = first_containing_ancestor(key, cell)
            if met is None:
                continue
            node = key
            while True:
                up = node.parent()
                if up == met:
                    break
                node = up
            total += weight_mu * weight_w / node.length**2
    return total


def box_form(
    profile: PoissonProfile, w: GridMeasure, orientation: str
) -> PositiveDyadicForm:
    """The corner sums of a profile as a positive dyadic form on boxes.

    The w-cells sit on the floor of the plane and the profile atoms at
    their box points; every first joint ancestor of an atom and an
    outside cell contributes its two bottom child boxes with coefficient
    one over its squared length.  The two orientations order the
    distinguished children left-to-right or right-to-left, and the corner
    sum equals four times the sum of the two oriented forms.
    """
    if orientation not in ("left-right", "right-left"):
        raise ValueError(f"orientation must be 'left-right' or 'right-left', got {orientation!r}")
    floor_atoms = {(k, 0): mass for k, mass in w.cells.items()}
    box_atoms = {mu_atom_point(iv): c for iv, c in profile.coefficients.items()}
    sigma2 = CubeMeasure(2, floor_atoms)
    mu2 = CubeMeasure(2, box_atoms)

    parents: Set[TripledInterval] = set()
    for key in profile.coefficients:
        for cell in w.cells:
            if key.contains_cell(cell):
                continue
            met = first_containing_ancestor(key, cell)
            if met is not None:
                parents.add(met)

    entries = []
    for met in sorted(parents, key=lambda iv: (iv.level, iv.a)):
        low, high = (TripledBox(kid, 0) for kid in tripled_children(met))
        plus, minus = (low, high) if orientation == "left-right" else (high, low)
        entries.append(
            LambdaEntry(
                cube=TripledBox(met, 0),
                coefficient=1.0 / met.length**2,
                plus=plus,
                minus=minus,
            )
        )
    return PositiveDyadicForm(dimension=2, entries=tuple(entries), sigma=sigma2, w=mu2)
