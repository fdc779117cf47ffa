"""Positive dyadic bilinear forms with two distinguished child cubes.

The object of study is the finite nonnegative bilinear form

    Lambda(f, g) = sum_Q lambda_Q * (integral of f over Q+ against sigma)
                            * (integral of g over Q- against w),

where ``Q`` runs over dyadic cubes of any fixed dimension, ``lambda_Q >= 0``,
and ``Q+ != Q-`` are two distinguished children of ``Q``.  The norm of the
form on ``L^p(sigma) x L^{p'}(w)`` is comparable to ``U + T + T*``, where
``U`` is the direct per-cube constant and ``T`` / ``T*`` are the local
testing constants.  Everything in this module is finite and exact:

* ``evaluate_lambda`` is a plain finite sum.

* ``lambda_norm`` is the top singular value of the induced atom matrix at
  ``p = 2`` (certified by the power-iteration tail bound); for any other
  exponent it runs a projected alternating ascent over nonnegative unit
  vectors and returns a guaranteed *lower* bound on the supremum.

* ``lambda_testing`` computes ``U``, ``T``, ``T*`` exhaustively.  Although
  ``T`` is defined as a supremum over *all* ambient cubes, replacing a cube
  by the join of the coefficient cubes it contains keeps the restricted form
  unchanged while the cube's measure can only shrink, so the supremum is
  attained on the (finite) join-closure of the coefficient cubes.

* ``principal_cubes`` builds the average-doubling stopping family from the
  sufficiency proof and checks the half-mass property of its exceptional
  sets.

Cubes are ``LatticeCube`` values by default — the standard halving lattice
over ``Z^d`` — but the form operations only use ``level``, ``parent``,
containment tests and ``join``, so any cube-like object with those methods
(for instance the product cubes built by the decomposition layer) works as
well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .grid import InvariantViolation
from .linalg import top_singular_value

Point = Tuple[int, ...]

_ASCENT_ROUNDS = 300
_ASCENT_REL_TOL = 1e-12
_NORM_REL_TOL = 1e-12


@dataclass(frozen=True)
class LatticeCube:
    """Standard dyadic cube in ``Z^d``: side ``2**level`` cells.

    ``corner`` is given in units of the cube's own side, so the cube covers
    the cells ``prod_i [corner_i * 2**level, (corner_i + 1) * 2**level)``.
    Level 0 cubes are single cells.
    """

    corner: Point
    level: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "corner", tuple(int(c) for c in self.corner))
        if self.level < 0:
            raise ValueError("cube level must be nonnegative")
        if not self.corner:
            raise ValueError("cube dimension must be at least 1")

    @property
    def dimension(self) -> int:
        return len(self.corner)

    def contains_point(self, point: Sequence[int]) -> bool:
        if len(point) != len(self.corner):
            raise ValueError("point dimension does not match the cube")
        return all(int(p) >> self.level == c for p, c in zip(point, self.corner))

    def contains(self, other: "LatticeCube") -> bool:
        if other.level > self.level:
            return False
        shift = self.level - other.level
        return all(c >> shift == s for c, s in zip(other.corner, self.corner))

    def parent(self) -> "LatticeCube":
        return LatticeCube(tuple(c >> 1 for c in self.corner), self.level + 1)

    def children(self) -> Tuple["LatticeCube", ...]:
        if self.level == 0:
            return ()
        d = len(self.corner)
        kids = []
        for bits in range(1 << d):
            offset = tuple((bits >> axis) & 1 for axis in range(d))
            corner = tuple(2 * c + o for c, o in zip(self.corner, offset))
            kids.append(LatticeCube(corner, self.level - 1))
        return tuple(kids)

    def join(self, other: "LatticeCube") -> Optional["LatticeCube"]:
        """Smallest lattice cube containing both, or None.

        Along each axis two nonnegative (or two negative) corners merge after
        ``bit_length`` of their xor many halvings; corners on opposite sides
        of 0 never merge, exactly like the two half-axes of the standard
        dyadic grid.
        """
        if len(other.corner) != len(self.corner):
            raise ValueError("cube dimensions do not match")
        lo, hi = (self, other) if self.level <= other.level else (other, self)
        lifted = tuple(c >> (hi.level - lo.level) for c in lo.corner)
        steps = 0
        for a, b in zip(lifted, hi.corner):
            if (a >= 0) != (b >= 0):
                return None
            steps = max(steps, (a ^ b).bit_length())
        corner = tuple(a >> steps for a in hi.corner)
        return LatticeCube(corner, hi.level + steps)


@dataclass(frozen=True)
class CubeMeasure:
    """Finite nonnegative atomic measure on the cells of ``Z^d``."""

    dimension: int
    atoms: Mapping[Point, float]

    def __post_init__(self) -> None:
        clean: Dict[Point, float] = {}
        for point, mass in self.atoms.items():
            key = tuple(int(p) for p in point)
            if len(key) != self.dimension:
                raise ValueError("atom dimension does not match the measure")
            value = float(mass)
            if value < 0:
                raise ValueError("masses must be nonnegative")
            if value > 0:
                clean[key] = clean.get(key, 0.0) + value
        object.__setattr__(self, "atoms", clean)

    def points(self) -> Tuple[Point, ...]:
        return tuple(sorted(self.atoms))

    def total(self) -> float:
        return float(sum(self.atoms.values()))

    def mass_of(self, cube) -> float:
        return float(
            sum(m for p, m in self.atoms.items() if cube.contains_point(p))
        )

    def integral(self, values: Mapping[Point, float], cube=None) -> float:
        """Integral of a pointwise-defined function, optionally over a cube."""
        total = 0.0
        for point, mass in self.atoms.items():
            if cube is not None and not cube.contains_point(point):
                continue
            total += float(values.get(point, 0.0)) * mass
        return total


@dataclass(frozen=True)
class LambdaEntry:
    """One coefficient cube with its two distinguished children."""

    cube: LatticeCube
    coefficient: float
    plus: LatticeCube
    minus: LatticeCube

    def __post_init__(self) -> None:
        if self.coefficient < 0:
            raise ValueError("coefficients must be nonnegative")
        if self.plus == self.minus:
            raise ValueError("the distinguished children must be distinct")
        if self.plus.parent() != self.cube or self.minus.parent() != self.cube:
            raise ValueError("distinguished cells must be children of their cube")


@dataclass(frozen=True)
class PositiveDyadicForm:
    """Finite positive form ``sum_Q lambda_Q int_{Q+} f dsigma int_{Q-} g dw``."""

    dimension: int
    entries: Tuple[LambdaEntry, ...]
    sigma: CubeMeasure
    w: CubeMeasure
    p: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.p > 1.0 or not np.isfinite(self.p):
            raise ValueError("the exponent must lie in (1, infinity)")
        if self.sigma.dimension != self.dimension or self.w.dimension != self.dimension:
            raise ValueError("measure dimension does not match the form")
        seen = set()
        for entry in self.entries:
            if entry.cube in seen:
                raise ValueError("each cube may carry at most one coefficient")
            seen.add(entry.cube)

    @property
    def conjugate(self) -> float:
        return self.p / (self.p - 1.0)


def evaluate_lambda(
    form: PositiveDyadicForm,
    f: Mapping[Point, float],
    g: Mapping[Point, float],
) -> float:
    """Exact value of the form on pointwise-defined functions.

    Values of ``f`` away from sigma-atoms and of ``g`` away from w-atoms are
    irrelevant; missing keys count as zero.
    """
    total = 0.0
    for entry in form.entries:
        if entry.coefficient == 0.0:
            continue
        f_part = form.sigma.integral(f, entry.plus)
        g_part = form.w.integral(g, entry.minus)
        total += entry.coefficient * f_part * g_part
    return float(total)


def _atom_arrays(form: PositiveDyadicForm):
    """Sorted atom lists with masses and per-entry membership masks."""
    xs = form.sigma.points()
    ys = form.w.points()
    sig = np.array([form.sigma.atoms[p] for p in xs], dtype=float)
    ww = np.array([form.w.atoms[p] for p in ys], dtype=float)
    masks = []
    for entry in form.entries:
        cols = np.fromiter(
            (entry.plus.contains_point(p) for p in xs), dtype=bool, count=len(xs)
        )
        rows = np.fromiter(
            (entry.minus.contains_point(p) for p in ys), dtype=bool, count=len(ys)
        )
        masks.append((entry, cols, rows))
    return xs, ys, sig, ww, masks


def _induced_matrix(form: PositiveDyadicForm) -> np.ndarray:
    """Matrix of the form between the weighted atom spaces at ``p = 2``.

    Row ``i`` / column ``j`` hold ``sum_Q lambda_Q 1_{Q+}(x_j) 1_{Q-}(y_i)``
    scaled by ``sqrt(w_i) sqrt(sigma_j)``, so the operator norm of the matrix
    is exactly the norm of the form on ``L^2(sigma) x L^2(w)``.
    """
    _, _, sig, ww, masks = _atom_arrays(form)
    kernel = np.zeros((ww.size, sig.size))
    for entry, cols, rows in masks:
        if entry.coefficient == 0.0 or not cols.any() or not rows.any():
            continue
        kernel[np.ix_(rows, cols)] += entry.coefficient
    return kernel * np.sqrt(ww)[:, None] * np.sqrt(sig)[None, :]


def _ascent_lower_bound(form: PositiveDyadicForm, restarts: int, seed: int) -> float:
    """Alternating nonnegative ascent for general exponents.

    Each half-step replaces one argument by the exact maximiser for the
    other (a Hoelder dual vector), so the value sequence is nondecreasing
    and every iterate certifies a lower bound on the norm.
    """
    _, _, sig, ww, masks = _atom_arrays(form)
    if sig.size == 0 or ww.size == 0:
        return 0.0
    p, q = form.p, form.conjugate

    def forward(fvals: np.ndarray) -> np.ndarray:
        out = np.zeros(ww.size)
        for entry, cols, rows in masks:
            out[rows] += entry.coefficient * float(np.dot(fvals[cols], sig[cols]))
        return out

    def backward(gvals: np.ndarray) -> np.ndarray:
        out = np.zeros(sig.size)
        for entry, cols, rows in masks:
            out[cols] += entry.coefficient * float(np.dot(gvals[rows], ww[rows]))
        return out

    def weighted_norm(vec: np.ndarray, weights: np.ndarray, expo: float) -> float:
        return float(np.dot(weights, vec**expo) ** (1.0 / expo))

    rng = np.random.default_rng(seed)
    starts = [np.ones(sig.size)]
    starts += [rng.random(sig.size) + 1e-3 for _ in range(max(0, restarts - 1))]
    best = 0.0
    for start in starts:
        f = start / weighted_norm(start, sig, p)
        value = 0.0
        for _ in range(_ASCENT_ROUNDS):
            image = forward(f)
            val_g = weighted_norm(image, ww, p)
            if val_g == 0.0:
                break
            g = (image / val_g) ** (p - 1.0)
            pre = backward(g)
            val_f = weighted_norm(pre, sig, q)
            if val_f <= value * (1.0 + _ASCENT_REL_TOL):
                value = max(value, val_g, val_f)
                break
            value = val_f
            f = (pre / val_f) ** (q - 1.0)
        best = max(best, value)
    return best


def lambda_norm(form: PositiveDyadicForm, *, restarts: int = 8, seed: int = 0) -> float:
    """Norm of the form on ``L^p(sigma) x L^{p'}(w)``.

    At ``p = 2`` this is the top singular value of the induced atom matrix
    and therefore exact up to the iteration certificate.  For any other
    exponent the returned value is the best of ``restarts`` alternating
    ascents — a certified lower bound, not an exact norm.
    """
    if not form.entries:
        return 0.0
    if form.p == 2.0:
        matrix = _induced_matrix(form)
        if matrix.size == 0:
            return 0.0
        return top_singular_value(matrix, rel_tol=_NORM_REL_TOL)
    return _ascent_lower_bound(form, restarts, seed)


def _join_closure(cubes: Sequence) -> Tuple:
    """Closure of a cube family under pairwise joins.

    In a tree lattice the join of any subfamily equals a fold of pairwise
    joins, so this closure carries every cube at which the testing suprema
    can be attained.  Its size stays below twice the family size.
    """
    closure = []
    seen = set()
    for cube in cubes:
        if cube not in seen:
            seen.add(cube)
            closure.append(cube)
    grew = True
    while grew:
        grew = False
        snapshot = list(closure)
        for i in range(len(snapshot)):
            for j in range(i + 1, len(snapshot)):
                joined = snapshot[i].join(snapshot[j])
                if joined is not None and joined not in seen:
                    seen.add(joined)
                    closure.append(joined)
                    grew = True
    return tuple(closure)


@dataclass(frozen=True)
class PositiveTestingReport:
    """Direct constant and the two local testing constants of a form."""

    u: float
    t: float
    t_star: float


def lambda_testing(form: PositiveDyadicForm) -> PositiveTestingReport:
    """Exhaustive testing constants ``U``, ``T``, ``T*``.

    ``U`` is the supremum of ``lambda_Q sigma(Q+)^{1/p'} w(Q-)^{1/p}``.  The
    local constants test the form restricted to cubes ``Q`` against the
    constant function; by duality the inner supremum over unit functions is
    a fixed weighted norm, exact at every exponent.  The outer supremum over
    ambient cubes is attained on the join-closure of the coefficient cubes.
    """
    p, q = form.p, form.conjugate
    _, _, sig, ww, masks = _atom_arrays(form)

    u = 0.0
    for entry, _, _ in masks:
        if entry.coefficient == 0.0:
            continue
        u = max(
            u,
            entry.coefficient
            * form.sigma.mass_of(entry.plus) ** (1.0 / q)
            * form.w.mass_of(entry.minus) ** (1.0 / p),
        )

    candidates = _join_closure([entry.cube for entry in form.entries])
    t = 0.0
    t_star = 0.0
    for cube in candidates:
        inside = [
            (entry, cols, rows)
            for entry, cols, rows in masks
            if cube.contains(entry.cube)
        ]
        sigma_cube = form.sigma.mass_of(cube)
        if sigma_cube > 0.0:
            vec = np.zeros(ww.size)
            for entry, _, rows in inside:
                vec[rows] += entry.coefficient * form.sigma.mass_of(entry.plus)
            numerator = float(np.dot(ww, vec**p) ** (1.0 / p))
            t = max(t, numerator / sigma_cube ** (1.0 / p))
        w_cube = form.w.mass_of(cube)
        if w_cube > 0.0:
            vec = np.zeros(sig.size)
            for entry, cols, _ in inside:
                vec[cols] += entry.coefficient * form.w.mass_of(entry.minus)
            numerator = float(np.dot(sig, vec**q) ** (1.0 / q))
            t_star = max(t_star, numerator / w_cube ** (1.0 / q))
    return PositiveTestingReport(u=u, t=t, t_star=t_star)


@dataclass(frozen=True)
class PrincipalFamily:
    """Average-doubling stopping family with its exceptional sets.

    ``family`` lists the members generation by generation starting from the
    root; ``children`` maps each member to its stopping children; ``e_sets``
    maps each member ``F`` to the sigma-atoms of ``F`` not covered by any
    stopping child.  Those exceptional sets are pairwise disjoint and each
    carries at least half of the sigma-mass of its member.
    """

    root: LatticeCube
    family: Tuple[LatticeCube, ...]
    children: Dict[LatticeCube, Tuple[LatticeCube, ...]]
    e_sets: Dict[LatticeCube, Tuple[Point, ...]]

    def stopping_parent(self, cube) -> LatticeCube:
        """Smallest family member containing the cube."""
        if not self.root.contains(cube):
            raise ValueError("cube lies outside the root")
        members = set(self.family)
        node = cube
        while node not in members:
            node = node.parent()
        return node


def principal_cubes(
    f: Mapping[Point, float],
    sigma: CubeMeasure,
    q_zero: LatticeCube,
) -> PrincipalFamily:
    """Stopping family of cubes where the average of ``f`` first doubles.

    Starting from the root, the stopping children of a member ``F`` are the
    maximal subcubes ``F'`` with sigma-average of ``f`` strictly larger than
    twice the average over ``F``.  Requires ``f >= 0`` supported inside the
    root.  Raises InvariantViolation if some exceptional set carries less
    than half of its member's mass, which the doubling threshold rules out.
    """
    for point, _ in sigma.atoms.items():
        value = float(f.get(point, 0.0))
        if value < 0.0:
            raise ValueError("the test function must be nonnegative")
        if value != 0.0 and not q_zero.contains_point(point):
            raise ValueError("the test function must be supported in the root cube")

    def profile(cube) -> Tuple[float, float]:
        mass = 0.0
        integral = 0.0
        for point, atom_mass in sigma.atoms.items():
            if cube.contains_point(point):
                mass += atom_mass
                integral += float(f.get(point, 0.0)) * atom_mass
        return mass, integral

    family = []
    children: Dict[LatticeCube, Tuple[LatticeCube, ...]] = {}
    generation = [q_zero]
    while generation:
        next_generation = []
        for member in generation:
            family.append(member)
            mass, integral = profile(member)
            if mass <= 0.0:
                children[member] = ()
                continue
            threshold = 2.0 * integral / mass
            kids = []
            stack = list(member.children())
            while stack:
                candidate = stack.pop()
                sub_mass, sub_integral = profile(candidate)
                if sub_mass <= 0.0:
                    continue
                if sub_integral / sub_mass > threshold:
                    kids.append(candidate)
                    continue
                stack.extend(candidate.children())
            kids.sort(key=lambda cube: (-cube.level, cube.corner))
            children[member] = tuple(kids)
            next_generation.extend(kids)
        generation = next_generation

    e_sets: Dict[LatticeCube, Tuple[Point, ...]] = {}
    for member in family:
        kids = children[member]
        atoms = tuple(
            sorted(
                point
                for point in sigma.atoms
                if member.contains_point(point)
                and not any(kid.contains_point(point) for kid in kids)
            )
        )
        e_sets[member] = atoms
        kept = sum(sigma.atoms[point] for point in atoms)
        mass = sigma.mass_of(member)
        if kept < 0.5 * mass * (1.0 - 1e-12):
            raise InvariantViolation(
                "exceptional set carries less than half of the member mass"
            )
    return PrincipalFamily(
        root=q_zero,
        family=tuple(family),
        children=children,
        e_sets=e_sets,
    )
