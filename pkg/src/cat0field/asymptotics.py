"""Limit sets of shrinking convex families, flat points, and the flat split."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .spaces import (
    Euclidean,
    POINT_SPACE,
    Product,
    ProductPoint,
    SpaceError,
    Tree,
    TreePoint,
    canonical_point,
    distance,
    geodesic_point,
    is_unbounded,
    require_point,
    vertex_point,
)
from .geometry import contains, project_convex
from .boundary import (
    AngularCenter,
    EuclideanDirection,
    JoinPoint,
    THETA_SNAP,
    TreeEnd,
    angle_to_set,
    angular_circumcenter,
    antipode,
    base_point,
    busemann,
    ray_point,
    tits_angle,
)


class FamilyError(ValueError):
    """A nested family violating its preconditions."""


class InvariantFailure(RuntimeError):
    """A certified theorem failed numerically; inputs are outside scope."""


# ---------------------------------------------------------------------------
# nested convex families


@dataclass(frozen=True, eq=False)
class NestedConvexFamily:
    """Decreasing family of closed convex sets with empty intersection.

    Either a finite list of sets (integer-indexed) or a callback over real
    levels sampled on the geometric grid 1, 2, 4, ... (real-indexed; the
    callback must be monotone in its level).
    """

    sets: tuple = None
    sampler: object = None

    def __post_init__(self):
        if (self.sets is None) == (self.sampler is None):
            raise FamilyError("provide exactly one of sets or sampler")
        if self.sets is not None:
            object.__setattr__(self, "sets", tuple(self.sets))

    @property
    def indexed(self):
        return self.sets is not None

    def member(self, k):
        if self.indexed:
            if k >= len(self.sets):
                return None
            return self.sets[k]
        return self.sampler(float(2 ** k))


def family_from_levels(sampler):
    return NestedConvexFamily(sets=None, sampler=sampler)


# ---------------------------------------------------------------------------
# direction extraction


def direction_from(space, x0, p):
    """Boundary point in whose cone direction ``p`` lies as seen from ``x0``."""
    if isinstance(space, Euclidean):
        v = np.asarray(p, float) - np.asarray(x0, float)
        n = np.linalg.norm(v)
        if n <= 1e-12:
            raise SpaceError("cannot take the direction of a zero displacement")
        return EuclideanDirection(v / n)
    if isinstance(space, Tree):
        q = canonical_point(space, p)
        if q.carrier in space.rays:
            return TreeEnd(q.carrier)
        raise SpaceError("point is not far enough along a ray to name an end")
    dl = distance(space.left, x0.left, p.left)
    dr = distance(space.right, x0.right, p.right)
    theta = math.atan2(dr, dl)
    left = None if theta >= math.pi / 2.0 - THETA_SNAP else direction_from(space.left, x0.left, p.left)
    right = None if theta <= THETA_SNAP else direction_from(space.right, x0.right, p.right)
    return JoinPoint(theta, left, right)


# ---------------------------------------------------------------------------
# limit sets


def projection_orbit(space, family, x0, horizon, max_members=4096):
    """Projections of ``x0`` on the family until they pass the horizon."""
    x0 = require_point(space, x0)
    orbit = []
    prev_set = None
    k = 0
    while k < max_members:
        cset = family.member(k)
        if cset is None:
            raise FamilyError("family exhausted before the horizon; "
                              "intersection nonempty at horizon")
        p = project_convex(space, cset, x0)
        if prev_set is not None and not contains(space, prev_set, p, tol=1e-6):
            raise FamilyError(f"family is not monotone at index {k}")
        d = distance(space, x0, p)
        orbit.append((d, p))
        prev_set = cset
        if d > horizon:
            return orbit
        k += 1
    raise FamilyError("projection orbit stayed bounded within the budget")


def limit_set(space, family, x0, horizon=1e3, resolution=1e-3):
    """Accumulation directions of the projection orbit, clustered angularly."""
    orbit = projection_orbit(space, family, x0, horizon)
    reach = orbit[-1][0]
    tail = [(d, p) for d, p in orbit if d >= min(horizon, reach) / 2.0]
    directions = [(d, direction_from(space, x0, p)) for d, p in tail]
    clusters = []  # list of lists of (d, xi)
    for d, xi in directions:
        placed = False
        for cl in clusters:
            if any(tits_angle(space, xi, other) <= resolution for _, other in cl):
                cl.append((d, xi))
                placed = True
                break
        if not placed:
            clusters.append([(d, xi)])
    # representative: the best-converged (farthest) member of each cluster
    reps = []
    for cl in clusters:
        _, xi = max(cl, key=lambda pair: pair[0])
        reps.append(xi)
    return reps


def limit_set_diameter_check(space, members):
    """Maximal pairwise angular distance of a limit set."""
    if len(members) < 2:
        return 0.0
    return max(tits_angle(space, a, b) for a, b in itertools.combinations(members, 2))


def limit_circumcenter(space, family, x0, horizon=1e3):
    members = limit_set(space, family, x0, horizon)
    result = angular_circumcenter(space, members)
    if not result.unique:
        raise InvariantFailure(
            f"limit set of a shrinking convex family must have angular radius "
            f"below pi/2; computed {result.radius}")
    return result.center


# ---------------------------------------------------------------------------
# affinity defect


def _ball_candidates(space, x0, radius, per_factor=12):
    """Deterministic points of the closed ball, rich in extreme points."""
    if isinstance(space, Euclidean):
        x0 = np.asarray(x0, float)
        out = [x0.copy()]
        for i in range(space.dim):
            e = np.zeros(space.dim)
            e[i] = 1.0
            out += [x0 + radius * e, x0 - radius * e]
        # fixed-seed fill for interior structure
        rng = np.random.default_rng(2024)
        for _ in range(per_factor):
            v = rng.normal(size=space.dim)
            v /= np.linalg.norm(v)
            out.append(x0 + radius * rng.uniform(0.3, 1.0) * v)
        return out
    if isinstance(space, Tree):
        out = [canonical_point(space, x0)]
        for v in space.vertices:
            p = vertex_point(space, v)
            if distance(space, x0, p) <= radius:
                out.append(p)
        for rid in space.rays:
            out.append(ray_point(space, x0, TreeEnd(rid), radius))
        # boundary points of the ball toward each leaf-ish vertex
        for v in space.vertices:
            p = vertex_point(space, v)
            d = distance(space, x0, p)
            if d > radius:
                out.append(geodesic_point(space, x0, p, radius / d))
        return out
    lefts = _ball_candidates(space.left, x0.left, radius / math.sqrt(2.0), per_factor=4)
    rights = _ball_candidates(space.right, x0.right, radius / math.sqrt(2.0), per_factor=4)
    out = [ProductPoint(l, r) for l in lefts for r in rights]
    return out[:120]


def affinity_defect(space, f, x0, radius, t_grid=None):
    """Largest miss of the chord identity ``f(gamma(t)) = (1-t)f(z) + tf(z')``
    over sampled pairs of the closed ball, with a dense-parameter rescan on
    the worst pairs."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if t_grid is None:
        t_grid = tuple(np.linspace(0.0, 1.0, 9))
    cands = _ball_candidates(space, x0, radius)
    scored = []
    for z, zp in itertools.combinations(cands, 2):
        worst = 0.0
        fz, fzp = f(z), f(zp)
        for t in t_grid:
            val = f(geodesic_point(space, z, zp, t))
            worst = max(worst, abs(val - (1.0 - t) * fz - t * fzp))
        scored.append((worst, z, zp))
    scored.sort(key=lambda row: -row[0])
    best = scored[0][0] if scored else 0.0
    for worst, z, zp in scored[:5]:
        fz, fzp = f(z), f(zp)
        for t in np.linspace(0.0, 1.0, 65):
            val = f(geodesic_point(space, z, zp, t))
            best = max(best, abs(val - (1.0 - t) * fz - t * fzp))
    return best


# ---------------------------------------------------------------------------
# flat split


@dataclass(frozen=True, eq=False)
class FlatSplit:
    """Flat boundary points F, the antipode-closed core A, and the orthogonal
    part P, all relative to a candidate grid, plus the defect table."""

    flats: tuple
    core: tuple
    orthogonal: tuple
    defect_table: dict  # candidate index -> {radius: defect}
    candidates: tuple

    @property
    def consistent(self):
        return (len(self.orthogonal) == 0) == (len(self.flats) == len(self.core))


def flat_split(space, candidates, x0=None, r_max=8.0, defect_tol=1e-6):
    """Classify candidate boundary points by affinity of their horofunctions."""
    if not candidates:
        raise ValueError("flat split needs a nonempty candidate grid")
    if x0 is None:
        x0 = base_point(space)
    radii = []
    r = 1.0
    while r <= r_max:
        radii.append(r)
        r *= 2.0
    table = {}
    flats = []
    for idx, xi in enumerate(candidates):
        per_radius = {}
        worst = 0.0
        for r in radii:
            d = affinity_defect(space, lambda x: busemann(space, x0, xi, x), x0, r)
            per_radius[r] = d
            worst = max(worst, d)
        table[idx] = per_radius
        if worst < defect_tol:
            flats.append(xi)
    core = []
    for xi in flats:
        anti = antipode(space, xi)
        if anti is not None and any(tits_angle(space, anti, eta) <= 1e-6 for eta in flats):
            core.append(xi)
    orthogonal = [xi for xi in flats
                  if abs(angle_to_set(space, xi, core) - math.pi / 2.0) <= 1e-6]
    return FlatSplit(tuple(flats), tuple(core), tuple(orthogonal), table, tuple(candidates))


def closed_form_flat(space, xi):
    """Reference classification: Euclidean directions are flat, tree ends are
    flat exactly on line trees, joins are flat when every component is."""
    if isinstance(space, Euclidean):
        return True
    if isinstance(space, Tree):
        return space.line_chart is not None
    ok = True
    if xi.left is not None and xi.theta < math.pi / 2.0:
        ok = ok and closed_form_flat(space.left, xi.left)
    if xi.right is not None and xi.theta > 0.0:
        ok = ok and closed_form_flat(space.right, xi.right)
    return ok


# ---------------------------------------------------------------------------
# presented Euclidean factor


def euclidean_decomposition(space):
    """Split the maximal presented Euclidean factor off a model space.

    Returns ``(dim, Y)`` where ``Y`` is a single-vertex tree when nothing
    remains.  Line-shaped trees count as a one-dimensional factor.
    """
    if isinstance(space, Euclidean):
        return space.dim, POINT_SPACE
    if isinstance(space, Tree):
        if space.line_chart is not None:
            return 1, POINT_SPACE
        return 0, space
    dl, yl = euclidean_decomposition(space.left)
    dr, yr = euclidean_decomposition(space.right)
    if yl is POINT_SPACE or (isinstance(yl, Tree) and not yl.edges and not yl.rays):
        rest = yr
    elif isinstance(yr, Tree) and not yr.edges and not yr.rays:
        rest = yl
    else:
        rest = Product(yl, yr)
    return dl + dr, rest
