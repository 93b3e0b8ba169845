"""Comparison triangles, curvature audit, convex projection and circumcenters."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .spaces import (
    SNAP,
    Euclidean,
    Product,
    ProductPoint,
    SpaceError,
    Tree,
    TreePoint,
    canonical_point,
    carrier_gate,
    distance,
    geodesic_point,
    require_point,
)


class EmptySetError(ValueError):
    """Projection or circumcenter queried on an empty set."""


class DegenerateVertexError(ValueError):
    """Angle queried at a vertex coinciding with one of its legs."""


class ConvergenceError(RuntimeError):
    """An iterative estimate failed to settle within its parameter ladder."""


# ---------------------------------------------------------------------------
# convex sets


@dataclass(frozen=True)
class EmptySet:
    """The empty subset, usable in any space."""


EMPTY = EmptySet()


@dataclass(frozen=True, eq=False)
class HalfspaceBallSet:
    """Intersection of closed half-spaces {<u,x> <= c} and closed balls.

    Empty constraint lists describe the whole Euclidean space.
    """

    halfspaces: tuple = ()   # of (unit normal ndarray, offset)
    balls: tuple = ()        # of (center ndarray, radius)

    def __post_init__(self):
        object.__setattr__(self, "halfspaces", tuple(
            (np.asarray(u, float) / np.linalg.norm(u), float(c) / np.linalg.norm(u))
            for u, c in self.halfspaces))
        object.__setattr__(self, "balls", tuple(
            (np.asarray(z, float), float(r)) for z, r in self.balls))


@dataclass(frozen=True, eq=False)
class SubtreeSet:
    """Closed connected subtree, as closed intervals per carrier."""

    intervals: dict  # carrier id -> (lo, hi); hi may be inf on rays

    def __post_init__(self):
        object.__setattr__(self, "intervals",
                           {cid: (float(lo), float(hi)) for cid, (lo, hi) in self.intervals.items()})


@dataclass(frozen=True, eq=False)
class ProductSet:
    left: object
    right: object


def whole_space(space):
    if isinstance(space, Euclidean):
        return HalfspaceBallSet()
    if isinstance(space, Tree):
        intervals = {cid: (0.0, space.carrier_length(cid))
                     for cid in list(space.edges) + list(space.rays)}
        return SubtreeSet(intervals)
    return ProductSet(whole_space(space.left), whole_space(space.right))


def contains(space, cset, p, tol=1e-9):
    if isinstance(cset, EmptySet):
        return False
    if isinstance(cset, HalfspaceBallSet):
        x = np.asarray(p, float)
        for u, c in cset.halfspaces:
            if float(u @ x) > c + tol:
                return False
        for z, r in cset.balls:
            if np.linalg.norm(x - z) > r + tol:
                return False
        return True
    if isinstance(cset, SubtreeSet):
        return tree_set_distance(space, cset, p) <= tol
    return (contains(space.left, cset.left, p.left, tol)
            and contains(space.right, cset.right, p.right, tol))


def tree_set_distance(space, cset, p):
    """Exact distance from a point to a subtree description."""
    if not cset.intervals:
        # single-vertex spaces: the whole space is that vertex
        from .spaces import vertex_point
        return distance(space, p, vertex_point(space, space.vertices[0]))
    best = math.inf
    for cid, (lo, hi) in cset.intervals.items():
        g, c = carrier_gate(space, cid, p)
        best = min(best, c + max(lo - g, 0.0, g - hi))
    return best


def set_anchor(space, cset):
    """A deterministic member of the set (used to seed searches)."""
    if isinstance(cset, EmptySet):
        raise EmptySetError("empty set has no anchor")
    if isinstance(cset, HalfspaceBallSet):
        dim = _euclidean_dim(space, cset)
        return project_convex(space, cset, np.zeros(dim))
    if isinstance(cset, SubtreeSet):
        if not cset.intervals:
            from .spaces import vertex_point
            return vertex_point(space, space.vertices[0])
        cid = sorted(cset.intervals)[0]
        lo, hi = cset.intervals[cid]
        return canonical_point(space, TreePoint(cid, lo if lo > -math.inf else 0.0))
    return ProductPoint(set_anchor(space.left, cset.left), set_anchor(space.right, cset.right))


def _euclidean_dim(space, cset):
    if isinstance(space, Euclidean):
        return space.dim
    for u, _ in cset.halfspaces:
        return len(u)
    for z, _ in cset.balls:
        return len(z)
    raise SpaceError("cannot infer dimension of an unconstrained set")


def ball_set(space, center, radius):
    """The closed metric ball as a convex set (Euclidean and tree spaces)."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if isinstance(space, Euclidean):
        return HalfspaceBallSet(balls=((np.asarray(center, float), radius),))
    if isinstance(space, Tree):
        intervals = {}
        for cid in list(space.edges) + list(space.rays):
            g, c = carrier_gate(space, cid, center)
            reach = radius - c
            if reach < 0:
                continue
            length = space.carrier_length(cid)
            lo, hi = max(g - reach, 0.0), min(g + reach, length)
            if lo <= hi:
                intervals[cid] = (lo, hi)
        return SubtreeSet(intervals)
    raise SpaceError("product-space metric balls are not product sets")


# ---------------------------------------------------------------------------
# projection


def project_convex(space, cset, x, tol=1e-11):
    """Nearest-point projection onto a nonempty closed convex set."""
    if isinstance(cset, EmptySet):
        raise EmptySetError("cannot project onto the empty set")
    x = require_point(space, x)
    if isinstance(cset, HalfspaceBallSet):
        return _project_euclidean(cset, x, tol)
    if isinstance(cset, SubtreeSet):
        return _project_tree(space, cset, x)
    return ProductPoint(project_convex(space.left, cset.left, x.left, tol),
                        project_convex(space.right, cset.right, x.right, tol))


def _project_halfspace(u, c, x):
    excess = float(u @ x) - c
    return x - excess * u if excess > 0 else x


def _project_ball(z, r, x):
    d = np.linalg.norm(x - z)
    return z + (x - z) * (r / d) if d > r else x


def _project_euclidean(cset, x, tol, max_iter=20000):
    constraints = [("h", u, c) for u, c in cset.halfspaces]
    constraints += [("b", z, r) for z, r in cset.balls]
    if not constraints:
        return x.copy()
    if len(constraints) == 1:
        kind, a, b = constraints[0]
        return _project_halfspace(a, b, x) if kind == "h" else _project_ball(a, b, x)
    # Dykstra's alternating projections: converges to the exact projection
    # onto the intersection for closed convex constraint sets.
    y = x.copy()
    increments = [np.zeros_like(x) for _ in constraints]
    for _ in range(max_iter):
        prev = y.copy()
        for i, (kind, a, b) in enumerate(constraints):
            w = y + increments[i]
            y = _project_halfspace(a, b, w) if kind == "h" else _project_ball(a, b, w)
            increments[i] = w - y
        if np.linalg.norm(y - prev) < tol:
            break
    if not contains(None, cset, y, tol=1e-7):
        raise EmptySetError("projection did not reach the set; set may be empty")
    return y


def _project_tree(space, cset, x):
    if not cset.intervals:
        from .spaces import vertex_point
        return vertex_point(space, space.vertices[0])
    # gate property: the projection is the nearest carrier point over C
    best = None
    for cid, (lo, hi) in sorted(cset.intervals.items()):
        g, c = carrier_gate(space, cid, x)
        off = min(max(g, lo), hi)
        d = c + abs(off - g)
        if best is None or d < best[0] - SNAP:
            best = (d, cid, off)
    _, cid, off = best
    return canonical_point(space, TreePoint(cid, off))


def set_distance(space, cset, x):
    if isinstance(cset, EmptySet):
        return math.inf
    if isinstance(cset, SubtreeSet):
        return tree_set_distance(space, cset, x)
    return distance(space, x, project_convex(space, cset, x))


# ---------------------------------------------------------------------------
# comparison machinery


@dataclass(frozen=True)
class ComparisonTriangle:
    """Planar triangle with prescribed side lengths a = d(y,z), b = d(x,z), c = d(x,y)."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        for s, t, u in ((self.a, self.b, self.c), (self.b, self.a, self.c), (self.c, self.a, self.b)):
            if s > t + u + 1e-12:
                raise ValueError("side lengths violate the triangle inequality")

    @property
    def x(self):
        return np.array([0.0, 0.0])

    @property
    def y(self):
        return np.array([self.c, 0.0])

    @property
    def z(self):
        if self.c == 0.0:
            return np.array([0.0, self.b])
        zx = (self.c ** 2 + self.b ** 2 - self.a ** 2) / (2.0 * self.c)
        zy = math.sqrt(max(self.b ** 2 - zx ** 2, 0.0))
        return np.array([zx, zy])

    def point_on_xy(self, t):
        """Comparison point for the geodesic point at parameter t on [x, y]."""
        return np.array([t * self.c, 0.0])


def _clamped_acos(v):
    return math.acos(min(max(v, -1.0), 1.0))


def comparison_angle(space, p, x, y):
    """Angle at the p-vertex of the Euclidean comparison triangle."""
    dpx = distance(space, p, x)
    dpy = distance(space, p, y)
    if dpx <= SNAP or dpy <= SNAP:
        raise DegenerateVertexError("comparison angle needs p distinct from x and y")
    dxy = distance(space, x, y)
    return _clamped_acos((dpx ** 2 + dpy ** 2 - dxy ** 2) / (2.0 * dpx * dpy))


def alexandrov_angle(space, p, x, y, tol=1e-7, max_steps=48):
    """Interior angle at p between the geodesics [p,x] and [p,y].

    Estimated through chords at geometrically decreasing parameters until two
    successive values agree within ``tol``.
    """
    dpx = distance(space, p, x)
    dpy = distance(space, p, y)
    if dpx <= SNAP or dpy <= SNAP:
        raise DegenerateVertexError("angle needs p distinct from x and y")
    t0 = 0.5 * min(dpx, dpy)
    prev = None
    t = t0
    for _ in range(max_steps):
        cx = geodesic_point(space, p, x, t / dpx)
        cy = geodesic_point(space, p, y, t / dpy)
        chord = distance(space, cx, cy)
        val = 2.0 * math.asin(min(max(chord / (2.0 * t), 0.0), 1.0))
        if prev is not None and abs(val - prev) < tol:
            return val
        prev = val
        t *= 0.5
    raise ConvergenceError(f"angle estimate did not settle; last iterates {prev}, {val}")


# ---------------------------------------------------------------------------
# curvature audit


@dataclass(frozen=True)
class AuditRow:
    index: int
    kind: str       # "comparison" | "cn" | "cn-quadruple"
    violation: float


@dataclass(frozen=True)
class AuditReport:
    """Worst thin-triangle and midpoint-inequality violations over a sample.

    The comparison check uses the standard form d(z, q) <= d(zbar, qbar) for
    q on [x, y]; the variant comparing the first vertex with its own
    comparison point is an identity by construction and carries no content.
    """

    rows: tuple
    max_violation: float
    worst_index: int

    @property
    def flagged(self):
        return self.max_violation > 1e-9


def audit_cat0(space, triples, t_grid=None):
    """Check the comparison and midpoint inequalities on point triples."""
    if t_grid is None:
        t_grid = tuple(np.linspace(0.1, 0.9, 9))
    rows = []
    worst = (-math.inf, -1)
    for idx, (x, y, z) in enumerate(triples):
        dxy = distance(space, x, y)
        dxz = distance(space, x, z)
        dyz = distance(space, y, z)
        tri = ComparisonTriangle(a=dyz, b=dxz, c=dxy)
        zbar = tri.z
        comp_violation = -math.inf
        for t in t_grid:
            q = geodesic_point(space, x, y, t)
            qbar = tri.point_on_xy(t)
            comp_violation = max(comp_violation,
                                 distance(space, z, q) - float(np.linalg.norm(zbar - qbar)))
        rows.append(AuditRow(idx, "comparison", comp_violation))
        m = geodesic_point(space, x, y, 0.5)
        cn_bound = (dxz ** 2 + dyz ** 2) / 2.0 - dxy ** 2 / 4.0
        cn_violation = distance(space, z, m) ** 2 - cn_bound
        rows.append(AuditRow(idx, "cn", cn_violation))
        v = max(comp_violation, cn_violation)
        if v > worst[0]:
            worst = (v, idx)
    return AuditReport(tuple(rows), worst[0], worst[1])


def audit_quadruples(quadruples):
    """Adversarial channel: midpoint inequality on raw distance quadruples.

    Each quadruple gives the six distances among labelled points x, y, z, m
    where m claims to be a midpoint of [y, z].  Returns an AuditReport with
    one "cn-quadruple" row each.
    """
    rows = []
    worst = (-math.inf, -1)
    for idx, q in enumerate(quadruples):
        d_yz, d_ym, d_zm = q["d_yz"], q["d_ym"], q["d_zm"]
        if abs(d_ym - d_yz / 2.0) > 1e-9 or abs(d_zm - d_yz / 2.0) > 1e-9:
            raise ValueError(f"quadruple {idx}: m is not a metric midpoint of [y, z]")
        bound = (q["d_xy"] ** 2 + q["d_xz"] ** 2) / 2.0 - d_yz ** 2 / 4.0
        violation = q["d_xm"] ** 2 - bound
        rows.append(AuditRow(idx, "cn-quadruple", violation))
        if violation > worst[0]:
            worst = (violation, idx)
    return AuditReport(tuple(rows), worst[0], worst[1])


# ---------------------------------------------------------------------------
# circumcenters


def circumcenter(space, points, tol=1e-9, max_rounds=10000):
    """Center and radius of the smallest enclosing ball of a finite set."""
    if not points:
        raise ValueError("circumcenter of an empty point list")
    points = [require_point(space, p) for p in points]
    if isinstance(space, Euclidean):
        center, value = _euclidean_power_center(np.asarray(points, float),
                                                np.zeros(len(points)))
        return center, math.sqrt(max(value, 0.0))
    if isinstance(space, Tree):
        center, value = _tree_weighted_center(space, points, np.zeros(len(points)))
        return center, value
    return _product_circumcenter(space, points, tol, max_rounds)


def _euclidean_power_center(pts, sq_offsets):
    """Minimize max_i |a - p_i|^2 + w_i over a, by support-subset enumeration.

    With zero offsets this is the exact minimum enclosing ball.  Returns the
    minimizer and the minimal max value (a squared length).
    """
    n, d = pts.shape

    def value_at(a):
        return float(np.max(np.sum((pts - a) ** 2, axis=1) + sq_offsets))

    best = None
    for size in range(1, min(n, d + 1) + 1):
        for subset in itertools.combinations(range(n), size):
            a = _equalizing_minimizer(pts[list(subset)], sq_offsets[list(subset)])
            if a is None:
                continue
            v = value_at(a)
            v_subset = float(np.max(np.sum((pts[list(subset)] - a) ** 2, axis=1)
                                    + sq_offsets[list(subset)]))
            if v > v_subset + 1e-9 * max(1.0, v_subset):
                continue  # subset is not a support set for this candidate
            if best is None or v < best[1]:
                best = (a, v)
    if best is None:  # numerically degenerate input; fall back to the mean
        a = pts.mean(axis=0)
        best = (a, value_at(a))
    return best


def _equalizing_minimizer(pts, sq_offsets):
    """Minimize the common value of |a - p_i|^2 + w_i on the set where all
    member functions agree (an affine subspace)."""
    k, d = pts.shape
    if k == 1:
        return pts[0].copy()
    # equality with the first member: 2 <a, p_i - p_0> = |p_i|^2 + w_i - |p_0|^2 - w_0
    rows = 2.0 * (pts[1:] - pts[0])
    rhs = (np.sum(pts[1:] ** 2, axis=1) + sq_offsets[1:]
           - np.sum(pts[0] ** 2) - sq_offsets[0])
    # particular solution and null space
    sol, _, rank, _ = np.linalg.lstsq(rows, rhs, rcond=None)
    if np.linalg.norm(rows @ sol - rhs) > 1e-7 * max(1.0, np.linalg.norm(rhs)):
        return None  # inconsistent subset (duplicate points with unequal offsets)
    _, s, vt = np.linalg.svd(rows)
    null = vt[rank:].T if rank < d else np.zeros((d, 0))
    if null.shape[1] == 0:
        return sol
    # minimize |sol + N z - p_0|^2 over z
    z, *_ = np.linalg.lstsq(null, pts[0] - sol, rcond=None)
    return sol + null @ z


def _tree_weighted_center(space, points, sq_offsets):
    """Minimize max_i sqrt(d(a, p_i)^2 + w_i^2) over a tree, exactly per carrier.

    With zero offsets the per-carrier objective is max(s + A, -s + B) for
    constants A, B from the gate decomposition; with offsets the objective is
    still convex per carrier and solved by ternary search.
    """
    offsets = np.sqrt(sq_offsets)
    weighted = bool(np.any(sq_offsets > 0))
    best = None
    carriers = list(space.edges) + list(space.rays)
    for cid in sorted(carriers):
        length = space.carrier_length(cid)
        gates = [carrier_gate(space, cid, p) for p in points]
        if not weighted:
            a_const = max(c - g for g, c in gates)
            b_const = max(c + g for g, c in gates)
            s = (b_const - a_const) / 2.0
            hi = length if length < math.inf else max(b_const, 0.0) + 1.0
            s = min(max(s, 0.0), hi)
            val = max(s + a_const, -s + b_const)
        else:
            def f(s):
                return max(math.hypot(abs(s - g) + c, w)
                           for (g, c), w in zip(gates, offsets))
            hi = length if length < math.inf else max(g for g, _ in gates) + max(
                math.hypot(c, w) for (_, c), w in zip(gates, offsets)) + 1.0
            s, val = _ternary_min(f, 0.0, hi)
        if best is None or val < best[0] - 1e-12:
            best = (val, cid, s)
    val, cid, s = best
    return canonical_point(space, TreePoint(cid, s)), val


def _ternary_min(f, lo, hi, iters=200):
    for _ in range(iters):
        if hi - lo < 1e-13 * max(1.0, abs(hi)):
            break
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if f(m1) <= f(m2):
            hi = m2
        else:
            lo = m1
    s = (lo + hi) / 2.0
    return s, f(s)


def _local_moves(space, x, step, targets):
    """Candidate points at distance <= step from x, toward structure and data."""
    moves = []
    if isinstance(space, Euclidean):
        x = np.asarray(x, float)
        dirs = []
        for i in range(len(x)):
            e = np.zeros(len(x))
            e[i] = 1.0
            dirs += [e, -e]
        for t in targets:
            d = np.asarray(t, float) - x
            n = np.linalg.norm(d)
            if n > 1e-12:
                dirs.append(d / n)
        moves = [x + step * d for d in dirs]
    elif isinstance(space, Tree):
        from .spaces import vertex_point
        dests = [vertex_point(space, v) for v in space.vertices]
        dests += [TreePoint(rid, 10.0 * (step + 1.0) + 1e3) for rid in space.rays]
        dests += list(targets)
        for dest in dests:
            d = distance(space, x, dest)
            if d > 1e-12:
                moves.append(geodesic_point(space, x, dest, min(step / d, 1.0)))
    else:
        lm = _local_moves(space.left, x.left, step, [t.left for t in targets])
        rm = _local_moves(space.right, x.right, step, [t.right for t in targets])
        moves = [ProductPoint(m, x.right) for m in lm]
        moves += [ProductPoint(x.left, m) for m in rm]
        for t in targets:
            d = distance(space, x, t)
            if d > 1e-12:
                moves.append(geodesic_point(space, x, t, min(step / d, 1.0)))
    return moves


def _pattern_polish(space, objective, start, step_init, targets, tol=1e-11):
    cur = start
    val = objective(cur)
    step = max(step_init, 10.0 * tol)
    while step > tol:
        improved = False
        for cand in _local_moves(space, cur, step, targets):
            v = objective(cand)
            if v < val - 1e-14:
                cur, val = cand, v
                improved = True
                break
        if not improved:
            step *= 0.5
    return cur, val


def _product_circumcenter(space, points, tol, max_rounds):
    """Alternating factor minimization for the product minimax center."""
    lefts = [p.left for p in points]
    rights = [p.right for p in points]

    def factor_center(factor, pts, sq_offsets):
        if isinstance(factor, Euclidean):
            center, value = _euclidean_power_center(np.asarray(pts, float), sq_offsets)
            return center, value
        if isinstance(factor, Tree):
            center, value = _tree_weighted_center(factor, pts, sq_offsets)
            return center, value ** 2
        # nested product: recurse through the same alternation
        center, radius = _product_circumcenter(factor, pts, tol, max_rounds)
        value = max(distance(factor, center, p) ** 2 + w
                    for p, w in zip(pts, sq_offsets))
        return center, value

    def radius_at(a, b):
        return max(math.hypot(distance(space.left, a, p.left),
                              distance(space.right, b, p.right)) for p in points)

    # starts: marginal centers plus each input point
    starts = []
    la, _ = factor_center(space.left, lefts, np.zeros(len(points)))
    rb, _ = factor_center(space.right, rights, np.zeros(len(points)))
    starts.append((la, rb))
    starts.extend((p.left, p.right) for p in points)

    best = None
    for a, b in starts:
        r = radius_at(a, b)
        for _ in range(max_rounds):
            wl = np.array([distance(space.right, b, p.right) ** 2 for p in points])
            a, _ = factor_center(space.left, lefts, wl)
            wr = np.array([distance(space.left, a, p.left) ** 2 for p in points])
            b, _ = factor_center(space.right, rights, wr)
            r_new = radius_at(a, b)
            if r - r_new < tol:
                r = min(r, r_new)
                break
            r = r_new
        if best is None or r < best[2]:
            best = (a, b, r)
    a, b, r = best
    # pattern polish guards against coordinate-descent stalls at minimax kinks:
    # midpoints of currently-active pairs supply the joint descent directions
    center = ProductPoint(a, b)

    def objective(c):
        return max(distance(space, c, p) for p in points)

    targets = list(points)
    dists = [distance(space, center, p) for p in points]
    active = [p for p, d in zip(points, dists) if d > r - 1e-7]
    for p, q in itertools.combinations(active, 2):
        targets.append(geodesic_point(space, p, q, 0.5))
    center, r = _pattern_polish(space, objective, center, r / 2.0 + tol, targets)
    return center, r


# ---------------------------------------------------------------------------
# set algebra and transport


def intersect_sets(space, a, b):
    """Intersection within the convex-set grammar (may come out empty)."""
    if isinstance(a, EmptySet) or isinstance(b, EmptySet):
        return EMPTY
    if isinstance(a, HalfspaceBallSet) and isinstance(b, HalfspaceBallSet):
        return HalfspaceBallSet(a.halfspaces + b.halfspaces, a.balls + b.balls)
    if isinstance(a, SubtreeSet) and isinstance(b, SubtreeSet):
        intervals = {}
        for cid, (lo, hi) in a.intervals.items():
            if cid in b.intervals:
                blo, bhi = b.intervals[cid]
                lo2, hi2 = max(lo, blo), min(hi, bhi)
                if lo2 <= hi2 + SNAP:
                    intervals[cid] = (lo2, min(hi2, max(lo2, hi2)))
        if not intervals:
            return EMPTY
        return SubtreeSet(intervals)
    if isinstance(a, ProductSet) and isinstance(b, ProductSet):
        left = intersect_sets(space.left, a.left, b.left)
        right = intersect_sets(space.right, a.right, b.right)
        if isinstance(left, EmptySet) or isinstance(right, EmptySet):
            return EMPTY
        return ProductSet(left, right)
    raise SpaceError(f"cannot intersect {type(a).__name__} with {type(b).__name__}")


def affine_set(base, frame):
    """Affine subspace ``base + span(frame rows)`` as half-space pairs."""
    base = np.asarray(base, float)
    frame = np.asarray(frame, float).reshape(-1, len(base))
    if frame.shape[0] == 0:
        comp = np.eye(len(base))
    else:
        from scipy.linalg import null_space
        comp = null_space(frame)
        if comp.size == 0:
            return HalfspaceBallSet()
    halfspaces = []
    for i in range(comp.shape[1]):
        n = comp[:, i]
        c = float(n @ base)
        halfspaces.append((n, c))
        halfspaces.append((-n, -c))
    return HalfspaceBallSet(tuple(halfspaces))


def line_interval_set(space, lo, hi):
    """Subtree between two chart coordinates of a line-shaped tree."""
    from .spaces import _line_point
    chart = space.line_chart
    if chart is None:
        raise SpaceError("line interval requires a line-shaped tree")
    intervals = {}
    coord = chart["vertex_coord"]
    base_neg, base_pos = space.rays[chart["neg"]], space.rays[chart["pos"]]
    for cid, (tail, head, length) in space.edges.items():
        ct, ch = coord[tail], coord[head]
        a, b = min(ct, ch), max(ct, ch)
        s, t = max(a, lo), min(b, hi)
        if s <= t:
            # convert chart overlap [s, t] back to offsets on the edge
            if ch >= ct:
                intervals[cid] = (s - ct, t - ct)
            else:
                intervals[cid] = (ct - t, ct - s)
    if lo < coord[base_neg]:
        intervals[chart["neg"]] = (max(coord[base_neg] - hi, 0.0),
                                   coord[base_neg] - lo if lo > -math.inf else math.inf)
    if hi > coord[base_pos]:
        intervals[chart["pos"]] = (max(lo - coord[base_pos], 0.0),
                                   hi - coord[base_pos] if hi < math.inf else math.inf)
    if not intervals:
        from .spaces import _line_point, canonical_point as _canon
        p = _line_point(space, min(max(lo, coord[base_neg] - 1e18), hi))
        intervals[p.carrier] = (p.offset, p.offset)
    return SubtreeSet(intervals)


def transport_convex_set(g, cset):
    """Image of a convex set under an isometry, within the grammar."""
    from .spaces import (EuclideanIsometry, ProductIsometry, TreeIsometry,
                         TreeLineIsometry, _line_coordinate, TreePoint as _TP,
                         apply_isometry)

    if isinstance(cset, EmptySet):
        return EMPTY
    if isinstance(g, EuclideanIsometry):
        q, t = g.matrix, g.translation
        halfspaces = tuple((q @ u, c + float((q @ u) @ t)) for u, c in cset.halfspaces)
        balls = tuple((q @ z + t, r) for z, r in cset.balls)
        return HalfspaceBallSet(halfspaces, balls)
    if isinstance(g, TreeIsometry):
        intervals = {}
        for cid, (lo, hi) in cset.intervals.items():
            image, flip = g.carrier_map[cid]
            if flip:
                length = g.domain.edges[cid][2]
                intervals[image] = (length - hi, length - lo)
            else:
                intervals[image] = (lo, hi)
        return SubtreeSet(intervals)
    if isinstance(g, TreeLineIsometry):
        coords = []
        chart = g.domain.line_chart
        coord = chart["vertex_coord"]
        for cid, (lo, hi) in cset.intervals.items():
            if cid == chart["neg"]:
                base = coord[g.domain.rays[cid]]
                coords.append(base - hi)
                coords.append(base - lo)
            elif cid == chart["pos"]:
                base = coord[g.domain.rays[cid]]
                coords.append(base + lo)
                coords.append(base + hi)
            else:
                tail, head, length = g.domain.edges[cid]
                ct, ch = coord[tail], coord[head]
                coords.append(ct + (ch - ct) * lo / length)
                coords.append(ct + (ch - ct) * hi / length)
        lo = min(coords)
        hi = max(coords)
        img = sorted(((g.offset - hi if g.flip else g.offset + lo),
                      (g.offset - lo if g.flip else g.offset + hi)))
        return line_interval_set(g.codomain, img[0], img[1])
    if isinstance(g, ProductIsometry):
        return ProductSet(transport_convex_set(g.left, cset.left),
                          transport_convex_set(g.right, cset.right))
    raise SpaceError(f"cannot transport {type(cset).__name__} by {type(g).__name__}")
