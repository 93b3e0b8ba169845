"""Boundary at infinity: rays, horofunctions, angular metric, angular centers.

Boundary points are represented per space kind: unit directions for Euclidean
factors, ray ends for trees, and join triples ``(theta, left, right)`` for
products, where ``theta`` in [0, pi/2] weights the factors and a missing
component is allowed exactly when its weight vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .spaces import (
    SNAP,
    CompositionError,
    Euclidean,
    EuclideanIsometry,
    Product,
    ProductIsometry,
    ProductPoint,
    SpaceError,
    Tree,
    TreeIsometry,
    TreeLineIsometry,
    TreePoint,
    canonical_point,
    distance,
    is_unbounded,
    require_point,
    tree_path,
    vertex_point,
)
from .geometry import _clamped_acos, comparison_angle

THETA_SNAP = 1e-9


# ---------------------------------------------------------------------------
# boundary points


@dataclass(frozen=True, eq=False)
class EuclideanDirection:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, float)
        n = np.linalg.norm(v)
        if n == 0:
            raise SpaceError("boundary direction cannot be the zero vector")
        if abs(n - 1.0) > 1e-12:
            v = v / n
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class TreeEnd:
    end: str


@dataclass(frozen=True, eq=False)
class JoinPoint:
    theta: float
    left: object
    right: object

    def __post_init__(self):
        th = float(self.theta)
        if th < 0.0 or th > math.pi / 2.0 + THETA_SNAP:
            raise SpaceError("join weight theta must lie in [0, pi/2]")
        if th <= THETA_SNAP:
            th = 0.0
        elif th >= math.pi / 2.0 - THETA_SNAP:
            th = math.pi / 2.0
        object.__setattr__(self, "theta", th)
        if th == 0.0:
            if self.left is None or self.right is not None:
                raise SpaceError("theta = 0 demands a pure left join point")
        elif th == math.pi / 2.0:
            if self.right is None or self.left is not None:
                raise SpaceError("theta = pi/2 demands a pure right join point")
        elif self.left is None or self.right is None:
            raise SpaceError("interior theta demands both factor components")


def require_boundary(space, xi):
    if isinstance(space, Euclidean):
        if not isinstance(xi, EuclideanDirection) or len(xi.vector) != space.dim:
            raise SpaceError("expected a unit direction of matching dimension")
        return xi
    if isinstance(space, Tree):
        if not isinstance(xi, TreeEnd) or xi.end not in space.rays:
            raise SpaceError(f"tree has no end {getattr(xi, 'end', xi)!r}")
        return xi
    if isinstance(space, Product):
        if not isinstance(xi, JoinPoint):
            raise SpaceError("expected a join triple boundary point")
        if xi.left is not None:
            require_boundary(space.left, xi.left)
        if xi.right is not None:
            require_boundary(space.right, xi.right)
        if xi.theta > 0.0 and not is_unbounded(space.right):
            raise SpaceError("theta weights a bounded right factor")
        if xi.theta < math.pi / 2.0 and not is_unbounded(space.left):
            raise SpaceError("theta weights a bounded left factor")
        return xi
    raise SpaceError(f"unknown space kind {type(space).__name__}")


def base_point(space):
    """Canonical base point: the origin, the first vertex, or the pair."""
    if isinstance(space, Euclidean):
        return np.zeros(space.dim)
    if isinstance(space, Tree):
        return vertex_point(space, space.vertices[0])
    return ProductPoint(base_point(space.left), base_point(space.right))


# ---------------------------------------------------------------------------
# geodesic rays


def ray_point(space, x, xi, t):
    """Point at arc length ``t`` on the ray from ``x`` in asymptote class ``xi``."""
    if t < 0:
        raise ValueError("ray parameter must be nonnegative")
    xi = require_boundary(space, xi)
    x = require_point(space, x)
    if isinstance(space, Euclidean):
        return np.asarray(x, float) + t * xi.vector
    if isinstance(space, Tree):
        p = canonical_point(space, x)
        if p.carrier == xi.end:
            return canonical_point(space, TreePoint(xi.end, p.offset + t))
        base = vertex_point(space, space.rays[xi.end])
        d0 = distance(space, p, base)
        if t >= d0:
            return canonical_point(space, TreePoint(xi.end, t - d0))
        from .spaces import _point_along_path
        return _point_along_path(space, tree_path(space, p, base), t)
    lt = t * math.cos(xi.theta)
    rt = t * math.sin(xi.theta)
    left = ray_point(space.left, x.left, xi.left, lt) if xi.left is not None else x.left
    right = ray_point(space.right, x.right, xi.right, rt) if xi.right is not None else x.right
    return ProductPoint(left, right)


# ---------------------------------------------------------------------------
# Busemann functions


def _tree_horofunction(space, xi, x):
    """Signed height toward a tree end, zero at the ray base."""
    p = canonical_point(space, x)
    if p.carrier == xi.end:
        return -p.offset
    return distance(space, p, vertex_point(space, space.rays[xi.end]))


def busemann(space, x0, xi, x):
    """Normalized limit of ``d(x, ray(t)) - d(x0, ray(t))``, in closed form."""
    xi = require_boundary(space, xi)
    if isinstance(space, Euclidean):
        return -float(xi.vector @ (np.asarray(x, float) - np.asarray(x0, float)))
    if isinstance(space, Tree):
        return _tree_horofunction(space, xi, x) - _tree_horofunction(space, xi, x0)
    value = 0.0
    if xi.left is not None and xi.theta < math.pi / 2.0:
        value += math.cos(xi.theta) * busemann(space.left, x0.left, xi.left, x.left)
    if xi.right is not None and xi.theta > 0.0:
        value += math.sin(xi.theta) * busemann(space.right, x0.right, xi.right, x.right)
    return value


@dataclass(frozen=True, eq=False)
class BusemannValue:
    """One evaluation of a Busemann function, for report tables."""

    base: object
    direction: object
    point: object
    value: float


def busemann_record(space, x0, xi, x):
    return BusemannValue(x0, xi, x, busemann(space, x0, xi, x))


# ---------------------------------------------------------------------------
# angular metric


def tits_angle(space, xi, eta):
    """The angular-metric distance, in closed form per space kind."""
    xi = require_boundary(space, xi)
    eta = require_boundary(space, eta)
    if isinstance(space, Euclidean):
        return _clamped_acos(float(xi.vector @ eta.vector))
    if isinstance(space, Tree):
        return 0.0 if xi.end == eta.end else math.pi
    ang_l = tits_angle(space.left, xi.left, eta.left) \
        if (xi.left is not None and eta.left is not None) else 0.0
    ang_r = tits_angle(space.right, xi.right, eta.right) \
        if (xi.right is not None and eta.right is not None) else 0.0
    cos_val = (math.cos(xi.theta) * math.cos(eta.theta) * math.cos(min(ang_l, math.pi))
               + math.sin(xi.theta) * math.sin(eta.theta) * math.cos(min(ang_r, math.pi)))
    return _clamped_acos(cos_val)


def tits_angle_limit(space, xi, eta, t_max):
    """Chord estimate ``2 asin(d(c_xi(t), c_eta(t)) / 2t)`` at ``t = t_max``."""
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    x0 = base_point(space)
    a = ray_point(space, x0, xi, t_max)
    b = ray_point(space, x0, eta, t_max)
    chord = distance(space, a, b)
    return 2.0 * math.asin(min(max(chord / (2.0 * t_max), 0.0), 1.0))


def angle_n(space, x0, xi, eta, n, grid=48):
    """Largest comparison angle at ``x0`` between the two rays over t in [1, n].

    The comparison angle along two rays from a common point is nondecreasing
    in the parameter, so a geometric grid with local refinement around the
    best sample evaluates the supremum.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x0 = require_point(space, x0)

    def at(t):
        a = ray_point(space, x0, xi, t)
        b = ray_point(space, x0, eta, t)
        da = distance(space, x0, a)
        db = distance(space, x0, b)
        if da <= SNAP or db <= SNAP:
            return 0.0
        return comparison_angle(space, x0, a, b)

    if n == 1:
        return at(1.0)
    ts = list(np.geomspace(1.0, float(n), grid))
    if n <= 4:
        ts += list(np.arange(1.0, float(n) + 1e-12, 1e-2))
    vals = [(at(t), t) for t in ts]
    best_val, best_t = max(vals)
    lo = max(best_t / 1.5, 1.0)
    hi = min(best_t * 1.5, float(n))
    for t in np.linspace(lo, hi, 33):
        v = at(t)
        if v > best_val:
            best_val, best_t = v, t
    return best_val


# ---------------------------------------------------------------------------
# boundary action of isometries


def extend_to_boundary(g, xi):
    """Image of a boundary point under the canonical boundary extension."""
    if isinstance(g, EuclideanIsometry):
        return EuclideanDirection(g.matrix @ xi.vector)
    if isinstance(g, TreeIsometry):
        image, _ = g.carrier_map[xi.end]
        return TreeEnd(image)
    if isinstance(g, TreeLineIsometry):
        dom, cod = g.domain.line_chart, g.codomain.line_chart
        if xi.end == dom["neg"]:
            return TreeEnd(cod["pos"] if g.flip else cod["neg"])
        return TreeEnd(cod["neg"] if g.flip else cod["pos"])
    if isinstance(g, ProductIsometry):
        left = extend_to_boundary(g.left, xi.left) if xi.left is not None else None
        right = extend_to_boundary(g.right, xi.right) if xi.right is not None else None
        return JoinPoint(xi.theta, left, right)
    raise CompositionError(f"unknown isometry kind {type(g).__name__}")


# ---------------------------------------------------------------------------
# antipodes and candidate grids


def antipode(space, xi):
    """The boundary point at angular distance pi, when canonically defined."""
    if isinstance(space, Euclidean):
        return EuclideanDirection(-xi.vector)
    if isinstance(space, Tree):
        chart = space.line_chart
        if chart is None:
            return None
        return TreeEnd(chart["pos"] if xi.end == chart["neg"] else chart["neg"])
    left = right = None
    if xi.left is not None:
        left = antipode(space.left, xi.left)
        if left is None:
            return None
    if xi.right is not None:
        right = antipode(space.right, xi.right)
        if right is None:
            return None
    return JoinPoint(xi.theta, left, right)


def _sphere_grid(dim, count):
    if dim == 1:
        return [np.array([1.0]), np.array([-1.0])]
    if dim == 2:
        angles = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
        return [np.array([math.cos(a), math.sin(a)]) for a in angles]
    # Fibonacci lattice, symmetrized so antipodes are present
    pts = []
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    m = max(count // 2, 8)
    for i in range(m):
        z = 1.0 - (2.0 * i + 1.0) / m
        r = math.sqrt(max(1.0 - z * z, 0.0))
        phi = 2.0 * math.pi * i / golden
        v = np.array([r * math.cos(phi), r * math.sin(phi), z])
        if dim > 3:
            v = np.concatenate([v, np.zeros(dim - 3)])
        pts.append(v)
        pts.append(-v)
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        pts += [e, -e]
    return pts


def boundary_candidates(space, euclidean_count=64, thetas=(math.pi / 4.0,)):
    """Default antipode-closed candidate grid on the boundary."""
    if isinstance(space, Euclidean):
        return [EuclideanDirection(v) for v in _sphere_grid(space.dim, euclidean_count)]
    if isinstance(space, Tree):
        return [TreeEnd(rid) for rid in space.end_ids]
    left = boundary_candidates(space.left, euclidean_count, thetas) \
        if is_unbounded(space.left) else []
    right = boundary_candidates(space.right, euclidean_count, thetas) \
        if is_unbounded(space.right) else []
    out = [JoinPoint(0.0, l, None) for l in left]
    out += [JoinPoint(math.pi / 2.0, None, r) for r in right]
    for th in thetas:
        out += [JoinPoint(th, l, r) for l in left for r in right]
    return out


def boundary_equal(space, xi, eta, tol=1e-9):
    return tits_angle(space, xi, eta) <= tol


def angle_to_set(space, xi, members):
    """Angular distance to a finite boundary set; pi/2 for the empty set.

    The empty-set convention keeps the orthogonal-flat subset meaningful when
    no antipodal flat pairs exist.
    """
    if not members:
        return math.pi / 2.0
    return min(tits_angle(space, xi, eta) for eta in members)


# ---------------------------------------------------------------------------
# angular circumcenters


@dataclass(frozen=True, eq=False)
class AngularCenter:
    """Result of the angular minimax problem.

    ``center`` is None when the radius reaches pi/2 and no unique center is
    certified; the radius is always reported.
    """

    center: object
    radius: float

    @property
    def unique(self):
        return self.center is not None


UNIQUE_CENTER_GATE = math.pi / 2.0 - 1e-6


def angular_circumcenter(space, members, euclidean_count=256):
    """Minimize the maximal angular distance to ``members`` over the boundary."""
    if not members:
        raise ValueError("angular circumcenter of an empty boundary set")
    members = [require_boundary(space, m) for m in members]

    def radius_at(xi):
        return max(tits_angle(space, xi, m) for m in members)

    if len(members) == 1:
        xi = members[0]
        return AngularCenter(xi, 0.0)

    if isinstance(space, Euclidean):
        xi, radius = _euclidean_angular_center(space, members, radius_at, euclidean_count)
    elif isinstance(space, Tree):
        xi, radius = _discrete_angular_center(space, members, radius_at)
    else:
        xi, radius = _product_angular_center(space, members, radius_at, euclidean_count)
    if radius >= UNIQUE_CENTER_GATE:
        return AngularCenter(None, radius)
    return AngularCenter(xi, radius)


def _euclidean_angular_center(space, members, radius_at, count):
    candidates = [m.vector for m in members]
    mean = np.sum([m.vector for m in members], axis=0)
    if np.linalg.norm(mean) > 1e-12:
        candidates.append(mean / np.linalg.norm(mean))
    candidates += _sphere_grid(space.dim, count)
    best_v, best_r = None, math.inf
    for v in candidates:
        r = radius_at(EuclideanDirection(v))
        if r < best_r:
            best_v, best_r = v, r
    if space.dim > 1:
        # derivative-free refinement on a local chart at the best candidate
        basis = _tangent_basis(best_v)

        def chart_obj(z):
            v = best_v + basis @ z
            return radius_at(EuclideanDirection(v / np.linalg.norm(v)))

        res = optimize.minimize(chart_obj, np.zeros(space.dim - 1), method="Nelder-Mead",
                                options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 400})
        if res.fun < best_r:
            v = best_v + basis @ res.x
            best_v, best_r = v / np.linalg.norm(v), float(res.fun)
    return EuclideanDirection(best_v), best_r


def _tangent_basis(v):
    d = len(v)
    basis = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        w = e - (e @ v) * v
        n = np.linalg.norm(w)
        if n > 1e-8:
            basis.append(w / n)
        if len(basis) == d - 1:
            break
    return np.array(basis).T


def _discrete_angular_center(space, members, radius_at):
    best_xi, best_r = None, math.inf
    for rid in space.end_ids:
        xi = TreeEnd(rid)
        r = radius_at(xi)
        if r < best_r:
            best_xi, best_r = xi, r
    return best_xi, best_r


def _product_angular_center(space, members, radius_at, count):
    lefts = [m.left for m in members if m.left is not None]
    rights = [m.right for m in members if m.right is not None]
    left_cands = []
    right_cands = []
    if is_unbounded(space.left):
        left_cands = lefts + boundary_candidates(space.left, euclidean_count=64)
        if lefts and isinstance(space.left, Euclidean):
            mean = np.sum([l.vector for l in lefts], axis=0)
            if np.linalg.norm(mean) > 1e-12:
                left_cands.append(EuclideanDirection(mean))
    if is_unbounded(space.right):
        right_cands = rights + boundary_candidates(space.right, euclidean_count=64)
        if rights and isinstance(space.right, Euclidean):
            mean = np.sum([r.vector for r in rights], axis=0)
            if np.linalg.norm(mean) > 1e-12:
                right_cands.append(EuclideanDirection(mean))

    thetas = list(np.linspace(0.0, math.pi / 2.0, 33))
    best_xi, best_r = None, math.inf
    for th in thetas:
        if th <= THETA_SNAP:
            options = [JoinPoint(0.0, l, None) for l in left_cands]
        elif th >= math.pi / 2.0 - THETA_SNAP:
            options = [JoinPoint(math.pi / 2.0, None, r) for r in right_cands]
        else:
            options = [JoinPoint(th, l, r) for l in left_cands for r in right_cands]
        for xi in options:
            r = radius_at(xi)
            if r < best_r:
                best_xi, best_r = xi, r
    best_xi, best_r = _join_refine(space, best_xi, best_r, radius_at)
    return best_xi, best_r


def _join_refine(space, xi, r, radius_at, step_init=0.05):
    """Pattern refinement over theta and Euclidean factor directions."""
    step = step_init
    while step > 1e-9:
        improved = False
        for cand in _join_neighbors(space, xi, step):
            rc = radius_at(cand)
            if rc < r - 1e-13:
                xi, r = cand, rc
                improved = True
                break
        if not improved:
            step *= 0.5
    return xi, r


def _join_neighbors(space, xi, step):
    out = []
    for dth in (step, -step):
        th = min(max(xi.theta + dth, 0.0), math.pi / 2.0)
        left = xi.left
        right = xi.right
        try:
            if th <= THETA_SNAP:
                if left is not None:
                    out.append(JoinPoint(0.0, left, None))
            elif th >= math.pi / 2.0 - THETA_SNAP:
                if right is not None:
                    out.append(JoinPoint(math.pi / 2.0, None, right))
            elif left is not None and right is not None:
                out.append(JoinPoint(th, left, right))
        except SpaceError:
            pass
    if xi.left is not None and isinstance(space.left, Euclidean) and space.left.dim > 1:
        for v in _direction_neighbors(xi.left.vector, step):
            out.append(JoinPoint(xi.theta, EuclideanDirection(v), xi.right))
    if xi.right is not None and isinstance(space.right, Euclidean) and space.right.dim > 1:
        for v in _direction_neighbors(xi.right.vector, step):
            out.append(JoinPoint(xi.theta, xi.left, EuclideanDirection(v)))
    return out


def _direction_neighbors(v, step):
    basis = _tangent_basis(v)
    out = []
    for i in range(basis.shape[1]):
        for sign in (1.0, -1.0):
            w = v + sign * step * basis[:, i]
            out.append(w / np.linalg.norm(w))
    return out
