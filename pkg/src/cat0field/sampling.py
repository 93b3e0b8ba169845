"""Seeded probe generators for property sweeps and scenario validation."""

from __future__ import annotations

import math

import numpy as np

from .spaces import (
    Euclidean,
    EuclideanIsometry,
    Product,
    ProductPoint,
    Tree,
    TreePoint,
    canonical_point,
    distance,
    tree_path,
)
from .geometry import HalfspaceBallSet, ProductSet, SubtreeSet, ball_set


def sample_point(space, rng, scale=3.0):
    if isinstance(space, Euclidean):
        return rng.normal(scale=scale, size=space.dim)
    if isinstance(space, Tree):
        carriers = list(space.edges) + list(space.rays)
        cid = carriers[int(rng.integers(len(carriers)))]
        length = space.carrier_length(cid)
        hi = length if length < math.inf else scale
        return canonical_point(space, TreePoint(cid, float(rng.uniform(0.0, hi))))
    return ProductPoint(sample_point(space.left, rng, scale),
                        sample_point(space.right, rng, scale))


def sample_distinct_points(space, rng, count, scale=3.0, min_gap=1e-6):
    out = []
    while len(out) < count:
        p = sample_point(space, rng, scale)
        if all(distance(space, p, q) > min_gap for q in out):
            out.append(p)
    return out


def sample_direction(dim, rng):
    v = rng.normal(size=dim)
    n = np.linalg.norm(v)
    while n < 1e-9:
        v = rng.normal(size=dim)
        n = np.linalg.norm(v)
    return v / n


def sample_boundary_point(space, rng):
    from .boundary import EuclideanDirection, JoinPoint, TreeEnd
    from .spaces import is_unbounded

    if isinstance(space, Euclidean):
        return EuclideanDirection(sample_direction(space.dim, rng))
    if isinstance(space, Tree):
        if not space.rays:
            raise ValueError("bounded tree has no boundary")
        ends = space.end_ids
        return TreeEnd(ends[int(rng.integers(len(ends)))])
    left_ok = is_unbounded(space.left)
    right_ok = is_unbounded(space.right)
    if left_ok and right_ok:
        theta = float(rng.uniform(0.0, math.pi / 2.0))
    elif left_ok:
        theta = 0.0
    else:
        theta = math.pi / 2.0
    left = sample_boundary_point(space.left, rng) if theta < math.pi / 2.0 else None
    right = sample_boundary_point(space.right, rng) if theta > 0.0 else None
    return JoinPoint(theta, left, right)


def span_set(space, p, q):
    """The geodesic segment between two tree points, as a subtree set."""
    intervals = {}
    for cid, lo, hi in tree_path(space, p, q):
        a, b = min(lo, hi), max(lo, hi)
        if cid in intervals:
            a = min(a, intervals[cid][0])
            b = max(b, intervals[cid][1])
        intervals[cid] = (a, b)
    return SubtreeSet(intervals)


def sample_convex_set(space, rng, scale=3.0):
    """Random nonempty closed convex set, with an interior witness by construction."""
    if isinstance(space, Euclidean):
        witness = rng.normal(scale=scale, size=space.dim)
        halfspaces = []
        for _ in range(int(rng.integers(1, 4))):
            u = sample_direction(space.dim, rng)
            halfspaces.append((u, float(u @ witness) + float(rng.uniform(0.1, 2.0))))
        balls = []
        if rng.uniform() < 0.5:
            center = witness + rng.normal(scale=1.0, size=space.dim)
            balls.append((center, float(np.linalg.norm(witness - center)) + float(rng.uniform(0.5, 2.0))))
        return HalfspaceBallSet(tuple(halfspaces), tuple(balls))
    if isinstance(space, Tree):
        if rng.uniform() < 0.5:
            return ball_set(space, sample_point(space, rng, scale), float(rng.uniform(0.3, 2.0)))
        p = sample_point(space, rng, scale)
        q = sample_point(space, rng, scale)
        return span_set(space, p, q)
    return ProductSet(sample_convex_set(space.left, rng, scale),
                      sample_convex_set(space.right, rng, scale))


def random_orthogonal(dim, rng):
    m = rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))


def sample_euclidean_isometry(dim, rng, translation_scale=2.0):
    return EuclideanIsometry(random_orthogonal(dim, rng),
                             rng.normal(scale=translation_scale, size=dim))


def rotation_matrix_2d(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotation_about(center, angle):
    """Planar rotation about an arbitrary center."""
    center = np.asarray(center, float)
    q = rotation_matrix_2d(angle)
    return EuclideanIsometry(q, center - q @ center)
