"""Model spaces and their points, geodesics and isometries.

Three space kinds are supported: Euclidean factors of any dimension, finite
metric trees with infinite rays attached (whose ends form the boundary), and
binary products with the l2 product metric.  All objects are immutable and
all operations are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Offsets within SNAP of a vertex are snapped onto it so that vertex points
# have one canonical representation.
SNAP = 1e-12


class SpaceError(ValueError):
    """A point, boundary point or convex set does not belong to the space."""


class CompositionError(ValueError):
    """Isometries whose spaces do not chain."""


# ---------------------------------------------------------------------------
# space kinds


@dataclass(frozen=True)
class Euclidean:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise SpaceError("Euclidean dimension must be a positive integer")


@dataclass(frozen=True, eq=False)
class Tree:
    """Finite combinatorial tree with positive edge lengths and attached rays.

    ``edges`` maps an edge id to ``(tail, head, length)``; points on the edge
    are parametrized by their offset from the tail.  ``rays`` maps a ray id to
    its base vertex; ray offsets run over ``[0, inf)``.  Edge and ray ids
    share one carrier namespace.
    """

    vertices: tuple
    edges: dict = field(default_factory=dict)
    rays: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.vertices:
            raise SpaceError("tree needs at least one vertex")
        seen = set()
        for cid, (tail, head, length) in self.edges.items():
            if cid in seen or cid in self.rays:
                raise SpaceError(f"duplicate carrier id {cid!r}")
            seen.add(cid)
            if tail not in self.vertices or head not in self.vertices:
                raise SpaceError(f"edge {cid!r} references unknown vertex")
            if not length > 0:
                raise SpaceError(f"edge {cid!r} must have positive length")
        for rid, base in self.rays.items():
            if base not in self.vertices:
                raise SpaceError(f"ray {rid!r} based at unknown vertex")
        # connected and acyclic <=> connected with |E| = |V| - 1
        if len(self.edges) != len(self.vertices) - 1:
            raise SpaceError("tree graph must be connected and acyclic")
        if len(self._component(self.vertices[0])) != len(self.vertices):
            raise SpaceError("tree graph must be connected")

    def _component(self, start):
        todo, seen = [start], {start}
        while todo:
            v = todo.pop()
            for cid, role in self.incidence[v]:
                if cid in self.edges:
                    tail, head, _ = self.edges[cid]
                    w = head if v == tail else tail
                    if w not in seen:
                        seen.add(w)
                        todo.append(w)
        return seen

    @cached_property
    def incidence(self):
        """vertex -> tuple of (carrier id, role) with role 'tail'/'head'/'base'."""
        inc = {v: [] for v in self.vertices}
        for cid, (tail, head, _) in sorted(self.edges.items()):
            inc[tail].append((cid, "tail"))
            inc[head].append((cid, "head"))
        for rid, base in sorted(self.rays.items()):
            inc[base].append((rid, "base"))
        return {v: tuple(pairs) for v, pairs in inc.items()}

    @cached_property
    def vertex_distance(self):
        """All-pairs vertex distances along the tree."""
        dist = {}
        for start in self.vertices:
            d = {start: 0.0}
            todo = [start]
            while todo:
                v = todo.pop()
                for cid, role in self.incidence[v]:
                    if role == "base":
                        continue
                    tail, head, length = self.edges[cid]
                    w = head if v == tail else tail
                    if w not in d:
                        d[w] = d[v] + length
                        todo.append(w)
            dist[start] = d
        return dist

    @cached_property
    def vertex_paths(self):
        """All-pairs vertex paths, as tuples of (vertex, edge-to-next)."""
        paths = {}
        for start in self.vertices:
            parent = {start: None}
            todo = [start]
            while todo:
                v = todo.pop()
                for cid, role in self.incidence[v]:
                    if role == "base":
                        continue
                    tail, head, _ = self.edges[cid]
                    w = head if v == tail else tail
                    if w not in parent:
                        parent[w] = (v, cid)
                        todo.append(w)
            paths[start] = parent
        return paths

    def carrier_length(self, cid):
        if cid in self.edges:
            return self.edges[cid][2]
        if cid in self.rays:
            return math.inf
        raise SpaceError(f"unknown carrier {cid!r}")

    def carrier_anchors(self, cid):
        """(vertex, offset) pairs where the carrier meets the vertex set."""
        if cid in self.edges:
            tail, head, length = self.edges[cid]
            return ((tail, 0.0), (head, length))
        return ((self.rays[cid], 0.0),)

    def canonical_vertex_carrier(self, v):
        """Smallest incident carrier id plus the offset placing the vertex."""
        pairs = self.incidence[v]
        if not pairs:
            raise SpaceError(f"isolated vertex {v!r} has no carrier")
        cid, role = pairs[0]
        if role == "head":
            return cid, self.edges[cid][2]
        return cid, 0.0

    @cached_property
    def end_ids(self):
        return tuple(sorted(self.rays))

    @cached_property
    def line_chart(self):
        """Arclength chart when the tree is a line, else None.

        A line has exactly two rays, every vertex of degree two, and the rays
        at the two extremities of the vertex path.  The chart maps the base of
        the lexicographically smaller ray to coordinate 0 with that ray on the
        negative side.
        """
        if len(self.rays) != 2:
            return None
        for v in self.vertices:
            if len(self.incidence[v]) != 2:
                return None
        neg, pos = self.end_ids
        base_neg, base_pos = self.rays[neg], self.rays[pos]
        coord = dict(self.vertex_distance[base_neg])
        if coord.get(base_pos) is None:
            return None
        return {"neg": neg, "pos": pos, "vertex_coord": coord}


@dataclass(frozen=True, eq=False)
class Product:
    left: object
    right: object


def is_point_space(space):
    """A single-vertex tree with no edges or rays plays the role of a point."""
    return isinstance(space, Tree) and not space.edges and not space.rays


POINT_SPACE = Tree(vertices=("pt",))


def is_unbounded(space):
    if isinstance(space, Euclidean):
        return True
    if isinstance(space, Tree):
        return bool(space.rays)
    return is_unbounded(space.left) or is_unbounded(space.right)


# ---------------------------------------------------------------------------
# points


@dataclass(frozen=True)
class TreePoint:
    carrier: str
    offset: float


@dataclass(frozen=True, eq=False)
class ProductPoint:
    left: object
    right: object


def require_point(space, p):
    """Validate that ``p`` is a point of ``space``; return it normalized."""
    if isinstance(space, Euclidean):
        q = np.asarray(p, dtype=float)
        if q.shape != (space.dim,):
            raise SpaceError(f"expected coordinate vector of length {space.dim}")
        return q
    if isinstance(space, Tree):
        if not isinstance(p, TreePoint):
            raise SpaceError("expected a TreePoint")
        length = space.carrier_length(p.carrier)
        if not (-SNAP <= p.offset <= length + SNAP):
            raise SpaceError(f"offset {p.offset} out of bounds on {p.carrier!r}")
        return canonical_point(space, p)
    if isinstance(space, Product):
        if not isinstance(p, ProductPoint):
            raise SpaceError("expected a ProductPoint")
        return ProductPoint(require_point(space.left, p.left),
                            require_point(space.right, p.right))
    raise SpaceError(f"unknown space kind {type(space).__name__}")


def canonical_point(space, p):
    """Snap offsets onto vertices and route vertex points to their canonical
    carrier, so equality of tree points is decidable."""
    if isinstance(space, Euclidean):
        return np.asarray(p, dtype=float)
    if isinstance(space, Tree):
        length = space.carrier_length(p.carrier)
        off = min(max(p.offset, 0.0), length if length < math.inf else p.offset)
        for v, anchor_off in space.carrier_anchors(p.carrier):
            if abs(off - anchor_off) <= SNAP * max(1.0, abs(anchor_off)):
                cid, c_off = space.canonical_vertex_carrier(v)
                return TreePoint(cid, c_off)
        return TreePoint(p.carrier, off)
    return ProductPoint(canonical_point(space.left, p.left),
                        canonical_point(space.right, p.right))


def vertex_point(space, v):
    cid, off = space.canonical_vertex_carrier(v)
    return TreePoint(cid, off)


def points_equal(space, p, q, tol=1e-9):
    return distance(space, p, q) <= tol


# ---------------------------------------------------------------------------
# metric


def distance(space, p, q):
    """Geodesic distance between two points of ``space``."""
    if isinstance(space, Euclidean):
        return float(np.linalg.norm(np.asarray(p, float) - np.asarray(q, float)))
    if isinstance(space, Tree):
        return _tree_distance(space, canonical_point(space, p), canonical_point(space, q))
    dl = distance(space.left, p.left, q.left)
    dr = distance(space.right, p.right, q.right)
    return math.hypot(dl, dr)


def _tree_distance(space, p, q):
    if p.carrier == q.carrier:
        return abs(p.offset - q.offset)
    best = math.inf
    for a, a_off in space.carrier_anchors(p.carrier):
        da = abs(p.offset - a_off)
        row = space.vertex_distance[a]
        for b, b_off in space.carrier_anchors(q.carrier):
            d = da + row[b] + abs(q.offset - b_off)
            if d < best:
                best = d
    return best


def carrier_gate(space, cid, p):
    """Attachment data of point ``p`` relative to carrier ``cid``.

    Returns ``(g, c)`` such that the distance from the carrier point at offset
    ``s`` to ``p`` equals ``|s - g| + c``; ``g`` is the offset of the gate
    (the projection of ``p`` onto the carrier) and ``c`` its clearance.
    """
    p = canonical_point(space, p)
    if p.carrier == cid:
        return p.offset, 0.0
    anchors = space.carrier_anchors(cid)
    if len(anchors) == 1:
        (v, _), = anchors
        return 0.0, _tree_distance(space, p, TreePoint(cid, 0.0))
    (tail, _), (head, length) = anchors
    du = _tree_distance(space, p, canonical_point(space, TreePoint(cid, 0.0)))
    dv = _tree_distance(space, p, canonical_point(space, TreePoint(cid, length)))
    g = min(max((du - dv + length) / 2.0, 0.0), length)
    c = max((du + dv - length) / 2.0, 0.0)
    return g, c


def tree_path(space, p, q):
    """The geodesic from p to q as carrier segments.

    Returns a list of ``(carrier, start_offset, end_offset)`` traversed in
    order; offsets decrease or increase monotonically per segment.
    """
    p = canonical_point(space, p)
    q = canonical_point(space, q)
    if p.carrier == q.carrier:
        return [(p.carrier, p.offset, q.offset)]
    # choose exit/entry anchors realizing the distance
    best = None
    for a, a_off in space.carrier_anchors(p.carrier):
        for b, b_off in space.carrier_anchors(q.carrier):
            d = abs(p.offset - a_off) + space.vertex_distance[a][b] + abs(q.offset - b_off)
            if best is None or d < best[0] - SNAP:
                best = (d, a, a_off, b, b_off)
    _, a, a_off, b, b_off = best
    segments = []
    if abs(p.offset - a_off) > SNAP:
        segments.append((p.carrier, p.offset, a_off))
    # vertex path from a to b
    parent = space.vertex_paths[a]
    chain = []
    v = b
    while v != a:
        prev, cid = parent[v]
        chain.append((prev, cid, v))
        v = prev
    for prev, cid, nxt in reversed(chain):
        tail, head, length = space.edges[cid]
        if prev == tail:
            segments.append((cid, 0.0, length))
        else:
            segments.append((cid, length, 0.0))
    if abs(q.offset - b_off) > SNAP:
        segments.append((q.carrier, b_off, q.offset))
    if not segments:
        segments.append((p.carrier, p.offset, q.offset))
    return segments


def _point_along_path(space, segments, s):
    remaining = s
    for cid, lo, hi in segments:
        seg_len = abs(hi - lo)
        if remaining <= seg_len + SNAP:
            direction = 1.0 if hi >= lo else -1.0
            return canonical_point(space, TreePoint(cid, lo + direction * min(remaining, seg_len)))
        remaining -= seg_len
    cid, lo, hi = segments[-1]
    return canonical_point(space, TreePoint(cid, hi))


# ---------------------------------------------------------------------------
# geodesics


def geodesic_point(space, p, q, t):
    """Point at parameter ``t`` on the constant-speed geodesic from p to q."""
    if not (-SNAP <= t <= 1.0 + SNAP):
        raise ValueError(f"geodesic parameter {t} outside [0, 1]")
    t = min(max(t, 0.0), 1.0)
    if isinstance(space, Euclidean):
        a = np.asarray(p, float)
        b = np.asarray(q, float)
        return (1.0 - t) * a + t * b
    if isinstance(space, Tree):
        d = distance(space, p, q)
        if d == 0.0:
            return canonical_point(space, p)
        return _point_along_path(space, tree_path(space, p, q), t * d)
    # product geodesics interpolate each factor at the same parameter
    return ProductPoint(geodesic_point(space.left, p.left, q.left, t),
                        geodesic_point(space.right, p.right, q.right, t))


@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    """Constant-speed geodesic from p to q, evaluated at t in [0, 1]."""

    space: object
    p: object
    q: object

    @property
    def length(self):
        return distance(self.space, self.p, self.q)

    def __call__(self, t):
        return geodesic_point(self.space, self.p, self.q, t)


def geodesic(space, p, q):
    return GeodesicSegment(space, require_point(space, p), require_point(space, q))


# ---------------------------------------------------------------------------
# isometries


@dataclass(frozen=True, eq=False)
class EuclideanIsometry:
    """x -> Q x + t with Q orthogonal."""

    matrix: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, float))
        object.__setattr__(self, "translation", np.asarray(self.translation, float))
        q = self.matrix
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise CompositionError("matrix must be square")
        if not np.allclose(q.T @ q, np.eye(q.shape[0]), atol=1e-9):
            raise CompositionError("matrix is not orthogonal")

    @property
    def domain(self):
        return Euclidean(self.matrix.shape[0])

    codomain = domain


@dataclass(frozen=True, eq=False)
class TreeIsometry:
    """Length-preserving graph isomorphism, extended over edges and rays.

    ``carrier_map`` sends a carrier id to ``(image id, flipped)`` where the
    flip flag marks edges traversed head-to-tail by the image.
    """

    domain: Tree
    codomain: Tree
    vertex_map: dict
    carrier_map: dict

    def __post_init__(self):
        for v in self.domain.vertices:
            if self.vertex_map.get(v) not in self.codomain.vertices:
                raise CompositionError(f"vertex {v!r} has no valid image")
        for cid, (tail, head, length) in self.domain.edges.items():
            image, flip = self.carrier_map[cid]
            itail, ihead, ilength = self.codomain.edges[image]
            if abs(length - ilength) > 1e-12:
                raise CompositionError(f"edge {cid!r} image has different length")
            expected = (ihead, itail) if flip else (itail, ihead)
            if (self.vertex_map[tail], self.vertex_map[head]) != expected:
                raise CompositionError(f"edge {cid!r} image inconsistent with vertex map")
        for rid, base in self.domain.rays.items():
            image, flip = self.carrier_map[rid]
            if flip or image not in self.codomain.rays:
                raise CompositionError(f"ray {rid!r} must map to a ray unflipped")
            if self.codomain.rays[image] != self.vertex_map[base]:
                raise CompositionError(f"ray {rid!r} image base inconsistent")


@dataclass(frozen=True, eq=False)
class TreeLineIsometry:
    """Isometry between line-shaped trees, in arclength coordinates.

    Maps chart coordinate x to ``offset - x`` when flipped, ``offset + x``
    otherwise.  Needed for maps (translations along a line) that are not
    graph isomorphisms of the presentation.
    """

    domain: Tree
    codomain: Tree
    offset: float
    flip: bool

    def __post_init__(self):
        if self.domain.line_chart is None or self.codomain.line_chart is None:
            raise CompositionError("line isometry requires line-shaped trees")


@dataclass(frozen=True, eq=False)
class ProductIsometry:
    left: object
    right: object


def identity_isometry(space):
    if isinstance(space, Euclidean):
        return EuclideanIsometry(np.eye(space.dim), np.zeros(space.dim))
    if isinstance(space, Tree):
        if space.line_chart is not None:
            return TreeLineIsometry(space, space, 0.0, False)
        return TreeIsometry(space, space,
                            {v: v for v in space.vertices},
                            {cid: (cid, False) for cid in list(space.edges) + list(space.rays)})
    return ProductIsometry(identity_isometry(space.left), identity_isometry(space.right))


def _line_coordinate(space, p):
    chart = space.line_chart
    p = canonical_point(space, p)
    if p.carrier == chart["neg"]:
        base = space.rays[chart["neg"]]
        return chart["vertex_coord"][base] - p.offset
    if p.carrier == chart["pos"]:
        base = space.rays[chart["pos"]]
        return chart["vertex_coord"][base] + p.offset
    tail, head, length = space.edges[p.carrier]
    ct, ch = chart["vertex_coord"][tail], chart["vertex_coord"][head]
    return ct + (ch - ct) * (p.offset / length)


def _line_point(space, x):
    chart = space.line_chart
    base_neg = space.rays[chart["neg"]]
    base_pos = space.rays[chart["pos"]]
    if x <= chart["vertex_coord"][base_neg] + SNAP:
        return canonical_point(space, TreePoint(chart["neg"], max(chart["vertex_coord"][base_neg] - x, 0.0)))
    if x >= chart["vertex_coord"][base_pos] - SNAP:
        return canonical_point(space, TreePoint(chart["pos"], max(x - chart["vertex_coord"][base_pos], 0.0)))
    for cid, (tail, head, length) in space.edges.items():
        ct, ch = chart["vertex_coord"][tail], chart["vertex_coord"][head]
        lo, hi = min(ct, ch), max(ct, ch)
        if lo - SNAP <= x <= hi + SNAP:
            s = (x - ct) / (ch - ct) * length
            return canonical_point(space, TreePoint(cid, min(max(s, 0.0), length)))
    raise SpaceError(f"coordinate {x} not on the line chart")


def apply_isometry(g, p):
    if isinstance(g, EuclideanIsometry):
        return g.matrix @ np.asarray(p, float) + g.translation
    if isinstance(g, TreeIsometry):
        p = canonical_point(g.domain, p)
        image, flip = g.carrier_map[p.carrier]
        if flip:
            length = g.domain.edges[p.carrier][2]
            return canonical_point(g.codomain, TreePoint(image, length - p.offset))
        return canonical_point(g.codomain, TreePoint(image, p.offset))
    if isinstance(g, TreeLineIsometry):
        x = _line_coordinate(g.domain, p)
        return _line_point(g.codomain, g.offset - x if g.flip else g.offset + x)
    if isinstance(g, ProductIsometry):
        return ProductPoint(apply_isometry(g.left, p.left), apply_isometry(g.right, p.right))
    raise CompositionError(f"unknown isometry kind {type(g).__name__}")


def isometry_domain(g):
    if isinstance(g, EuclideanIsometry):
        return g.domain
    if isinstance(g, (TreeIsometry, TreeLineIsometry)):
        return g.domain
    return Product(isometry_domain(g.left), isometry_domain(g.right))


def isometry_codomain(g):
    if isinstance(g, EuclideanIsometry):
        return g.domain
    if isinstance(g, (TreeIsometry, TreeLineIsometry)):
        return g.codomain
    return Product(isometry_codomain(g.left), isometry_codomain(g.right))


def compose(g, h):
    """The isometry ``x -> g(h(x))``."""
    if isinstance(g, EuclideanIsometry) and isinstance(h, EuclideanIsometry):
        if g.matrix.shape != h.matrix.shape:
            raise CompositionError("dimension mismatch in composition")
        return EuclideanIsometry(g.matrix @ h.matrix, g.matrix @ h.translation + g.translation)
    if isinstance(g, TreeIsometry) and isinstance(h, TreeIsometry):
        if h.codomain is not g.domain and h.codomain != g.domain:
            _check_tree_chain(g, h)
        vm = {v: g.vertex_map[h.vertex_map[v]] for v in h.domain.vertices}
        cm = {}
        for cid in list(h.domain.edges) + list(h.domain.rays):
            mid, f1 = h.carrier_map[cid]
            out, f2 = g.carrier_map[mid]
            cm[cid] = (out, f1 != f2)
        return TreeIsometry(h.domain, g.codomain, vm, cm)
    if isinstance(g, TreeLineIsometry) and isinstance(h, TreeLineIsometry):
        # g(h(x)) with h(x) = oh +- x, g(y) = og +- y
        if g.flip:
            return TreeLineIsometry(h.domain, g.codomain, g.offset - h.offset,
                                    not h.flip)
        return TreeLineIsometry(h.domain, g.codomain, g.offset + h.offset, h.flip)
    if isinstance(g, (TreeIsometry, TreeLineIsometry)) and isinstance(h, (TreeIsometry, TreeLineIsometry)):
        return compose(_as_line_isometry(g), _as_line_isometry(h))
    if isinstance(g, ProductIsometry) and isinstance(h, ProductIsometry):
        return ProductIsometry(compose(g.left, h.left), compose(g.right, h.right))
    raise CompositionError(
        f"cannot compose {type(g).__name__} with {type(h).__name__}")


def _check_tree_chain(g, h):
    if set(h.codomain.vertices) != set(g.domain.vertices) or h.codomain.edges != g.domain.edges \
            or h.codomain.rays != g.domain.rays:
        raise CompositionError("tree isometries do not chain")


def _as_line_isometry(g):
    """Convert a graph isomorphism between line trees into chart form."""
    if isinstance(g, TreeLineIsometry):
        return g
    if g.domain.line_chart is None or g.codomain.line_chart is None:
        raise CompositionError("cannot mix line and non-line tree isometries")
    p0 = vertex_point(g.domain, g.domain.vertices[0])
    x0 = _line_coordinate(g.domain, p0)
    y0 = _line_coordinate(g.codomain, apply_isometry(g, p0))
    probe = canonical_point(g.domain, TreePoint(g.domain.line_chart["pos"], 1.0 + abs(x0)))
    x1 = _line_coordinate(g.domain, probe)
    y1 = _line_coordinate(g.codomain, apply_isometry(g, probe))
    flip = (y1 - y0) * (x1 - x0) < 0
    offset = y0 + x0 if flip else y0 - x0
    return TreeLineIsometry(g.domain, g.codomain, offset, flip)


def invert(g):
    if isinstance(g, EuclideanIsometry):
        qt = g.matrix.T
        return EuclideanIsometry(qt, -(qt @ g.translation))
    if isinstance(g, TreeIsometry):
        vm = {w: v for v, w in g.vertex_map.items()}
        cm = {image: (cid, flip) for cid, (image, flip) in g.carrier_map.items()}
        return TreeIsometry(g.codomain, g.domain, vm, cm)
    if isinstance(g, TreeLineIsometry):
        if g.flip:
            return TreeLineIsometry(g.codomain, g.domain, g.offset, True)
        return TreeLineIsometry(g.codomain, g.domain, -g.offset, False)
    return ProductIsometry(invert(g.left), invert(g.right))
