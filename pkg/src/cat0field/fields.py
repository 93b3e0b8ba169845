"""Finite-base fields of model spaces with equivalence-relation actions.

A scenario assigns one space to each element of a finite base, plus partial
bijections of the base carrying isometries between the assigned spaces.  At
finite scale every invariance question reduces to fixed points of the loop
group at a class representative, which is what the analyzer exploits.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .spaces import (
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
    apply_isometry,
    canonical_point,
    compose,
    distance,
    geodesic_point,
    identity_isometry,
    invert,
    is_unbounded,
    vertex_point,
)
from .geometry import (
    EMPTY,
    EmptySet,
    HalfspaceBallSet,
    ProductSet,
    SubtreeSet,
    affine_set,
    ball_set,
    circumcenter,
    contains,
    intersect_sets,
    project_convex,
    set_distance,
    transport_convex_set,
    whole_space,
)
from .boundary import (
    EuclideanDirection,
    JoinPoint,
    TreeEnd,
    angular_circumcenter,
    base_point,
    boundary_candidates,
    busemann,
    extend_to_boundary,
    require_boundary,
    tits_angle,
)
from .asymptotics import (
    NestedConvexFamily,
    direction_from,
    family_from_levels,
    limit_circumcenter,
)
from .sampling import sample_point


class LoadError(ValueError):
    """A scenario document failing structural or isometry validation."""


class PreconditionError(ValueError):
    """An operation invoked outside its stated preconditions."""


# ---------------------------------------------------------------------------
# tolerances


@dataclass(frozen=True)
class Tolerances:
    metric: float = 1e-9
    angular: float = 1e-6
    section: float = 1e-7
    defect: float = 1e-6
    r_max: float = 8.0
    horizon: float = 1e3
    rounds: int = 32
    recursion_depth: int = 8

    @staticmethod
    def from_doc(doc):
        doc = dict(doc or {})
        known = {f: doc.pop(f) for f in
                 ("metric", "angular", "section", "defect", "r_max",
                  "horizon", "rounds", "recursion_depth") if f in doc}
        if doc:
            raise LoadError(f"unknown tolerance keys {sorted(doc)}")
        return Tolerances(**known)


# ---------------------------------------------------------------------------
# document literals


def parse_space(doc):
    kind = doc.get("kind")
    if kind == "euclidean":
        return Euclidean(int(doc["dim"]))
    if kind == "tree":
        vertices = tuple(doc["vertices"])
        edges = {e["id"]: (e["tail"], e["head"], float(e["length"]))
                 for e in doc.get("edges", [])}
        rays = {r["id"]: r["base"] for r in doc.get("rays", [])}
        return Tree(vertices=vertices, edges=edges, rays=rays)
    if kind == "product":
        return Product(parse_space(doc["left"]), parse_space(doc["right"]))
    raise LoadError(f"unknown space kind {kind!r}")


def parse_point(space, doc):
    if isinstance(space, Euclidean):
        return np.asarray(doc["coords"], float)
    if isinstance(space, Tree):
        return canonical_point(space, TreePoint(doc["carrier"], float(doc["offset"])))
    return ProductPoint(parse_point(space.left, doc["left"]),
                        parse_point(space.right, doc["right"]))


def parse_isometry(domain, codomain, doc):
    kind = doc.get("kind")
    if kind == "euclidean":
        return EuclideanIsometry(np.asarray(doc["matrix"], float),
                                 np.asarray(doc["translation"], float))
    if kind == "tree":
        carrier_map = {cid: (pair[0], bool(pair[1]))
                       for cid, pair in doc["carrier_map"].items()}
        return TreeIsometry(domain, codomain, dict(doc["vertex_map"]), carrier_map)
    if kind == "tree_line":
        return TreeLineIsometry(domain, codomain, float(doc["offset"]), bool(doc["flip"]))
    if kind == "product":
        return ProductIsometry(parse_isometry(domain.left, codomain.left, doc["left"]),
                               parse_isometry(domain.right, codomain.right, doc["right"]))
    raise LoadError(f"unknown isometry kind {kind!r}")


def parse_boundary_point(space, doc):
    if isinstance(space, Euclidean):
        return EuclideanDirection(np.asarray(doc["direction"], float))
    if isinstance(space, Tree):
        return TreeEnd(doc["end"])
    theta = float(doc["theta"])
    left = parse_boundary_point(space.left, doc["left"]) if doc.get("left") is not None else None
    right = parse_boundary_point(space.right, doc["right"]) if doc.get("right") is not None else None
    return JoinPoint(theta, left, right)


def describe_point(space, p):
    """JSON-ready description of a point, for reports."""
    if isinstance(space, Euclidean):
        return {"coords": [float(v) for v in np.asarray(p, float)]}
    if isinstance(space, Tree):
        q = canonical_point(space, p)
        return {"carrier": q.carrier, "offset": float(q.offset)}
    return {"left": describe_point(space.left, p.left),
            "right": describe_point(space.right, p.right)}


def describe_boundary_point(space, xi):
    if isinstance(space, Euclidean):
        return {"direction": [float(v) for v in xi.vector]}
    if isinstance(space, Tree):
        return {"end": xi.end}
    return {"theta": float(xi.theta),
            "left": describe_boundary_point(space.left, xi.left) if xi.left is not None else None,
            "right": describe_boundary_point(space.right, xi.right) if xi.right is not None else None}


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class GeneratorEdge:
    index: int
    name: str
    source: str
    target: str
    iso: object


@dataclass(eq=False)
class FieldScenario:
    omega: tuple
    spaces: dict
    edges: tuple
    measures: dict | None
    tolerances: Tolerances
    seed: int
    name: str = "scenario"

    def classes(self):
        parent = {w: w for w in self.omega}

        def find(w):
            while parent[w] != w:
                parent[w] = parent[parent[w]]
                w = parent[w]
            return w

        for e in self.edges:
            a, b = find(e.source), find(e.target)
            if a != b:
                parent[a] = b
        groups = {}
        for w in self.omega:
            groups.setdefault(find(w), []).append(w)
        return [tuple(sorted(g)) for g in sorted(groups.values())]

    def class_of(self, w):
        for cls in self.classes():
            if w in cls:
                return cls
        raise KeyError(w)

    def class_edges(self, members):
        members = set(members)
        return [e for e in self.edges if e.source in members]


def _same_kind(a, b):
    if isinstance(a, Euclidean) and isinstance(b, Euclidean):
        return a.dim == b.dim
    if isinstance(a, Tree) and isinstance(b, Tree):
        return True
    if isinstance(a, Product) and isinstance(b, Product):
        return _same_kind(a.left, b.left) and _same_kind(a.right, b.right)
    return False


def load_scenario(doc, name="scenario"):
    """Build and validate a scenario from a parsed document."""
    if not isinstance(doc, dict):
        raise LoadError("scenario document must be an object")
    unknown = set(doc) - {"version", "omega", "spaces", "generators",
                          "measures", "tolerances", "seed"}
    if unknown:
        raise LoadError(f"unknown scenario keys {sorted(unknown)}")
    if doc.get("version") != 1:
        raise LoadError("scenario version must be 1")
    omega = tuple(doc["omega"])
    if len(set(omega)) != len(omega):
        raise LoadError("omega ids must be unique")
    spaces = {}
    for w in omega:
        if w not in doc["spaces"]:
            raise LoadError(f"missing space for omega id {w!r}")
        spaces[w] = parse_space(doc["spaces"][w])
    extra = set(doc["spaces"]) - set(omega)
    if extra:
        raise LoadError(f"spaces reference unknown omega ids {sorted(extra)}")
    tolerances = Tolerances.from_doc(doc.get("tolerances"))
    seed = int(doc.get("seed", 0))
    rng = np.random.default_rng(seed ^ 0x5EED)

    edges = []
    for gen in doc.get("generators", []):
        gname = gen["name"]
        sources = [m["from"] for m in gen["maps"]]
        targets = [m["to"] for m in gen["maps"]]
        if len(set(sources)) != len(sources) or len(set(targets)) != len(targets):
            raise LoadError(f"generator {gname!r} is not a partial bijection")
        for m in gen["maps"]:
            src, tgt = m["from"], m["to"]
            if src not in spaces or tgt not in spaces:
                raise LoadError(f"generator {gname!r} references unknown omega id")
            if not _same_kind(spaces[src], spaces[tgt]):
                raise LoadError(
                    f"generator {gname!r} edge {src}->{tgt} maps spaces of different kinds")
            iso = parse_isometry(spaces[src], spaces[tgt], m["isometry"])
            _validate_isometry_edge(spaces[src], spaces[tgt], iso, rng,
                                    f"{gname}:{src}->{tgt}", tolerances.metric)
            edges.append(GeneratorEdge(len(edges), gname, src, tgt, iso))

    measures = None
    if doc.get("measures"):
        measures = {}
        for w, atoms in doc["measures"].items():
            if w not in spaces:
                raise LoadError(f"measure references unknown omega id {w!r}")
            parsed = [(parse_boundary_point(spaces[w], a["point"]), float(a["weight"]))
                      for a in atoms]
            total = sum(wgt for _, wgt in parsed)
            if abs(total - 1.0) > 1e-9:
                raise LoadError(f"measure at {w!r} has total mass {total}, expected 1")
            measures[w] = tuple(parsed)

    return FieldScenario(omega=omega, spaces=spaces, edges=tuple(edges),
                         measures=measures, tolerances=tolerances, seed=seed,
                         name=name)


def _validate_isometry_edge(src_space, tgt_space, iso, rng, label, tol):
    samples = [sample_point(src_space, rng) for _ in range(8)]
    images = [apply_isometry(iso, p) for p in samples]
    for (p, gp), (q, gq) in itertools.combinations(zip(samples, images), 2):
        d0 = distance(src_space, p, q)
        d1 = distance(tgt_space, gp, gq)
        if abs(d0 - d1) > max(tol, 1e-9) * max(1.0, d0):
            raise LoadError(
                f"edge {label} is not an isometry: d={d0} maps to {d1}")
    back = compose(invert(iso), iso)
    for p in samples[:4]:
        if distance(src_space, apply_isometry(back, p), p) > 1e-9:
            raise LoadError(f"edge {label}: inverse composed with map is not the identity")


# ---------------------------------------------------------------------------
# transport and holonomy


def spanning_transport(scenario, root):
    """Isometries from the root's space to each class member, along a
    deterministic spanning tree, plus the unused in-class edges."""
    members = scenario.class_of(root)
    edges = scenario.class_edges(members)
    adjacency = {w: [] for w in members}
    for e in sorted(edges, key=lambda e: (e.name, e.source, e.target, e.index)):
        adjacency[e.source].append((e.target, e, False))
        adjacency[e.target].append((e.source, e, True))
    transport = {root: identity_isometry(scenario.spaces[root])}
    used = set()
    queue = [root]
    while queue:
        w = queue.pop(0)
        for nxt, e, reversed_ in adjacency[w]:
            if nxt in transport:
                continue
            step = invert(e.iso) if reversed_ else e.iso
            transport[nxt] = compose(step, transport[w])
            used.add(e.index)
            queue.append(nxt)
    loops = [e for e in edges if e.index not in used]
    return transport, loops


def holonomy(scenario, w):
    """Loop-group generators at ``w``: one isometry of ``space(w)`` per
    independent cycle of the class generator graph; identity when acyclic."""
    members = scenario.class_of(w)
    root = members[0]
    transport, loop_edges = spanning_transport(scenario, root)
    gens = []
    for e in loop_edges:
        loop = compose(invert(transport[e.target]), compose(e.iso, transport[e.source]))
        gens.append(loop)
    if root != w:
        to_w = transport[w]
        gens = [compose(to_w, compose(g, invert(to_w))) for g in gens]
    if not gens:
        return [identity_isometry(scenario.spaces[w])]
    return gens


def _identity_like(space, iso, probes=None):
    if probes is None:
        rng = np.random.default_rng(7)
        probes = [sample_point(space, rng) for _ in range(6)]
    return max(distance(space, apply_isometry(iso, p), p) for p in probes) <= 1e-9


def check_invariant_section(scenario, section, boundary=False):
    """Worst transport residual of a section over the generator edges."""
    worst = 0.0
    for e in scenario.edges:
        if e.source not in section or e.target not in section:
            raise PreconditionError(f"section undefined on edge {e.name}")
        if boundary:
            moved = extend_to_boundary(e.iso, section[e.source])
            worst = max(worst, tits_angle(scenario.spaces[e.target], moved, section[e.target]))
        else:
            moved = apply_isometry(e.iso, section[e.source])
            worst = max(worst, distance(scenario.spaces[e.target], moved, section[e.target]))
    return worst


@dataclass(eq=False)
class TransportResult:
    section: dict | None
    obstructions: dict  # class root -> list of (loop position, displacement)


def transport_section(scenario, seeds):
    """Spread seeds along spanning trees; report loop obstructions instead of
    silently producing a non-invariant section."""
    section = {}
    obstructions = {}
    for members in scenario.classes():
        root = next((w for w in members if w in seeds), None)
        if root is None:
            raise PreconditionError(f"no seed supplied for class {members}")
        seed = seeds[root]
        transport, loop_edges = spanning_transport(scenario, root)
        gens = holonomy(scenario, root)
        moved = [(i, distance(scenario.spaces[root], apply_isometry(g, seed), seed))
                 for i, g in enumerate(gens)]
        bad = [(i, d) for i, d in moved if d > scenario.tolerances.section]
        if bad:
            obstructions[root] = bad
            continue
        for w in members:
            section[w] = apply_isometry(transport[w], seed)
    if obstructions:
        return TransportResult(None, obstructions)
    return TransportResult(section, {})


# ---------------------------------------------------------------------------
# invariant boundary measures


@dataclass(frozen=True)
class OrbitMeasureFailure:
    orbit_size: int
    limit: int


def orbit_average_measure(scenario, w, xi, max_orbit=64):
    """Uniform measure on a finite holonomy orbit at infinity, extended
    equivariantly over the class; a failure value when the orbit does not
    close within the budget."""
    space = scenario.spaces[w]
    xi = require_boundary(space, xi)
    gens = holonomy(scenario, w)
    gens = gens + [invert(g) for g in gens]
    orbit = [xi]
    frontier = [xi]
    while frontier:
        nxt = []
        for point in frontier:
            for g in gens:
                image = extend_to_boundary(g, point)
                if all(tits_angle(space, image, other) > 1e-6 for other in orbit):
                    orbit.append(image)
                    nxt.append(image)
                    if len(orbit) > max_orbit:
                        return OrbitMeasureFailure(len(orbit), max_orbit)
        frontier = nxt
    weight = 1.0 / len(orbit)
    members = scenario.class_of(w)
    root = members[0]
    transport, _ = spanning_transport(scenario, root)
    to_w = transport[w]
    measures = {}
    for member in members:
        carry = compose(transport[member], invert(to_w))
        measures[member] = tuple((extend_to_boundary(carry, point), weight)
                                 for point in orbit)
    return measures


def pushforward_residual(scenario, measures):
    """Worst mismatch of the per-edge pushforward of a measure family.

    Atoms must match within the angular tolerance with exactly equal weights.
    Returns ``(worst angle, worst edge name)``.
    """
    worst = (0.0, None)
    for e in scenario.edges:
        source_atoms = measures[e.source]
        target_atoms = list(measures[e.target])
        for xi, wgt in source_atoms:
            moved = extend_to_boundary(e.iso, xi)
            best = None
            for eta, wgt2 in target_atoms:
                if wgt2 != wgt:
                    continue
                ang = tits_angle(scenario.spaces[e.target], moved, eta)
                if best is None or ang < best:
                    best = ang
            if best is None:
                best = math.pi
            if best > worst[0]:
                worst = (best, e.name)
    return worst


# ---------------------------------------------------------------------------
# quasi-invariant convex fields


@dataclass(eq=False)
class QuasiInvariantField:
    scenario: FieldScenario
    functions: dict          # omega -> callable on the space
    cocycle: dict            # edge index -> real constant
    measures: dict
    base_section: dict

    def cocycle_value(self, a, b, iso):
        """c(a, b) for an explicit isometry realizing (a, b)."""
        x = self.base_section[b]
        return self.functions[a](apply_isometry(invert(iso), x)) - self.functions[b](x)


def default_base_section(scenario):
    section = {}
    for members in scenario.classes():
        root = members[0]
        transport, _ = spanning_transport(scenario, root)
        seed = base_point(scenario.spaces[root])
        for w in members:
            section[w] = apply_isometry(transport[w], seed)
    return section


def quasi_invariant_busemann_field(scenario, measures, base_section=None):
    """Per-omega convex function ``x -> sum of weighted horofunctions`` with
    its transport cocycle; requires the measure family to be invariant."""
    angle, edge = pushforward_residual(scenario, measures)
    if angle > scenario.tolerances.section:
        raise PreconditionError(
            f"boundary measure is not invariant; worst edge {edge} residual {angle}")
    if base_section is None:
        base_section = default_base_section(scenario)

    functions = {}
    for w in scenario.omega:
        space = scenario.spaces[w]
        atoms = measures[w]
        x0 = base_section[w]

        def f(x, space=space, atoms=atoms, x0=x0):
            return sum(wgt * busemann(space, x0, xi, x) for xi, wgt in atoms)

        functions[w] = f
    fld = QuasiInvariantField(scenario, functions, {}, measures, base_section)
    for e in scenario.edges:
        fld.cocycle[e.index] = fld.cocycle_value(e.source, e.target, e.iso)
    return fld


def quasi_invariance_residual(field, samples_per_edge=100, rng=None):
    """Worst miss of ``f_a(alpha(b,a) x) = f_b(x) + c(a,b)`` over sampled points."""
    scenario = field.scenario
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    worst = 0.0
    for e in scenario.edges:
        c = field.cocycle[e.index]
        back = invert(e.iso)
        for _ in range(samples_per_edge):
            x = sample_point(scenario.spaces[e.target], rng)
            lhs = field.functions[e.source](apply_isometry(back, x))
            rhs = field.functions[e.target](x) + c
            worst = max(worst, abs(lhs - rhs))
    return worst


def cocycle_additivity_residual(field):
    """Worst miss of ``c(a,c) = c(a,b) + c(b,c)`` over composable edge pairs."""
    scenario = field.scenario
    worst = 0.0
    for e1 in scenario.edges:
        for e2 in scenario.edges:
            if e2.source != e1.target:
                continue
            combined = compose(e2.iso, e1.iso)
            c_direct = field.cocycle_value(e1.source, e2.target, combined)
            worst = max(worst,
                        abs(field.cocycle[e1.index] + field.cocycle[e2.index] - c_direct))
    return worst


# ---------------------------------------------------------------------------
# minimizing convex functions over balls (classification evidence)


def _minimize_interval(f, lo, hi, samples=33):
    xs = np.linspace(lo, hi, samples)
    vals = [f(x) for x in xs]
    i = int(np.argmin(vals))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, samples - 1)]
    for _ in range(80):
        if b - a < 1e-12 * max(1.0, abs(b)):
            break
        m1 = a + (b - a) / 3.0
        m2 = b - (b - a) / 3.0
        if f(m1) <= f(m2):
            b = m2
        else:
            a = m1
    s = (a + b) / 2.0
    return s, f(s)


def minimize_over_ball(space, f, x0, radius):
    """Best value of a convex function on a closed metric ball (evidence grade)."""
    if isinstance(space, Euclidean):
        x0 = np.asarray(x0, float)
        cands = [x0]
        for i in range(space.dim):
            e = np.zeros(space.dim)
            e[i] = 1.0
            cands += [x0 + radius * e, x0 - radius * e]
        h = 1e-6 * max(1.0, radius)
        grad = np.array([(f(x0 + h * e) - f(x0 - h * e)) / (2 * h)
                         for e in np.eye(space.dim)])
        if np.linalg.norm(grad) > 1e-12:
            cands.append(x0 - radius * grad / np.linalg.norm(grad))
        best_x, best_v = None, math.inf
        for c in cands:
            v = f(c)
            if v < best_v:
                best_x, best_v = c, v
        step = radius / 2.0
        while step > 1e-9 * max(1.0, radius):
            improved = False
            for i in range(space.dim):
                for sign in (1.0, -1.0):
                    cand = best_x.copy()
                    cand[i] += sign * step
                    gap = np.linalg.norm(cand - x0)
                    if gap > radius:
                        cand = x0 + (cand - x0) * (radius / gap)
                    v = f(cand)
                    if v < best_v - 1e-15:
                        best_x, best_v = cand, v
                        improved = True
            if not improved:
                step *= 0.5
        return best_v, best_x
    if isinstance(space, Tree):
        from .spaces import carrier_gate
        p0 = canonical_point(space, x0)
        best_v, best_x = f(p0), p0
        for cid in list(space.edges) + list(space.rays):
            g, c = carrier_gate(space, cid, x0)
            reach = radius - c
            if reach < 0:
                continue
            length = space.carrier_length(cid)
            lo, hi = max(g - reach, 0.0), min(g + reach, length)
            if hi < lo:
                continue
            s, v = _minimize_interval(lambda s, cid=cid: f(canonical_point(space, TreePoint(cid, s))), lo, hi)
            if v < best_v:
                best_v, best_x = v, canonical_point(space, TreePoint(cid, s))
        return best_v, best_x
    # product: scan radius splits; exact for separable objectives
    def left_min(rho):
        return minimize_over_ball(space.left, lambda a: f(ProductPoint(a, x0.right)), x0.left, rho)

    def right_min(rho):
        return minimize_over_ball(space.right, lambda b: f(ProductPoint(x0.left, b)), x0.right, rho)

    f0 = f(ProductPoint(x0.left, x0.right) if not isinstance(x0, ProductPoint) else x0)
    best = (math.inf, None)
    for phi in np.linspace(0.0, math.pi / 2.0, 17):
        vl, al = left_min(radius * math.cos(phi))
        vr, br = right_min(radius * math.sin(phi))
        v = vl + vr - f0
        joint = f(ProductPoint(al, br))
        v = max(v, -math.inf)
        if joint < best[0]:
            best = (joint, ProductPoint(al, br))
    return best


INF_TAGS = ("min_attained", "inf_minus_infinity", "inf_finite", "indeterminate")


@dataclass(eq=False)
class InfStatus:
    tag: str
    min_value: float
    evidence: tuple          # (radius, ball minimum) pairs
    argmin: object = None    # convex set when the minimum is attained
    argmin_point: object = None


def classify_convex_function(space, f, x0, search_radius=2 ** 20, attain_tol=1e-8):
    """Doubling-ball scan classifying inf f as attained, finite, or -infinity.

    Best-effort numeric classification; ambiguous evidence is tagged
    indeterminate rather than guessed.
    """
    evidence = [(0.0, f(x0))]
    best_x = x0
    r = 1.0
    while r <= search_radius:
        v, x = minimize_over_ball(space, f, x0, r)
        evidence.append((r, min(v, evidence[-1][1])))
        if v <= evidence[-2][1]:
            best_x = x
        r *= 2.0
    improvements = [evidence[i][1] - evidence[i + 1][1]
                    for i in range(len(evidence) - 1)]
    tail = improvements[-6:]
    if all(imp < attain_tol for imp in improvements[-2:]):
        min_value = evidence[-1][1]
        argmin = _argmin_set(space, f, best_x, min_value)
        return InfStatus("min_attained", min_value, tuple(evidence), argmin, best_x)
    ratios = [b / a for a, b in zip(tail, tail[1:]) if a > 1e-12]
    if ratios and all(rt >= 1.5 for rt in ratios[-3:]):
        return InfStatus("inf_minus_infinity", -math.inf, tuple(evidence))
    if ratios and all(rt <= 0.75 for rt in ratios[-3:]):
        # decaying improvements: finite infimum approached but not attained
        total_remaining = tail[-1] / (1.0 - max(ratios[-3:]))
        return InfStatus("inf_finite", evidence[-1][1] - total_remaining, tuple(evidence))
    return InfStatus("indeterminate", evidence[-1][1], tuple(evidence))


def _argmin_set(space, f, x_star, min_value, tol=1e-9):
    """The sublevel set at the attained minimum, within the set grammar."""
    if isinstance(space, Euclidean):
        x_star = np.asarray(x_star, float)
        flat_dirs = []
        for i in range(space.dim):
            e = np.zeros(space.dim)
            e[i] = 1.0
            if (abs(f(x_star + e) - min_value) < tol
                    and abs(f(x_star - e) - min_value) < tol):
                flat_dirs.append(e)
        if len(flat_dirs) == space.dim:
            return whole_space(space)
        if not flat_dirs:
            return ball_set(space, x_star, 0.0)
        return affine_set(x_star, np.array(flat_dirs))
    if isinstance(space, Tree):
        intervals = {}
        for cid in list(space.edges) + list(space.rays):
            length = space.carrier_length(cid)
            hi = length if length < math.inf else 64.0
            xs = np.linspace(0.0, hi, 65)
            inside = [s for s in xs
                      if f(canonical_point(space, TreePoint(cid, s))) <= min_value + tol]
            if inside:
                intervals[cid] = (float(min(inside)), float(max(inside)))
        if not intervals:
            q = canonical_point(space, x_star)
            intervals[q.carrier] = (q.offset, q.offset)
        return SubtreeSet(intervals)
    left = _argmin_set(space.left, lambda a: f(ProductPoint(a, x_star.right)),
                       x_star.left, min_value, tol)
    right = _argmin_set(space.right, lambda b: f(ProductPoint(x_star.left, b)),
                        x_star.right, min_value, tol)
    return ProductSet(left, right)


def classify_inf(field, search_radius=2 ** 20):
    """Per-omega classification of the field's convex functions."""
    out = {}
    for w in field.scenario.omega:
        out[w] = classify_convex_function(field.scenario.spaces[w],
                                          field.functions[w],
                                          field.base_section[w],
                                          search_radius=search_radius)
    return out


# ---------------------------------------------------------------------------
# invariant flats


@dataclass(eq=False)
class EuclideanFlat:
    """Affine flat ``base + span(frame rows)``; an empty frame is a point."""

    base: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        self.base = np.asarray(self.base, float)
        self.frame = np.asarray(self.frame, float).reshape(-1, len(self.base))


@dataclass(eq=False)
class SubtreeFlat:
    """A point or a complete geodesic line inside a tree."""

    subtree: SubtreeSet
    dim: int


@dataclass(eq=False)
class ProductFlat:
    left: object
    right: object


def flat_dim(flat):
    if isinstance(flat, EuclideanFlat):
        return flat.frame.shape[0]
    if isinstance(flat, SubtreeFlat):
        return flat.dim
    return flat_dim(flat.left) + flat_dim(flat.right)


def flat_to_set(space, flat):
    if isinstance(flat, EuclideanFlat):
        return affine_set(flat.base, flat.frame)
    if isinstance(flat, SubtreeFlat):
        return flat.subtree
    return ProductSet(flat_to_set(space.left, flat.left),
                      flat_to_set(space.right, flat.right))


def transport_flat(iso, flat):
    if isinstance(flat, EuclideanFlat):
        return EuclideanFlat(apply_isometry(iso, flat.base),
                             flat.frame @ iso.matrix.T)
    if isinstance(flat, SubtreeFlat):
        return SubtreeFlat(transport_convex_set(iso, flat.subtree), flat.dim)
    return ProductFlat(transport_flat(iso.left, flat.left),
                       transport_flat(iso.right, flat.right))


def flat_probe_points(space, flat, scales=(1.0, 2.0)):
    if isinstance(flat, EuclideanFlat):
        out = [flat.base.copy()]
        for row in flat.frame:
            for s in scales:
                out.append(flat.base + s * row)
                out.append(flat.base - s * row)
        return out
    if isinstance(flat, SubtreeFlat):
        out = []
        for cid, (lo, hi) in sorted(flat.subtree.intervals.items()):
            out.append(canonical_point(space, TreePoint(cid, lo)))
            if hi < math.inf:
                out.append(canonical_point(space, TreePoint(cid, hi)))
                out.append(canonical_point(space, TreePoint(cid, (lo + hi) / 2.0)))
            else:
                for s in scales:
                    out.append(canonical_point(space, TreePoint(cid, lo + s)))
        return out
    lefts = flat_probe_points(space.left, flat.left, scales)
    rights = flat_probe_points(space.right, flat.right, scales)
    out = [ProductPoint(l, rights[0]) for l in lefts]
    out += [ProductPoint(lefts[0], r) for r in rights]
    return out


def describe_flat(space, flat):
    if isinstance(flat, EuclideanFlat):
        return {"kind": "euclidean_flat",
                "base": [float(v) for v in flat.base],
                "frame": [[float(v) for v in row] for row in flat.frame]}
    if isinstance(flat, SubtreeFlat):
        return {"kind": "subtree_flat", "dim": flat.dim,
                "intervals": {cid: [lo, (None if hi == math.inf else hi)]
                              for cid, (lo, hi) in sorted(flat.subtree.intervals.items())}}
    return {"kind": "product_flat",
            "left": describe_flat(space.left, flat.left),
            "right": describe_flat(space.right, flat.right)}


def check_invariant_flats(scenario, flats):
    """Worst two-sided transport residual of a flat family over the edges."""
    worst = 0.0
    for e in scenario.edges:
        src_space = scenario.spaces[e.source]
        tgt_space = scenario.spaces[e.target]
        tgt_set = flat_to_set(tgt_space, flats[e.target])
        for p in flat_probe_points(src_space, flats[e.source]):
            worst = max(worst, set_distance(tgt_space, tgt_set,
                                            apply_isometry(e.iso, p)))
        src_set = flat_to_set(src_space, flats[e.source])
        back = invert(e.iso)
        for p in flat_probe_points(tgt_space, flats[e.target]):
            worst = max(worst, set_distance(src_space, src_set,
                                            apply_isometry(back, p)))
    return worst


# ---------------------------------------------------------------------------
# displacement minimization


def displacement(space, loops, x):
    return max(distance(space, x, apply_isometry(g, x)) for g in loops)


def _fan_points(space, center, radius):
    if isinstance(space, Euclidean):
        center = np.asarray(center, float)
        out = []
        for i in range(space.dim):
            e = np.zeros(space.dim)
            e[i] = 1.0
            out += [center + radius * e, center - radius * e]
        diag = np.ones(space.dim) / math.sqrt(space.dim)
        out += [center + radius * diag, center - radius * diag]
        return out
    if isinstance(space, Tree):
        out = []
        for rid in space.rays:
            from .boundary import ray_point
            out.append(ray_point(space, center, TreeEnd(rid), radius))
        for v in space.vertices:
            p = vertex_point(space, v)
            d = distance(space, center, p)
            if d > 1e-12:
                out.append(geodesic_point(space, center, p, min(radius / d, 1.0)))
        return out or [canonical_point(space, center)]
    lf = _fan_points(space.left, center.left, radius)
    rf = _fan_points(space.right, center.right, radius)
    out = [ProductPoint(l, center.right) for l in lf]
    out += [ProductPoint(center.left, r) for r in rf]
    return out


def _set_probe_points(space, C, x0, radii=(1.0, 2.0)):
    anchor = project_convex(space, C, x0)
    probes = [anchor]
    for r in radii:
        for q in _fan_points(space, anchor, r):
            probes.append(project_convex(space, C, q))
    return probes


def _euclidean_displacement_argmin(space, loops):
    """Exact minimum-displacement affine subspace for Euclidean loop groups."""
    parts = [(g.matrix - np.eye(space.dim), g.translation) for g in loops]
    if len(parts) == 1:
        a, t = parts[0]
        x, *_ = np.linalg.lstsq(a, -t, rcond=None)
        m = float(np.linalg.norm(a @ x + t))
        frame = null_space(a).T
        return m, x, frame
    stacked = np.vstack([a for a, _ in parts])
    frame = null_space(stacked).T if stacked.size else np.eye(space.dim)
    starts = []
    for a, t in parts:
        x, *_ = np.linalg.lstsq(a, -t, rcond=None)
        starts.append(x)
    starts.append(np.mean(starts, axis=0))

    def objective(x):
        return max(float(np.linalg.norm(a @ x + t)) for a, t in parts)

    from scipy import optimize
    best_x, best_m = None, math.inf
    for s in starts:
        res = optimize.minimize(objective, s, method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000})
        if res.fun < best_m:
            best_x, best_m = res.x, float(res.fun)
    return best_m, best_x, frame


def _tree_displacement_argmin(space, loops, C):
    def delta(p):
        return displacement(space, loops, p)

    best = (math.inf, None)
    refined = {}
    for cid, (lo, hi) in sorted(C.intervals.items()):
        length = space.carrier_length(cid)
        hi_eff = hi if hi < math.inf else max(lo + 64.0, 64.0)
        s, v = _minimize_interval(
            lambda s, cid=cid: delta(canonical_point(space, TreePoint(cid, s))), lo, hi_eff)
        refined[cid] = (lo, hi, hi_eff)
        if v < best[0]:
            best = (v, canonical_point(space, TreePoint(cid, s)))
    m = best[0]
    intervals = {}
    for cid, (lo, hi, hi_eff) in refined.items():
        xs = np.linspace(lo, hi_eff, 65)
        inside = [s for s in xs
                  if delta(canonical_point(space, TreePoint(cid, float(s)))) <= m + 1e-9]
        if not inside:
            continue
        a, b = float(min(inside)), float(max(inside))
        a = _bisect_edge(space, delta, cid, a, max(lo, a - (xs[1] - xs[0])), m, low_side=True)
        if hi == math.inf and b >= hi_eff - (xs[1] - xs[0]) - 1e-9:
            b = math.inf
        else:
            b = _bisect_edge(space, delta, cid, b, min(hi_eff, b + (xs[1] - xs[0])), m, low_side=False)
        intervals[cid] = (a, b)
    if not intervals:
        q = best[1]
        intervals[q.carrier] = (q.offset, q.offset)
    return m, best[1], SubtreeSet(intervals)


def _bisect_edge(space, delta, cid, inside, outside, m, low_side):
    lo, hi = (outside, inside) if low_side else (inside, outside)
    a, b = lo, hi
    for _ in range(50):
        mid = (a + b) / 2.0
        ok = delta(canonical_point(space, TreePoint(cid, mid))) <= m + 1e-9
        if low_side:
            if ok:
                b = mid
            else:
                a = mid
        else:
            if ok:
                a = mid
            else:
                b = mid
    return b if low_side else a


def _displacement_argmin(space, loops, C, anchor):
    """Minimize the max displacement of the loop generators over C.

    Returns ``(min value, witness point, argmin set, meta)``; the set is None
    when only a numeric witness is available.
    """
    if isinstance(space, Euclidean):
        m, x, frame = _euclidean_displacement_argmin(space, loops)
        argmin = affine_set(x, frame)
        constrained = intersect_sets(space, argmin, C)
        if isinstance(constrained, EmptySet):
            # global flat misses C: fall back to a numeric constrained witness
            v, x_c = minimize_over_ball(space, lambda p: displacement(space, loops, p),
                                        anchor, 64.0)
            return v, x_c, None, {"approximate": True}
        witness = project_convex(space, constrained, anchor)
        m_c = displacement(space, loops, witness)
        return m_c, witness, constrained, {"frame": frame, "base": x}
    if isinstance(space, Tree):
        m, witness, argmin = _tree_displacement_argmin(space, loops, C)
        return m, witness, argmin, {}
    if len(loops) == 1 and isinstance(loops[0], ProductIsometry):
        g = loops[0]
        ml, wl, al, metal = _displacement_argmin(space.left, [g.left], C.left, anchor.left)
        mr, wr, ar, metar = _displacement_argmin(space.right, [g.right], C.right, anchor.right)
        if al is None or ar is None:
            return math.hypot(ml, mr), ProductPoint(wl, wr), None, {"approximate": True}
        return math.hypot(ml, mr), ProductPoint(wl, wr), ProductSet(al, ar), {
            "left": metal, "right": metar}
    # several product loops: numeric witness only
    v, x_c = minimize_over_ball(space, lambda p: displacement(space, loops, p), anchor, 64.0)
    return v, x_c, None, {"approximate": True}


# ---------------------------------------------------------------------------
# orbits, coboundedness and escape


def _orbit_sample(space, loops, p, steps):
    points = [p]
    for g in loops:
        fwd = p
        back = p
        ginv = invert(g)
        for _ in range(steps):
            fwd = apply_isometry(g, fwd)
            back = apply_isometry(ginv, back)
            points.append(fwd)
            points.append(back)
    return points


def _orbit_closure(space, loops, p, cap=64, tol=1e-9):
    """The finite orbit of p under the loop group, or None if it exceeds cap."""
    orbit = [p]
    frontier = [p]
    gens = loops + [invert(g) for g in loops]
    while frontier:
        nxt = []
        for q in frontier:
            for g in gens:
                image = apply_isometry(g, q)
                if all(distance(space, image, other) > tol for other in orbit):
                    orbit.append(image)
                    nxt.append(image)
                    if len(orbit) > cap:
                        return None
        frontier = nxt
    return orbit


def _orbit_cobounded(space, C, loops, p, m):
    """Probe whether the current set stays within bounded distance of orbits.

    A stall with a cobounded orbit marks the set as the canonical minimal
    candidate; otherwise the action pushes the set off to infinity.
    """
    r1 = max(2.0 * m, 1.0)
    r2 = 2.0 * r1
    steps = min(int(3.0 * r2 / max(m, 1e-9)) + 4, 256)
    orbit = _orbit_sample(space, loops, p, steps)

    def defect(radius):
        worst = 0.0
        for q in _fan_points(space, p, radius):
            qc = project_convex(space, C, q)
            worst = max(worst, min(distance(space, qc, o) for o in orbit))
        return worst

    d1, d2 = defect(r1), defect(r2)
    return (d2 - d1) <= 0.3 * (r2 - r1) + 1e-6


def _busemann_sublevel(space, xi, anchor, beta):
    """Sets ``{ b_anchor,xi <= -beta }`` within the grammar (ray-tail form on
    trees, factor products on joins)."""
    if isinstance(space, Euclidean):
        v = xi.vector
        base = np.asarray(anchor, float)
        return HalfspaceBallSet(halfspaces=((-v, -beta - float(v @ base)),))
    if isinstance(space, Tree):
        from .boundary import _tree_horofunction
        h0 = _tree_horofunction(space, xi, anchor)
        lo = max(beta + h0, 0.0)
        return SubtreeSet({xi.end: (lo, math.inf)})
    lset = _busemann_sublevel(space.left, xi.left, anchor.left,
                              beta * math.cos(xi.theta)) \
        if xi.left is not None and xi.theta < math.pi / 2.0 else whole_space(space.left)
    rset = _busemann_sublevel(space.right, xi.right, anchor.right,
                              beta * math.sin(xi.theta)) \
        if xi.right is not None and xi.theta > 0.0 else whole_space(space.right)
    return ProductSet(lset, rset)


def _escape_family(space, C, loops, p, reach_steps=32):
    """Nested sublevel family marching along the dominant orbit direction."""
    far_best = (0.0, None)
    for g in loops:
        q = p
        for _ in range(reach_steps):
            q = apply_isometry(g, q)
        d = distance(space, p, q)
        if d > far_best[0]:
            far_best = (d, q)
    if far_best[1] is None:
        raise PreconditionError("no escaping direction found")
    xi = direction_from(space, p, far_best[1])

    def sampler(beta):
        return intersect_sets(space, C, _busemann_sublevel(space, xi, p, beta))

    return family_from_levels(sampler), xi


# ---------------------------------------------------------------------------
# minimal invariant subfields


@dataclass(eq=False)
class ShrinkResult:
    status: str              # stabilized | escape | indeterminate
    current: object          # convex set at the class root
    point: object = None     # collapsed point for fixed-point stabilizations
    family: object = None    # escape family
    direction_hint: object = None
    anchor: object = None
    meta: dict = field(default_factory=dict)
    rounds: list = field(default_factory=list)


def point_set(space, p):
    if isinstance(space, Euclidean):
        return ball_set(space, p, 0.0)
    if isinstance(space, Tree):
        q = canonical_point(space, p)
        return SubtreeSet({q.carrier: (q.offset, q.offset)})
    return ProductSet(point_set(space.left, p.left), point_set(space.right, p.right))


def _proper_shrink(space, new, old, probes):
    for p in probes:
        if set_distance(space, new, p) > 1e-7:
            return True
    return False


def _minimal_engine(scenario, root, C, rounds):
    space = scenario.spaces[root]
    x0 = base_point(space)
    loops = [g for g in holonomy(scenario, root) if not _identity_like(space, g)]
    log = []
    for round_idx in range(rounds):
        anchor = project_convex(space, C, x0)
        if not loops:
            p = anchor
            log.append({"round": round_idx, "event": "fixed", "displacement": 0.0})
            return ShrinkResult("stabilized", point_set(space, p), point=p,
                                anchor=p, meta={"kind": "fixed_point"}, rounds=log)
        m, witness, argmin, meta = _displacement_argmin(space, loops, C, anchor)
        if m <= 1e-9 and argmin is not None:
            p = project_convex(space, argmin, x0)
            log.append({"round": round_idx, "event": "fixed_set", "displacement": m})
            return ShrinkResult("stabilized", point_set(space, p), point=p,
                                anchor=p, meta={"kind": "fixed_point"}, rounds=log)
        probes = _set_probe_points(space, C, x0)
        if argmin is not None and _proper_shrink(space, argmin, C, probes):
            C = argmin
            log.append({"round": round_idx, "event": "displacement_shrink",
                        "displacement": m})
            continue
        # stall with positive displacement
        p = project_convex(space, C, witness if argmin is None else anchor)
        if not isinstance(space, Product):
            closed = _orbit_closure(space, loops, p)
            if closed is not None and len(closed) > 1:
                cc, rr = circumcenter(space, closed)
                shrunk = intersect_sets(space, C, ball_set(space, cc, rr))
                if not isinstance(shrunk, EmptySet) and _proper_shrink(space, shrunk, C, probes):
                    C = shrunk
                    log.append({"round": round_idx, "event": "orbit_ball_shrink"})
                    continue
        if _orbit_cobounded(space, C, loops, p, m):
            log.append({"round": round_idx, "event": "stabilized_cobounded",
                        "displacement": m})
            return ShrinkResult("stabilized", C, anchor=p,
                                meta={"kind": "cobounded", "displacement": m},
                                rounds=log)
        family, hint = _escape_family(space, C, loops, p)
        log.append({"round": round_idx, "event": "escape"})
        return ShrinkResult("escape", C, family=family, direction_hint=hint,
                            anchor=p, rounds=log)
    log.append({"event": "rounds_exhausted"})
    return ShrinkResult("indeterminate", C, rounds=log)


def check_invariant_sets(scenario, sets):
    """Two-sided projection residual of a convex subfield over the edges."""
    worst = 0.0
    for e in scenario.edges:
        src_space = scenario.spaces[e.source]
        tgt_space = scenario.spaces[e.target]
        x0s = base_point(src_space)
        x0t = base_point(tgt_space)
        for p in _set_probe_points(src_space, sets[e.source], x0s):
            worst = max(worst, set_distance(tgt_space, sets[e.target],
                                            apply_isometry(e.iso, p)))
        back = invert(e.iso)
        for p in _set_probe_points(tgt_space, sets[e.target], x0t):
            worst = max(worst, set_distance(src_space, sets[e.source],
                                            apply_isometry(back, p)))
    return worst


def minimal_invariant_subfield(scenario, initial=None, rounds=None):
    """Shrink an invariant convex subfield toward a minimal candidate.

    Returns ``(sets, results)`` with per-omega sets after shrinking and a
    per-class-root ShrinkResult describing stabilization or escape evidence.
    """
    rounds = rounds if rounds is not None else scenario.tolerances.rounds
    if initial is not None:
        residual = check_invariant_sets(scenario, initial)
        if residual > 1e-6:
            raise PreconditionError(
                f"initial subfield is not invariant; residual {residual}")
    sets = {}
    results = {}
    for members in scenario.classes():
        root = members[0]
        C0 = initial[root] if initial is not None else whole_space(scenario.spaces[root])
        res = _minimal_engine(scenario, root, C0, rounds)
        results[root] = res
        transport, _ = spanning_transport(scenario, root)
        for w in members:
            sets[w] = transport_convex_set(transport[w], res.current)
    return sets, results


# ---------------------------------------------------------------------------
# stabilized-set profiles


def _euclidean_set_profile(space, C):
    hs = list(C.halfspaces)
    used = [False] * len(hs)
    equalities = []
    leftovers = []
    for i, (u, c) in enumerate(hs):
        if used[i]:
            continue
        used[i] = True
        paired = False
        for j in range(i + 1, len(hs)):
            if used[j]:
                continue
            u2, c2 = hs[j]
            if np.linalg.norm(u + u2) <= 1e-9 and abs(c + c2) <= 1e-9:
                used[j] = True
                equalities.append((u, c))
                paired = True
                break
        if not paired:
            leftovers.append((u, c))
    zero_balls = [b for b in C.balls if b[1] <= 1e-12]
    if zero_balls:
        return {"kind": "point", "point": zero_balls[0][0]}
    if C.balls:
        return {"kind": "bounded"}
    if leftovers:
        anchor = project_convex(space, C, np.zeros(space.dim))
        far = [project_convex(space, C, q) for q in _fan_points(space, anchor, 1e6)]
        if max(float(np.linalg.norm(np.asarray(q) - anchor)) for q in far) < 1e5:
            return {"kind": "bounded"}
        return {"kind": "other"}
    if not equalities:
        return {"kind": "affine", "base": np.zeros(space.dim),
                "frame": np.eye(space.dim)}
    normals = np.array([u for u, _ in equalities])
    rhs = np.array([c for _, c in equalities])
    base, *_ = np.linalg.lstsq(normals, rhs, rcond=None)
    frame = null_space(normals).T
    if frame.shape[0] == 0:
        return {"kind": "point", "point": base}
    return {"kind": "affine", "base": base, "frame": frame}


def _subtree_set_profile(space, C):
    intervals = {cid: (lo, hi) for cid, (lo, hi) in C.intervals.items()
                 if hi - lo > 1e-9 or hi == math.inf}
    degenerate = {cid: iv for cid, iv in C.intervals.items() if cid not in intervals}
    if not intervals:
        cid, (lo, _) = sorted(degenerate.items())[0]
        return {"kind": "point", "point": canonical_point(space, TreePoint(cid, lo))}
    ends = [cid for cid, (lo, hi) in intervals.items() if hi == math.inf]
    branching = False
    for v in space.vertices:
        degree = 0
        for cid, role in space.incidence[v]:
            if cid not in intervals:
                continue
            lo, hi = intervals[cid]
            length = space.carrier_length(cid)
            at = 0.0 if role in ("tail", "base") else length
            if lo - 1e-9 <= at <= hi + 1e-9:
                # carrier extends away from the vertex inside C
                if at == 0.0 and hi > 1e-9:
                    degree += 1
                elif at > 0.0 and lo < at - 1e-9:
                    degree += 1
        if degree >= 3:
            branching = True
    if branching or len(ends) >= 3:
        return {"kind": "branching", "ends": sorted(ends)}
    if len(ends) == 2:
        return {"kind": "line"}
    if len(ends) == 1:
        return {"kind": "halfline", "end": ends[0]}
    return {"kind": "bounded"}


def _set_profile(space, C):
    if isinstance(C, ProductSet):
        return {"kind": "product",
                "left": _set_profile(space.left, C.left),
                "right": _set_profile(space.right, C.right)}
    if isinstance(C, SubtreeSet):
        return _subtree_set_profile(space, C)
    return _euclidean_set_profile(space, C)


def _set_circumcenter_point(space, C, x0):
    probes = _set_probe_points(space, C, x0, radii=(1.0, 2.0, 4.0))
    center, _ = circumcenter(space, probes)
    return project_convex(space, C, center)


# ---------------------------------------------------------------------------
# convex sublevel sets (for the measure branch)


class _NotRepresentable(Exception):
    pass


def _convex_sublevel_set(space, f, level, reach):
    """``{f <= level}`` within the set grammar, for the function shapes the
    Busemann machinery produces (affine on Euclidean factors, piecewise linear
    on trees, single-factor dependence on products)."""
    if isinstance(space, Euclidean):
        x0 = np.zeros(space.dim)
        h = 1e-5
        grad = np.array([(f(x0 + h * e) - f(x0 - h * e)) / (2 * h)
                         for e in np.eye(space.dim)])
        f0 = f(x0)
        rng = np.random.default_rng(5)
        for _ in range(6):
            probe = rng.normal(scale=3.0, size=space.dim)
            if abs(f(probe) - f0 - float(grad @ probe)) > 1e-6 * max(1.0, abs(f0)):
                raise _NotRepresentable("euclidean component is not affine")
        n = float(np.linalg.norm(grad))
        if n <= 1e-12:
            raise _NotRepresentable("constant component has no shrinking sublevels")
        return HalfspaceBallSet(halfspaces=((grad, level - f0),))
    if isinstance(space, Tree):
        intervals = {}
        for cid in list(space.edges) + list(space.rays):
            length = space.carrier_length(cid)
            hi_eff = length if length < math.inf else reach + 64.0
            xs = np.linspace(0.0, hi_eff, 65)
            vals = [f(canonical_point(space, TreePoint(cid, float(s)))) for s in xs]
            inside = [s for s, v in zip(xs, vals) if v <= level + 1e-12]
            if not inside:
                continue
            a, b = float(min(inside)), float(max(inside))
            step = xs[1] - xs[0]
            a = _bisect_edge(space, lambda p: f(p) - level + 0.0, cid,
                             a, max(0.0, a - step), 0.0, low_side=True) if a > 0 else 0.0
            if length == math.inf and b >= hi_eff - step - 1e-9:
                b = math.inf
            elif b < hi_eff:
                b = _bisect_edge(space, lambda p: f(p) - level + 0.0, cid,
                                 b, min(hi_eff, b + step), 0.0, low_side=False)
            intervals[cid] = (a, b)
        if not intervals:
            return EMPTY
        return SubtreeSet(intervals)
    # products: representable when the function depends on one factor only
    x0 = ProductPoint(base_point(space.left), base_point(space.right))
    rngl = np.random.default_rng(11)
    lvar = max(abs(f(ProductPoint(sample_point(space.left, rngl), x0.right)) - f(x0))
               for _ in range(4))
    rngr = np.random.default_rng(12)
    rvar = max(abs(f(ProductPoint(x0.left, sample_point(space.right, rngr))) - f(x0))
               for _ in range(4))
    if rvar <= 1e-9:
        inner = _convex_sublevel_set(space.left,
                                     lambda a: f(ProductPoint(a, x0.right)),
                                     level, reach)
        return ProductSet(inner, whole_space(space.right))
    if lvar <= 1e-9:
        inner = _convex_sublevel_set(space.right,
                                     lambda b: f(ProductPoint(x0.left, b)),
                                     level, reach)
        return ProductSet(whole_space(space.left), inner)
    raise _NotRepresentable("mixed product dependence is outside the set grammar")


def _field_sublevel_family(space, f, anchor, C):
    f0 = f(anchor)

    def sampler(beta):
        sub = _convex_sublevel_set(space, f, f0 - beta, reach=beta)
        if isinstance(sub, EmptySet):
            return EMPTY
        return intersect_sets(space, C, sub)

    try:
        sampler(1.0)
    except _NotRepresentable:
        return None
    return family_from_levels(sampler)


# ---------------------------------------------------------------------------
# dichotomy pipeline


@dataclass(eq=False)
class ClassOutcome:
    members: tuple
    kind: str                 # boundary_section | invariant_flat | incomplete
    section: dict = None
    flats: dict = None
    dim: int = None
    residual: float = None
    reason: str = None
    branch: str = None
    trace: list = field(default_factory=list)


@dataclass(eq=False)
class DichotomyResult:
    scenario: FieldScenario
    outcomes: list

    @property
    def kind(self):
        kinds = {o.kind for o in self.outcomes}
        return kinds.pop() if len(kinds) == 1 else "mixed"

    @property
    def section(self):
        merged = {}
        for o in self.outcomes:
            if o.section:
                merged.update(o.section)
        return merged

    @property
    def flats(self):
        merged = {}
        for o in self.outcomes:
            if o.flats:
                merged.update(o.flats)
        return merged

    @property
    def dim(self):
        dims = {o.dim for o in self.outcomes if o.dim is not None}
        return dims.pop() if len(dims) == 1 else None

    @property
    def residual(self):
        vals = [o.residual for o in self.outcomes if o.residual is not None]
        return max(vals) if vals else None

    @property
    def trace(self):
        out = []
        for o in self.outcomes:
            out.extend(o.trace)
        return out


def _point_flat(space, p):
    if isinstance(space, Euclidean):
        return EuclideanFlat(np.asarray(p, float), np.zeros((0, space.dim)))
    if isinstance(space, Tree):
        q = canonical_point(space, p)
        return SubtreeFlat(SubtreeSet({q.carrier: (q.offset, q.offset)}), 0)
    return ProductFlat(_point_flat(space.left, p.left),
                       _point_flat(space.right, p.right))


def _route_from_profile(scenario, root, space, C, profile, x0, trace):
    """Turn a stabilized-set profile into a flat, a boundary point, or a
    request for the measure branch."""
    kind = profile["kind"]
    if kind == "point":
        return ("flat", _point_flat(space, profile.get("point",
                                                       project_convex(space, C, x0))))
    if kind == "affine":
        frame = profile["frame"]
        if frame.shape[0] == 0:
            return ("flat", _point_flat(space, profile["base"]))
        return ("flat", EuclideanFlat(profile["base"], frame))
    if kind == "bounded":
        return ("flat", _point_flat(space, _set_circumcenter_point(space, C, x0)))
    if kind == "line":
        return ("flat", SubtreeFlat(C, 1))
    if kind == "halfline":
        return ("section", TreeEnd(profile["end"]))
    if kind == "branching":
        return ("measure", TreeEnd(profile["ends"][0]) if profile["ends"] else None)
    if kind == "product":
        lroute = _route_from_profile(scenario, root, space.left, C.left,
                                     profile["left"], x0.left, trace)
        rroute = _route_from_profile(scenario, root, space.right, C.right,
                                     profile["right"], x0.right, trace)
        if lroute[0] == "incomplete":
            return lroute
        if rroute[0] == "incomplete":
            return rroute
        if lroute[0] == "section":
            return ("section", JoinPoint(0.0, lroute[1], None))
        if rroute[0] == "section":
            return ("section", JoinPoint(math.pi / 2.0, None, rroute[1]))
        if lroute[0] == "measure" or rroute[0] == "measure":
            hint = None
            if rroute[0] == "measure" and rroute[1] is not None:
                hint = JoinPoint(math.pi / 2.0, None, rroute[1])
            elif lroute[0] == "measure" and lroute[1] is not None:
                hint = JoinPoint(0.0, lroute[1], None)
            return ("measure", hint)
        return ("flat", ProductFlat(lroute[1], rroute[1]))
    return ("incomplete", f"unclassifiable stabilized set of kind {kind!r}")


def _analyze_from(scenario, root, C, trace, depth):
    tol = scenario.tolerances
    space = scenario.spaces[root]
    if depth > tol.recursion_depth:
        return ("incomplete", "recursion depth exhausted")
    engine = _minimal_engine(scenario, root, C, tol.rounds)
    trace.extend({"stage": f"shrink[{depth}]", **entry} for entry in engine.rounds)
    if engine.status == "escape":
        trace.append({"stage": "branch", "branch": "escape_boundary_section"})
        xi = limit_circumcenter(space, engine.family, engine.anchor,
                                horizon=tol.horizon)
        return ("section", xi, "escape")
    if engine.status == "indeterminate":
        return ("incomplete", "shrinking rounds exhausted without stabilization or escape")
    if engine.point is not None:
        trace.append({"stage": "branch", "branch": "fixed_point_flat"})
        return ("flat", _point_flat(space, engine.point), "fixed_point")
    return _resolve_stabilized(scenario, root, engine.current, trace, depth)


def _resolve_stabilized(scenario, root, C, trace, depth):
    space = scenario.spaces[root]
    x0 = base_point(space)
    profile = _set_profile(space, C)
    route = _route_from_profile(scenario, root, space, C, profile, x0, trace)
    if route[0] == "flat":
        trace.append({"stage": "branch", "branch": "flat_split_decomposition",
                      "dim": flat_dim(route[1])})
        return ("flat", route[1], "flat_split")
    if route[0] == "section":
        trace.append({"stage": "branch", "branch": "orthogonal_flat_section"})
        return ("section", route[1], "orthogonal_flat")
    if route[0] == "measure":
        trace.append({"stage": "branch", "branch": "measure_busemann"})
        return _resolve_with_measure(scenario, root, C, route[1], trace, depth)
    return ("incomplete", route[1])


def _resolve_with_measure(scenario, root, C, hint, trace, depth):
    tol = scenario.tolerances
    space = scenario.spaces[root]
    members = scenario.class_of(root)
    if scenario.measures is not None and all(w in scenario.measures for w in members):
        measures = {w: scenario.measures[w] for w in members}
    else:
        if hint is None:
            return ("incomplete", "no invariant measure obtainable: no boundary hint")
        averaged = orbit_average_measure(scenario, root, hint)
        if isinstance(averaged, OrbitMeasureFailure):
            return ("incomplete",
                    f"no invariant measure obtainable: orbit exceeded "
                    f"{averaged.limit} elements; supply one in the scenario")
        measures = averaged
    try:
        fld = quasi_invariant_busemann_field(scenario, measures)
    except PreconditionError as exc:
        return ("incomplete", f"no invariant measure obtainable: {exc}")
    anchor = project_convex(space, C, base_point(space))
    f = fld.functions[root]

    def f_on_c(x):
        return f(project_convex(space, C, x))

    status = classify_convex_function(space, f_on_c, anchor)
    trace.append({"stage": "classify_inf", "tag": status.tag,
                  "min_value": None if status.min_value == -math.inf else status.min_value})
    if status.tag == "min_attained":
        if status.argmin is None:
            return ("incomplete", "argmin set unavailable for recursion")
        shrunk = intersect_sets(space, status.argmin, C)
        if isinstance(shrunk, EmptySet):
            return ("incomplete", "argmin set missed the current subfield")
        probes = _set_probe_points(space, C, base_point(space))
        if not _proper_shrink(space, shrunk, C, probes):
            return ("incomplete", "minimum attained but the subfield stopped shrinking")
        return _analyze_from(scenario, root, shrunk, trace, depth + 1)
    if status.tag in ("inf_minus_infinity", "inf_finite"):
        family = _field_sublevel_family(space, f, anchor, C)
        if family is None:
            return ("incomplete",
                    "sublevel family is outside the set grammar (mixed product measure)")
        xi = limit_circumcenter(space, family, anchor, horizon=tol.horizon)
        trace.append({"stage": "branch", "branch": "sublevel_boundary_section"})
        return ("section", xi, "sublevel_limit")
    return ("incomplete", "indeterminate infimum classification")


def _class_edges_residual_section(scenario, members, section):
    worst = 0.0
    for e in scenario.class_edges(members):
        moved = extend_to_boundary(e.iso, section[e.source])
        worst = max(worst, tits_angle(scenario.spaces[e.target], moved,
                                      section[e.target]))
    return worst


def _class_edges_residual_flats(scenario, members, flats):
    sub = FieldScenario(omega=tuple(members),
                        spaces={w: scenario.spaces[w] for w in members},
                        edges=tuple(scenario.class_edges(members)),
                        measures=None, tolerances=scenario.tolerances,
                        seed=scenario.seed)
    return check_invariant_flats(sub, flats)


def dichotomy(scenario):
    """Run the full analyzer: per class, either an invariant boundary section
    or an invariant flat subfield, certified independently, or an explicit
    incomplete record."""
    outcomes = []
    for members in scenario.classes():
        root = members[0]
        trace = [{"stage": "class", "members": list(members)}]
        route = _analyze_from(scenario, root, whole_space(scenario.spaces[root]),
                              trace, depth=0)
        transport, _ = spanning_transport(scenario, root)
        if route[0] == "section":
            xi = route[1]
            section = {w: extend_to_boundary(transport[w], xi) for w in members}
            residual = _class_edges_residual_section(scenario, members, section)
            if residual > 1e-5:
                outcomes.append(ClassOutcome(
                    members, "incomplete", reason=(
                        f"boundary-section certificate failed: residual {residual}"),
                    trace=trace))
                continue
            outcomes.append(ClassOutcome(members, "boundary_section",
                                         section=section, residual=residual,
                                         branch=route[2], trace=trace))
        elif route[0] == "flat":
            flat = route[1]
            flats = {w: transport_flat(transport[w], flat) for w in members}
            residual = _class_edges_residual_flats(scenario, members, flats)
            if residual > 1e-6:
                outcomes.append(ClassOutcome(
                    members, "incomplete",
                    reason=f"flat certificate failed: residual {residual}",
                    trace=trace))
                continue
            outcomes.append(ClassOutcome(members, "invariant_flat", flats=flats,
                                         dim=flat_dim(flat), residual=residual,
                                         branch=route[2], trace=trace))
        else:
            outcomes.append(ClassOutcome(members, "incomplete", reason=route[1],
                                         trace=trace))
    return DichotomyResult(scenario, outcomes)
