"""
Bucket Brigade - Three Workers, Constant Velocities
===================================================
With n = 3 and constant velocities the reset map only depends on
r1 = v1/v3 and r2 = v2/v3 and is piecewise affine on four cells of the
triangle 0 <= x <= y <= 1:

    a = x + (1 - y) r2          (where worker 2 would be when worker 3 finishes)
    b = (1 - y) r1              (where worker 1 would be)

    C1  1 <= a and 1 <= b       -> (1, 1)
    C2  b < 1 <= a              -> (r1 (1 - y), 1)
    C3  a < 1 and a < b         -> (a, a)
    C4  b <= a < 1              -> (r1 (1 - y), a)

This module holds the map, the parameter regions, the constants theta, phi,
alpha and p*, the Region-2 two-cycle and stable segment, the Region-3
classifier and the set Sigma.
"""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from brigade_core import BrigadeConfig
from errors import ConfigError, DegenerateParams, StateError
from geometry import convex_hull, in_convex_polygon, on_segment
from numerics import ONE, ZERO, Ordering, QuadraticReal, as_rational, format_rational, quad_compare

logger = logging.getLogger(__name__)

SIGMA_GRID_DENOMINATOR = 4096


# ============================================================================
# PARAMETERS AND STATES
# ============================================================================

@dataclass(frozen=True)
class ThreeWorkerParams:
    r1: object
    r2: object

    def __post_init__(self):
        r1, r2 = as_rational(self.r1), as_rational(self.r2)
        if r1 <= 0 or r2 <= 0:
            raise ConfigError(f"r1 and r2 must be positive, got ({r1}, {r2})")
        object.__setattr__(self, "r1", r1)
        object.__setattr__(self, "r2", r2)

    @classmethod
    def from_velocities(cls, velocities):
        velocities = tuple(as_rational(v) for v in velocities)
        if len(velocities) != 3:
            raise ConfigError(f"three velocities expected, got {len(velocities)}")
        if any(v <= 0 for v in velocities):
            raise ConfigError("velocities must be positive")
        v1, v2, v3 = velocities
        return cls(v1 / v3, v2 / v3)

    def to_config(self):
        return BrigadeConfig.from_velocities((self.r1, self.r2, ONE))

    def to_dict(self):
        return {"r1": format_rational(self.r1), "r2": format_rational(self.r2)}


def as_state(s):
    """(x, y) with 0 <= x <= y <= 1, as mpq"""
    try:
        x, y = s
    except (TypeError, ValueError):
        raise StateError(f"expected an (x, y) pair, got {s!r}") from None
    x, y = as_rational(x), as_rational(y)
    if not 0 <= x <= y <= 1:
        raise StateError(f"({x}, {y}) is outside 0 <= x <= y <= 1")
    return (x, y)


def format_pair(s):
    return [str(c) if isinstance(c, QuadraticReal) else format_rational(c) for c in s]


# ============================================================================
# CELLS AND AFFINE PIECES
# ============================================================================

class Cell(enum.Enum):
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"


@dataclass(frozen=True)
class AffinePiece:
    """s -> M s + c on one cell"""

    cell: Cell
    matrix: tuple
    offset: tuple

    def apply(self, s):
        (m00, m01), (m10, m11) = self.matrix
        x, y = s
        return (m00 * x + m01 * y + self.offset[0], m10 * x + m11 * y + self.offset[1])

    @property
    def determinant(self):
        (m00, m01), (m10, m11) = self.matrix
        return m00 * m11 - m01 * m10


def affine_piece(p, cell):
    r1, r2 = p.r1, p.r2
    if cell is Cell.C1:
        return AffinePiece(cell, ((ZERO, ZERO), (ZERO, ZERO)), (ONE, ONE))
    if cell is Cell.C2:
        return AffinePiece(cell, ((ZERO, -r1), (ZERO, ZERO)), (r1, ONE))
    if cell is Cell.C3:
        return AffinePiece(cell, ((ONE, -r2), (ONE, -r2)), (r2, r2))
    return AffinePiece(cell, ((ZERO, -r1), (ONE, -r2)), (r1, r2))


def pieces(p):
    return {cell: affine_piece(p, cell) for cell in Cell}


def classify_cell(p, s):
    x, y = as_state(s)
    a = x + (1 - y) * p.r2
    b = (1 - y) * p.r1
    if a >= 1:
        return Cell.C1 if b >= 1 else Cell.C2
    return Cell.C3 if a < b else Cell.C4


def reset_map3(p, s):
    s = as_state(s)
    x, y = s
    cell = classify_cell(p, s)
    if cell is Cell.C1:
        return (ONE, ONE)
    if cell is Cell.C2:
        return (p.r1 * (1 - y), ONE)
    a = x + p.r2 * (1 - y)
    if cell is Cell.C3:
        return (a, a)
    return (p.r1 * (1 - y), a)


# Worker pairs standing together when worker 3 finishes, for a state in the
# interior of each cell. (1, 2) means worker 1 caught worker 2.
_BLOCKING = {
    Cell.C1: (frozenset({(1, 2), (2, 3)}), "workers 1 and 2 both catch worker 3"),
    Cell.C2: (frozenset({(2, 3)}), "worker 2 catches worker 3, worker 1 stays free"),
    Cell.C3: (frozenset({(1, 2)}), "worker 1 catches worker 2, who never reaches worker 3"),
    Cell.C4: (frozenset(), "nobody catches anybody before the finish"),
}


def cell_blocking_pattern(cell):
    """(pairs together at the finish, description) for a cell"""
    return _BLOCKING[cell]


# ============================================================================
# REGIONS AND DERIVED CONSTANTS
# ============================================================================

class Region(enum.Enum):
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"
    RK = "RK"


def region_of(p):
    if p.r1 <= 1:
        return Region.R1 if p.r2 <= p.r1 + 1 else Region.R2
    return Region.R3 if p.r2 > 1 else Region.RK


def theta(p):
    den = p.r1 * p.r2 - 1
    if den == 0:
        raise DegenerateParams("theta is undefined when r1 * r2 = 1")
    return p.r1 * (p.r2 - 1) / den


def phi(p):
    den = p.r1 * p.r2 - 1
    if den == 0:
        raise DegenerateParams("phi is undefined when r1 * r2 = 1")
    return p.r2 * (p.r1 - 1) / den


def p_star(p):
    total = p.r1 + p.r2 + 1
    return (p.r1 / total, (p.r1 + p.r2) / total)


def alpha(p):
    """
    The y with f(0, y) = (1 - 1/r1, 1 - 1/r1); only defined for r1 > r2 > 1.
    Returns None outside that domain.
    """
    if not (p.r1 > p.r2 > 1):
        return None
    value = 1 - (1 - 1 / p.r1) / p.r2
    target = 1 - 1 / p.r1
    if reset_map3(p, (ZERO, value)) != (target, target):
        raise DegenerateParams(f"alpha = {value} does not map to ({target}, {target})")
    return value


@dataclass(frozen=True)
class DerivedConstants:
    theta: object
    phi: object
    alpha: object
    p_star: tuple
    region: Region

    def to_dict(self):
        def fmt(q):
            return None if q is None else format_rational(q)
        return {
            "theta": fmt(self.theta),
            "phi": fmt(self.phi),
            "alpha": fmt(self.alpha),
            "p_star": format_pair(self.p_star),
            "region": self.region.value,
        }


def derived_constants(p):
    degenerate = p.r1 * p.r2 == 1
    return DerivedConstants(
        theta=None if degenerate else theta(p),
        phi=None if degenerate else phi(p),
        alpha=alpha(p),
        p_star=p_star(p),
        region=region_of(p),
    )


# ============================================================================
# ASYMPTOTIC BEHAVIOR
# ============================================================================

class BehaviorKind(enum.Enum):
    FIXED_POINT = "FixedPoint"
    STANDARD_THREE_CYCLE = "StandardThreeCycle"
    OTHER_THREE_CYCLE = "OtherThreeCycle"
    TWO_CYCLE = "TwoCycle"
    CERTIFIED_CYCLE = "CertifiedCycle"
    UNRESOLVED = "Unresolved"


@dataclass
class AsymptoticBehavior:
    kind: BehaviorKind
    period: int = None
    transient: int = None
    budget: int = None
    witness_states: list = field(default_factory=list)
    certificate: object = None

    @property
    def label(self):
        if self.kind is BehaviorKind.CERTIFIED_CYCLE:
            return f"CertifiedCycle({self.period})"
        if self.kind is BehaviorKind.UNRESOLVED:
            return f"Unresolved({self.budget})"
        return self.kind.value

    def to_dict(self):
        record = {
            "tag": self.kind.value,
            "label": self.label,
            "period": self.period,
            "transient": self.transient,
            "witness_states": [format_pair(s) for s in self.witness_states],
        }
        if self.kind is BehaviorKind.UNRESOLVED:
            record["budget"] = self.budget
        if self.certificate is not None:
            record["certificate"] = self.certificate.to_dict()
        return record


def standard_cycle_states():
    """(1,1) -> (0,1) -> (0,0) -> (1,1) in every Region-3 configuration"""
    return [(ONE, ONE), (ZERO, ONE), (ZERO, ZERO)]


def other_cycle_states(p):
    """Traversal order of the map: (0,θ) -> (φ,φ) -> (θ,1) -> (0,θ)"""
    t, f = theta(p), phi(p)
    return [(ZERO, t), (f, f), (t, ONE)]


# ============================================================================
# REGION 2
# ============================================================================

def _require_region(p, region):
    actual = region_of(p)
    if actual is not region:
        raise DegenerateParams(f"requires {region.value} parameters, got {actual.value} "
                               f"for r = ({format_rational(p.r1)}, {format_rational(p.r2)})")


def region2_two_cycle(p):
    """(s_a, s_b) with f(s_a) = s_b and f(s_b) = s_a"""
    _require_region(p, Region.R2)
    q = p.r1 / (p.r1 + 1)
    s_a, s_b = (q, ONE), (ZERO, q)
    if reset_map3(p, s_a) != s_b or reset_map3(p, s_b) != s_a:
        raise DegenerateParams("two-cycle states do not alternate")
    return s_a, s_b


@dataclass(frozen=True)
class C4Spectrum:
    """Roots of λ² + r2 λ + r1, the characteristic polynomial of the C4 matrix"""

    trace: object
    determinant: object
    discriminant: object
    roots: tuple = None

    @property
    def is_real(self):
        return self.roots is not None


def c4_eigenvalues(p):
    disc = p.r2 * p.r2 - 4 * p.r1
    spectrum = dict(trace=-p.r2, determinant=p.r1, discriminant=disc)
    if disc < 0:
        return C4Spectrum(**spectrum)
    half = -p.r2 / 2
    roots = (QuadraticReal(half, -ONE / 2, disc), QuadraticReal(half, ONE / 2, disc))
    return C4Spectrum(roots=roots, **spectrum)


def c4_eigen_escape(p):
    """True if both C4 eigenvalues have modulus > 1 (requires r1 > r2 >= 1)"""
    if not (p.r1 > p.r2 >= 1):
        raise DegenerateParams("eigen-escape needs r1 > r2 >= 1")
    spectrum = c4_eigenvalues(p)
    if not spectrum.is_real:
        # complex pair: |λ|² = λ·conj(λ) = r1
        return spectrum.determinant > 1
    return all(quad_compare(abs(root), ONE) is Ordering.GT for root in spectrum.roots)


@dataclass(frozen=True)
class StableSegment:
    """
    Open segment p* ± τ·v along the stable eigenvector v = (r1, -λ).
    Every point maps to p* + λ(s - p*), so the segment is invariant.
    """

    params: ThreeWorkerParams
    eigenvalue: QuadraticReal
    direction: tuple
    half_length: QuadraticReal
    midpoint: tuple

    @property
    def low(self):
        return self.point_at(-1)

    @property
    def high(self):
        return self.point_at(1)

    def point_at(self, u):
        """p* + u τ v for rational u in [-1, 1]"""
        t = self.half_length * as_rational(u)
        return (t * self.direction[0] + self.midpoint[0], t * self.direction[1] + self.midpoint[1])

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "eigenvalue": self.eigenvalue.to_dict(),
            "midpoint": format_pair(self.midpoint),
            "low": [c.to_dict() for c in self.low],
            "high": [c.to_dict() for c in self.high],
        }


def region2_stable_segment(p):
    _require_region(p, Region.R2)
    spectrum = c4_eigenvalues(p)
    lam = spectrum.roots[1]
    if quad_compare(abs(lam), ONE) is not Ordering.LT:
        raise DegenerateParams(f"no stable C4 eigenvalue: {lam}")

    mid = p_star(p)
    direction = (QuadraticReal(p.r1), -lam)
    r1, r2 = p.r1, p.r2

    # strict constraints g0 + gx*x + gy*y > 0 cutting out the interior of C4
    constraints = [
        (1 - r2, -ONE, r2),       # a < 1
        (r2 - r1, ONE, r1 - r2),  # b < a
        (ZERO, ONE, ZERO),        # x > 0
        (ZERO, -ONE, ONE),        # x < y
        (ONE, ZERO, -ONE),        # y < 1
    ]

    t_lo, t_hi = None, None
    for g0, gx, gy in constraints:
        at_mid = g0 + gx * mid[0] + gy * mid[1]
        slope = direction[0] * gx + direction[1] * gy
        if slope.sign() == 0:
            continue
        bound = QuadraticReal(-at_mid) / slope
        if slope.sign() > 0:
            t_lo = bound if t_lo is None or bound > t_lo else t_lo
        else:
            t_hi = bound if t_hi is None or bound < t_hi else t_hi

    half_length = min(-t_lo, t_hi)
    segment = StableSegment(p, lam, direction, half_length, mid)
    logger.debug("stable segment at r=(%s, %s): λ=%s τ=%s", r1, r2, lam, half_length)
    return segment


# ============================================================================
# REGION 3
# ============================================================================

def region3_return_map(p, y):
    """f³(0, y) = (0, θ + (y − θ) r1 r2) along the C3, C2, C4 itinerary"""
    t = theta(p)
    return (ZERO, t + (as_rational(y) - t) * p.r1 * p.r2)


def classify_region3(p, s0, budget):
    """
    Asymptotic behavior for r1 > r2 >= 1.

    Iterates until the orbit hits the line x = 0, then decides with the
    three-step recurrence instead of further iteration. `transient` counts
    the steps until the orbit is on its limit cycle.
    """
    if not (p.r1 > p.r2 >= 1):
        raise DegenerateParams("classify_region3 needs r1 > r2 >= 1")

    s = as_state(s0)
    target = p_star(p)
    steps = 0

    def unresolved():
        logger.info("region 3 classification unresolved after %d steps", budget)
        return AsymptoticBehavior(BehaviorKind.UNRESOLVED, budget=budget, witness_states=[s])

    if s == target:
        return AsymptoticBehavior(BehaviorKind.FIXED_POINT, period=1, transient=0, witness_states=[target])

    while s[0] != 0:
        if steps >= budget:
            return unresolved()
        s = reset_map3(p, s)
        steps += 1
        if s == target:
            return AsymptoticBehavior(BehaviorKind.FIXED_POINT, period=1, transient=steps,
                                      witness_states=[target])

    y = s[1]
    standard = standard_cycle_states()

    if p.r2 == 1:
        # θ = φ = 0: (0, y) always falls into the standard cycle
        while s not in standard:
            if steps >= budget:
                return unresolved()
            s = reset_map3(p, s)
            steps += 1
        return AsymptoticBehavior(BehaviorKind.STANDARD_THREE_CYCLE, period=3,
                                  transient=steps, witness_states=standard)

    t = theta(p)
    if y == t:
        return AsymptoticBehavior(BehaviorKind.OTHER_THREE_CYCLE, period=3, transient=steps,
                                  witness_states=other_cycle_states(p))

    if s in standard:
        return AsymptoticBehavior(BehaviorKind.STANDARD_THREE_CYCLE, period=3, transient=steps,
                                  witness_states=standard)

    floor = 1 - 1 / p.r2
    a = alpha(p)
    z = y
    if z < t:
        while z > floor:
            if steps + 3 > budget:
                return unresolved()
            z = region3_return_map(p, z)[1]
            steps += 3
        steps += 1                      # f(0, z) = (1, 1)
    else:
        while z < a:
            if steps + 3 > budget:
                return unresolved()
            z = region3_return_map(p, z)[1]
            steps += 3
        steps += 2                      # (0, z) -> (w, w) -> (1, 1)

    if steps > budget:
        return unresolved()
    return AsymptoticBehavior(BehaviorKind.STANDARD_THREE_CYCLE, period=3, transient=steps,
                              witness_states=standard)


# ============================================================================
# THE INVARIANT SET SIGMA (1 < r1 < r2)
# ============================================================================

@dataclass(frozen=True)
class SigmaSet:
    params: ThreeWorkerParams
    vertices: dict
    hulls: tuple
    excluded: tuple

    @classmethod
    def build(cls, p):
        if not (1 < p.r1 < p.r2):
            raise DegenerateParams("Sigma is defined for 1 < r1 < r2")
        t = theta(p)
        k = p.r1 * (1 - t)
        v = {
            "A": (ZERO, k),
            "B": (k, k),
            "C": (t, t),
            "D": (t / p.r1, t),
            "E": (t, ONE),
            "F": (k, ONE),
            "G": (ZERO, t),
            "H": (ZERO, 1 - 1 / p.r2),
        }
        hulls = (
            convex_hull([v["A"], v["B"], v["C"], v["D"], v["H"]]),
            convex_hull([v["E"], v["F"], v["G"], v["H"], v["D"]]),
        )
        excluded = tuple((v[a], v[b]) for a, b in (("A", "B"), ("C", "D"), ("D", "E"), ("F", "G")))
        return cls(p, v, hulls, excluded)

    def vertices_dict(self):
        return {name: format_pair(point) for name, point in self.vertices.items()}


def sigma_contains(sig, s):
    s = (as_rational(s[0]), as_rational(s[1]))
    if not any(in_convex_polygon(hull, s) for hull in sig.hulls):
        return False
    return not any(on_segment(a, b, s) for a, b in sig.excluded)


@dataclass
class RelationResult:
    name: str
    holds: bool
    images: dict

    def to_dict(self):
        return {"relation": self.name, "holds": self.holds,
                "images": {k: format_pair(v) for k, v in self.images.items()}}


@dataclass
class SigmaReport:
    params: ThreeWorkerParams
    sigma: SigmaSet
    relations: list
    samples: list
    violations: int
    first_violation: tuple = None
    seed: int = 0

    @property
    def relations_hold(self):
        return all(r.holds for r in self.relations)

    @property
    def passed(self):
        return self.relations_hold and self.violations == 0

    def to_dict(self):
        record = {
            "params": self.params.to_dict(),
            "vertices": self.sigma.vertices_dict(),
            "relations": [r.to_dict() for r in self.relations],
            "sample_count": len(self.samples),
            "seed": self.seed,
            "violations": self.violations,
            "passed": self.passed,
        }
        if self.first_violation is not None:
            point, image = self.first_violation
            record["first_violation"] = {"point": format_pair(point), "image": format_pair(image)}
        return record


def _vertex_relations(p, sig):
    v = sig.vertices
    f = {name: reset_map3(p, point) for name, point in v.items()}
    return [
        RelationResult("f(A) = f(B) = E", f["A"] == v["E"] and f["B"] == v["E"],
                       {"f(A)": f["A"], "f(B)": f["B"]}),
        RelationResult("f(C) = f(D) = F", f["C"] == v["F"] and f["D"] == v["F"],
                       {"f(C)": f["C"], "f(D)": f["D"]}),
        RelationResult("f(E) = G", f["E"] == v["G"], {"f(E)": f["E"]}),
        RelationResult("f(F) = A", f["F"] == v["A"], {"f(F)": f["F"]}),
        RelationResult("f(G) in [A,B]", on_segment(v["A"], v["B"], f["G"]), {"f(G)": f["G"]}),
        RelationResult("f(H) in (E,F)", on_segment(v["E"], v["F"], f["H"], closed=False),
                       {"f(H)": f["H"]}),
    ]


def sample_sigma(sig, count, seed, denominator=SIGMA_GRID_DENOMINATOR):
    """Deterministic rejection sampling of Sigma on the grid (i/N, j/N)"""
    rng = np.random.default_rng(seed)
    accepted = []
    attempts = 0
    limit = max(1000, 1000 * count)
    while len(accepted) < count:
        if attempts >= limit:
            raise DegenerateParams(f"only {len(accepted)} of {count} Sigma samples after {attempts} draws")
        draws = rng.integers(0, denominator + 1, size=(max(64, 2 * count), 2))
        for i, j in draws:
            attempts += 1
            point = (as_rational(int(i)) / denominator, as_rational(int(j)) / denominator)
            if point[0] <= point[1] and sigma_contains(sig, point):
                accepted.append(point)
                if len(accepted) == count:
                    break
    return accepted


def sigma_invariance_check(p, sample_count, seed):
    """
    Check f(Sigma) ⊆ Sigma on seeded samples and evaluate the vertex relations
    exactly. Violations are reported, never assumed away.
    """
    sig = SigmaSet.build(p)
    relations = _vertex_relations(p, sig)

    samples = []
    violations = 0
    first = None
    for point in sample_sigma(sig, sample_count, seed):
        image = reset_map3(p, point)
        inside = sigma_contains(sig, image)
        samples.append((point, image, inside))
        if not inside:
            violations += 1
            if first is None:
                first = (point, image)

    for relation in relations:
        if not relation.holds:
            logger.warning("Sigma vertex relation fails: %s %s", relation.name,
                           {k: format_pair(s) for k, s in relation.images.items()})
    if violations:
        logger.warning("%d of %d Sigma samples leave Sigma", violations, len(samples))

    return SigmaReport(p, sig, relations, samples, violations, first, seed)
