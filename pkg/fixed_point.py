"""
Bucket Brigade - Fixed Points
=============================
* closed form for constant velocities: (v1, v1+v2, ..., v1+...+v_{n-1}) / sum(v)
* exact verification: reset_map(s) == s
* grid scan for arbitrary profiles: evaluate the displacement f(s) - s on a
  lattice of the simplex, refine promising cells by grid shrinking and polish
  each refinement into an exact candidate through the local affine piece
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, product

from brigade_core import ResetState, reset_map
from errors import ConfigError, DenominatorCapExceeded, StateError
from numerics import ONE, ZERO, as_rational, check_denominators, format_decimal, format_rational, solve_exact

logger = logging.getLogger(__name__)

REFINE_ROUNDS = 30
SHRINK = 4
MAX_SEEDS = 32
# a refinement whose displacement stays above STALL_FACTOR * spacing is not
# heading to a zero
STALL_FACTOR = 256


# ============================================================================
# CLOSED FORM AND VERIFICATION
# ============================================================================

def constant_velocity_fixed_point(velocities):
    velocities = [as_rational(v) for v in velocities]
    if len(velocities) < 2:
        raise ConfigError("need at least 2 velocities")
    if any(v <= 0 for v in velocities):
        raise ConfigError("velocities must be positive")

    total = sum(velocities, ZERO)
    partial = ZERO
    coordinates = []
    for v in velocities[:-1]:
        partial += v
        coordinates.append(partial / total)
    return ResetState(tuple(coordinates))


def verify_fixed_point(cfg, s):
    return reset_map(cfg, s) == s


# ============================================================================
# GRID SCAN
# ============================================================================

@dataclass
class FixedPointReport:
    resolution: object
    candidates: list = field(default_factory=list)
    exact_verified: list = field(default_factory=list)
    displacement: list = field(default_factory=list)
    evaluated: int = 0
    notes: list = field(default_factory=list)

    @property
    def verified(self):
        return [c for c, ok in zip(self.candidates, self.exact_verified) if ok]

    @property
    def unresolved(self):
        return [c for c, ok in zip(self.candidates, self.exact_verified) if not ok]

    def to_dict(self):
        return {
            "resolution": format_rational(self.resolution),
            "grid_points": self.evaluated,
            "candidates": [
                {
                    "state": c.to_list(),
                    "state_dec12": [format_decimal(x) for x in c.coordinates],
                    "exact_verified": ok,
                    "displacement": format_rational(d),
                }
                for c, ok, d in zip(self.candidates, self.exact_verified, self.displacement)
            ],
            "notes": list(self.notes),
        }


def _evaluate(cfg, coords):
    image = reset_map(cfg, ResetState(coords)).coordinates
    delta = tuple(fx - x for fx, x in zip(image, coords))
    return image, delta, max(abs(d) for d in delta)


def _is_ordered(coords):
    return all(0 <= c <= 1 for c in coords) and all(a <= b for a, b in zip(coords, coords[1:]))


def _lattice_axis(h):
    axis = []
    value = ZERO
    while value < 1:
        axis.append(value)
        value += h
    axis.append(ONE)
    return axis


def _neighbours(index, size):
    for i in range(len(index)):
        for step in (-1, 1):
            moved = list(index)
            moved[i] += step
            if 0 <= moved[i] < size and all(a <= b for a, b in zip(moved, moved[1:])):
                yield tuple(moved)


def _seeds(norms, deltas, size):
    """Lattice indices worth refining: exact zeros, sign changes (1-D) and local minima"""
    seeds = set()
    for index, norm in norms.items():
        if norm == 0:
            seeds.add(index)
            continue
        if all(norm <= norms[nb] for nb in _neighbours(index, size)):
            seeds.add(index)

    if all(len(index) == 1 for index in norms):
        for k in range(size - 1):
            left, right = deltas[(k,)][0], deltas[(k + 1,)][0]
            if left * right < 0:
                seeds.add((k,) if abs(left) <= abs(right) else (k + 1,))

    ranked = sorted(seeds, key=lambda index: (norms[index], index))
    return ranked[:MAX_SEEDS]


def _affine_polish(cfg, center, image, h):
    """
    Estimate the local affine piece by finite differences of spacing h and
    solve (I - J) z = f(c) - J c exactly. Returns z or None.
    """
    m = len(center)
    columns = []
    for i in range(m):
        for step in (h, -h):
            moved = list(center)
            moved[i] += step
            if _is_ordered(moved):
                moved_image = reset_map(cfg, ResetState(tuple(moved))).coordinates
                columns.append([(fm - f) / step for fm, f in zip(moved_image, image)])
                break
        else:
            return None

    jacobian = [[columns[j][k] for j in range(m)] for k in range(m)]
    lhs = [[(ONE if k == j else ZERO) - jacobian[k][j] for j in range(m)] for k in range(m)]
    rhs = [image[k] - sum((jacobian[k][j] * center[j] for j in range(m)), ZERO) for k in range(m)]
    z = solve_exact(lhs, rhs)
    if z is None or not _is_ordered(z):
        return None
    return z


def _refine(cfg, start, h, cap_bits, rounds):
    """
    Shrink a (2*2+1)^m stencil around the best point until an exact fixed
    point is polished out. Returns (coords, verified, norm).
    """
    center = start
    image, _, best = _evaluate(cfg, center)
    m = len(center)

    for _ in range(rounds):
        if best == 0:
            return center, True, best

        z = _affine_polish(cfg, center, image, h)
        if z is not None and reset_map(cfg, ResetState(z)).coordinates == z:
            return z, True, ZERO

        h = h / SHRINK
        check_denominators((h,) + tuple(center), cap_bits)
        for offsets in product(range(-2, 3), repeat=m):
            trial = tuple(c + k * h for c, k in zip(center, offsets))
            if trial == center or not _is_ordered(trial):
                continue
            trial_image, _, norm = _evaluate(cfg, trial)
            if norm < best:
                center, image, best = trial, trial_image, norm

    return center, False, best


def scan_fixed_points(cfg, resolution, cap_bits=None, rounds=REFINE_ROUNDS):
    """
    Scan the simplex for fixed points of the reset map.

    Lattice points with spacing `resolution` are evaluated, locally minimal
    displacements are refined, and every refinement ends either in an exact
    verified fixed point, in an unresolved candidate (refinement stalled,
    e.g. at the denominator cap) or is discarded because its displacement
    stopped shrinking.
    """
    h = as_rational(resolution)
    if h <= 0:
        raise ConfigError(f"resolution must be positive, got {h}")

    m = cfg.n - 1
    axis = _lattice_axis(h)
    size = len(axis)

    norms, deltas = {}, {}
    for index in combinations_with_replacement(range(size), m):
        coords = tuple(axis[i] for i in index)
        _, delta, norm = _evaluate(cfg, coords)
        norms[index], deltas[index] = norm, delta

    report = FixedPointReport(resolution=h, evaluated=len(norms))
    seeds = _seeds(norms, deltas, size)
    logger.info("fixed-point scan: %d lattice points, %d seeds", len(norms), len(seeds))

    verified, stalled = [], []
    for index in seeds:
        start = tuple(axis[i] for i in index)
        try:
            coords, ok, norm = _refine(cfg, start, h, cap_bits, rounds)
        except DenominatorCapExceeded as e:
            report.notes.append(f"refinement from {[format_rational(c) for c in start]} hit the cap: {e}")
            stalled.append((start, norms[index]))
            continue
        except StateError:
            continue

        if ok:
            if coords not in [c for c, _ in verified]:
                verified.append((coords, norm))
        elif norm <= STALL_FACTOR * h / SHRINK ** rounds:
            stalled.append((coords, norm))
        else:
            logger.debug("seed %s settles at displacement %s, discarded", index, format_decimal(norm))

    for coords, norm in verified:
        report.candidates.append(ResetState(coords))
        report.exact_verified.append(True)
        report.displacement.append(norm)

    kept = []
    for coords, norm in stalled:
        near_verified = any(max(abs(a - b) for a, b in zip(coords, v)) <= 2 * h for v, _ in verified)
        near_kept = any(max(abs(a - b) for a, b in zip(coords, k)) <= 2 * h for k, _ in kept)
        if not near_verified and not near_kept:
            kept.append((coords, norm))
    for coords, norm in kept:
        report.candidates.append(ResetState(coords))
        report.exact_verified.append(False)
        report.displacement.append(norm)

    if kept:
        logger.warning("fixed-point scan left %d unresolved candidate(s)", len(kept))
    return report
