"""
Bucket Brigade - Cycle Analysis
===============================
Find periodic orbits of the three-worker map in two stages:

1. scout   - iterate in high-precision floats (gmpy2.mpfr, >= 128 bits) and
             run Brent's two-pointer cycle finder to propose (transient, period),
             or, when the period is known in advance, watch the orbit for a
             return after exactly that many steps
2. certify - read off the cell itinerary of one period, compose the affine
             pieces exactly, solve (I - M) s = c for the cycle state and replay
             it with exact integers over a shared denominator. The scout is
             never trusted.

A float return only has to be close: where the map expands, the exact cycle
with the same itinerary sits next to the float orbit and certification finds
it.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr, mpq

from errors import CertificationError, ConfigError, StateError
from numerics import ONE, ZERO, as_rational, denominator_bits, solve_exact, working_precision
from settings import DEFAULT_SCOUT_EPSILON_BITS, DEFAULT_SCOUT_PRECISION, MIN_SCOUT_PRECISION
from three_worker import (
    AsymptoticBehavior,
    BehaviorKind,
    Cell,
    Region,
    ThreeWorkerParams,
    affine_piece,
    as_state,
    classify_region3,
    format_pair,
    region2_two_cycle,
    region_of,
)

logger = logging.getLogger(__name__)

WITNESS_LIMIT = 12
LISTED_STATES_LIMIT = 1024
SIMPLIFY_EVERY = 1024

DEFAULT_CLOSING_BITS = 10
RETURN_WINDOW = 4
RETURN_SLACK = 20_000
RETURN_ATTEMPTS = 3


# ============================================================================
# ITINERARIES AND AFFINE MAPS
# ============================================================================

@dataclass(frozen=True)
class CellItinerary:
    cells: tuple

    def __post_init__(self):
        cells = tuple(c if isinstance(c, Cell) else Cell(c) for c in self.cells)
        if not cells:
            raise ConfigError("itinerary must not be empty")
        object.__setattr__(self, "cells", cells)

    def __len__(self):
        return len(self.cells)

    def __getitem__(self, i):
        return self.cells[i]

    def to_rle(self):
        """Run-length encoding: C4,C4,C4,C2 -> "C4x3,C2" """
        runs = []
        for cell in self.cells:
            if runs and runs[-1][0] is cell:
                runs[-1][1] += 1
            else:
                runs.append([cell, 1])
        return ",".join(c.value if n == 1 else f"{c.value}x{n}" for c, n in runs)

    @classmethod
    def from_rle(cls, text):
        cells = []
        for token in str(text).split(","):
            token = token.strip()
            if not token:
                continue
            name, _, count = token.partition("x")
            try:
                cell = Cell(name.upper())
                repeat = int(count) if count else 1
            except ValueError:
                raise ConfigError(f"bad itinerary token {token!r}") from None
            if repeat < 1:
                raise ConfigError(f"bad run length in {token!r}")
            cells.extend([cell] * repeat)
        return cls(tuple(cells))


@dataclass(frozen=True)
class AffineMap:
    """s -> M s + c"""

    matrix: tuple
    offset: tuple

    @classmethod
    def from_piece(cls, piece):
        return cls(piece.matrix, piece.offset)

    def after(self, first):
        """self ∘ first: (A2, b2) ∘ (A1, b1) = (A2 A1, A2 b1 + b2)"""
        (a, b), (c, d) = self.matrix
        (e, f), (g, h) = first.matrix
        u, v = first.offset
        return AffineMap(
            ((a * e + b * g, a * f + b * h), (c * e + d * g, c * f + d * h)),
            (a * u + b * v + self.offset[0], c * u + d * v + self.offset[1]),
        )

    def apply(self, s):
        (a, b), (c, d) = self.matrix
        x, y = s
        return (a * x + b * y + self.offset[0], c * x + d * y + self.offset[1])

    @property
    def collapses(self):
        """True if the map is constant (some C1 piece was composed in)"""
        return all(m == 0 for row in self.matrix for m in row)


def compose_affine(p, it):
    """Compose the pieces of `it` in order (first cell applied first) with a balanced product tree"""
    maps = [AffineMap.from_piece(affine_piece(p, cell)) for cell in it.cells]
    while len(maps) > 1:
        paired = [maps[i + 1].after(maps[i]) for i in range(0, len(maps) - 1, 2)]
        if len(maps) % 2:
            paired.append(maps[-1])
        maps = paired
    return maps[0]


# ============================================================================
# FLOATING SCOUT
# ============================================================================

@dataclass(frozen=True)
class ScoutResult:
    transient: int
    period: int
    steps: int
    precision: int
    entry: tuple


def _float_state(s):
    return (mpfr(s[0]), mpfr(s[1]))


def float_step(p, s, eps):
    """(cell, image) in the current context precision; boundary ties go to the weak side"""
    r1, r2 = mpfr(p.r1), mpfr(p.r2)
    x, y = s
    a = x + (1 - y) * r2
    b = (1 - y) * r1
    if a >= 1 - eps:
        if b >= 1 - eps:
            return Cell.C1, (mpfr(1), mpfr(1))
        return Cell.C2, (b, mpfr(1))
    if a < b - eps:
        return Cell.C3, (a, a)
    return Cell.C4, (b, a)


def _close(s, t, tol):
    return abs(s[0] - t[0]) <= tol and abs(s[1] - t[1]) <= tol


def float_orbit(p, s0, steps, precision=DEFAULT_SCOUT_PRECISION, epsilon_bits=DEFAULT_SCOUT_EPSILON_BITS):
    """s0, f(s0), ..., f^steps(s0) as mpfr pairs"""
    with working_precision(precision):
        eps = mpfr(2) ** -epsilon_bits
        s = _float_state(s0)
        orbit = [s]
        for _ in range(steps):
            _, s = float_step(p, s, eps)
            orbit.append(s)
    return orbit


def scout_orbit(p, s0, budget, precision=DEFAULT_SCOUT_PRECISION, epsilon_bits=DEFAULT_SCOUT_EPSILON_BITS):
    """
    Brent's cycle finder on the floating orbit. States closer than 2**-epsilon_bits
    count as equal. Returns ScoutResult or None if the budget runs out.
    """
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    if precision < MIN_SCOUT_PRECISION:
        raise ConfigError(f"scouting needs at least {MIN_SCOUT_PRECISION} bits, got {precision}")

    with working_precision(precision):
        eps = mpfr(2) ** -epsilon_bits

        def step(s):
            return float_step(p, s, eps)[1]

        start = _float_state(s0)
        power = period = 1
        tortoise, hare = start, step(start)
        used = 1
        while not _close(tortoise, hare, eps):
            if used >= budget:
                logger.debug("scout budget %d exhausted at r=(%s, %s)", budget, p.r1, p.r2)
                return None
            if power == period:
                tortoise = hare
                power *= 2
                period = 0
            hare = step(hare)
            used += 1
            period += 1

        tortoise = hare = start
        for _ in range(period):
            hare = step(hare)
        transient = 0
        while not _close(tortoise, hare, eps):
            tortoise, hare = step(tortoise), step(hare)
            transient += 1

    logger.debug("scouted period %d after transient %d (%d bits)", period, transient, precision)
    return ScoutResult(transient, period, used, precision, tortoise)


def extract_itinerary(p, entry, period, precision=DEFAULT_SCOUT_PRECISION,
                      epsilon_bits=DEFAULT_SCOUT_EPSILON_BITS):
    """Cells visited during one period starting at the scouted entry state"""
    with working_precision(precision):
        eps = mpfr(2) ** -epsilon_bits
        s = _float_state(entry)
        cells = []
        for _ in range(period):
            cell, s = float_step(p, s, eps)
            cells.append(cell)
    return CellItinerary(tuple(cells))


@dataclass(frozen=True)
class ReturnCandidate:
    offset: int
    entry: tuple
    itinerary: CellItinerary


def scout_returns(p, s0, period, budget, precision=DEFAULT_SCOUT_PRECISION,
                  epsilon_bits=DEFAULT_SCOUT_EPSILON_BITS, closing_bits=DEFAULT_CLOSING_BITS):
    """
    Watch the floating orbit of s0 for returns after exactly `period` steps.

    Whenever f^t(s0) is within 2**-closing_bits of f^(t-period)(s0), yields the
    earlier state and the cells of the `period` steps that follow it. Unstable
    cycles are never reached by the float orbit, only passed closely, so the
    tolerance here is much looser than the scout's epsilon.
    """
    if period < 1:
        raise ConfigError(f"period must be >= 1, got {period}")
    if budget < period:
        raise ConfigError(f"budget {budget} is shorter than the period {period}")
    if precision < MIN_SCOUT_PRECISION:
        raise ConfigError(f"scouting needs at least {MIN_SCOUT_PRECISION} bits, got {precision}")

    states, cells = [None] * period, [None] * period
    with working_precision(precision):
        s = _float_state(s0)
    t = 0
    while t <= budget:
        found = None
        # the context is left before every yield
        with working_precision(precision):
            eps = mpfr(2) ** -epsilon_bits
            tol = mpfr(2) ** -closing_bits
            while found is None and t <= budget:
                slot = t % period
                if t >= period and _close(states[slot], s, tol):
                    found = ReturnCandidate(t - period, states[slot],
                                            CellItinerary(tuple(cells[slot:] + cells[:slot])))
                states[slot] = s
                cells[slot], s = float_step(p, s, eps)
                t += 1
        if found is not None:
            yield found


# ============================================================================
# EXACT REPLAY
# ============================================================================

@dataclass(frozen=True)
class SharedDenominatorState:
    """(nx/den, ny/den) with integer numerators over one positive denominator"""

    nx: gmpy2.mpz
    ny: gmpy2.mpz
    den: gmpy2.mpz

    @classmethod
    def from_state(cls, s):
        x, y = as_state(s)
        den = gmpy2.lcm(x.denominator, y.denominator)
        return cls(x.numerator * (den // x.denominator), y.numerator * (den // y.denominator), den)

    def to_state(self):
        return (mpq(self.nx, self.den), mpq(self.ny, self.den))

    def simplify(self):
        g = gmpy2.gcd(gmpy2.gcd(self.nx, self.ny), self.den)
        if g == 1:
            return self
        return SharedDenominatorState(self.nx // g, self.ny // g, self.den // g)

    def same_point(self, other):
        return self.nx * other.den == other.nx * self.den and self.ny * other.den == other.ny * self.den


_CORNER = SharedDenominatorState(gmpy2.mpz(1), gmpy2.mpz(1), gmpy2.mpz(1))


class IntegerStepper:
    """
    The three-worker map on SharedDenominatorState.

    With L = lcm of the denominators of r1 and r2 and the state (X/D, Y/D),
    a and b share the denominator D*L, so the cell tests and images are
    integer comparisons and products.
    """

    def __init__(self, p):
        self.scale = gmpy2.lcm(p.r1.denominator, p.r2.denominator)
        self.u1 = p.r1.numerator * (self.scale // p.r1.denominator)
        self.u2 = p.r2.numerator * (self.scale // p.r2.denominator)

    def step(self, s):
        """(cell, image) of s"""
        slack = s.den - s.ny
        a = s.nx * self.scale + slack * self.u2
        b = slack * self.u1
        e = s.den * self.scale
        if a >= e:
            if b >= e:
                return Cell.C1, _CORNER
            return Cell.C2, SharedDenominatorState(b, e, e)
        if a < b:
            return Cell.C3, SharedDenominatorState(a, a, e)
        return Cell.C4, SharedDenominatorState(b, a, e)


@dataclass
class Replay:
    states: list
    returns: list


def replay_itinerary(p, seed, cells, listed=None, keep_states=False, first_index=0):
    """
    Exact replay of `cells` from `seed`.

    Every state is checked against its claimed cell, and against `listed`
    (the expected states, listed[0] being the seed) when given. `returns`
    holds the steps j dividing len(cells) with f^j(seed) == seed.
    Error indices are reported as (first_index + j) % len(cells).
    """
    k = len(cells)

    def index(j):
        return (first_index + j) % k

    expected = []
    for j, s in enumerate(listed if listed is not None else [seed]):
        try:
            expected.append(SharedDenominatorState.from_state(s))
        except StateError as e:
            raise CertificationError(f"state {index(j)} leaves the triangle: {e}", index=index(j)) from None
    if listed is not None and len(expected) != k:
        raise CertificationError(f"{len(expected)} states listed for {k} cells")

    start = expected[0]
    checkpoints = set(_divisors(k))
    stepper = IntegerStepper(p)
    states, returns = [], []
    s = start
    for j, claimed in enumerate(cells):
        if keep_states:
            states.append(s.to_state())
        cell, s = stepper.step(s)
        if cell is not claimed:
            raise CertificationError(f"state {index(j)} lies in {cell.value}, itinerary says {claimed.value}",
                                     index=index(j))
        done = j + 1
        if done % SIMPLIFY_EVERY == 0:
            s = s.simplify()
        if listed is not None and not s.same_point(expected[done % k]):
            raise CertificationError(f"state {index(j)} does not map to state {index(done)}", index=index(j))
        if done in checkpoints and s.same_point(start):
            returns.append(done)
    return Replay(states, returns)


# ============================================================================
# EXACT CERTIFICATION
# ============================================================================

@dataclass
class CycleCertificate:
    """
    A certified cycle. `states` lists every state of one period, or only the
    first one when the period exceeds LISTED_STATES_LIMIT; the rest follow
    from the itinerary.
    """

    params: ThreeWorkerParams
    period: int
    states: list
    itinerary: CellItinerary
    transient_bound: int = 0

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "period": self.period,
            "itinerary": self.itinerary.to_rle(),
            "states": [format_pair(s) for s in self.states],
            "transient_bound": self.transient_bound,
        }

    @classmethod
    def from_dict(cls, document):
        try:
            params = ThreeWorkerParams(document["params"]["r1"], document["params"]["r2"])
            period = int(document["period"])
            itinerary = CellItinerary.from_rle(document["itinerary"])
            states = [as_state(s) for s in document["states"]]
            transient = int(document.get("transient_bound", 0))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed certificate: {e}") from None
        if period != len(itinerary) or len(states) not in (1, period):
            raise ConfigError(f"certificate period {period} disagrees with "
                              f"{len(states)} states and {len(itinerary)} cells")
        return cls(params, period, states, itinerary, transient)


def _exact(value):
    return mpq(value) if isinstance(value, mpfr) else as_rational(value)


def _cycle_seed(composed, hint):
    """Exact s with (I - M) s = c; on a singular system a particular solution near the hint"""
    (m00, m01), (m10, m11) = composed.matrix
    lhs = [[1 - m00, -m01], [-m10, 1 - m11]]
    rhs = list(composed.offset)

    seed = solve_exact(lhs, rhs)
    if seed is not None:
        return seed

    guess = tuple(_exact(h) for h in hint) if hint is not None else (ZERO, ZERO)
    pivot = next(((r, c) for r in range(2) for c in range(2) if lhs[r][c] != 0), None)
    if pivot is None:
        seed = guess
    else:
        r, c = pivot
        free = 1 - c
        fixed = (rhs[r] - lhs[r][free] * guess[free]) / lhs[r][c]
        seed = (fixed, guess[free]) if c == 0 else (guess[free], fixed)

    for r in range(2):
        if lhs[r][0] * seed[0] + lhs[r][1] * seed[1] != rhs[r]:
            raise CertificationError("no such cycle: (I - M) is singular and c is not in its range")
    return seed


def _divisors(k):
    small = [d for d in range(1, gmpy2.isqrt(k) + 1) if k % d == 0]
    return sorted(set(small + [k // d for d in small]))


def _minimal_period(items):
    k = len(items)
    for d in _divisors(k):
        if d < k and all(items[i] == items[i + d] for i in range(k - d)):
            return d
    return k


def certify_cycle(p, it, hint=None):
    """
    Certify that `it` is the itinerary of a periodic orbit.

    With a C1 cell the orbit is forced to pass through (1, 1) right after it;
    otherwise the seed solves (I - M) s = c. The orbit is then replayed
    exactly, checking the claimed cell at every step and closure at the end.
    Raises CertificationError with the index of the first failing state.
    """
    k = len(it)
    cells = it.cells
    if Cell.C1 in cells:
        origin = (cells.index(Cell.C1) + 1) % k
        seed = (ONE, ONE)
    else:
        origin = 0
        seed = _cycle_seed(compose_affine(p, it), hint)

    order = cells[origin:] + cells[:origin]
    keep = k <= LISTED_STATES_LIMIT
    replay = replay_itinerary(p, seed, order, keep_states=keep, first_index=origin)
    if k not in replay.returns:
        raise CertificationError("orbit does not close", index=origin)

    period = replay.returns[0]
    if period < k:
        logger.info("itinerary of length %d reduces to minimal period %d", k, period)
    if keep:
        shift = (k - origin) % k
        states = (replay.states[shift:] + replay.states[:shift])[:period]
        cells = cells[:period]
    else:
        states, cells = [tuple(seed)], order[:period]

    logger.info("certified cycle of period %d at r=(%s, %s), max denominator %d bits",
                period, p.r1, p.r2, max(denominator_bits(c) for st in states for c in st))
    return CycleCertificate(p, period, states, CellItinerary(cells))


def verify_certificate(cert):
    """Independent replay of a stored certificate. True, or CertificationError."""
    p, states, cells = cert.params, cert.states, cert.itinerary.cells
    k = len(cells)
    if k != cert.period or len(states) not in (1, k):
        raise CertificationError("period, states and itinerary lengths disagree")
    listed = states if len(states) == k else None
    replay = replay_itinerary(p, states[0], cells, listed=listed)
    if k not in replay.returns:
        raise CertificationError("orbit does not close", index=0)
    if replay.returns[0] != k:
        raise CertificationError(f"period {k} is not minimal")
    return True


# ============================================================================
# DRIVERS
# ============================================================================

def _witness(states):
    return list(states) if len(states) <= WITNESS_LIMIT else [states[0]]


def _certified_behavior(cert):
    return AsymptoticBehavior(BehaviorKind.CERTIFIED_CYCLE, period=cert.period, transient=cert.transient_bound,
                              witness_states=_witness(cert.states), certificate=cert)


def find_certified_cycle(p, s0, budget, precision=DEFAULT_SCOUT_PRECISION,
                         epsilon_bits=DEFAULT_SCOUT_EPSILON_BITS):
    """Scout, extract, certify; one retry at doubled precision, then Unresolved"""
    for bits in (precision, 2 * precision):
        scout = scout_orbit(p, s0, budget, bits, epsilon_bits)
        if scout is None:
            logger.info("no cycle scouted within %d steps at %d bits", budget, bits)
            continue
        it = extract_itinerary(p, scout.entry, scout.period, bits, epsilon_bits)
        try:
            cert = certify_cycle(p, it, hint=scout.entry)
        except CertificationError as e:
            logger.info("certification failed at %d bits: %s", bits, e)
            continue
        cert.transient_bound = scout.transient
        return _certified_behavior(cert)
    return AsymptoticBehavior(BehaviorKind.UNRESOLVED, budget=budget)


def classify_behavior(p, s0, budget, precision=DEFAULT_SCOUT_PRECISION,
                      epsilon_bits=DEFAULT_SCOUT_EPSILON_BITS, period=None):
    """
    Classification used by the CLI: the analytic Region-3 classifier when
    r1 > r2 >= 1, the exact two-cycle for Region-2 starts on it, otherwise
    scouting plus certification. A known `period` switches the last step to
    certify_period_from, which also reaches unstable cycles.
    """
    s0 = as_state(s0)
    if p.r1 > p.r2 >= 1:
        return classify_region3(p, s0, budget)
    if region_of(p) is Region.R2:
        cycle = region2_two_cycle(p)
        if s0 in cycle:
            return AsymptoticBehavior(BehaviorKind.TWO_CYCLE, period=2, transient=0,
                                      witness_states=list(cycle))
    if period is not None:
        cert = certify_period_from(p, s0, period, budget, precision, epsilon_bits)
        if cert is None:
            return AsymptoticBehavior(BehaviorKind.UNRESOLVED, budget=budget)
        return _certified_behavior(cert)
    return find_certified_cycle(p, s0, budget, precision, epsilon_bits)


def grid_points(nx, ny):
    """Row-major (i, j) points (i/(nx-1), j/(ny-1)) of the triangle x <= y"""
    if nx < 1 or ny < 1:
        raise ConfigError(f"grid must be at least 1x1, got {nx}x{ny}")

    def axis(count):
        if count == 1:
            return [ZERO]
        return [mpq(i, count - 1) for i in range(count)]

    xs, ys = axis(nx), axis(ny)
    return [(x, y) for x in xs for y in ys if x <= y]



def period_budget(period):
    """Default scouting budget when hunting for a given period"""
    return RETURN_WINDOW * period + RETURN_SLACK


def certify_period_from(p, start, period, budget=None, precision=DEFAULT_SCOUT_PRECISION,
                        epsilon_bits=DEFAULT_SCOUT_EPSILON_BITS, closing_bits=DEFAULT_CLOSING_BITS):
    """
    Certified cycle of exactly `period` reached from `start`, or None.

    A Brent run of at most `period` steps first drops starts that settle on
    some other cycle. Otherwise returns of lag `period` are certified in
    turn; itineraries with a shorter period are skipped and at most
    RETURN_ATTEMPTS distinct itineraries are tried.
    """
    budget = period_budget(period) if budget is None else budget
    if period < 1:
        raise ConfigError(f"period must be >= 1, got {period}")

    settled = scout_orbit(p, start, min(budget, period), precision, epsilon_bits)
    if settled is not None:
        if settled.period != period:
            return None
        it = extract_itinerary(p, settled.entry, period, precision, epsilon_bits)
        try:
            cert = certify_cycle(p, it, hint=settled.entry)
        except CertificationError as e:
            logger.info("start %s: period %d scouted but not certified (%s)", format_pair(start), period, e)
            return None
        cert.transient_bound = settled.transient
        return cert

    tried = set()
    for candidate in scout_returns(p, start, period, budget, precision, epsilon_bits, closing_bits):
        cells = candidate.itinerary.cells
        if cells in tried or _minimal_period(cells) < period:
            continue
        tried.add(cells)
        try:
            cert = certify_cycle(p, candidate.itinerary, hint=candidate.entry)
        except CertificationError as e:
            logger.debug("start %s: return at step %d not certified (%s)", format_pair(start), candidate.offset, e)
            if len(tried) == RETURN_ATTEMPTS:
                break
            continue
        cert.transient_bound = candidate.offset
        return cert
    return None


def _search_task(task):
    p, start, period, budget, precision, epsilon_bits, closing_bits = task
    return start, certify_period_from(p, start, period, budget, precision, epsilon_bits, closing_bits)


def search_period(p, grid, period, budget=None, precision=DEFAULT_SCOUT_PRECISION,
                  epsilon_bits=DEFAULT_SCOUT_EPSILON_BITS, closing_bits=DEFAULT_CLOSING_BITS, workers=1):
    """
    Try every grid start in row-major order and return (start, certificate)
    for the first one with a certified cycle of exactly `period`, or None.

    With workers > 1 the starts are spread over a process pool; results are
    still consumed in grid order, so the answer does not depend on `workers`.
    """
    nx, ny = grid
    points = grid_points(nx, ny)
    budget = period_budget(period) if budget is None else budget
    tasks = ((p, start, period, budget, precision, epsilon_bits, closing_bits) for start in points)

    def first_hit(results):
        for n, (start, cert) in enumerate(results, start=1):
            if cert is not None:
                logger.info("period %d certified from start %s (start %d of %d)",
                            period, format_pair(start), n, len(points))
                return start, cert
            if n % 1000 == 0:
                logger.info("period search: %d of %d starts tried", n, len(points))
        return None

    if workers <= 1:
        return first_hit(map(_search_task, tasks))

    pool = ProcessPoolExecutor(max_workers=workers)
    try:
        return first_hit(pool.map(_search_task, tasks))
    finally:
        pool.shutdown(wait=False, cancel_futures=True)
