"""
Bucket Brigade - No-Station Model
=================================
n workers on the line [0, 1], each with a piecewise-constant velocity profile.

Between resets every worker carries his item forward; a worker who catches
the next one is blocked and moves at the smaller of the two speeds. When
worker n reaches 1 everybody hands off backward at infinite speed and worker 1
restarts at 0 (the reset). The reset map sends the post-reset positions
(x_2, ..., x_n) to the next post-reset positions.

All arithmetic is exact (gmpy2.mpq): every event time is the root of a linear
equation, so the whole trajectory stays rational.
"""

import enum
import logging
from bisect import bisect_right
from dataclasses import dataclass, field

import pandas as pd

from errors import ConfigError, DenominatorCapExceeded, StateError
from numerics import ONE, ZERO, as_rational, check_denominators, format_decimal, format_rational

logger = logging.getLogger(__name__)


# ============================================================================
# VELOCITY PROFILES AND CONFIGURATION
# ============================================================================

@dataclass(frozen=True)
class VelocityProfile:
    """
    Piecewise-constant velocity on [0, 1].

    Pieces are left-closed, right-open; the last piece is closed at 1. At a
    breakpoint the velocity of the piece to the right applies.
    """

    breakpoints: tuple
    values: tuple

    @classmethod
    def constant(cls, velocity):
        return cls((ZERO, ONE), (as_rational(velocity),))

    @classmethod
    def from_pieces(cls, breakpoints, values):
        return cls(tuple(as_rational(b) for b in breakpoints),
                   tuple(as_rational(v) for v in values))

    @property
    def is_constant(self):
        return len(set(self.values)) == 1

    def velocity_at(self, x):
        i = bisect_right(self.breakpoints, x) - 1
        return self.values[min(max(i, 0), len(self.values) - 1)]

    def next_breakpoint(self, x):
        """Smallest interior breakpoint strictly greater than x, or None"""
        i = bisect_right(self.breakpoints, x)
        if i < len(self.breakpoints) - 1:
            return self.breakpoints[i]
        return None

    def scaled(self, factor):
        factor = as_rational(factor)
        return VelocityProfile(self.breakpoints, tuple(v * factor for v in self.values))


def default_bounds(profiles):
    """(b, B) = (min/2, 2*max) over every velocity value"""
    values = [v for profile in profiles for v in profile.values]
    return (min(values) / 2, max(values) * 2)


@dataclass(frozen=True)
class BrigadeConfig:
    profiles: tuple
    bounds: tuple

    @property
    def n(self):
        return len(self.profiles)

    @classmethod
    def from_velocities(cls, velocities, bounds=None):
        """Constant profiles, one velocity per worker"""
        profiles = tuple(VelocityProfile.constant(v) for v in velocities)
        return validate_config(cls._with_bounds(profiles, bounds))

    @classmethod
    def from_profiles(cls, profiles, bounds=None):
        return validate_config(cls._with_bounds(tuple(profiles), bounds))

    @classmethod
    def _with_bounds(cls, profiles, bounds):
        if bounds is None:
            try:
                bounds = default_bounds(profiles)
            except ValueError:
                bounds = (ZERO, ZERO)
        return cls(profiles, tuple(as_rational(b) for b in bounds))

    def constant_velocities(self):
        """Tuple of velocities if every profile is constant, else None"""
        if all(profile.is_constant for profile in self.profiles):
            return tuple(profile.values[0] for profile in self.profiles)
        return None

    def scaled(self, factor):
        factor = as_rational(factor)
        return BrigadeConfig(tuple(p.scaled(factor) for p in self.profiles),
                             tuple(b * factor for b in self.bounds))


def validate_config(cfg):
    """Return cfg if it is well formed, else raise ConfigError on the first violation"""
    if cfg.n < 2:
        raise ConfigError(f"need at least 2 workers, got {cfg.n}")

    for worker, profile in enumerate(cfg.profiles, start=1):
        bps, values = profile.breakpoints, profile.values
        if len(bps) < 2:
            raise ConfigError(f"worker {worker}: profile needs at least two breakpoints")
        if bps[0] != 0 or bps[-1] != 1:
            raise ConfigError(f"worker {worker}: breakpoints must start at 0 and end at 1")
        if any(lo >= hi for lo, hi in zip(bps, bps[1:])):
            raise ConfigError(f"worker {worker}: breakpoints are unsorted")
        if len(values) != len(bps) - 1:
            raise ConfigError(f"worker {worker}: {len(bps) - 1} pieces but {len(values)} velocities")
        for v in values:
            if v <= 0:
                raise ConfigError(f"worker {worker}: non-positive velocity {format_rational(v)}")

    if len(cfg.bounds) != 2:
        raise ConfigError("bounds must be a pair (b, B)")
    lower, upper = cfg.bounds
    if not 0 < lower < upper:
        raise ConfigError(f"bounds must satisfy 0 < b < B, got ({lower}, {upper})")
    for worker, profile in enumerate(cfg.profiles, start=1):
        for v in profile.values:
            if not lower < v < upper:
                raise ConfigError(
                    f"worker {worker}: velocity {format_rational(v)} outside ({lower}, {upper})")
    return cfg


# ============================================================================
# STATES
# ============================================================================

def _ordered(values, what):
    values = tuple(as_rational(v) for v in values)
    if values and (values[0] < 0 or values[-1] > 1):
        raise StateError(f"{what} must lie in [0, 1]: {[format_rational(v) for v in values]}")
    if any(a > b for a, b in zip(values, values[1:])):
        raise StateError(f"{what} must be non-decreasing: {[format_rational(v) for v in values]}")
    return values


@dataclass(frozen=True)
class FullState:
    """Positions x_1 <= ... <= x_n of all workers"""

    positions: tuple

    def __post_init__(self):
        object.__setattr__(self, "positions", _ordered(self.positions, "positions"))


@dataclass(frozen=True)
class ResetState:
    """Post-reset positions (x_2, ..., x_n); x_1 = 0 is implicit"""

    coordinates: tuple

    def __post_init__(self):
        object.__setattr__(self, "coordinates", _ordered(self.coordinates, "reset state"))

    def __len__(self):
        return len(self.coordinates)

    def __iter__(self):
        return iter(self.coordinates)

    def __getitem__(self, i):
        return self.coordinates[i]

    def to_list(self):
        return [format_rational(c) for c in self.coordinates]


def embed(state):
    """ResetState -> FullState with worker 1 at the origin"""
    return FullState((ZERO,) + tuple(state.coordinates))


# ============================================================================
# DYNAMICS
# ============================================================================

class EventKind(enum.Enum):
    BREAKPOINT = "breakpoint"
    CATCH_UP = "catch_up"
    FINISH = "finish"


@dataclass(frozen=True)
class Event:
    time: object
    kind: EventKind
    worker: int
    position: object


def _speeds(cfg, x):
    n = len(x)
    speeds = [None] * n
    speeds[-1] = cfg.profiles[-1].velocity_at(x[-1])
    for i in range(n - 2, -1, -1):
        own = cfg.profiles[i].velocity_at(x[i])
        speeds[i] = own if x[i] < x[i + 1] else min(own, speeds[i + 1])
    return speeds


def instantaneous_velocities(cfg, state):
    """
    Velocities of all workers in the given state.
    A blocked worker (x_i = x_{i+1}) moves at min(v_i(x_i), speed of i+1);
    the backward pass resolves whole blocked chains.
    """
    if len(state.positions) != cfg.n:
        raise StateError(f"state has {len(state.positions)} workers, config has {cfg.n}")
    return tuple(_speeds(cfg, state.positions))


def advance_with_events(cfg, start):
    """
    Integrate from `start` until worker n reaches 1.

    Positions move linearly between events. Events are a worker reaching a
    breakpoint of his own profile, a worker catching the next one, and worker
    n finishing. After each event all speeds are re-evaluated, which also
    releases a blocked worker whose own speed fell below his blocker's.

    Returns (pre_reset FullState, elapsed time, list of Event).
    """
    if len(start.positions) != cfg.n:
        raise StateError(f"state has {len(start.positions)} workers, config has {cfg.n}")

    x = list(start.positions)
    n = len(x)
    now = ZERO
    events = []

    while x[-1] < 1:
        speeds = _speeds(cfg, x)
        dt = (ONE - x[-1]) / speeds[-1]

        targets = [cfg.profiles[i].next_breakpoint(x[i]) for i in range(n)]
        for i, target in enumerate(targets):
            if target is not None:
                dt = min(dt, (target - x[i]) / speeds[i])

        closing = [i for i in range(n - 1) if x[i] < x[i + 1] and speeds[i] > speeds[i + 1]]
        for i in closing:
            dt = min(dt, (x[i + 1] - x[i]) / (speeds[i] - speeds[i + 1]))

        x = [xi + si * dt for xi, si in zip(x, speeds)]
        now += dt

        for i, target in enumerate(targets):
            if target is not None and x[i] == target:
                events.append(Event(now, EventKind.BREAKPOINT, i + 1, x[i]))
        for i in closing:
            if x[i] == x[i + 1]:
                events.append(Event(now, EventKind.CATCH_UP, i + 1, x[i]))

    events.append(Event(now, EventKind.FINISH, n, x[-1]))
    return FullState(tuple(x)), now, events


def advance_to_reset(cfg, start):
    """(pre_reset state with x_n = 1, exact elapsed time)"""
    pre_reset, elapsed, _ = advance_with_events(cfg, start)
    return pre_reset, elapsed


def apply_reset(pre_reset):
    """Shift hand-off: worker i+1 takes over at x_i, worker 1 returns to 0"""
    positions = pre_reset.positions
    if positions[-1] != 1:
        raise StateError(f"reset requires x_n = 1, got {format_rational(positions[-1])}")
    return ResetState(positions[:-1])


def step(cfg, state):
    """One application of the reset map: (next ResetState, elapsed time)"""
    if len(state.coordinates) != cfg.n - 1:
        raise StateError(f"reset state has {len(state.coordinates)} coordinates, expected {cfg.n - 1}")
    pre_reset, elapsed = advance_to_reset(cfg, embed(state))
    return apply_reset(pre_reset), elapsed


def reset_map(cfg, state):
    return step(cfg, state)[0]


# ============================================================================
# TRAJECTORIES
# ============================================================================

class TrajectoryStatus(enum.Enum):
    COMPLETE = "complete"
    TRUNCATED = "truncated"


@dataclass
class TrajectoryRecord:
    states: list
    reset_times: list = field(default_factory=list)
    status: TrajectoryStatus = TrajectoryStatus.COMPLETE
    message: str = ""

    @property
    def steps(self):
        return len(self.reset_times)


def iterate(cfg, s0, k, cap_bits=None):
    """Apply the reset map k times, recording states and elapsed times"""
    if k < 0:
        raise ConfigError(f"step count must be >= 0, got {k}")

    record = TrajectoryRecord(states=[s0])
    state = s0
    for done in range(k):
        state, elapsed = step(cfg, state)
        try:
            check_denominators(tuple(state.coordinates) + (elapsed,), cap_bits)
        except DenominatorCapExceeded as e:
            logger.warning("trajectory truncated after %d of %d steps: %s", done, k, e)
            record.status = TrajectoryStatus.TRUNCATED
            record.message = str(e)
            break
        record.states.append(state)
        record.reset_times.append(elapsed)
    return record


# ============================================================================
# SERIALIZATION
# ============================================================================

def config_to_dict(cfg):
    return {
        "workers": [
            {
                "breakpoints": [format_rational(b) for b in profile.breakpoints],
                "values": [format_rational(v) for v in profile.values],
            }
            for profile in cfg.profiles
        ],
        "bounds": [format_rational(b) for b in cfg.bounds],
    }


def config_from_dict(document):
    try:
        workers = document["workers"]
        profiles = [VelocityProfile.from_pieces(w["breakpoints"], w["values"]) for w in workers]
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed configuration document: missing {e}") from None
    bounds = document.get("bounds")
    return BrigadeConfig.from_profiles(profiles, bounds=bounds)


def trajectory_frame(record):
    """
    Trajectory as a DataFrame: step, x_2..x_n, elapsed (all "p/q"),
    followed by advisory 12-digit decimal columns.
    """
    width = len(record.states[0].coordinates)
    names = [f"x_{i + 2}" for i in range(width)]

    rows = []
    for k, state in enumerate(record.states):
        elapsed = record.reset_times[k - 1] if k > 0 else None
        row = {"step": k}
        row.update({name: format_rational(c) for name, c in zip(names, state.coordinates)})
        row["elapsed"] = format_rational(elapsed) if elapsed is not None else ""
        row.update({f"{name}_dec12": format_decimal(c) for name, c in zip(names, state.coordinates)})
        row["elapsed_dec12"] = format_decimal(elapsed) if elapsed is not None else ""
        rows.append(row)

    columns = ["step"] + names + ["elapsed"] + [f"{n}_dec12" for n in names] + ["elapsed_dec12"]
    return pd.DataFrame(rows, columns=columns)
