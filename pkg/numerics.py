"""
Bucket Brigade - Exact Numerics
===============================
Scalar layer for the whole project.

* Rational      - gmpy2.mpq, always in canonical form (den > 0, gcd = 1)
* QuadraticReal - a + b*sqrt(d) with rational a, b and square-free radicand d
* helpers to parse/format "p/q" text, to watch denominator growth and to run
  high-precision floating code (gmpy2.mpfr) for scouting
"""

import enum
import operator
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
from gmpy2 import mpfr, mpq

from errors import ConfigError, DenominatorCapExceeded

Rational = mpq

ZERO = mpq(0)
ONE = mpq(1)

DECIMAL_DIGITS = 12


# ============================================================================
# RATIONALS
# ============================================================================

_OPERATORS = {
    "+": operator.add,
    "-": operator.sub,
    "−": operator.sub,
    "*": operator.mul,
    "×": operator.mul,
    "/": operator.truediv,
    "÷": operator.truediv,
}


def as_rational(value):
    """Coerce ints, Fractions, mpq and "p/q" strings to mpq. Floats are refused."""
    if isinstance(value, mpq):
        return value
    if isinstance(value, bool):
        raise ConfigError(f"not a rational: {value!r}")
    if isinstance(value, (int, gmpy2.mpz)):
        return mpq(value)
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    if isinstance(value, str):
        return parse_rational(value)
    raise ConfigError(f"not an exact rational: {value!r} ({type(value).__name__})")


def parse_rational(text):
    """
    Parse "p/q", an integer or a literal decimal ("1.2" -> 6/5).
    Decimals are expanded digit by digit, never through a float.
    """
    cleaned = str(text).strip().replace("_", "")
    if not cleaned:
        raise ConfigError("empty rational")
    try:
        value = Fraction(cleaned)
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"cannot parse {text!r} as a rational: {e}") from None
    return mpq(value.numerator, value.denominator)


def parse_rational_list(text):
    """Comma separated rationals: "2,4/3,1" """
    items = [item for item in str(text).split(",") if item.strip()]
    if not items:
        raise ConfigError(f"empty list: {text!r}")
    return tuple(parse_rational(item) for item in items)


def format_rational(q):
    return str(mpq(q))


def format_decimal(q, digits=DECIMAL_DIGITS):
    """Advisory decimal rendering with `digits` significant digits"""
    with working_precision(max(64, 4 * digits)):
        return format(mpfr(q), f".{digits}g")


def rational_arith(a, b, op):
    """Exact a <op> b for op in + - * / (also − × ÷). Division by zero raises."""
    try:
        fn = _OPERATORS[op]
    except KeyError:
        raise ValueError(f"unknown operator {op!r}") from None
    return fn(as_rational(a), as_rational(b))


def canonicalize(num, den):
    """Build the canonical mpq of num/den"""
    return mpq(num, den)


def denominator_bits(q):
    return int(mpq(q).denominator.bit_length())


def solve_exact(matrix, rhs):
    """
    Solve matrix @ z = rhs by Gaussian elimination over the rationals.
    Returns None when the matrix is singular.
    """
    size = len(rhs)
    rows = [[as_rational(v) for v in row] + [as_rational(r)] for row, r in zip(matrix, rhs)]
    for col in range(size):
        pivot = next((r for r in range(col, size) if rows[r][col] != 0), None)
        if pivot is None:
            return None
        rows[col], rows[pivot] = rows[pivot], rows[col]
        lead = rows[col][col]
        rows[col] = [v / lead for v in rows[col]]
        for r in range(size):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [v - factor * w for v, w in zip(rows[r], rows[col])]
    return tuple(row[-1] for row in rows)


def check_denominators(values, cap_bits):
    """Raise DenominatorCapExceeded if any value's denominator exceeds cap_bits"""
    worst = 0
    for value in values:
        bits = denominator_bits(value)
        if bits > worst:
            worst = bits
    if cap_bits is not None and worst > cap_bits:
        raise DenominatorCapExceeded(worst, cap_bits)
    return worst


# ============================================================================
# HIGH-PRECISION FLOATS
# ============================================================================

@contextmanager
def working_precision(bits):
    """Temporarily set the gmpy2 context precision (mantissa bits)"""
    ctx = gmpy2.get_context()
    saved = ctx.precision
    ctx.precision = bits
    try:
        yield ctx
    finally:
        ctx.precision = saved


def to_float(value, bits):
    with working_precision(bits):
        if isinstance(value, QuadraticReal):
            return value.to_mpfr()
        return mpfr(value)


# ============================================================================
# QUADRATIC REALS
# ============================================================================

class Ordering(enum.Enum):
    LT = -1
    EQ = 0
    GT = 1


def _sgn(q):
    return (q > 0) - (q < 0)


def _split_square(n):
    """(k, m) with n = k*k*m and m square-free"""
    n = gmpy2.mpz(n)
    k = free = gmpy2.mpz(1)
    p = gmpy2.mpz(2)
    while p * p * p <= n:
        e = 0
        while n % p == 0:
            n //= p
            e += 1
        k *= p ** (e // 2)
        if e % 2:
            free *= p
        p = gmpy2.next_prime(p)
    # no prime factor below the cube root is left: n is 1, a prime, p*q or p*p
    if gmpy2.is_square(n):
        return k * gmpy2.isqrt(n), free
    return k, free * n


@dataclass(frozen=True, eq=False)
class QuadraticReal:
    """
    Exact a + b*sqrt(d).

    Stored canonically: d is a square-free integer greater than 1, with
    d = 0 and b = 0 for pure rationals. A rational radicand p/q is
    rewritten as sqrt(p*q)/q.
    """

    a: mpq
    b: mpq = ZERO
    d: mpq = ZERO

    def __post_init__(self):
        a, b, d = as_rational(self.a), as_rational(self.b), as_rational(self.d)
        if d < 0:
            raise ValueError(f"negative radicand {d}")
        if d.denominator != 1:
            b = b / d.denominator
            d = mpq(d.numerator * d.denominator)
        if b != 0 and d != 0:
            k, m = _split_square(d.numerator)
            b, d = b * k, mpq(m)
            if d == 1:
                a, b, d = a + b, ZERO, ZERO
        if b == 0 or d == 0:
            b, d = ZERO, ZERO
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "d", d)

    # -- structure -----------------------------------------------------------

    @property
    def is_rational(self):
        return self.b == 0

    def conjugate(self):
        return QuadraticReal(self.a, -self.b, self.d)

    def _radicand_with(self, other):
        if self.b == 0:
            return other.d
        if other.b == 0 or other.d == self.d:
            return self.d
        raise ValueError(f"incompatible radicands {self.d} and {other.d}")

    @staticmethod
    def _lift(value):
        if isinstance(value, QuadraticReal):
            return value
        return QuadraticReal(as_rational(value))

    # -- arithmetic ----------------------------------------------------------

    def __neg__(self):
        return QuadraticReal(-self.a, -self.b, self.d)

    def __add__(self, other):
        other = self._lift(other)
        d = self._radicand_with(other)
        return QuadraticReal(self.a + other.a, self.b + other.b, d)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        d = self._radicand_with(other)
        return QuadraticReal(
            self.a * other.a + self.b * other.b * d,
            self.a * other.b + self.b * other.a,
            d,
        )

    __rmul__ = __mul__

    def norm(self):
        """(a + b√d)(a − b√d), a rational"""
        return self.a * self.a - self.b * self.b * self.d

    def inverse(self):
        n = self.norm()
        if n == 0:
            raise ZeroDivisionError("QuadraticReal division by zero")
        return QuadraticReal(self.a / n, -self.b / n, self.d)

    def __truediv__(self, other):
        return self * self._lift(other).inverse()

    def __rtruediv__(self, other):
        return self._lift(other) * self.inverse()

    def __abs__(self):
        return -self if self.sign() < 0 else self

    # -- exact comparison ----------------------------------------------------

    def sign(self):
        """Exact sign of a + b√d, decided by squaring"""
        sa, sb = _sgn(self.a), _sgn(self.b)
        if sb == 0:
            return sa
        if sa == 0 or sa == sb:
            return sb
        return sa * _sgn(self.a * self.a - self.b * self.b * self.d)

    def compare(self, other):
        return Ordering((self - other).sign())

    def __eq__(self, other):
        try:
            return (self - other).sign() == 0
        except (ValueError, ConfigError):
            return NotImplemented

    def __hash__(self):
        if self.b == 0:
            return hash(self.a)
        return hash((self.a, self.b, self.d))

    def __lt__(self, other):
        return (self - other).sign() < 0

    def __le__(self, other):
        return (self - other).sign() <= 0

    def __gt__(self, other):
        return (self - other).sign() > 0

    def __ge__(self, other):
        return (self - other).sign() >= 0

    # -- rendering -----------------------------------------------------------

    def to_mpfr(self):
        """Value in the current gmpy2 context precision"""
        return mpfr(self.a) + mpfr(self.b) * gmpy2.sqrt(mpfr(self.d))

    def __float__(self):
        return float(to_float(self, 64))

    def __str__(self):
        if self.b == 0:
            return format_rational(self.a)
        return f"{format_rational(self.a)} + ({format_rational(self.b)})*sqrt({format_rational(self.d)})"

    def to_dict(self):
        return {
            "a": format_rational(self.a),
            "b": format_rational(self.b),
            "d": format_rational(self.d),
            "approx": format_decimal(to_float(self, 96)),
        }


def quad_compare(q, r):
    """Exact three-way comparison of a QuadraticReal against a Rational"""
    return Ordering((q - as_rational(r)).sign())


def quad_sqrt(d):
    """sqrt(d) as a QuadraticReal"""
    return QuadraticReal(ZERO, ONE, as_rational(d))
