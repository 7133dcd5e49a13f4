"""Random exact inputs for the property tests"""

from gmpy2 import mpq


def random_rational(rng, lo, hi, den=97):
    """Uniform-ish rational in [lo, hi] with denominator dividing den"""
    k = int(rng.integers(0, den + 1))
    return mpq(lo) + (mpq(hi) - mpq(lo)) * mpq(k, den)


def random_state(rng, den=211):
    i, j = sorted(int(v) for v in rng.integers(0, den + 1, size=2))
    return (mpq(i, den), mpq(j, den))
