"""
Bucket Brigade - Exact Plane Geometry
=====================================
Orientation, convex hulls and point/segment predicates over rationals.
Points are plain (x, y) tuples of mpq; no tolerance anywhere.
"""

from numerics import as_rational


def as_point(p):
    x, y = p
    return (as_rational(x), as_rational(y))


def cross(o, a, b):
    """z-component of (a - o) x (b - o)"""
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def orient(o, a, b):
    """1 for a left turn o -> a -> b, -1 for right, 0 if collinear"""
    c = cross(o, a, b)
    return (c > 0) - (c < 0)


def convex_hull(points):
    """
    Monotone chain. Returns the hull vertices counter-clockwise without
    repetition; collinear boundary points are dropped.
    """
    pts = sorted(set(as_point(p) for p in points))
    if len(pts) <= 2:
        return pts

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)

    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)

    return lower[:-1] + upper[:-1]


def in_convex_polygon(polygon, p):
    """Closed membership in a counter-clockwise convex polygon (boundary counts)"""
    p = as_point(p)
    if not polygon:
        return False
    if len(polygon) == 1:
        return p == polygon[0]
    if len(polygon) == 2:
        return on_segment(polygon[0], polygon[1], p)
    for a, b in zip(polygon, polygon[1:] + polygon[:1]):
        if orient(a, b, p) < 0:
            return False
    return True


def on_segment(a, b, p, closed=True):
    """Is p on segment [a, b] (closed) or (a, b) (open)?"""
    a, b, p = as_point(a), as_point(b), as_point(p)
    if orient(a, b, p) != 0:
        return False
    inside = (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
              and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))
    if not inside:
        return False
    if closed:
        return True
    return p != a and p != b
