"""Tuple-based 3-vector helpers for numba kernels.

Vectors are plain ``(x, y, z)`` float tuples so kernels never allocate.
"""

import math

import numpy as np
from numba import njit

_jit = njit(cache=True, nogil=True, inline="always")


@_jit
def vec(x, y, z):
    return (float(x), float(y), float(z))


@_jit
def add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@_jit
def sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@_jit
def mul(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@_jit
def hadamard(a, b):
    return (a[0] * b[0], a[1] * b[1], a[2] * b[2])


@_jit
def neg(a):
    return (-a[0], -a[1], -a[2])


@_jit
def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@_jit
def cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


@_jit
def length(a):
    return math.sqrt(dot(a, a))


@_jit
def normalize(a):
    n = math.sqrt(dot(a, a))
    if n == 0.0:
        return a
    return (a[0] / n, a[1] / n, a[2] / n)


@_jit
def reflect(w, n):
    # mirror of w about n; both point away from the surface
    d = 2.0 * dot(w, n)
    return (d * n[0] - w[0], d * n[1] - w[1], d * n[2] - w[2])


@_jit
def onb(n):
    """Orthonormal tangents (s, t) for unit normal n (Duff et al. 2017)."""
    sign = math.copysign(1.0, n[2])
    a = -1.0 / (sign + n[2])
    b = n[0] * n[1] * a
    s = (1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0])
    t = (b, sign + n[1] * n[1] * a, -n[1])
    return s, t


@_jit
def to_local(w, s, t, n):
    return (dot(w, s), dot(w, t), dot(w, n))


@_jit
def to_world(w, s, t, n):
    return (
        w[0] * s[0] + w[1] * t[0] + w[2] * n[0],
        w[0] * s[1] + w[1] * t[1] + w[2] * n[1],
        w[0] * s[2] + w[1] * t[2] + w[2] * n[2],
    )


def as_tuple(v) -> tuple:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return (float(a[0]), float(a[1]), float(a[2]))
