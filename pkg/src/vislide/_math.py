"""Allocation-free 3-vector and quaternion helpers for the numba kernels.

Vectors are plain float tuples so the inner physics loop never touches the
heap. Quaternions are (w, x, y, z) and rotate body vectors into the world.
"""

import math

from numba import njit


@njit(cache=True, inline="always")
def add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@njit(cache=True, inline="always")
def sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@njit(cache=True, inline="always")
def scale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@njit(cache=True, inline="always")
def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True, inline="always")
def cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


@njit(cache=True, inline="always")
def norm(a):
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@njit(cache=True, inline="always")
def matvec(m, v):
    return (
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    )


@njit(cache=True, inline="always")
def matTvec(m, v):
    return (
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    )


@njit(cache=True, inline="always")
def matTmat(a, b):
    """aᵀ b for 3x3 nested tuples."""
    c0 = matTvec(a, (b[0][0], b[1][0], b[2][0]))
    c1 = matTvec(a, (b[0][1], b[1][1], b[2][1]))
    c2 = matTvec(a, (b[0][2], b[1][2], b[2][2]))
    return ((c0[0], c1[0], c2[0]), (c0[1], c1[1], c2[1]), (c0[2], c1[2], c2[2]))


@njit(cache=True)
def quat_to_rot(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    return (
        (1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)),
        (2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)),
        (2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)),
    )


@njit(cache=True, inline="always")
def quat_mul(a, b):
    return (
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )


@njit(cache=True)
def quat_exp(rv):
    """Unit quaternion of the rotation vector ``rv`` (axis * angle)."""
    angle = norm(rv)
    if angle < 1e-12:
        # second-order series keeps the small-angle branch smooth
        return (1.0 - 0.125 * angle * angle, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2])
    half = 0.5 * angle
    s = math.sin(half) / angle
    return (math.cos(half), rv[0] * s, rv[1] * s, rv[2] * s)


@njit(cache=True, inline="always")
def quat_normalize(q):
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return (q[0] / n, q[1] / n, q[2] / n, q[3] / n)


@njit(cache=True)
def attitude_error(R, R_ref):
    """vee(0.5 (R_refᵀ R - Rᵀ R_ref)), the body-frame so(3) attitude error."""
    A = matTmat(R_ref, R)
    # A - Aᵀ is skew; vee picks (32, 13, 21)
    return (
        0.5 * (A[2][1] - A[1][2]),
        0.5 * (A[0][2] - A[2][0]),
        0.5 * (A[1][0] - A[0][1]),
    )


@njit(cache=True, inline="always")
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)
