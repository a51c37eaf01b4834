"""Quaternion and rotation-matrix helpers.

Quaternions are stored scalar-first, ``(w, x, y, z)``, and every function
broadcasts over leading axes.
"""

import numpy as np

__all__ = [
    "quat_identity",
    "quat_normalize",
    "quat_hemisphere",
    "quat_mul",
    "quat_conj",
    "quat_from_axis_angle",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_angle_between",
    "slerp",
    "rot6d",
    "remove_heading",
]


def quat_identity(shape=()):
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_hemisphere(q):
    """Flip quaternions so the scalar part is non-negative."""
    q = np.array(q, dtype=np.float64)
    flip = q[..., 0] < 0.0
    q[flip] *= -1.0
    return q


def quat_mul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    q = np.array(q, dtype=np.float64)
    q[..., 1:] *= -1.0
    return q


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (yy + zz)
    m[..., 0, 1] = 2 * (xy - wz)
    m[..., 0, 2] = 2 * (xz + wy)
    m[..., 1, 0] = 2 * (xy + wz)
    m[..., 1, 1] = 1 - 2 * (xx + zz)
    m[..., 1, 2] = 2 * (yz - wx)
    m[..., 2, 0] = 2 * (xz - wy)
    m[..., 2, 1] = 2 * (yz + wx)
    m[..., 2, 2] = 1 - 2 * (xx + yy)
    return m


def matrix_to_quat(m):
    """Rotation matrix to unit quaternion (Shepperd's method), scalar part >= 0."""
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, r in enumerate(flat):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            out[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            out[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            out[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            out[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    out = quat_hemisphere(quat_normalize(out))
    return out.reshape(m.shape[:-2] + (4,))


def quat_angle_between(a, b):
    """Geodesic angle between two rotations, insensitive to the q/-q ambiguity."""
    d = np.abs(np.sum(quat_normalize(a) * quat_normalize(b), axis=-1))
    return 2.0 * np.arccos(np.clip(d, 0.0, 1.0))


def slerp(q0, q1, t):
    """Spherical linear interpolation along the short arc.

    ``t`` broadcasts against the leading axes of ``q0``/``q1``.
    """
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    t = np.asarray(t, dtype=np.float64)[..., None]
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0.0, -q1, q1)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-12
    safe = np.where(small, 1.0, sin_theta)
    w0 = np.where(small, 1.0 - t, np.sin((1.0 - t) * theta) / safe)
    w1 = np.where(small, t, np.sin(t * theta) / safe)
    return quat_normalize(w0 * q0 + w1 * q1)


def rot6d(r):
    """First two columns of a rotation matrix, flattened column-major to 6 values."""
    r = np.asarray(r)
    return np.concatenate([r[..., :, 0], r[..., :, 1]], axis=-1)


def remove_heading(r, up=(0.0, 1.0, 0.0)):
    """Strip the rotation about ``up`` from ``r``: returns ``Ry(-heading) @ r``.

    The heading is read from the rotated local z axis projected on the ground
    plane, falling back to the local x axis when z is nearly vertical. The
    result is unchanged when ``r`` is pre-multiplied by any rotation about
    ``up``. Only the Y-up convention is supported.
    """
    r = np.asarray(r, dtype=np.float64)
    if tuple(up) != (0.0, 1.0, 0.0):
        raise ValueError("only Y-up is supported")
    fwd = r[..., :, 2]
    side = r[..., :, 0]
    use_side = (fwd[..., 0] ** 2 + fwd[..., 2] ** 2) < 1e-6
    # x axis heading is measured from +X, z axis heading from +Z
    heading = np.where(
        use_side,
        np.arctan2(-side[..., 2], side[..., 0]),
        np.arctan2(fwd[..., 0], fwd[..., 2]),
    )
    c, s = np.cos(-heading), np.sin(-heading)
    ry = np.zeros(r.shape[:-2] + (3, 3))
    ry[..., 0, 0] = c
    ry[..., 0, 2] = s
    ry[..., 1, 1] = 1.0
    ry[..., 2, 0] = -s
    ry[..., 2, 2] = c
    return ry @ r
