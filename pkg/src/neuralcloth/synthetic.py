"""Synthetic bodies, garments and motions for desk-scale experiments.

The pendulum scene is a four-joint chain hanging from a pivot 1.5 m above
the ground. Its skin is a lathe surface: a dome and a short cylinder (the
"shoulders" a garment rests on) followed by a thin rod. The garment is a
200-vertex open-crowned cap that covers the dome and hangs below it.
"""

import numpy as np

from .body import BodyModel, PoseSequence, Skeleton
from .mesh import FabricParams, GarmentMesh, grid_mesh
from .rotations import quat_from_axis_angle, quat_mul

PIVOT_HEIGHT = 1.5
SEGMENT = 0.3
JOINT_NAMES = ("pivot", "upper", "middle", "lower")

DOME_CENTER = 1.45
DOME_RADIUS = 0.16
SHOULDER_END = 1.30  # bottom of the cylinder below the dome
ROD_TOP = 1.18
ROD_RADIUS = 0.03
ROD_END = 0.55

ACTIONS = ("swing", "spin", "jump", "still")


def pendulum_skeleton():
    k = len(JOINT_NAMES)
    offsets = np.zeros((k, 3))
    offsets[0] = (0.0, PIVOT_HEIGHT, 0.0)
    offsets[1:, 1] = -SEGMENT
    rest = np.tile([1.0, 0.0, 0.0, 0.0], (k, 1))
    # the chain lies on the mirror plane, so every joint maps to itself
    return Skeleton(JOINT_NAMES, [-1, 0, 1, 2], offsets, rest, np.arange(k), "x")


def lathe(profile, segments):
    """Closed surface of revolution about +Y.

    ``profile`` is a list of (radius, height) rings from top to bottom; both
    ends are closed with a cap vertex. Faces wind outward.
    """
    profile = np.asarray(profile, dtype=np.float64)
    theta = 2.0 * np.pi * np.arange(segments) / segments
    rings = [np.stack([r * np.cos(theta), np.full(segments, y), r * np.sin(theta)], axis=1) for r, y in profile]
    top = np.array([[0.0, profile[0, 1], 0.0]])
    bottom = np.array([[0.0, profile[-1, 1], 0.0]])
    verts = np.concatenate([top, *rings, bottom])
    faces = []
    nr = len(profile)
    ring = lambda i, s: 1 + i * segments + s % segments  # noqa: E731
    for s in range(segments):
        faces.append((0, ring(0, s + 1), ring(0, s)))
    for i in range(nr - 1):
        for s in range(segments):
            a, b = ring(i, s), ring(i, s + 1)
            c, d = ring(i + 1, s), ring(i + 1, s + 1)
            faces += [(a, b, c), (b, d, c)]
    last = len(verts) - 1
    for s in range(segments):
        faces.append((last, ring(nr - 1, s), ring(nr - 1, s + 1)))
    return verts, np.array(faces, dtype=np.int64)


def _joint_heights(skel):
    return skel.rest_globals[:, 1, 3]


def pendulum_body(segments=24, rod_rings=8):
    """BodyModel of the pendulum: dome and shoulders skinned to the pivot,
    rod to the chain joints below it."""
    skel = pendulum_skeleton()
    polar = np.radians(np.arange(15, 91, 15))
    profile = [(DOME_RADIUS * np.sin(p), DOME_CENTER + DOME_RADIUS * np.cos(p)) for p in polar]
    profile += [(DOME_RADIUS, SHOULDER_END)]
    profile += [(ROD_RADIUS, float(y)) for y in np.linspace(ROD_TOP, ROD_END, rod_rings)]
    verts, faces = lathe(profile, segments)
    heights = _joint_heights(skel)
    weights = np.zeros((len(verts), skel.n_joints))
    # a rod vertex follows the lowest joint that sits above it
    seg = np.sum(verts[:, 1][:, None] <= heights[None, 1:] + 1e-9, axis=1)
    seg = np.where(verts[:, 1] >= SHOULDER_END - 1e-9, 0, np.maximum(seg, 1))
    weights[np.arange(len(verts)), seg] = 1.0
    return BodyModel(skel, verts, faces, weights)


def cap_garment(around=20, rings=10, dome_rings=6, clearance=0.015, drop=0.045, fabric=None):
    """Open-crowned cap of ``around * rings`` vertices.

    The first ``dome_rings`` rings follow the dome at polar angles 15, 30,
    ... degrees; the rest hang straight down below the equator. All blend
    weight goes to the pivot joint.
    """
    r_cap = DOME_RADIUS + clearance
    polar = np.radians(15.0 * (1 + np.arange(dome_rings)))
    radius = list(r_cap * np.sin(polar))
    ys = list(DOME_CENTER + r_cap * np.cos(polar))
    for i in range(rings - dome_rings):
        radius.append(r_cap)
        ys.append(ys[dome_rings - 1] - drop * (i + 1))
    theta = 2.0 * np.pi * np.arange(around) / around
    verts = np.concatenate(
        [np.stack([r * np.cos(theta), np.full(around, y), r * np.sin(theta)], axis=1) for r, y in zip(radius, ys)]
    )
    faces = []
    for i in range(rings - 1):
        for s in range(around):
            a, b = i * around + s, i * around + (s + 1) % around
            c, d = a + around, b + around
            faces += [(a, b, c), (b, d, c)] if s % 2 == 0 else [(a, b, d), (a, d, c)]
    faces = np.array(faces, dtype=np.int64)
    weights = np.zeros((len(verts), len(JOINT_NAMES)))
    weights[:, 0] = 1.0
    return GarmentMesh(verts, faces, None, weights, fabric or FabricParams(), JOINT_NAMES)


def swatch_garment(nx=10, ny=10, size=0.3, height=1.0, fabric=None, n_joints=len(JOINT_NAMES), joint_names=None):
    """Square horizontal swatch centered above the origin, rigidly skinned to
    joint 0. The diagonals alternate so the grid is mirror-symmetric."""
    verts, faces, uv = grid_mesh(nx, ny, size, size, alternate=True, origin=(-0.5 * size, height, -0.5 * size))
    weights = np.zeros((len(verts), n_joints))
    weights[:, 0] = 1.0
    names = tuple(joint_names) if joint_names is not None else JOINT_NAMES[:n_joints]
    return GarmentMesh(verts, faces, uv, weights, fabric or FabricParams(), names)


def icosphere(radius=1.0, subdivisions=2, center=(0.0, 0.0, 0.0)):
    """Closed, outward-wound sphere mesh; returns (vertices, faces)."""
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]  # fmt: skip
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]  # fmt: skip
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return radius * np.array(verts) + np.asarray(center, dtype=np.float64), np.array(faces, dtype=np.int64)


# ---------------------------------------------------------------------------
# motions
# ---------------------------------------------------------------------------


def _axis_rot(axis, angle):
    return quat_from_axis_angle(np.broadcast_to(np.asarray(axis, dtype=np.float64), np.shape(angle) + (3,)), angle)


def _chain_swing(rng, t, k, amp):
    """Small independent swings of the child joints, (T, K-1, 4)."""
    out = []
    for _ in range(1, k):
        axis = np.array([rng.uniform(-1, 1), 0.0, rng.uniform(-1, 1)])
        axis /= np.linalg.norm(axis) + 1e-12
        freq = rng.uniform(0.4, 1.2)
        out.append(_axis_rot(axis, amp * rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * freq * t)))
    return np.stack(out, axis=1)


def motion(action, n_frames=100, fps=30.0, seed=0, k=len(JOINT_NAMES)):
    """One synthetic pose sequence.

    ``swing``: sinusoidal pendulum swing about a horizontal axis.
    ``spin``: rotation about the vertical that speeds up, with a slight tilt.
    ``jump``: smooth vertical bounces of the root.
    ``still``: a random pose held constant.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) / fps
    root_t = np.zeros((n_frames, 3))
    if action == "swing":
        yaw = rng.uniform(0, 2 * np.pi)
        axis = np.array([np.cos(yaw), 0.0, np.sin(yaw)])
        amp = rng.uniform(0.2, 0.5)
        freq = rng.uniform(0.6, 1.2)
        root = _axis_rot(axis, amp * np.sin(2 * np.pi * freq * t))
        chain = _chain_swing(rng, t, k, 0.3)
    elif action == "spin":
        omega = rng.uniform(2.0, 5.0) * rng.choice([-1.0, 1.0])
        ramp = np.minimum(t / 1.0, 1.0)
        angle = omega * np.where(t < 1.0, 0.5 * t * ramp, t - 0.5)
        tilt = _axis_rot([1.0, 0.0, 0.0], np.full(n_frames, rng.uniform(0.0, 0.15)))
        root = quat_mul(_axis_rot([0.0, 1.0, 0.0], angle), tilt)
        chain = _chain_swing(rng, t, k, 0.2)
    elif action == "jump":
        # smooth bounces; near the top the downward acceleration exceeds g
        # so the garment briefly floats
        period = rng.uniform(0.45, 0.6)
        height = rng.uniform(1.0, 1.4) * 9.81 * period**2 / (2.0 * np.pi**2)
        root_t[:, 1] = 0.5 * height * (1.0 - np.cos(2.0 * np.pi * t / period))
        root = _axis_rot([0.0, 1.0, 0.0], np.full(n_frames, rng.uniform(0, 2 * np.pi)))
        chain = _chain_swing(rng, t, k, 0.15)
    elif action == "still":
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        root = _axis_rot(axis, np.full(n_frames, rng.uniform(0.0, 0.3)))
        child = [_axis_rot(rng.normal(size=3) / 2.0, np.full(n_frames, rng.uniform(0.0, 0.3))) for _ in range(1, k)]
        chain = np.stack(child, axis=1)
    else:
        raise ValueError(f"unknown action {action!r}")
    rot = np.concatenate([root[:, None], chain], axis=1)
    return PoseSequence(rot, root_t, fps)


def motion_library(n_per_action=5, n_frames=100, fps=30.0, seed=0, actions=ACTIONS):
    """List of (action, PoseSequence) pairs, seeded."""
    out = []
    for a, action in enumerate(actions):
        for i in range(n_per_action):
            out.append((action, motion(action, n_frames, fps, seed=seed * 1000 + a * 100 + i)))
    return out


def constant_sequence(pose, n_frames, fps=30.0):
    return PoseSequence(np.repeat(pose.rotations[None], n_frames, axis=0), np.repeat(pose.root_translation[None], n_frames, axis=0), fps)
