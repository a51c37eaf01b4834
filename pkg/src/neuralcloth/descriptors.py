"""Body motion descriptors.

Static descriptor per joint (9 values): 6D local rotation followed by the
gravity direction expressed in the joint's global frame. The root has no
parent, so its local rotation is taken with the heading about the vertical
removed; this keeps the whole descriptor invariant to rotating a motion
about the gravity axis.

Dynamic descriptor per joint (12 values): backward difference of the static
descriptor over dt, then the joint acceleration (second difference of global
joint positions) expressed in the joint's frame at the current time, not
normalized.
"""

import numpy as np

from .body import GRAVITY, G_ACC, Pose, PoseSequence, fk_transforms, local_rotations
from .errors import ConfigError
from .rotations import quat_mul, remove_heading, rot6d

STATIC_DIM = 9
DYNAMIC_DIM = 12

STATIC_MODES = ("6d+g", "6d", "quat")
DYNAMIC_MODES = ("local", "global")


def _static_from(skel, rotations, glob, mode="6d+g"):
    if mode == "quat":
        return quat_mul(skel.rest_rotations, rotations)
    local = local_rotations(skel, rotations)
    local[..., 0, :, :] = remove_heading(glob[..., 0, :3, :3])
    six = rot6d(local)
    if mode == "6d":
        return six
    if mode != "6d+g":
        raise ConfigError(f"unknown static descriptor mode {mode!r}")
    r = glob[..., :3, :3]
    g_hat = np.einsum("...ji,j->...i", r, GRAVITY / G_ACC)
    return np.concatenate([six, g_hat], axis=-1)


def static_descriptor(pose, skel, mode="6d+g"):
    """(K_total, 9) static descriptor of a single pose."""
    glob = fk_transforms(skel, pose.rotations[None], pose.root_translation[None])[0]
    return _static_from(skel, pose.rotations, glob, mode)


def dynamic_descriptor(window, dt, skel, mode="local", static_mode="6d+g"):
    """(K_total, 12) dynamic descriptor at the last of three uniformly spaced poses.

    ``window`` is ordered oldest first: (pose_{t-2}, pose_{t-1}, pose_t).
    """
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    if len(window) != 3:
        raise ConfigError("dynamic descriptor needs exactly 3 poses")
    seq = PoseSequence.from_poses(window, 1.0 / dt)
    _, dyn = sequence_descriptors(seq, skel, static_mode=static_mode, dynamic_mode=mode)
    return dyn[-1]


def sequence_descriptors(seq, skel, static_mode="6d+g", dynamic_mode="local", transforms=None):
    """Static (T, K, 9) and dynamic (T, K, 12) descriptors of a whole sequence.

    Frames before the first are treated as copies of frame 0, so frame 0 has
    a zero dynamic descriptor.
    """
    if dynamic_mode not in DYNAMIC_MODES:
        raise ConfigError(f"unknown dynamic descriptor mode {dynamic_mode!r}")
    dt = seq.dt
    glob = fk_transforms(skel, seq.rotations, seq.root_translations) if transforms is None else transforms
    static = _static_from(skel, seq.rotations, glob, static_mode)
    prev = np.concatenate([static[:1], static[:-1]], axis=0)
    vel = (static - prev) / dt
    p = glob[..., :3, 3]
    p1 = np.concatenate([p[:1], p[:-1]], axis=0)
    p2 = np.concatenate([p[:1], p[:1], p[:-2]], axis=0)[: len(p)]
    acc = (p - 2.0 * p1 + p2) / (dt * dt)
    if dynamic_mode == "local":
        acc = np.einsum("tkji,tkj->tki", glob[..., :3, :3], acc)
    return static, np.concatenate([vel, acc], axis=-1)


def prune_joints(desc, active_mask):
    """Keep the rows of active joints (second-to-last axis), order preserved."""
    mask = np.asarray(active_mask, dtype=bool)
    if not mask.any():
        raise ConfigError("active joint mask selects no joints")
    desc = np.asarray(desc)
    if desc.shape[-2] != mask.shape[0]:
        raise ConfigError(f"mask has {mask.shape[0]} entries for {desc.shape[-2]} joints")
    return desc[..., mask, :]


def _reflection(axis):
    s = np.ones(3)
    s["xyz".index(axis)] = -1.0
    return s


def mirror_rotations(rotations, translations, skel):
    """Mirror stacked rotations (..., K, 4) and root translations (..., 3)."""
    s = _reflection(skel.mirror_axis)
    q = np.asarray(rotations, dtype=np.float64)
    # S R S for a reflection S: vector part -> -S v, scalar unchanged
    qm = np.concatenate([q[..., :1], -s * q[..., 1:]], axis=-1)
    qm = qm[..., skel.mirror_map, :]
    return qm, np.asarray(translations) * s


def mirror_pose(pose, skel):
    q, t = mirror_rotations(pose.rotations, pose.root_translation, skel)
    return Pose(q, t)


def mirror_sequence(seq, skel):
    q, t = mirror_rotations(seq.rotations, seq.root_translations, skel)
    return PoseSequence(q, t, seq.fps)


class DescriptorStream:
    """Frame-by-frame descriptors for streaming inference.

    ``push(pose)`` returns (static (K, 9), dynamic (K, 12), global transforms
    (K, 4, 4)) and agrees with ``sequence_descriptors`` on the same frames;
    the first pushed frame is its own history.
    """

    def __init__(self, skel, dt, static_mode="6d+g", dynamic_mode="local"):
        if not dt > 0:
            raise ConfigError("dt must be > 0")
        if dynamic_mode not in DYNAMIC_MODES:
            raise ConfigError(f"unknown dynamic descriptor mode {dynamic_mode!r}")
        self.skel = skel
        self.dt = dt
        self.static_mode = static_mode
        self.dynamic_mode = dynamic_mode
        self.reset()

    def reset(self):
        self._static = None
        self._p1 = self._p2 = None

    def push(self, pose):
        glob = fk_transforms(self.skel, pose.rotations[None], pose.root_translation[None])[0]
        static = _static_from(self.skel, pose.rotations, glob, self.static_mode)
        p = glob[:, :3, 3]
        if self._static is None:
            self._static, self._p1, self._p2 = static, p, p
        vel = (static - self._static) / self.dt
        acc = (p - 2.0 * self._p1 + self._p2) / (self.dt * self.dt)
        if self.dynamic_mode == "local":
            acc = np.einsum("kji,kj->ki", glob[:, :3, :3], acc)
        self._static, self._p2, self._p1 = static, self._p1, p
        return static, np.concatenate([vel, acc], axis=-1), glob
