"""Skeletons, forward kinematics, linear blend skinning and signed distance
queries against the posed body surface."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from ._jit import USE_NUMBA
from .errors import ConfigError, TopologyError
from .rotations import (
    quat_from_axis_angle,
    quat_hemisphere,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    slerp,
)

log = logging.getLogger(__name__)

GRAVITY = np.array([0.0, -9.81, 0.0])
G_ACC = 9.81
UNIT_TOL = 1e-6

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint hierarchy in topological order.

    ``offsets`` are joint origins in the parent frame, ``rest_rotations`` the
    rest orientation of each joint relative to its parent. ``mirror_map[j]``
    is the joint that ``j`` maps to under left/right mirroring and
    ``mirror_axis`` the axis normal to the sagittal plane.
    """

    names: tuple
    parents: np.ndarray
    offsets: np.ndarray
    rest_rotations: np.ndarray
    mirror_map: np.ndarray
    mirror_axis: str = "x"
    active_mask: np.ndarray | None = None

    def __post_init__(self):
        k = len(self.names)
        parents = np.asarray(self.parents, dtype=np.int64)
        if parents.shape != (k,):
            raise ConfigError("one parent per joint required")
        for j, p in enumerate(parents):
            if j == 0 and p != -1:
                raise ConfigError("joint 0 must be the root")
            if j > 0 and not 0 <= p < j:
                raise ConfigError(f"joint {self.names[j]!r}: parent index must precede the child")
        mirror = np.asarray(self.mirror_map, dtype=np.int64)
        if mirror.shape != (k,) or np.any(mirror[mirror] != np.arange(k)):
            raise ConfigError("mirror_map must be an involution over joints")
        if self.mirror_axis not in _AXES:
            raise ConfigError(f"mirror_axis must be one of x/y/z, got {self.mirror_axis!r}")
        active = np.ones(k, dtype=bool) if self.active_mask is None else np.asarray(self.active_mask, dtype=bool)
        if active.shape != (k,):
            raise ConfigError("active_mask length must match the joint count")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64).reshape(k, 3))
        object.__setattr__(self, "rest_rotations", quat_hemisphere(quat_normalize(np.asarray(self.rest_rotations).reshape(k, 4))))
        object.__setattr__(self, "mirror_map", mirror)
        object.__setattr__(self, "active_mask", active)
        object.__setattr__(self, "names", tuple(self.names))
        rest = fk_transforms(self, np.tile([1.0, 0, 0, 0], (1, k, 1)), np.zeros((1, 3)))[0]
        object.__setattr__(self, "rest_globals", rest)
        object.__setattr__(self, "rest_globals_inv", np.linalg.inv(rest))

    @property
    def n_joints(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    @classmethod
    def from_json(cls, path):
        doc = json.loads(Path(path).read_text())
        joints = doc["joints"]
        names = [j["name"] for j in joints]
        index = {n: i for i, n in enumerate(names)}
        parents = [-1 if j.get("parent") is None else index[j["parent"]] for j in joints]
        offsets = [j.get("offset", [0.0, 0.0, 0.0]) for j in joints]
        rest = [j.get("rest_rotation", [1.0, 0.0, 0.0, 0.0]) for j in joints]
        mirror = list(range(len(names)))
        for a, b in doc.get("mirror_pairs", []):
            mirror[index[a]], mirror[index[b]] = index[b], index[a]
        active = doc.get("active")
        mask = None if active is None else [n in set(active) for n in names]
        return cls(tuple(names), parents, offsets, rest, mirror, doc.get("mirror_axis", "x"), mask)

    def to_json(self, path):
        pairs = sorted({tuple(sorted((j, int(m)))) for j, m in enumerate(self.mirror_map) if m != j})
        doc = {
            "joints": [
                {
                    "name": n,
                    "parent": None if p < 0 else self.names[p],
                    "offset": self.offsets[j].tolist(),
                    "rest_rotation": self.rest_rotations[j].tolist(),
                }
                for j, (n, p) in enumerate(zip(self.names, self.parents))
            ],
            "mirror_pairs": [[self.names[a], self.names[b]] for a, b in pairs],
            "mirror_axis": self.mirror_axis,
            "active": [n for n, a in zip(self.names, self.active_mask) if a],
        }
        Path(path).write_text(json.dumps(doc, indent=1))


@dataclass(frozen=True, eq=False)
class Pose:
    rotations: np.ndarray  # (K, 4) local unit quaternions
    root_translation: np.ndarray  # (3,)

    def __post_init__(self):
        q = np.asarray(self.rotations, dtype=np.float64)
        if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > UNIT_TOL):
            raise ConfigError("pose quaternions must be unit norm")
        object.__setattr__(self, "rotations", quat_hemisphere(quat_normalize(q)))
        object.__setattr__(self, "root_translation", np.asarray(self.root_translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls, n_joints, root_translation=(0.0, 0.0, 0.0)):
        q = np.zeros((n_joints, 4))
        q[:, 0] = 1.0
        return cls(q, np.asarray(root_translation, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Frames stored as stacked arrays: rotations (T, K, 4), translations (T, 3)."""

    rotations: np.ndarray
    root_translations: np.ndarray
    fps: float

    def __post_init__(self):
        q = np.asarray(self.rotations, dtype=np.float64)
        t = np.asarray(self.root_translations, dtype=np.float64)
        if q.ndim != 3 or q.shape[-1] != 4 or len(q) < 1:
            raise ConfigError("pose sequence needs at least one frame of (K, 4) quaternions")
        if t.shape != (len(q), 3):
            raise ConfigError("one root translation per frame required")
        if not self.fps > 0:
            raise ConfigError("fps must be > 0")
        object.__setattr__(self, "rotations", quat_hemisphere(quat_normalize(q)))
        object.__setattr__(self, "root_translations", t)

    def __len__(self):
        return len(self.rotations)

    def __getitem__(self, i):
        return Pose(self.rotations[i], self.root_translations[i])

    @property
    def dt(self):
        return 1.0 / self.fps

    @property
    def duration(self):
        return (len(self) - 1) / self.fps

    @classmethod
    def from_poses(cls, poses, fps):
        return cls(np.stack([p.rotations for p in poses]), np.stack([p.root_translation for p in poses]), fps)

    @classmethod
    def from_json(cls, path, skeleton):
        doc = json.loads(Path(path).read_text())
        k = skeleton.n_joints
        frames = doc["frames"]
        rot = np.zeros((len(frames), k, 4))
        rot[..., 0] = 1.0
        trans = np.zeros((len(frames), 3))
        for f, fr in enumerate(frames):
            trans[f] = fr.get("root_t", [0.0, 0.0, 0.0])
            for name, q in fr.get("rot", {}).items():
                rot[f, skeleton.index(name)] = q
        return cls(rot, trans, float(doc["fps"]))

    def to_json(self, path, skeleton):
        frames = [
            {
                "root_t": self.root_translations[f].tolist(),
                "rot": {n: self.rotations[f, j].tolist() for j, n in enumerate(skeleton.names)},
            }
            for f in range(len(self))
        ]
        Path(path).write_text(json.dumps({"fps": self.fps, "frames": frames}))


# ---------------------------------------------------------------------------
# forward kinematics and skinning
# ---------------------------------------------------------------------------


def local_rotations(skel, rotations):
    return quat_to_matrix(quat_mul(skel.rest_rotations, rotations))


def fk_transforms(skel, rotations, root_translations):
    """Global 4x4 joint transforms for a batch of frames.

    rotations (..., K, 4), root_translations (..., 3) -> (..., K, 4, 4)
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    lead = rotations.shape[:-2]
    k = rotations.shape[-2]
    local = np.zeros(lead + (k, 4, 4))
    local[..., :3, :3] = local_rotations(skel, rotations)
    local[..., :3, 3] = skel.offsets
    local[..., 0, :3, 3] += np.asarray(root_translations)
    local[..., 3, 3] = 1.0
    glob = np.empty_like(local)
    glob[..., 0, :, :] = local[..., 0, :, :]
    for j in range(1, k):
        glob[..., j, :, :] = glob[..., skel.parents[j], :, :] @ local[..., j, :, :]
    return glob


def forward_kinematics(skel, pose):
    """Global joint transforms (K, 4, 4) of a single pose."""
    return fk_transforms(skel, pose.rotations[None], pose.root_translation[None])[0]


def skinning_matrices(skel, global_transforms):
    """Per-joint rest-to-posed transforms ``G_j @ inv(G_j_rest)``."""
    return np.asarray(global_transforms) @ skel.rest_globals_inv


def skin_lbs(vertices, weights, global_transforms, skel):
    mats = np.ascontiguousarray(skinning_matrices(skel, global_transforms))
    return kernels.skin(np.ascontiguousarray(vertices, dtype=np.float64), np.ascontiguousarray(weights), mats)


def blend_matrices(weights, mats):
    """Per-vertex blended linear part (N, 3, 3) and translation (N, 3)."""
    lin = np.einsum("nk,...kij->...nij", weights, mats[..., :3, :3])
    trans = np.einsum("nk,...ki->...ni", weights, mats[..., :3, 3])
    return lin, trans


# ---------------------------------------------------------------------------
# signed distance
# ---------------------------------------------------------------------------


def face_normals(vertices, faces):
    n = np.cross(vertices[faces[:, 1]] - vertices[faces[:, 0]], vertices[faces[:, 2]] - vertices[faces[:, 0]])
    return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)


def vertex_normals(vertices, faces, fn=None):
    """Angle-weighted vertex pseudo-normals."""
    fn = face_normals(vertices, faces) if fn is None else fn
    acc = np.zeros_like(vertices)
    for c in range(3):
        a = vertices[faces[:, c]]
        b = vertices[faces[:, (c + 1) % 3]] - a
        d = vertices[faces[:, (c + 2) % 3]] - a
        cosang = np.sum(b * d, axis=1) / np.maximum(np.linalg.norm(b, axis=1) * np.linalg.norm(d, axis=1), 1e-300)
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(acc, faces[:, c], ang[:, None] * fn)
    return acc / np.maximum(np.linalg.norm(acc, axis=1, keepdims=True), 1e-300)


class SurfaceTopology:
    """Edge adjacency of a closed triangle mesh, shared by all its posings."""

    def __init__(self, faces):
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if len(self.faces) == 0:
            raise ConfigError("body mesh has no faces")
        f = self.faces
        pairs = np.stack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=1).reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        self.edges = uniq
        self.tri_edges = inv.reshape(-1, 3)
        counts = np.bincount(inv, minlength=len(uniq))
        if np.any(counts > 2):
            raise TopologyError("body mesh is non-manifold")
        self.closed = bool(np.all(counts == 2))


class BodySurface:
    """Posed body triangles with pseudo-normals and a lazily built BVH."""

    def __init__(self, vertices, topology):
        if not isinstance(topology, SurfaceTopology):
            topology = SurfaceTopology(topology)
        self.topology = topology
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = topology.faces
        self.face_normals = face_normals(self.vertices, self.faces)
        self.vertex_normals = vertex_normals(self.vertices, self.faces, self.face_normals)
        en = np.zeros((len(topology.edges), 3))
        np.add.at(en, topology.tri_edges.reshape(-1), np.repeat(self.face_normals, 3, axis=0))
        self.edge_normals = en / np.maximum(np.linalg.norm(en, axis=1, keepdims=True), 1e-300)
        self._bvh = None
        self._kd = None

    def bvh(self):
        if self._bvh is None:
            self._bvh = kernels.build_bvh_nb(self.vertices, self.faces, 4)
        return self._bvh

    def closest(self, points, method="auto"):
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        if method == "auto":
            method = "bvh" if USE_NUMBA else "kdtree"
        if method == "bvh":
            return kernels.query_bvh_nb(points, self.vertices, self.faces, *self.bvh())
        if method == "kdtree":
            if self._kd is None:
                self._kd = kernels.CentroidIndex(self.vertices, self.faces)
            return self._kd.query(points)
        if method == "brute":
            return kernels.closest_brute_np(points, self.vertices, self.faces)
        raise ValueError(f"unknown method {method!r}")

    def pseudo_normals(self, tri, feat):
        out = np.empty((len(tri), 3))
        is_face = feat == kernels.FEATURE_FACE
        is_vert = feat < 3
        is_edge = ~is_face & ~is_vert
        out[is_face] = self.face_normals[tri[is_face]]
        out[is_vert] = self.vertex_normals[self.faces[tri[is_vert], feat[is_vert]]]
        out[is_edge] = self.edge_normals[self.topology.tri_edges[tri[is_edge], feat[is_edge] - 3]]
        return out

    def signed_distance(self, points, method="auto"):
        """Signed distances (negative inside), their gradients and the
        nearest surface points.

        The gradient is the unit vector from the nearest point, oriented by
        the pseudo-normal sign; on the surface itself it falls back to the
        pseudo-normal.
        """
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        closest, tri, feat, dist2 = self.closest(points, method)
        normal = self.pseudo_normals(tri, feat)
        delta = points - closest
        dist = np.sqrt(dist2)
        sign = np.where(np.sum(delta * normal, axis=1) >= 0.0, 1.0, -1.0)
        grad = np.where(
            (dist > 1e-12)[:, None],
            sign[:, None] * delta / np.where(dist > 1e-12, dist, 1.0)[:, None],
            normal,
        )
        return sign * dist, grad, closest


def signed_distance(point, surface, method="auto"):
    """Signed distance of a single point (meters, negative inside)."""
    if surface is None or len(surface.faces) == 0:
        raise ConfigError("empty body mesh")
    d, _, _ = surface.signed_distance(np.asarray(point, dtype=np.float64).reshape(1, 3), method)
    return float(d[0])


@dataclass(frozen=True, eq=False)
class PosedBody:
    global_transforms: np.ndarray
    skin_vertices: np.ndarray
    skin_normals: np.ndarray
    surface: BodySurface


class BodyModel:
    """Skeleton plus a skinned closed surface mesh."""

    def __init__(self, skeleton, vertices, faces, weights):
        self.skeleton = skeleton
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        if self.weights.shape != (len(self.vertices), skeleton.n_joints):
            raise ConfigError("body skin weights must be (N_body, K_total)")
        self.topology = SurfaceTopology(self.faces)
        if not self.topology.closed:
            log.warning("body mesh is not closed; inside/outside signs may be unreliable")

    def pose(self, pose):
        g = forward_kinematics(self.skeleton, pose)
        return self.pose_from_transforms(g)

    def pose_from_transforms(self, global_transforms):
        verts = skin_lbs(self.vertices, self.weights, global_transforms, self.skeleton)
        surf = BodySurface(verts, self.topology)
        return PosedBody(global_transforms, verts, surf.vertex_normals, surf)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------


def resample_slerp(seq, target_fps):
    """Resample a pose sequence: Slerp per joint, linear root translation."""
    if not target_fps > 0:
        raise ConfigError("target_fps must be > 0")
    n_out = int(round(seq.duration * target_fps)) + 1
    src = np.arange(n_out) * (seq.fps / target_fps)
    src = np.minimum(src, len(seq) - 1)
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    # snap to source frames that coincide with a target sample
    snap = np.isclose(frac, 0.0, atol=1e-9) | np.isclose(frac, 1.0, atol=1e-9)
    i0 = np.where(np.isclose(frac, 1.0, atol=1e-9), i0 + 1, i0)
    frac = np.where(snap, 0.0, frac)
    i0 = np.minimum(i0, len(seq) - 1)
    i1 = np.minimum(i0 + 1, len(seq) - 1)
    q0 = seq.rotations[i0]
    q1 = seq.rotations[i1]
    k = q0.shape[1]
    rot = slerp(q0, q1, np.repeat(frac[:, None], k, axis=1))
    rot[snap] = q0[snap]
    trans = (1.0 - frac)[:, None] * seq.root_translations[i0] + frac[:, None] * seq.root_translations[i1]
    trans[snap] = seq.root_translations[i0[snap]]
    return PoseSequence(rot, trans, float(target_fps))


def transfer_weights(garment_vertices, body_vertices, body_weights):
    """Copy each garment vertex's weights from its nearest rest body vertex."""
    from scipy.spatial import cKDTree

    _, idx = cKDTree(np.asarray(body_vertices)).query(np.asarray(garment_vertices), k=1)
    log.info("garment blend weights transferred from the body (nearest vertex)")
    return np.asarray(body_weights)[idx].copy()


def load_body(skeleton_path, skin_obj, skin_weights):
    from .mesh import read_obj, read_weights

    skel = Skeleton.from_json(skeleton_path)
    verts, faces, _ = read_obj(skin_obj)
    w, _ = read_weights(skin_weights, skel.names, n_rows=len(verts))
    return BodyModel(skel, verts, faces, w)


def rotation_about(axis, angle):
    """Unit quaternion for a rotation of ``angle`` rad about ``axis``."""
    return quat_from_axis_angle(np.asarray(axis, dtype=np.float64), angle)
