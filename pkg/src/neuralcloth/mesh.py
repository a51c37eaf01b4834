"""Garment meshes: OBJ/weights I/O, edge and dihedral topology, rest-state
quantities and lumped masses."""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, DegenerateError, NonManifoldError, TopologyError, WeightError

log = logging.getLogger(__name__)

__all__ = [
    "MaterialModel",
    "FabricParams",
    "GarmentMesh",
    "Topology",
    "RestState",
    "read_obj",
    "write_obj",
    "read_weights",
    "load_garment",
    "build_topology",
    "compute_rest_state",
    "lump_masses",
    "grid_mesh",
]

WEIGHT_SUM_TOL = 1e-6
WEIGHT_LOAD_TOL = 1e-3


class MaterialModel(str, Enum):
    MASS_SPRING = "MassSpring"
    BARAFF_WITKIN_SQ = "BaraffWitkinSq"
    STVK = "StVK"


@dataclass(frozen=True)
class FabricParams:
    """Fabric density (kg/m^2), stiffnesses and the collision margin (m)."""

    density: float = 0.3
    k_stretch: float = 10.0
    k_shear: float = 0.5
    k_bend: float = 5e-5
    k_collision: float = 10.0
    collision_eps: float = 4e-3
    material_model: MaterialModel = MaterialModel.MASS_SPRING
    lame_mu: float = 10.0
    lame_lambda: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "material_model", MaterialModel(self.material_model))
        if not self.density > 0:
            raise ConfigError("fabric.density must be > 0")
        for name in ("k_stretch", "k_shear", "k_bend", "k_collision", "lame_mu", "lame_lambda"):
            if getattr(self, name) < 0:
                raise ConfigError(f"fabric.{name} must be >= 0")
        if self.collision_eps < 0:
            raise ConfigError("fabric.collision_eps must be >= 0")


@dataclass(frozen=True, eq=False)
class GarmentMesh:
    vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray | None
    blend_weights: np.ndarray
    fabric: FabricParams = field(default_factory=FabricParams)
    joint_names: tuple = ()
    face_uv: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        w = np.ascontiguousarray(self.blend_weights, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise TopologyError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise TopologyError(f"faces must be triangles (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise TopologyError("face index out of range")
        if w.shape[0] != len(v):
            raise WeightError(f"{w.shape[0]} weight rows for {len(v)} vertices")
        if np.any(w < 0):
            raise WeightError("negative blend weight")
        bad = np.abs(w.sum(axis=1) - 1.0) > WEIGHT_SUM_TOL
        if np.any(bad):
            raise WeightError(f"blend weights of vertex {int(np.argmax(bad))} do not sum to 1")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "blend_weights", w)
        for arr in (v, f, w):
            arr.flags.writeable = False
        face_uv = self.face_uv
        if face_uv is None and self.uv is not None:
            face_uv = np.asarray(self.uv, dtype=np.float64)[f]
        object.__setattr__(self, "face_uv", face_uv)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def with_vertices(self, vertices):
        """Copy with replaced rest vertices (UVs kept)."""
        return GarmentMesh(vertices, self.faces, self.uv, self.blend_weights, self.fabric, self.joint_names, self.face_uv)


@dataclass(frozen=True, eq=False)
class Topology:
    edges: np.ndarray  # (E, 2) sorted pairs, lexicographic order
    dihedrals: np.ndarray  # (D, 4) vertex quads (i, j, k, l), see kernels
    dihedral_edges: np.ndarray  # (D,) index into edges
    dihedral_faces: np.ndarray  # (D, 2)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_dihedrals(self):
        return len(self.dihedrals)


@dataclass(frozen=True, eq=False)
class RestState:
    edge_lengths: np.ndarray
    rest_dihedrals: np.ndarray
    face_areas: np.ndarray
    uv_frames: np.ndarray  # (F, 2, 2) inverse material matrices
    uv_areas: np.ndarray
    dihedral_scale: np.ndarray  # l^2 / (8 a)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def read_obj(path):
    """Parse an ASCII OBJ. Returns (vertices, faces, face_uv or None).

    ``face_uv`` holds per-corner texture coordinates, so UV seams survive.
    """
    verts, uvs, faces, face_t = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                verts.append([float(c) for c in parts[1:4]])
            elif tag == "vt":
                uvs.append([float(c) for c in parts[1:3]])
            elif tag == "f":
                corners = parts[1:]
                if len(corners) != 3:
                    raise TopologyError(f"{path}:{lineno}: face with {len(corners)} vertices, only triangles supported")
                vi, ti = [], []
                for c in corners:
                    fields = c.split("/")
                    vi.append(int(fields[0]))
                    ti.append(int(fields[1]) if len(fields) > 1 and fields[1] else None)
                faces.append(vi)
                face_t.append(ti)
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    f = np.where(f < 0, f + len(v), f - 1)
    face_uv = None
    if uvs and face_t and all(t is not None for tri in face_t for t in tri):
        t = np.array(face_t, dtype=np.int64)
        uv = np.array(uvs, dtype=np.float64)
        t = np.where(t < 0, t + len(uv), t - 1)
        face_uv = uv[t]
    return v, f, face_uv


def write_obj(path, vertices, faces, uv=None):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices)]
    if uv is not None:
        lines += [f"vt {u:.9g} {v:.9g}" for u, v in np.asarray(uv)]
        lines += [f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in np.asarray(faces)]
    else:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_weights(path, joint_names=None, n_rows=None):
    """Read a JSON array of ``{joint: weight}`` rows into an (N, K) matrix.

    Rows off by at most 1e-3 from unit sum are renormalized, anything
    further raises ``WeightError``.
    """
    rows = json.loads(Path(path).read_text())
    if not isinstance(rows, list):
        raise WeightError(f"{path}: expected a JSON array of rows")
    if joint_names is None:
        names = []
        for row in rows:
            names.extend(k for k in row if k not in names)
        joint_names = names
    index = {name: i for i, name in enumerate(joint_names)}
    if n_rows is not None and len(rows) != n_rows:
        raise WeightError(f"{path}: {len(rows)} rows for {n_rows} vertices")
    w = np.zeros((len(rows), len(joint_names)))
    for r, row in enumerate(rows):
        for name, val in row.items():
            if name not in index:
                raise WeightError(f"{path}: row {r} names unknown joint {name!r}")
            w[r, index[name]] = float(val)
    if np.any(w < 0):
        raise WeightError(f"{path}: negative weight")
    sums = w.sum(axis=1)
    bad = np.abs(sums - 1.0) > WEIGHT_LOAD_TOL
    if np.any(bad):
        r = int(np.argmax(bad))
        raise WeightError(f"{path}: row {r} sums to {sums[r]:.6g}")
    return w / sums[:, None], tuple(joint_names)


def write_weights(path, weights, joint_names):
    rows = [{name: float(w) for name, w in zip(joint_names, row) if w != 0.0} for row in np.asarray(weights)]
    Path(path).write_text(json.dumps(rows))


def load_garment(obj_path, weights_path, fabric=None, joint_names=None):
    vertices, faces, face_uv = read_obj(obj_path)
    weights, names = read_weights(weights_path, joint_names, n_rows=len(vertices))
    uv = _per_vertex_uv(faces, face_uv, len(vertices))
    return GarmentMesh(vertices, faces, uv, weights, fabric or FabricParams(), names, face_uv)


def _per_vertex_uv(faces, face_uv, n):
    if face_uv is None:
        return None
    uv = np.full((n, 2), np.nan)
    uv[faces.reshape(-1)] = face_uv.reshape(-1, 2)
    # seams give a vertex several UVs: no single per-vertex map then
    if np.any(np.abs(uv[faces] - face_uv) > 1e-12):
        return None
    return uv


# ---------------------------------------------------------------------------
# topology and rest state
# ---------------------------------------------------------------------------


def build_topology(mesh):
    faces = mesh.faces
    # directed half-edges in face winding, keyed by the unordered pair
    owners = {}
    for fi, (a, b, c) in enumerate(faces.tolist()):
        for u, v, opp in ((a, b, c), (b, c, a), (c, a, b)):
            key = (u, v) if u < v else (v, u)
            owners.setdefault(key, []).append((fi, u, v, opp))
    edges = np.array(sorted(owners), dtype=np.int64).reshape(-1, 2)
    quads, dedges, dfaces = [], [], []
    for ei, key in enumerate(map(tuple, edges.tolist())):
        inc = owners[key]
        if len(inc) > 2:
            raise NonManifoldError(f"edge {key} shared by {len(inc)} faces")
        if len(inc) == 2:
            (f0, i, j, k), (f1, _, _, l) = sorted(inc)
            quads.append((i, j, k, l))
            dedges.append(ei)
            dfaces.append((f0, f1))
    return Topology(
        edges=edges,
        dihedrals=np.array(quads, dtype=np.int64).reshape(-1, 4),
        dihedral_edges=np.array(dedges, dtype=np.int64),
        dihedral_faces=np.array(dfaces, dtype=np.int64).reshape(-1, 2),
    )


def triangle_areas(vertices, faces):
    v = np.asarray(vertices)
    n = np.cross(v[faces[:, 1]] - v[faces[:, 0]], v[faces[:, 2]] - v[faces[:, 0]])
    return 0.5 * np.linalg.norm(n, axis=1)


def _flatten_faces(vertices, faces):
    """Isometric per-face unfold used when the OBJ has no UVs."""
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    e1 = b - a
    e2 = c - a
    l1 = np.linalg.norm(e1, axis=1)
    u = e1 / np.where(l1 > 0, l1, 1.0)[:, None]
    p = np.sum(e2 * u, axis=1)
    h = np.linalg.norm(e2 - p[:, None] * u, axis=1)
    out = np.zeros((len(faces), 3, 2))
    out[:, 1, 0] = l1
    out[:, 2, 0] = p
    out[:, 2, 1] = h
    return out


def compute_rest_state(mesh, topo):
    v, f = mesh.vertices, mesh.faces
    areas = triangle_areas(v, f)
    if np.any(areas < kernels.DEGENERATE_AREA):
        raise DegenerateError(f"face {int(np.argmin(areas))} has rest area {areas.min():.3g} m^2")
    lengths = np.linalg.norm(v[topo.edges[:, 0]] - v[topo.edges[:, 1]], axis=1)
    face_uv = mesh.face_uv if mesh.face_uv is not None else _flatten_faces(v, f)
    dm = np.stack([face_uv[:, 1] - face_uv[:, 0], face_uv[:, 2] - face_uv[:, 0]], axis=2)
    det = dm[:, 0, 0] * dm[:, 1, 1] - dm[:, 0, 1] * dm[:, 1, 0]
    uv_areas = 0.5 * np.abs(det)
    if np.any(uv_areas < kernels.DEGENERATE_AREA):
        raise DegenerateError(f"face {int(np.argmin(uv_areas))} has a degenerate UV frame")
    dm_inv = np.linalg.inv(dm)
    phi = kernels.dihedral_angles_np(v, topo.dihedrals)
    l_common = lengths[topo.dihedral_edges]
    a_sum = areas[topo.dihedral_faces].sum(axis=1) if len(topo.dihedral_faces) else np.zeros(0)
    return RestState(
        edge_lengths=lengths,
        rest_dihedrals=phi,
        face_areas=areas,
        uv_frames=np.ascontiguousarray(dm_inv),
        uv_areas=uv_areas,
        dihedral_scale=l_common**2 / (8.0 * a_sum) if len(a_sum) else np.zeros(0),
    )


def lump_masses(mesh, rest=None):
    areas = rest.face_areas if rest is not None else triangle_areas(mesh.vertices, mesh.faces)
    share = np.repeat(mesh.fabric.density * areas / 3.0, 3)
    return np.bincount(mesh.faces.reshape(-1), weights=share, minlength=mesh.n_vertices)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def grid_mesh(nx, ny, width=1.0, height=1.0, alternate=False, plane="xz", origin=(0.0, 0.0, 0.0)):
    """Regular nx-by-ny vertex grid split into triangles.

    ``alternate`` flips the diagonal on a checkerboard so that grids with an
    even number of cells per row are mirror-symmetric. Returns
    (vertices, faces, uv) with the UVs in meters.
    """
    if nx < 2 or ny < 2:
        raise ConfigError("grid needs at least 2x2 vertices")
    u = np.linspace(0.0, width, nx)
    v = np.linspace(0.0, height, ny)
    uu, vv = np.meshgrid(u, v)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    verts = np.zeros((nx * ny, 3))
    if plane == "xz":
        verts[:, 0], verts[:, 2] = uv[:, 0], uv[:, 1]
    elif plane == "xy":
        verts[:, 0], verts[:, 1] = uv[:, 0], uv[:, 1]
    else:
        raise ConfigError(f"unknown plane {plane!r}")
    verts += np.asarray(origin)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b, c, d = a + 1, a + nx, a + nx + 1
            if alternate and (i + j) % 2:
                faces += [(a, b, c), (b, d, c)]
            else:
                faces += [(a, b, d), (a, d, c)]
    faces = np.array(faces, dtype=np.int64)
    if plane == "xz":
        # keep normals pointing +Y
        faces = faces[:, [0, 2, 1]]
    return verts, faces, uv
