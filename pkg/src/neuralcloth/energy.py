"""Cloth energies and their analytic gradients w.r.t. vertex positions.

All terms return ``(energy, gradient)`` with the gradient shaped like ``x``.
Units are SI: positions in meters, energies in joules.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .body import GRAVITY, G_ACC
from .errors import ConfigError, NumericsError
from .mesh import MaterialModel, build_topology, compute_rest_state, lump_masses

TERMS = ("cloth", "bending", "collision", "gravity", "inertia")
METRICS = ("strain", "bending", "collision_pct", "gravity", "inertia")


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def e_mass_spring(x, edges, rest_lengths, k_stretch):
    return kernels.mass_spring(_c(x), edges, rest_lengths, float(k_stretch))


def e_baraff_witkin_sq(x, faces, rest, k_stretch, k_shear):
    return kernels.baraff_witkin(_c(x), faces, rest.uv_frames, rest.uv_areas, float(k_stretch), float(k_shear))


def e_stvk(x, faces, rest, lame_mu, lame_lambda):
    return kernels.stvk(_c(x), faces, rest.uv_frames, rest.uv_areas, float(lame_mu), float(lame_lambda))


def e_bending(x, topo, rest, k_b, return_skipped=False):
    energy, grad, skipped = kernels.bending(_c(x), topo.dihedrals, rest.rest_dihedrals, rest.dihedral_scale, float(k_b))
    if return_skipped:
        return energy, grad, skipped
    return energy, grad


def e_collision(x, surface, k_c, eps, method="auto"):
    """Penalty ``k_c * min(d - eps, 0)^2`` per vertex.

    Returns (energy, gradient, percentage of vertices with d < 0).
    """
    x = _c(x)
    if surface is None:
        return 0.0, np.zeros_like(x), 0.0
    d, dgrad, _ = surface.signed_distance(x, method)
    pen = np.minimum(d - eps, 0.0)
    energy = float(k_c * np.sum(pen * pen))
    grad = (2.0 * k_c * pen)[:, None] * dgrad
    inside = 100.0 * float(np.count_nonzero(d < 0.0)) / max(len(x), 1)
    return energy, grad, inside


def e_gravity(x, masses):
    """Potential energy ``-sum m_i x_i . g`` (zero at height 0)."""
    x = _c(x)
    energy = -float(np.sum(masses * (x @ GRAVITY)))
    return energy, -masses[:, None] * GRAVITY[None, :]


def e_inertia(x_t, x_prev, x_prev2, masses, dt):
    """``m / (2 dt^2) |x_t - (2 x_prev - x_prev2)|^2`` per particle.

    Only the gradient w.r.t. ``x_t`` is returned; the history is a constant.
    """
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    delta = _c(x_t) - (2.0 * np.asarray(x_prev) - np.asarray(x_prev2))
    w = masses / (dt * dt)
    return 0.5 * float(np.sum(w * np.sum(delta * delta, axis=1))), w[:, None] * delta


@dataclass
class EnergyReport:
    energies: dict
    gradient: np.ndarray
    metrics: dict
    skipped_dihedrals: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def total(self):
        return float(sum(self.energies.values()))


class ClothEnergy:
    """Bundles a garment's rest state, masses and fabric into callable terms."""

    def __init__(self, mesh, gravity_reference=None):
        self.mesh = mesh
        self.fabric = mesh.fabric
        self.topo = build_topology(mesh)
        self.rest = compute_rest_state(mesh, self.topo)
        self.masses = lump_masses(mesh, self.rest)
        self.total_mass = float(self.masses.sum())
        ref = mesh.vertices if gravity_reference is None else gravity_reference
        self.gravity_reference = e_gravity(ref, self.masses)[0]

    def set_gravity_reference(self, x):
        self.gravity_reference = e_gravity(x, self.masses)[0]

    # individual terms -----------------------------------------------------

    def cloth(self, x):
        f = self.fabric
        model = f.material_model
        if model is MaterialModel.MASS_SPRING:
            return e_mass_spring(x, self.topo.edges, self.rest.edge_lengths, f.k_stretch)
        if model is MaterialModel.BARAFF_WITKIN_SQ:
            return e_baraff_witkin_sq(x, self.mesh.faces, self.rest, f.k_stretch, f.k_shear)
        if model is MaterialModel.STVK:
            return e_stvk(x, self.mesh.faces, self.rest, f.lame_mu, f.lame_lambda)
        raise ConfigError(f"unknown material model {model}")

    def bending(self, x, return_skipped=False):
        return e_bending(x, self.topo, self.rest, self.fabric.k_bend, return_skipped)

    def collision(self, x, surface, method="auto"):
        return e_collision(x, surface, self.fabric.k_collision, self.fabric.collision_eps, method)

    def gravity(self, x):
        return e_gravity(x, self.masses)

    def inertia(self, x_t, x_prev, x_prev2, dt):
        return e_inertia(x_t, x_prev, x_prev2, self.masses, dt)

    # metrics --------------------------------------------------------------

    def strain_metric(self, x):
        """Mean |edge length - rest| in mm for mass-spring, mean principal
        stretch deviation x1000 for the continuum models."""
        x = np.asarray(x)
        if self.fabric.material_model is MaterialModel.MASS_SPRING:
            e = self.topo.edges
            length = np.linalg.norm(x[e[:, 0]] - x[e[:, 1]], axis=1)
            return 1000.0 * float(np.mean(np.abs(length - self.rest.edge_lengths)))
        f = self.mesh.faces
        ds = np.stack([x[f[:, 1]] - x[f[:, 0]], x[f[:, 2]] - x[f[:, 0]]], axis=2)
        sv = np.linalg.svd(ds @ self.rest.uv_frames, compute_uv=False)
        return 1000.0 * float(np.mean(np.abs(sv - 1.0)))

    def bending_metric(self, x):
        if self.topo.n_dihedrals == 0:
            return 0.0
        phi = kernels.dihedral_angles(_c(x), self.topo.dihedrals)
        return float(np.mean(np.abs(kernels.wrap_angle(phi - self.rest.rest_dihedrals))))

    def gravity_metric(self, gravity_energy):
        return (gravity_energy - self.gravity_reference) / self.total_mass

    # composition ----------------------------------------------------------

    def total_loss(self, x_t, surface=None, mode="static", x_prev=None, x_prev2=None, dt=None, method="auto"):
        """Static mode sums cloth, bending, collision and gravity; dynamic
        mode adds inertia. Gradient is w.r.t. ``x_t`` only."""
        if mode not in ("static", "dynamic"):
            raise ConfigError(f"mode must be static or dynamic, got {mode!r}")
        x_t = _c(x_t)
        e_cl, g_cl = self.cloth(x_t)
        e_b, g_b, skipped = self.bending(x_t, return_skipped=True)
        e_co, g_co, inside = self.collision(x_t, surface, method)
        e_g, g_g = self.gravity(x_t)
        energies = {"cloth": e_cl, "bending": e_b, "collision": e_co, "gravity": e_g, "inertia": 0.0}
        grad = g_cl + g_b + g_co + g_g
        if mode == "dynamic":
            if x_prev is None or x_prev2 is None or dt is None:
                raise ConfigError("dynamic mode needs x_prev, x_prev2 and dt")
            e_in, g_in = self.inertia(x_t, x_prev, x_prev2, dt)
            energies["inertia"] = e_in
            grad = grad + g_in
        for name, val in energies.items():
            if not np.isfinite(val):
                raise NumericsError(f"non-finite {name} energy", term=name)
        if not np.all(np.isfinite(grad)):
            raise NumericsError("non-finite energy gradient")
        metrics = {
            "strain": self.strain_metric(x_t),
            "bending": self.bending_metric(x_t),
            "collision_pct": inside,
            "gravity": self.gravity_metric(e_g),
            "inertia": energies["inertia"],
        }
        return EnergyReport(energies, grad, metrics, skipped)

    def static_energy(self, x, surface=None):
        return self.total_loss(x, surface, "static").total

