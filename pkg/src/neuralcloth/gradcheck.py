"""Central finite-difference check of every energy term's analytic gradient."""

import numpy as np

from .body import BodySurface
from .energy import e_baraff_witkin_sq, e_bending, e_collision, e_gravity, e_inertia, e_mass_spring, e_stvk
from .mesh import FabricParams, build_topology, compute_rest_state, lump_masses
from .synthetic import icosphere, swatch_garment

ENERGY_TERMS = ("mass_spring", "baraff_witkin_sq", "stvk", "bending", "collision", "gravity", "inertia")


def central_difference(fun, x, h=1e-6):
    """Gradient of scalar ``fun`` at ``x`` (N, 3) by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fun(x)
        flat[i] = old - h
        fm = fun(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric, floor=1e-12):
    """max |a - n| over max |a|, |n| (infinity norms)."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def random_configuration(rng, n=7, size=0.2):
    """Perturbed ``n x n`` swatch plus a deformed state resting partly inside a sphere."""
    fabric = FabricParams(k_bend=5e-5 * rng.uniform(0.5, 2.0), lame_mu=rng.uniform(5, 20), lame_lambda=rng.uniform(5, 40))
    g = swatch_garment(n, n, size, 0.0, fabric)
    spacing = size / (n - 1)
    rest = g.vertices + rng.normal(scale=0.1 * spacing, size=g.vertices.shape)
    g = g.with_vertices(rest)
    x = rest * rng.uniform(0.9, 1.1) + rng.normal(scale=0.2 * spacing, size=rest.shape)
    x_prev = x + rng.normal(scale=0.01, size=x.shape)
    x_prev2 = x_prev + rng.normal(scale=0.01, size=x.shape)
    # sphere whose top pokes through the middle of the swatch
    radius = 0.15
    sv, sf = icosphere(radius, 3, (0.0, -radius + rng.uniform(0.005, 0.02), 0.0))
    return g, x, x_prev, x_prev2, BodySurface(sv, sf)


def check_energy_gradients(seed=0, n_configs=20, h=1e-6, method="auto"):
    """Max relative error per term over ``n_configs`` seeded configurations."""
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(ENERGY_TERMS, 0.0)
    dt = 1.0 / 30.0
    for _ in range(n_configs):
        g, x, xp, xp2, surf = random_configuration(rng)
        f = g.fabric
        topo = build_topology(g)
        rest = compute_rest_state(g, topo)
        masses = lump_masses(g, rest)
        terms = {
            "mass_spring": lambda y: e_mass_spring(y, topo.edges, rest.edge_lengths, f.k_stretch),
            "baraff_witkin_sq": lambda y: e_baraff_witkin_sq(y, g.faces, rest, f.k_stretch, f.k_shear),
            "stvk": lambda y: e_stvk(y, g.faces, rest, f.lame_mu, f.lame_lambda),
            "bending": lambda y: e_bending(y, topo, rest, f.k_bend),
            "collision": lambda y: e_collision(y, surf, f.k_collision, f.collision_eps, method)[:2],
            "gravity": lambda y: e_gravity(y, masses),
            "inertia": lambda y: e_inertia(y, xp, xp2, masses, dt),
        }
        for name, fn in terms.items():
            analytic = fn(x)[1]
            numeric = central_difference(lambda y: fn(y)[0], x, h)
            worst[name] = max(worst[name], relative_error(analytic, numeric))
    return worst
