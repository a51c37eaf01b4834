"""Numba vs pure-numpy kernels.

Each kernel pair in ``kernels.IMPLEMENTATIONS`` runs on the same swatch and
must agree before it is timed. The last section times one full energy
evaluation (all static terms plus collision) in two fresh processes, one
per value of NEURALCLOTH_DISABLE_JIT.

    python benchmarks/bench_kernels.py --side 58 --repeat 20
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(times))


def _scene(side):
    from neuralcloth import synthetic
    from neuralcloth.body import BodySurface
    from neuralcloth.mesh import build_topology, compute_rest_state

    g = synthetic.swatch_garment(side, side, size=0.6, height=0.0)
    topo = build_topology(g)
    rest = compute_rest_state(g, topo)
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(g.vertices + rng.normal(scale=2e-3, size=g.vertices.shape))
    sv, sf = synthetic.icosphere(0.25, 4, (0.0, -0.24, 0.0))
    return g, topo, rest, x, BodySurface(sv, sf)


def bench_kernels(side, repeat):
    from neuralcloth import kernels

    g, topo, rest, x, surf = _scene(side)
    faces = np.ascontiguousarray(g.faces)
    weights = np.ascontiguousarray(np.tile([0.5, 0.3, 0.2, 0.0], (len(x), 1)))
    mats = np.ascontiguousarray(np.tile(np.eye(4), (4, 1, 1)))
    mats[:, :3, 3] = np.arange(12).reshape(4, 3) * 0.01
    args = {
        "mass_spring": (x, topo.edges, rest.edge_lengths, 10.0),
        "baraff_witkin": (x, faces, rest.uv_frames, rest.uv_areas, 10.0, 0.5),
        "stvk": (x, faces, rest.uv_frames, rest.uv_areas, 10.0, 20.0),
        "bending": (x, topo.dihedrals, rest.rest_dihedrals, rest.dihedral_scale, 5e-5),
        "dihedral_angles": (x, topo.dihedrals),
        "skin": (x, weights, mats),
    }
    rows = []
    for name, (fast, slow) in kernels.IMPLEMENTATIONS.items():
        a, b = fast(*args[name]), slow(*args[name])
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        err = max(float(np.max(np.abs(np.asarray(u, dtype=float) - np.asarray(v, dtype=float)))) for u, v in zip(a, b))
        t_nb = best_of(lambda: fast(*args[name]), repeat)
        t_np = best_of(lambda: slow(*args[name]), repeat)
        rows.append((name, t_nb, t_np, err))
    pts = np.ascontiguousarray(x)
    ref = surf.closest(pts, "bvh")
    for method in ("kdtree", "brute"):
        err = float(np.max(np.abs(surf.closest(pts, method)[3] - ref[3])))
        rows.append((f"closest ({method})", best_of(lambda: surf.closest(pts, "bvh"), repeat), best_of(lambda: surf.closest(pts, method), max(1, repeat // 4)), err))
    return rows


def energy_timing(side, repeat):
    """One total_loss evaluation in the current process's mode."""
    from neuralcloth import USE_NUMBA
    from neuralcloth.energy import ClothEnergy

    g, _, _, x, surf = _scene(side)
    energy = ClothEnergy(g)
    ms = best_of(lambda: energy.total_loss(x, surf, "static"), repeat)
    return {"numba": USE_NUMBA, "ms": ms, "total": energy.total_loss(x, surf, "static").total}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--side", type=int, default=58, help="swatch vertices per side (58 -> 10092 DoF)")
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--energy-only", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.energy_only:
        print(json.dumps(energy_timing(args.side, args.repeat)))
        return
    print(f"swatch {args.side}x{args.side} = {3 * args.side * args.side} DoF, median of {args.repeat}")
    print(f"{'kernel':22s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, t_nb, t_np, err in bench_kernels(args.side, args.repeat):
        print(f"{name:22s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:8.1f} {err:10.2e}")
    res = {}
    for flag in ("0", "1"):
        env = dict(os.environ, NEURALCLOTH_DISABLE_JIT=flag)
        cmd = [sys.executable, __file__, "--energy-only", "--side", str(args.side), "--repeat", str(args.repeat)]
        res[flag] = json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout)
    fast, slow = res["0"], res["1"]
    print(
        f"{'total_loss (process)':22s} {fast['ms']:10.3f} {slow['ms']:10.3f} {slow['ms'] / fast['ms']:8.1f}"
        f" {abs(fast['total'] - slow['total']):10.2e}"
    )


if __name__ == "__main__":
    main()
