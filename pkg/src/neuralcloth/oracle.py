"""Reference simulator: static draping and implicit-Euler style stepping by
direct minimization of the incremental potential

    h(x) = 1/2 (x - x_proj)^T M (x - x_proj) + dt^2 E(x),  x_proj = 2 x_{t-1} - x_{t-2}

with mass-preconditioned gradient descent and Armijo backtracking. The
objective actually minimized is h / dt^2 (the training loss), which has the
same minimizers and gradients in newtons.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .body import skin_lbs
from .errors import SolverError

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    max_iter: int = 2000
    tol: float = 1e-6  # N, infinity norm of the free gradient
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_increase_streak: int = 50
    pinned: tuple = ()
    min_step: float = 1e-30
    max_move: float = 0.02  # m per iteration, keeps large steps from tunneling through the body


@dataclass
class SolveInfo:
    iterations: int
    converged: bool
    energies: list = field(default_factory=list)
    grad_norm: float = np.inf


def _check(f, g, frame):
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise SolverError("non-finite energy or gradient", frame=frame)


def minimize(fun, x0, precond, cfg, init_step=1.0, frame=None):
    """Preconditioned gradient descent with Armijo backtracking.

    ``fun(x) -> (f, grad)``; ``precond`` is a per-vertex diagonal (N,).
    The trial step starts from ``init_step`` and afterwards from a
    Barzilai-Borwein estimate, so accepted energies never increase.
    """
    x = np.array(x0, dtype=np.float64)
    free = np.ones(len(x), dtype=bool)
    if len(cfg.pinned):
        free[np.asarray(cfg.pinned, dtype=np.int64)] = False
    inv_p = (1.0 / np.asarray(precond))[:, None]
    f, g = fun(x)
    _check(f, g, frame)
    g = np.where(free[:, None], g, 0.0)
    info = SolveInfo(0, False, [f])
    step = init_step
    streak = 0
    prev_x = prev_g = None
    for it in range(cfg.max_iter):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        info.grad_norm = gnorm
        if gnorm < cfg.tol:
            info.converged = True
            info.iterations = it
            return x, info
        d = -inv_p * g
        if prev_x is not None:
            s = (x - prev_x).ravel()
            y = (g - prev_g).ravel()
            # BB2 step in the preconditioned metric: s.y / y^T P^-1 y
            sy = float(s @ y)
            yy = float((y * np.repeat(inv_p.ravel(), 3)) @ y)
            if sy > 0 and yy > 0:
                step = sy / yy
        with np.errstate(over="ignore", invalid="ignore"):
            slope = float(np.sum(g * d))
        if not np.isfinite(slope):
            raise SolverError("search direction overflow", frame=frame)
        d_max = float(np.max(np.abs(d))) if d.size else 0.0
        alpha = min(step, cfg.max_move / d_max) if d_max > 0 else step
        while True:
            x_new = x + alpha * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + cfg.armijo_c * alpha * slope:
                break
            alpha *= cfg.shrink
            if alpha < cfg.min_step:
                # no further decrease representable: treat as converged to round-off
                info.iterations = it
                info.converged = gnorm < 1e3 * cfg.tol
                return x, info
        _check(f_new, g_new, frame)
        streak = streak + 1 if f_new > f else 0
        if streak >= cfg.max_increase_streak:
            raise SolverError(f"energy increased over {streak} consecutive steps", frame=frame)
        prev_x, prev_g = x, g
        x, f = x_new, f_new
        g = np.where(free[:, None], g_new, 0.0)
        info.energies.append(f)
        step = alpha
    info.iterations = cfg.max_iter
    info.grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
    info.converged = info.grad_norm < cfg.tol
    return x, info


def drape_static(energy, surface, x0, cfg=None, frame=None):
    """Local minimum of cloth + bending + collision + gravity from ``x0``."""
    cfg = cfg or SolverConfig()

    def fun(x):
        rep = energy.total_loss(x, surface, "static")
        return rep.total, rep.gradient

    # first trial step: displacement of about 1 mm under gravity alone
    return minimize(fun, x0, energy.masses, cfg, init_step=1e-4, frame=frame)


def incremental_potential(energy, x, x_prev, x_prev2, dt, surface=None):
    """h(x) itself (joules times s^2), for checks."""
    proj = 2.0 * np.asarray(x_prev) - np.asarray(x_prev2)
    delta = np.asarray(x) - proj
    inertia = 0.5 * float(np.sum(energy.masses * np.sum(delta * delta, axis=1)))
    return inertia + dt * dt * energy.static_energy(x, surface)


def step_dynamic(energy, x_prev, x_prev2, surface, dt, cfg=None, frame=None):
    """Minimize h over x_t starting from the inertial guess x_proj."""
    cfg = cfg or SolverConfig()
    proj = 2.0 * np.asarray(x_prev, dtype=np.float64) - np.asarray(x_prev2, dtype=np.float64)

    def fun(x):
        rep = energy.total_loss(x, surface, "dynamic", x_prev, x_prev2, dt)
        return rep.total, rep.gradient

    # preconditioner M / dt^2 is the exact Hessian of the inertial part, so a
    # unit step solves any problem whose other forces are constant
    x, info = minimize(fun, proj, energy.masses / (dt * dt), cfg, init_step=1.0, frame=frame)
    return x, info


def simulate_sequence(energy, body, garment_weights, seq, cfg=None, rest_vertices=None):
    """Roll the simulator over a pose sequence.

    Frames 0 and 1 are the static drape at pose 0; later frames step
    dynamically. Returns (states (T, N, 3), per-frame EnergyReport list).
    """
    cfg = cfg or SolverConfig()
    rest_vertices = energy.mesh.vertices if rest_vertices is None else rest_vertices
    dt = seq.dt
    posed0 = body.pose(seq[0])
    x0 = skin_lbs(rest_vertices, garment_weights, posed0.global_transforms, body.skeleton)
    try:
        drape, _ = drape_static(energy, posed0.surface, x0, cfg, frame=0)
    except SolverError as exc:
        exc.frame = 0
        raise
    states = [drape, drape.copy()]
    reports = [energy.total_loss(drape, posed0.surface, "static")] * min(2, len(seq))
    for t in range(2, len(seq)):
        posed = body.pose(seq[t])
        x, _ = step_dynamic(energy, states[-1], states[-2], posed.surface, dt, cfg, frame=t)
        states.append(x)
        reports.append(energy.total_loss(x, posed.surface, "dynamic", states[-2], states[-3], dt))
    return np.stack(states[: len(seq)]), reports
