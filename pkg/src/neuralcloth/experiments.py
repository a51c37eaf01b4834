"""Desk-scale experiment on the synthetic pendulum scene.

Trains the network on the seeded motion library, then measures what a
trained model should show: rising inertia, time-constant output for a
motionless body, static energy close to the oracle drape, few collisions
and a monotone response to the motion scale.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import net, synthetic
from .body import skin_lbs
from .oracle import SolverConfig, drape_static
from .train import ClothModel, ClothRuntime, MotionDataset, TrainConfig, Trainer, evaluate_metrics

DESK_TRAIN = dict(
    learning_rate=1e-5,
    val_frac=0.1,
    test_frac=0.1,
    eval_every=25,
    eval_windows=64,
    patience=4,
    epochs=1000,
)
MOTION_SCALES = (0.0, 0.5, 1.0, 1.5, 2.0)


@dataclass
class DeskResult:
    seconds: float
    steps: int
    best_step: int
    val_history: list
    initial_val: dict
    final_val: dict
    still_max_step: float  # max frame-to-frame displacement on a motionless window, m
    static_net: list = field(default_factory=list)  # per held-out pose: network total static energy
    static_oracle: list = field(default_factory=list)
    static_lbs: list = field(default_factory=list)
    scale_displacement: list = field(default_factory=list)  # mean |x(w) - x(0)| per MOTION_SCALES


def build_desk(seed=0, n_per_action=5, n_frames=100, **train_overrides):
    body = synthetic.pendulum_body()
    garment = synthetic.cap_garment()
    lib = synthetic.motion_library(n_per_action, n_frames, seed=seed)
    cfg = TrainConfig(**{**DESK_TRAIN, "seed": seed, **train_overrides})
    dataset = MotionDataset(body, [q for _, q in lib], cfg, [a for a, _ in lib])
    model = ClothModel.build(garment, body.skeleton, seed=seed)
    return body, garment, dataset, model


def _static_energy(model, x, surface):
    return model.energy.total_loss(x, surface, "static").total


def run_desk(seed=0, max_steps=600, deadline=600.0, n_static=3, solver=None, **train_overrides):
    body, garment, dataset, model = build_desk(seed, **train_overrides)
    cfg = dataset.cfg
    t0 = time.perf_counter()
    trainer = Trainer(model, dataset, cfg)
    initial = evaluate_metrics(model, dataset, "val", cfg, cfg.eval_windows)
    result = trainer.fit(max_steps=max_steps, deadline=deadline)
    seconds = time.perf_counter() - t0
    final = evaluate_metrics(model, dataset, "val", cfg, cfg.eval_windows)
    res = DeskResult(seconds, result.steps, result.best_step, result.val_history, initial, final, np.inf)

    # (b) a motionless window: every frame of a held pose
    held = [i for i in dataset.splits["val"] + dataset.splits["test"] if dataset.actions[i] == "still"]
    pose = dataset.sequences[held[0]][0] if held else dataset.sequences[0][0]
    frames = ClothRuntime(model, body, cfg.dt).run(synthetic.constant_sequence(pose, cfg.window_length))
    res.still_max_step = max(float(np.max(np.abs(b[1] - a[1]))) for a, b in zip(frames[:-1], frames[1:]))

    # (c) held-out static poses: network vs oracle drape
    solver = solver or SolverConfig(tol=1e-4, max_iter=5000)
    rng = np.random.default_rng(seed + 1)
    test_ids = dataset.splits["test"]
    for k in range(n_static):
        sid = test_ids[k % len(test_ids)]
        seq = dataset.sequences[sid]
        pose = seq[int(rng.integers(len(seq)))]
        posed = body.pose(pose)
        out = ClothRuntime(model, body, cfg.dt).run(synthetic.constant_sequence(pose, 3))
        x_net = out[-1][1]
        x_lbs = skin_lbs(garment.vertices, garment.blend_weights, posed.global_transforms, body.skeleton)
        x_or, _ = drape_static(model.energy, posed.surface, x_lbs, solver)
        res.static_net.append(_static_energy(model, x_net, posed.surface))
        res.static_oracle.append(_static_energy(model, x_or, posed.surface))
        res.static_lbs.append(_static_energy(model, x_lbs, posed.surface))

    res.scale_displacement = motion_scale_response(model, dataset, "val")
    return res, model, dataset


def high_motion_frame(dataset, split="val"):
    """(seq_id, t) with the largest dynamic descriptor norm in the split."""
    best = (-1.0, None, None)
    for sid in dataset.splits[split]:
        dyn = dataset.descriptors(sid)[1]
        norms = np.linalg.norm(dyn.reshape(len(dyn), -1), axis=1)
        t = int(np.argmax(norms))
        if norms[t] > best[0]:
            best = (float(norms[t]), sid, t)
    return best[1], best[2]


def motion_scale_response(model, dataset, split="val", scales=MOTION_SCALES):
    """Mean vertex displacement from the w = 0 prediction at a high-motion frame."""
    sid, t = high_motion_frame(dataset, split)
    static, dynamic, glob = dataset.descriptors(sid)
    lo = max(0, t - dataset.cfg.n_history)
    arrays = model.params.arrays()
    base = None
    out = []
    for w in scales:
        x = net.predict(arrays, static[lo : t + 1], dynamic[lo : t + 1], model.rig, glob[t], w)
        base = x if base is None else base
        out.append(float(np.mean(np.linalg.norm(x - base, axis=1))))
    return out
