"""Command-line entry point.

Exit codes: 0 success, 1 other failure (including a failed gradcheck),
2 missing asset, 3 solver or numerics failure, 4 config schema violation.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AssetError, CheckpointError, ClothError, ConfigError, NumericsError, SchemaError, SolverError

log = logging.getLogger("neuralcloth")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ASSET = 2
EXIT_SOLVER = 3
EXIT_SCHEMA = 4

FRAME_PATTERN = "frame_{:06d}.obj"


def write_frames(out_dir, frames, faces, start=0):
    from .mesh import write_obj

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, x in enumerate(frames):
        write_obj(out_dir / FRAME_PATTERN.format(start + i), x, faces)


def write_jsonl(path, records):
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _frame_record(frame, report):
    rec = {"frame": int(frame), "total": report.total}
    rec.update({k: float(v) for k, v in report.metrics.items()})
    return rec


def _load(args, with_motion=True):
    """Validate config and assets before anything is written."""
    from .config import build_scene, load_config

    cfg, base = load_config(args.config)
    scene = build_scene(cfg, base, with_motion)
    return cfg, base, scene


def _pick_sequence(scene, args, base):
    from .body import PoseSequence

    if getattr(args, "sequence", None):
        p = Path(args.sequence)
        if not p.is_file():
            raise AssetError(f"missing asset: {p}", p)
        return PoseSequence.from_json(p, scene.body.skeleton)
    if not scene.sequences:
        raise ConfigError("io: no motion given (set io.sequences or io.synthetic_motion, or pass --sequence)")
    return scene.sequences[args.index]


def _initial_state(scene, seq_pose):
    from .body import skin_lbs

    posed = scene.body.pose(seq_pose)
    x0 = skin_lbs(scene.garment.vertices, scene.garment.blend_weights, posed.global_transforms, scene.body.skeleton)
    return posed, x0


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_drape(args):
    from .body import Pose
    from .config import output_dir
    from .energy import ClothEnergy
    from .oracle import drape_static

    cfg, base, scene = _load(args, with_motion=not args.sequence)
    if scene.sequences or args.sequence:
        pose = _pick_sequence(scene, args, base)[args.frame]
    else:
        pose = Pose.identity(scene.body.skeleton.n_joints)
    out = output_dir(cfg, base, args.out) / "drape"
    energy = ClothEnergy(scene.garment)
    posed, x0 = _initial_state(scene, pose)
    x, info = drape_static(energy, posed.surface, x0, cfg.solver.to_solver_config(), frame=0)
    if not info.converged:
        log.warning("drape stopped after %d iterations, gradient %.3g N", info.iterations, info.grad_norm)
    rep = energy.total_loss(x, posed.surface, "static")
    write_frames(out, [x], scene.garment.faces)
    write_jsonl(out / "metrics.jsonl", [_frame_record(0, rep)])
    if cfg.io.dump_states:
        np.savez(out / "states.npz", states=x[None], faces=scene.garment.faces)
    print(json.dumps({"out": str(out), "iterations": info.iterations, "converged": info.converged, "total": rep.total}))
    return EXIT_OK


def cmd_simulate(args):
    from .config import output_dir
    from .energy import ClothEnergy
    from .oracle import simulate_sequence

    cfg, base, scene = _load(args, with_motion=not args.sequence)
    seq = _pick_sequence(scene, args, base)
    if args.frames is not None:
        from .body import PoseSequence

        seq = PoseSequence(seq.rotations[: args.frames], seq.root_translations[: args.frames], seq.fps)
    out = output_dir(cfg, base, args.out) / "simulate"
    energy = ClothEnergy(scene.garment)
    states, reports = simulate_sequence(
        energy, scene.body, scene.garment.blend_weights, seq, cfg.solver.to_solver_config()
    )
    write_frames(out, states, scene.garment.faces)
    write_jsonl(out / "metrics.jsonl", [_frame_record(t, r) for t, r in enumerate(reports)])
    if cfg.io.dump_states:
        np.savez(out / "states.npz", states=states, faces=scene.garment.faces)
    print(json.dumps({"out": str(out), "frames": len(states)}))
    return EXIT_OK


def _model(cfg, scene):
    from .train import ClothModel

    return ClothModel.build(scene.garment, scene.body.skeleton, seed=cfg.train.seed, **cfg.train.net_dims())


def cmd_train(args):
    from .config import checkpoint_path, output_dir
    from .train import MotionDataset, Trainer, config_hash, save_checkpoint

    cfg, base, scene = _load(args)
    tcfg = cfg.train.to_train_config()
    if not scene.sequences:
        raise ConfigError("io: no motion given (set io.sequences or io.synthetic_motion)")
    out = output_dir(cfg, base, args.out)
    ckpt = checkpoint_path(cfg, base, args.checkpoint)
    dataset = MotionDataset(scene.body, scene.sequences, tcfg, scene.actions)
    dataset.windows("train")  # raises on an empty training split
    model = _model(cfg, scene)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(model, dataset, tcfg, out / "train_log.jsonl")
    t0 = time.perf_counter()
    result = trainer.fit(max_steps=args.max_steps, deadline=cfg.train.deadline_seconds)
    meta = {"steps": result.steps, "best_step": result.best_step}
    save_checkpoint(ckpt, model.params, config_hash(model.dims), meta)
    print(
        json.dumps(
            {
                "checkpoint": str(ckpt),
                "steps": result.steps,
                "best_step": result.best_step,
                "best_val_loss": result.best_val_loss,
                "stopped_early": result.stopped_early,
                "seconds": round(time.perf_counter() - t0, 3),
            }
        )
    )
    return EXIT_OK


def _restore(cfg, base, scene, args):
    from .config import checkpoint_path
    from .train import load_checkpoint

    model = _model(cfg, scene)
    path = checkpoint_path(cfg, base, args.checkpoint)
    if not path.is_file():
        raise AssetError(f"missing asset: {path}", path)
    model.params = load_checkpoint(path, dims=model.dims)
    return model


def cmd_infer(args):
    from .config import output_dir
    from .train import ClothRuntime

    w = args.motion_scale
    if not 0.0 <= w <= 2.0:
        log.warning("--motion-scale %s is outside [0, 2]; extrapolating", w)
    cfg, base, scene = _load(args, with_motion=not args.sequence)
    seq = _pick_sequence(scene, args, base)
    model = _restore(cfg, base, scene, args)
    out = output_dir(cfg, base, args.out) / "infer"
    runtime = ClothRuntime(model, scene.body, seq.dt, w)
    frames = []
    for t in range(len(seq)):
        try:
            frames.append(runtime.step(seq[t]))
        except NumericsError as exc:
            exc.frame = t
            raise
    write_frames(out, [g for _, g in frames], scene.garment.faces)
    if args.with_body:
        write_frames(out / "body", [b for b, _ in frames], scene.body.faces)
    if cfg.io.dump_states:
        np.savez(out / "states.npz", states=np.stack([g for _, g in frames]), faces=scene.garment.faces)
    print(json.dumps({"out": str(out), "frames": len(frames), "motion_scale": w}))
    return EXIT_OK


def cmd_metrics(args):
    from .train import MotionDataset, evaluate_metrics

    cfg, base, scene = _load(args)
    tcfg = cfg.train.to_train_config()
    dataset = MotionDataset(scene.body, scene.sequences, tcfg, scene.actions)
    model = _restore(cfg, base, scene, args)
    m = evaluate_metrics(model, dataset, args.split, tcfg)
    print(json.dumps({"split": args.split, **{k: float(v) for k, v in m.items()}}, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import check_energy_gradients

    worst = check_energy_gradients(args.seed, args.configs)
    ok = True
    for name, err in worst.items():
        passed = err < args.tol
        ok &= passed
        print(f"{name:18s} max rel err {err:.3e}  {'ok' if passed else 'FAIL'}")
    print(f"max relative error {max(worst.values()):.3e} (tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_export(args):
    src = Path(args.states)
    if not src.is_file():
        raise AssetError(f"missing asset: {src}", src)
    with np.load(src) as data:
        states, faces = data["states"], data["faces"]
    write_frames(args.out, states, faces)
    print(json.dumps({"out": str(args.out), "frames": len(states)}))
    return EXIT_OK


def cmd_synth(args):
    """Write the synthetic pendulum scene as ordinary asset files plus a config."""
    from . import synthetic
    from .mesh import write_obj, write_weights

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    body = synthetic.pendulum_body()
    skel = body.skeleton
    garment = synthetic.cap_garment()
    skel.to_json(out / "skeleton.json")
    write_obj(out / "body.obj", body.vertices, body.faces)
    write_weights(out / "body_weights.json", body.weights, skel.names)
    write_obj(out / "garment.obj", garment.vertices, garment.faces)
    write_weights(out / "garment_weights.json", garment.blend_weights, skel.names)
    (out / "motions").mkdir(exist_ok=True)
    seqs, actions = [], []
    lib = synthetic.motion_library(args.motions, args.frames, seed=args.seed)
    for i, (action, seq) in enumerate(lib):
        name = f"motions/{i:03d}_{action}.json"
        seq.to_json(out / name, skel)
        seqs.append(name)
        actions.append(action)
    doc = {
        "garment": {"obj": "garment.obj", "weights": "garment_weights.json"},
        "body": {"skeleton": "skeleton.json", "skin_obj": "body.obj", "skin_weights": "body_weights.json"},
        "fabric": {},
        "train": {"learning_rate": 1e-5, "val_frac": 0.1, "test_frac": 0.1, "eval_every": 25, "patience": 4},
        "solver": {"tol": 1e-4, "max_iter": 5000},
        "io": {"out_dir": "out", "sequences": seqs, "actions": actions},
    }
    (out / "config.json").write_text(json.dumps(doc, indent=1))
    print(json.dumps({"out": str(out), "sequences": len(seqs)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="neuralcloth", description="Unsupervised neural cloth dynamics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--out", type=Path, help="output directory (overrides io.out_dir)")
        sp.set_defaults(func=fn)
        return sp

    sp = with_config("drape", cmd_drape, "static drape on one pose")
    sp.add_argument("--sequence", help="pose sequence JSON (default: rest pose or io.sequences)")
    sp.add_argument("--index", type=int, default=0, help="which configured sequence")
    sp.add_argument("--frame", type=int, default=0)

    sp = with_config("simulate", cmd_simulate, "oracle simulation of a sequence")
    sp.add_argument("--sequence")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--frames", type=int, default=None, help="truncate to the first N frames")

    sp = with_config("train", cmd_train, "train the network")
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--max-steps", type=int, default=None)

    sp = with_config("infer", cmd_infer, "run a trained network over a sequence")
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--sequence")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--motion-scale", type=float, default=1.0, help="dynamic latent scale w, nominally in [0, 2]")
    sp.add_argument("--with-body", action="store_true", help="also write posed body meshes")

    sp = with_config("metrics", cmd_metrics, "evaluate a checkpoint on a split")
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--split", choices=("train", "val", "test"), default="val")

    sp = sub.add_parser("gradcheck", help="finite-difference check of all energy gradients")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--configs", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("export", help="convert a states.npz dump to OBJ frames")
    sp.add_argument("states")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("synth", help="write the synthetic pendulum scene and a config")
    sp.add_argument("out")
    sp.add_argument("--motions", type=int, default=5, help="sequences per action")
    sp.add_argument("--frames", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except AssetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSET
    except SchemaError as exc:
        print(f"error: config schema violation: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (SolverError, NumericsError) as exc:
        frame = getattr(exc, "frame", None)
        where = f" at frame {frame}" if frame is not None else ""
        print(f"error: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (CheckpointError, ClothError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
