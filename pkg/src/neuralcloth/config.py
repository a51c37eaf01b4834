"""Run configuration: one JSON document with the sections garment, body,
fabric, train, solver and io. Unknown keys are rejected.

Relative paths resolve against the directory of the config file.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import AssetError, SchemaError
from .mesh import FabricParams
from .oracle import SolverConfig
from .train import TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GarmentSection(_Section):
    obj: Path | None = None
    weights: Path | None = None  # omitted: transferred from the nearest body vertex
    synthetic: Literal["cap", "swatch"] | None = None
    resolution: tuple[int, int] = (10, 10)  # swatch vertices per side

    @model_validator(mode="after")
    def _one_source(self):
        if (self.obj is None) == (self.synthetic is None):
            raise ValueError("give exactly one of 'obj' or 'synthetic'")
        if min(self.resolution) < 2:
            raise ValueError("resolution must be at least 2x2")
        return self


class BodySection(_Section):
    skeleton: Path | None = None
    skin_obj: Path | None = None
    skin_weights: Path | None = None
    synthetic: Literal["pendulum"] | None = None

    @model_validator(mode="after")
    def _one_source(self):
        files = (self.skeleton, self.skin_obj, self.skin_weights)
        if self.synthetic is None and any(f is None for f in files):
            raise ValueError("give 'skeleton', 'skin_obj' and 'skin_weights', or 'synthetic'")
        if self.synthetic is not None and any(f is not None for f in files):
            raise ValueError("'synthetic' excludes body files")
        return self


class FabricSection(_Section):
    density: float = Field(0.3, gt=0)
    k_stretch: float = Field(10.0, ge=0)
    k_shear: float = Field(0.5, ge=0)
    k_bend: float = Field(5e-5, ge=0)
    k_collision: float = Field(10.0, ge=0)
    collision_eps: float = Field(4e-3, ge=0)
    material_model: Literal["MassSpring", "BaraffWitkinSq", "StVK"] = "MassSpring"
    lame_mu: float = Field(10.0, ge=0)
    lame_lambda: float = Field(20.0, ge=0)

    def to_params(self):
        return FabricParams(**self.model_dump())


class TrainSection(_Section):
    window_seconds: float = Field(0.5, gt=0)
    fps: float = Field(30.0, gt=0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(10, ge=0)
    learning_rate: float = Field(1e-4, gt=0)
    mirror_prob: float = Field(0.5, ge=0, le=1)
    shuffle_frac: float = Field(0.2, ge=0, le=1)
    seed: int = 0
    val_frac: float = Field(0.05, ge=0, le=1)
    test_frac: float = Field(0.10, ge=0, le=1)
    grad_clip: float | None = Field(None, gt=0)
    max_steps: int | None = Field(None, ge=0)
    deadline_seconds: float | None = Field(None, gt=0)
    eval_every: int = Field(0, ge=0)
    eval_windows: int | None = Field(64, ge=1)
    keep_best: bool = True
    patience: int | None = Field(None, ge=1)
    # network widths
    latent: int = Field(128, ge=1)
    static_hidden: tuple[int, int, int] = (256, 256, 256)
    joint_hidden: tuple[int, int] = (32, 32)
    dynamic_hidden: int = Field(256, ge=1)
    gru_input: int = Field(128, ge=1)
    decoder_hidden: tuple[int, int] = (256, 512)

    _NET = ("latent", "static_hidden", "joint_hidden", "dynamic_hidden", "gru_input", "decoder_hidden")

    def to_train_config(self):
        skip = set(self._NET) | {"deadline_seconds"}
        return TrainConfig(**{k: v for k, v in self.model_dump().items() if k not in skip})

    def net_dims(self):
        return {k: getattr(self, k) for k in self._NET}


class SolverSection(_Section):
    max_iter: int = Field(2000, ge=1)
    tol: float = Field(1e-6, gt=0)
    armijo_c: float = Field(1e-4, gt=0, lt=1)
    shrink: float = Field(0.5, gt=0, lt=1)
    max_increase_streak: int = Field(50, ge=1)
    max_move: float = Field(0.02, gt=0)

    def to_solver_config(self):
        return SolverConfig(**self.model_dump())


class SyntheticMotion(_Section):
    n_per_action: int = Field(5, ge=1)
    n_frames: int = Field(100, ge=3)
    fps: float = Field(30.0, gt=0)
    seed: int = 0
    actions: tuple[Literal["swing", "spin", "jump", "still"], ...] = ("swing", "spin", "jump", "still")


class IOSection(_Section):
    out_dir: Path = Path("out")
    sequences: tuple[Path, ...] = ()
    actions: tuple[str, ...] | None = None  # one label per sequence file
    synthetic_motion: SyntheticMotion | None = None
    checkpoint: Path | None = None  # default: <out_dir>/model.json
    dump_states: bool = True

    @model_validator(mode="after")
    def _labels(self):
        if self.actions is not None and len(self.actions) != len(self.sequences):
            raise ValueError("'actions' needs one label per entry of 'sequences'")
        return self


class Config(_Section):
    garment: GarmentSection = GarmentSection(synthetic="cap")
    body: BodySection = BodySection(synthetic="pendulum")
    fabric: FabricSection = FabricSection()
    train: TrainSection = TrainSection()
    solver: SolverSection = SolverSection()
    io: IOSection = IOSection()


def _key_path(loc):
    return ".".join(str(p) for p in loc if not (isinstance(p, str) and p.startswith("function-")))


def parse_config(doc):
    """Validate a decoded JSON document; raises ``SchemaError`` with the key path."""
    try:
        return Config.model_validate(doc)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = _key_path(err["loc"])
        raise SchemaError(f"{path or '<root>'}: {err['msg']}", path) from None


def load_config(path):
    """(Config, base directory) from a JSON file."""
    path = Path(path)
    if not path.is_file():
        raise AssetError(f"config file not found: {path}", path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"<root>: invalid JSON ({exc})", "") from None
    return parse_config(doc), path.resolve().parent


# ---------------------------------------------------------------------------
# scene assembly
# ---------------------------------------------------------------------------


@dataclass
class Scene:
    body: object
    garment: object
    sequences: list
    actions: list


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def asset_paths(cfg, base):
    """Every input file the config references."""
    paths = []
    g, b = cfg.garment, cfg.body
    if g.obj is not None:
        paths.append(g.obj)
    if g.weights is not None:
        paths.append(g.weights)
    if b.synthetic is None:
        paths += [b.skeleton, b.skin_obj, b.skin_weights]
    paths += list(cfg.io.sequences)
    return [_resolve(base, p) for p in paths]


def check_assets(paths):
    for p in paths:
        if not Path(p).is_file():
            raise AssetError(f"missing asset: {p}", p)


def build_scene(cfg, base, with_motion=True):
    from . import synthetic
    from .body import PoseSequence, load_body, transfer_weights
    from .mesh import GarmentMesh, load_garment, read_obj

    check_assets(asset_paths(cfg, base))
    fabric = cfg.fabric.to_params()
    b = cfg.body
    if b.synthetic == "pendulum":
        body = synthetic.pendulum_body()
    else:
        body = load_body(_resolve(base, b.skeleton), _resolve(base, b.skin_obj), _resolve(base, b.skin_weights))
    g = cfg.garment
    names = body.skeleton.names
    if g.synthetic == "cap":
        garment = synthetic.cap_garment(fabric=fabric)
    elif g.synthetic == "swatch":
        nx, ny = g.resolution
        garment = synthetic.swatch_garment(nx, ny, fabric=fabric, n_joints=len(names), joint_names=names)
    elif g.weights is not None:
        garment = load_garment(_resolve(base, g.obj), _resolve(base, g.weights), fabric, names)
    else:
        verts, faces, face_uv = read_obj(_resolve(base, g.obj))
        weights = transfer_weights(verts, body.vertices, body.weights)
        garment = GarmentMesh(verts, faces, None, weights, fabric, names, face_uv)
    sequences, actions = [], []
    if with_motion:
        io = cfg.io
        for i, p in enumerate(io.sequences):
            sequences.append(PoseSequence.from_json(_resolve(base, p), body.skeleton))
            actions.append(io.actions[i] if io.actions is not None else "default")
        if io.synthetic_motion is not None:
            sm = io.synthetic_motion
            for action, seq in synthetic.motion_library(sm.n_per_action, sm.n_frames, sm.fps, sm.seed, sm.actions):
                sequences.append(seq)
                actions.append(action)
    return Scene(body, garment, sequences, actions)


def output_dir(cfg, base, override=None):
    return Path(override) if override is not None else _resolve(base, cfg.io.out_dir)


def checkpoint_path(cfg, base, override=None):
    if override is not None:
        return Path(override)
    if cfg.io.checkpoint is not None:
        return _resolve(base, cfg.io.checkpoint)
    return output_dir(cfg, base) / "model.json"
