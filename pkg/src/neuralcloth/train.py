"""Unsupervised training: windowing, batching, physics losses with a
stop-gradient inertia term, augmentation, optimization, metrics and
checkpoints.

Each training sample is a window of ``n + 1`` frames ending at frame ``t``.
The network is rolled over the whole window and decoded at the last three
hidden states. Static terms (cloth, bending, collision, gravity) act on
``x_t`` only; the inertia term sees ``x_{t-1}`` and ``x_{t-2}`` as constants.
"""

import base64
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import net
from .body import fk_transforms, skin_lbs
from .descriptors import DescriptorStream, mirror_sequence, prune_joints, sequence_descriptors
from .energy import METRICS, ClothEnergy, EnergyReport
from .errors import CheckpointError, ConfigError, NumericsError

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "neuralcloth-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    window_seconds: float = 0.5
    fps: float = 30.0
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 1e-4
    mirror_prob: float = 0.5
    shuffle_frac: float = 0.2
    seed: int = 0
    val_frac: float = 0.05
    test_frac: float = 0.10
    grad_clip: float | None = None
    max_steps: int | None = None
    eval_every: int = 0  # steps between validation passes; 0 means once per epoch
    eval_windows: int | None = 64
    keep_best: bool = True  # restore the parameters with the lowest validation loss
    patience: int | None = None  # stop after this many validations without improvement
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.fps > 0:
            raise ConfigError("train.fps must be > 0")
        if self.n_history < 3:
            raise ConfigError("train.window_seconds * train.fps must be >= 3")
        if not 0.5 <= self.window_seconds <= 2.0:
            log.warning("window of %.3g s is outside the usual 0.5-2 s range", self.window_seconds)
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("train.batch_size must be >= 1 and train.epochs >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("train.patience must be >= 1")
        for name in ("mirror_prob", "shuffle_frac", "val_frac", "test_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"train.{name} must lie in [0, 1]")
        if self.val_frac + self.test_frac >= 1.0:
            raise ConfigError("train.val_frac + train.test_frac must be < 1")

    @property
    def n_history(self):
        return int(round(self.window_seconds * self.fps))

    @property
    def window_length(self):
        return self.n_history + 1

    @property
    def dt(self):
        return 1.0 / self.fps


# ---------------------------------------------------------------------------
# windows and splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MotionWindow:
    """Frames ``t - n .. t`` of one sequence; indices below 0 are clamped to
    frame 0 (still-frame padding)."""

    seq_id: int
    t: int
    indices: tuple
    dt: float
    mirrored: bool = False

    @property
    def length(self):
        return len(self.indices)

    @property
    def n_padded(self):
        """Leading frames holding the first pose of the sequence."""
        return max(0, self.length - self.t)

    def flipped(self):
        return replace(self, mirrored=not self.mirrored)


def make_windows(sequences, cfg, seq_ids=None):
    """One window per frame ``t >= 2`` of every sequence."""
    seq_ids = range(len(sequences)) if seq_ids is None else seq_ids
    n = cfg.n_history
    out = []
    for sid in seq_ids:
        seq = sequences[sid]
        if abs(seq.fps - cfg.fps) > 1e-9:
            raise ConfigError(f"sequence {sid} is at {seq.fps} fps; resample to {cfg.fps} first")
        for t in range(2, len(seq)):
            idx = tuple(max(i, 0) for i in range(t - n, t + 1))
            out.append(MotionWindow(int(sid), t, idx, cfg.dt))
    if not out:
        raise ConfigError("no training windows: every sequence is shorter than 3 frames")
    return out


def split_sequences(actions, val_frac, test_frac, seed=0):
    """Assign whole sequences to train/val/test, spreading each held-out set
    across actions. Returns {split: sorted list of sequence ids}."""
    rng = np.random.default_rng(seed)
    by_action = {}
    for sid, a in enumerate(actions):
        by_action.setdefault(a, []).append(sid)
    # interleave actions so that consecutive picks come from different ones
    groups = [list(rng.permutation(v)) for _, v in sorted(by_action.items())]
    order = []
    while any(groups):
        for g in groups:
            if g:
                order.append(int(g.pop()))
    n = len(order)
    n_test = int(round(test_frac * n)) if test_frac > 0 else 0
    n_val = int(round(val_frac * n)) if val_frac > 0 else 0
    if n_val == 0 and val_frac > 0 and n - n_test >= 2:
        n_val = 1
    if n_test == 0 and test_frac > 0 and n - n_val >= 2:
        n_test = 1
    test = order[:n_test]
    val = order[n_test : n_test + n_val]
    train = order[n_test + n_val :]
    if not train:
        raise ConfigError("split leaves no training sequences")
    return {"train": sorted(train), "val": sorted(val), "test": sorted(test)}


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    windows: list
    static: np.ndarray  # (B, L, K, 9)
    dynamic: np.ndarray  # (B, L, K, 12)
    transforms: np.ndarray  # (B, 3, K_total, 4, 4), frames t-2, t-1, t
    surfaces: list  # posed body surface at frame t, per item

    def __len__(self):
        return len(self.windows)


class MotionDataset:
    """Pose sequences with cached descriptors, joint transforms and posed
    body surfaces, both as recorded and mirrored."""

    def __init__(self, body, sequences, cfg, actions=None):
        self.body = body
        self.skeleton = body.skeleton
        self.sequences = list(sequences)
        self.cfg = cfg
        self.actions = list(actions) if actions is not None else ["default"] * len(self.sequences)
        if len(self.actions) != len(self.sequences):
            raise ConfigError("one action label per sequence required")
        self.splits = split_sequences(self.actions, cfg.val_frac, cfg.test_frac, cfg.seed)
        self._desc = {}
        self._surf = {}

    def windows(self, split="train"):
        ids = self.splits[split] if split in self.splits else None
        if ids is None:
            raise ConfigError(f"unknown split {split!r}")
        if not ids:
            return []
        return make_windows(self.sequences, self.cfg, ids)

    def sequence(self, seq_id, mirrored=False):
        seq = self.sequences[seq_id]
        return mirror_sequence(seq, self.skeleton) if mirrored else seq

    def descriptors(self, seq_id, mirrored=False):
        """(static (T, K, 9), dynamic (T, K, 12), transforms (T, K_total, 4, 4))."""
        key = (seq_id, bool(mirrored))
        if key not in self._desc:

            seq = self.sequence(seq_id, mirrored)
            glob = fk_transforms(self.skeleton, seq.rotations, seq.root_translations)
            static, dynamic = sequence_descriptors(seq, self.skeleton, transforms=glob)
            mask = self.skeleton.active_mask
            self._desc[key] = (prune_joints(static, mask), prune_joints(dynamic, mask), glob)
        return self._desc[key]

    def surface(self, seq_id, mirrored, t):
        key = (seq_id, bool(mirrored), int(t))
        if key not in self._surf:
            glob = self.descriptors(seq_id, mirrored)[2][t]
            self._surf[key] = self.body.pose_from_transforms(glob).surface
        return self._surf[key]

    def batch(self, windows):
        st, dy, tr, surf = [], [], [], []
        for w in windows:
            s, d, g = self.descriptors(w.seq_id, w.mirrored)
            idx = np.asarray(w.indices)
            st.append(s[idx])
            dy.append(d[idx])
            tr.append(g[idx[-3:]])
            surf.append(self.surface(w.seq_id, w.mirrored, w.t))
        return Batch(list(windows), np.stack(st), np.stack(dy), np.stack(tr), surf)


# ---------------------------------------------------------------------------
# model, losses and augmentation
# ---------------------------------------------------------------------------


@dataclass
class ClothModel:
    params: net.NetParams
    rig: net.GarmentRig
    energy: ClothEnergy

    @classmethod
    def build(cls, garment, skeleton, seed=0, **dims):
        n_active = int(np.count_nonzero(skeleton.active_mask))
        nd = net.NetDims(n_joints=n_active, n_vertices=garment.n_vertices, **dims)
        params = net.NetParams.init(nd, seed)
        rig = net.GarmentRig(np.asarray(garment.vertices), np.asarray(garment.blend_weights), skeleton)
        return cls(params, rig, ClothEnergy(garment))

    @property
    def dims(self):
        return self.params.dims


def augment_mirror(windows, prob, rng):
    """Mirror each window (all of its frames) independently with ``prob``."""
    if prob <= 0.0:
        return list(windows)
    flips = rng.random(len(windows)) < prob
    return [w.flipped() if f else w for w, f in zip(windows, flips)]


def augment_motion_shuffle(z_dynamic, frac, rng):
    """Swap dynamic codes among ``ceil(frac * B)`` samples.

    Returns (shuffled codes, augmented mask, donor index per sample). The
    donors form a derangement of the chosen subset, so no augmented sample
    keeps its own code. Batches of one are returned unchanged.
    """
    z = np.asarray(z_dynamic)
    b = len(z)
    mask = np.zeros(b, dtype=bool)
    donors = np.arange(b)
    if frac <= 0.0 or b == 0:
        return z.copy(), mask, donors
    if b == 1:
        log.warning("motion shuffle skipped: batch of one sample")
        return z.copy(), mask, donors
    m = min(b, math.ceil(frac * b))
    chosen = rng.permutation(b)[:m]
    mask[chosen] = True
    if m == 1:
        others = np.setdiff1d(np.arange(b), chosen)
        donors[chosen[0]] = rng.choice(others)
    else:
        # a cyclic shift of a random order has no fixed points
        donors[chosen] = np.roll(chosen, -1)
    return z[donors], mask, donors


@dataclass
class LossResult:
    loss: object  # scalar Tensor (or array when nothing requires a gradient)
    report: EnergyReport
    x_t: np.ndarray
    x_prev: np.ndarray
    x_prev2: np.ndarray
    augmented: np.ndarray


def _history(frozen, batch, hidden, rig, back):
    z = net.encode_static(frozen, batch.static[:, -1 - back]) + ad.value(hidden[-1 - back])
    lin, trans = rig.blend(batch.transforms[:, 2 - back])
    return net.skin_displacement(rig.rest_vertices, net.decode(frozen, z), lin, trans)


def batch_loss(model, batch, cfg, rng=None, shuffle_frac=None, params=None, w=1.0):
    """Training loss of a batch and its aggregate report.

    Samples picked by the motion shuffle get another sample's dynamic code,
    constant encoder outputs (so no gradient reaches either encoder) and
    static terms only.
    """
    params = model.params if params is None else params
    frozen = params.arrays() if isinstance(params, net.NetParams) else params
    rig, energy = model.rig, model.energy
    b = len(batch)
    hidden = net.rollout(params, batch.dynamic)
    z_s = net.encode_static(params, batch.static[:, -1])
    z_live = net.combine(z_s, hidden[-1], w)
    frac = cfg.shuffle_frac if shuffle_frac is None else shuffle_frac
    aug = np.zeros(b, dtype=bool)
    if frac > 0 and rng is not None:
        zd_shuf, aug, _ = augment_motion_shuffle(ad.value(hidden[-1]), frac, rng)
    if aug.any():
        keep = (~aug).astype(np.float64)[:, None]
        z_const = ad.value(z_s) + w * zd_shuf
        z = ad.add(ad.mul(z_live, keep), z_const * (1.0 - keep))
    else:
        z = z_live
    lin, trans = rig.blend(batch.transforms[:, 2])
    x_t = net.skin_displacement(rig.rest_vertices, net.decode(params, z), lin, trans)
    x_prev = _history(frozen, batch, hidden, rig, 1)
    x_prev2 = _history(frozen, batch, hidden, rig, 2)
    xt = ad.value(x_t)
    grads = np.empty_like(xt)
    energies = dict.fromkeys(("cloth", "bending", "collision", "gravity", "inertia"), 0.0)
    metrics = dict.fromkeys(METRICS, 0.0)
    skipped = 0
    for i in range(b):
        mode = "static" if aug[i] else "dynamic"
        rep = energy.total_loss(xt[i], batch.surfaces[i], mode, x_prev[i], x_prev2[i], cfg.dt)
        grads[i] = rep.gradient
        for k, v in rep.energies.items():
            energies[k] += v / b
        for k, v in rep.metrics.items():
            metrics[k] += v / b
        skipped += rep.skipped_dihedrals
    total = sum(energies.values())
    if not np.isfinite(total):
        bad = next(k for k, v in energies.items() if not np.isfinite(v))
        raise NumericsError(f"non-finite {bad} loss", term=bad)
    grads /= b
    loss = ad.custom(np.asarray(total), (x_t,), (lambda g: g * grads,))
    report = EnergyReport(energies, grads, metrics, skipped, {"augmented": int(aug.sum())})
    return LossResult(loss, report, xt, x_prev, x_prev2, aug)


class Adam:
    """Adaptive moment estimation over a NetParams instance."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, tensor in self.params.tensors.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensor.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip(grads, limit):
    if not limit:
        return grads, None
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > limit:
        s = limit / norm
        grads = {k: g * s for k, g in grads.items()}
    return grads, norm


def train_step(model, batch, cfg, optimizer, rng=None):
    """One optimizer update on a prepared batch. Returns the batch report."""
    params = model.params
    params.zero_grad()
    res = batch_loss(model, batch, cfg, rng)
    res.loss.backward()
    grads, _ = _clip(params.grads(), cfg.grad_clip)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in {name}", term=name)
    optimizer.step(grads)
    params.zero_grad()
    return res.report


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def predict_windows(model, batch, w=1.0, params=None):
    """Graph-free (x_t, x_{t-1}, x_{t-2}) for a batch."""
    arrays = (model.params if params is None else params)
    arrays = arrays.arrays() if isinstance(arrays, net.NetParams) else arrays
    return net.decode_triple(arrays, batch.static, batch.dynamic, model.rig, batch.transforms, w)


class ClothRuntime:
    """Raw poses in, posed body and garment vertices out.

    Forward kinematics, body skinning, descriptors, the recurrent encoder
    and the decoder run once per frame; the hidden state carries across the
    whole sequence until ``reset``.
    """

    def __init__(self, model, body, dt, w=1.0):
        self.body = body
        self.mask = np.asarray(body.skeleton.active_mask, dtype=bool)
        self.stream = DescriptorStream(body.skeleton, dt)
        self.predictor = net.SequencePredictor(model.params, model.rig, w)

    def reset(self):
        self.stream.reset()
        self.predictor.reset()

    def step(self, pose):
        static, dynamic, glob = self.stream.push(pose)
        garment = self.predictor.step(static[self.mask], dynamic[self.mask], glob)
        body = skin_lbs(self.body.vertices, self.body.weights, glob, self.body.skeleton)
        return body, garment

    def run(self, seq):
        self.reset()
        return [self.step(seq[t]) for t in range(len(seq))]


def evaluate_metrics(model, dataset, split="val", cfg=None, max_windows=None, windows=None, with_loss=False):
    """Mean strain, bending, collision %, gravity and inertia over a split.

    With ``with_loss`` the mean training objective (all five energies) is
    returned as well, as ``(metrics, loss)``.
    """
    cfg = cfg or dataset.cfg
    windows = dataset.windows(split) if windows is None else list(windows)
    if max_windows is not None and len(windows) > max_windows:
        pick = np.linspace(0, len(windows) - 1, max_windows).round().astype(int)
        windows = [windows[i] for i in pick]
    out = dict.fromkeys(METRICS, 0.0)
    loss = 0.0
    if windows:
        energy = model.energy
        for lo in range(0, len(windows), cfg.batch_size):
            batch = dataset.batch(windows[lo : lo + cfg.batch_size])
            x_t, x1, x2 = predict_windows(model, batch)
            for i in range(len(batch)):
                rep = energy.total_loss(x_t[i], batch.surfaces[i], "dynamic", x1[i], x2[i], cfg.dt)
                for k in METRICS:
                    out[k] += rep.metrics[k]
                loss += rep.total
        out = {k: v / len(windows) for k, v in out.items()}
        loss /= len(windows)
    return (out, loss) if with_loss else out


# ---------------------------------------------------------------------------
# checkpoints and logs
# ---------------------------------------------------------------------------


def config_hash(dims, extra=None):
    doc = {"dims": dims.to_dict(), "extra": extra or {}}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(rec):
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).astype(np.float64)


def save_checkpoint(path, params, chash=None, meta=None):
    """Deterministic JSON record of all parameter arrays and dims."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": params.dims.to_dict(),
        "config_hash": chash or config_hash(params.dims),
        "meta": meta or {},
        "params": {k: _encode(v) for k, v in sorted(params.arrays().items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path, dims=None, chash=None):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    stored = net.NetDims(**doc["dims"])
    if dims is not None and stored != dims:
        raise CheckpointError(f"checkpoint dims {stored} do not match {dims}")
    if chash is not None and doc["config_hash"] != chash:
        raise CheckpointError(f"config hash {doc['config_hash']} does not match {chash}")
    try:
        return net.NetParams(stored, {k: _decode(v) for k, v in doc["params"].items()})
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc


class MetricsLog:
    """JSON-lines metrics writer (one record per call)."""

    FIELDS = ("step", "split", "strain", "bending", "collision_pct", "gravity", "inertia", "wall_ms")

    def __init__(self, path=None):
        self.path = None if path is None else Path(path)
        self.records = []
        if self.path is not None:
            self.path.write_text("")

    def write(self, step, split, metrics, wall_ms):
        rec = {"step": int(step), "split": split}
        rec.update({k: float(metrics[k]) for k in METRICS})
        rec["wall_ms"] = float(wall_ms)
        self.records.append(rec)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")
        return rec


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    steps: int
    history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    best_step: int | None = None
    best_val_loss: float = math.inf
    stopped_early: bool = False


class Trainer:
    def __init__(self, model, dataset, cfg=None, log_path=None):
        self.model = model
        self.dataset = dataset
        self.cfg = cfg or dataset.cfg
        self.rng = np.random.default_rng(self.cfg.seed)
        self.optimizer = Adam(model.params, self.cfg.learning_rate, self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps)
        self.log = MetricsLog(log_path)
        self.step = 0
        self._best = None
        self._stale = 0

    def validate(self, result):
        t0 = time.perf_counter()
        m, loss = evaluate_metrics(self.model, self.dataset, "val", self.cfg, self.cfg.eval_windows, with_loss=True)
        rec = self.log.write(self.step, "val", m, 1000.0 * (time.perf_counter() - t0))
        result.val_history.append(dict(rec, loss=loss))
        if np.isfinite(loss) and loss < result.best_val_loss:
            result.best_val_loss = loss
            result.best_step = self.step
            self._best = self.model.params.frozen()
            self._stale = 0
        else:
            self._stale += 1
        return rec

    def _patience_out(self):
        return self.cfg.patience is not None and self._stale >= self.cfg.patience

    def fit(self, epochs=None, max_steps=None, deadline=None):
        """Run training; ``deadline`` is a wall-clock budget in seconds.

        With ``keep_best`` (and a validation split) the parameters that
        scored the lowest validation loss are restored at the end. With
        ``patience`` training stops early once validation stops improving;
        this matters because a run that has diverged can drop through the
        body and score a lower loss through gravity alone.
        """
        cfg = self.cfg
        epochs = cfg.epochs if epochs is None else epochs
        max_steps = cfg.max_steps if max_steps is None else max_steps
        train = self.dataset.windows("train")
        has_val = bool(self.dataset.splits["val"])
        result = TrainResult(0)
        if has_val:
            self.validate(result)
        start = time.perf_counter()
        done = False
        for _ in range(epochs):
            order = self.rng.permutation(len(train))
            for lo in range(0, len(order), cfg.batch_size):
                t0 = time.perf_counter()
                wins = augment_mirror([train[i] for i in order[lo : lo + cfg.batch_size]], cfg.mirror_prob, self.rng)
                report = train_step(self.model, self.dataset.batch(wins), cfg, self.optimizer, self.rng)
                self.step += 1
                rec = self.log.write(self.step, "train", report.metrics, 1000.0 * (time.perf_counter() - t0))
                result.history.append(dict(rec, loss=report.total))
                if has_val and cfg.eval_every and self.step % cfg.eval_every == 0:
                    self.validate(result)
                    done = self._patience_out()
                if done or (max_steps is not None and self.step >= max_steps) or (
                    deadline is not None and time.perf_counter() - start > deadline
                ):
                    done = True
                    break
            if has_val and not cfg.eval_every and not done:
                self.validate(result)
                done = self._patience_out()
            if done:
                break
        result.stopped_early = self._patience_out()
        if has_val and result.val_history[-1]["step"] != self.step:
            self.validate(result)
        result.steps = self.step
        if cfg.keep_best and self._best is not None:
            for name, value in self._best.items():
                self.model.params[name].value[...] = value
        return result
