"""Disentangled recurrent encoder-decoder for garment deformation.

The static encoder sees only the current static descriptor; the dynamic
encoder (per-joint layers, two shared layers, one GRU) sees the dynamic
descriptors and carries no bias anywhere, so zero motion with a zero hidden
state yields an exactly zero dynamic code. Codes are combined as
``z = z_static + w * z_dynamic`` and decoded into rest-pose displacements,
which are then skinned with the body.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .body import blend_matrices, skinning_matrices
from .errors import ConfigError, NumericsError, ShapeError


@dataclass(frozen=True)
class NetDims:
    n_joints: int
    n_vertices: int
    latent: int = 128
    static_hidden: tuple = (256, 256, 256)
    joint_hidden: tuple = (32, 32)
    dynamic_hidden: int = 256
    gru_input: int = 128
    decoder_hidden: tuple = (256, 512)
    static_dim: int = 9
    dynamic_dim: int = 12

    def __post_init__(self):
        for name in ("static_hidden", "joint_hidden", "decoder_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.static_hidden) != 3:
            raise ConfigError("static encoder has 4 layers: give 3 hidden widths")
        if len(self.joint_hidden) != 2:
            raise ConfigError("per-joint block has 2 layers: give 2 widths")

    def to_dict(self):
        return asdict(self)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class LatentCode:
    z_static: np.ndarray
    z_dynamic: np.ndarray
    w: float = 1.0

    @property
    def z(self):
        return self.z_static + self.w * self.z_dynamic


@dataclass
class RecurrentState:
    gru_hidden: np.ndarray

    @classmethod
    def zeros(cls, dims, batch=()):
        return cls(np.zeros(tuple(batch) + (dims.latent,)))


def _layer_shapes(dims):
    k = dims.n_joints
    shapes = {}
    widths = [dims.static_dim * k, *dims.static_hidden, dims.latent]
    for i in range(4):
        shapes[f"static.{i}.W"] = (widths[i], widths[i + 1])
        shapes[f"static.{i}.b"] = (widths[i + 1],)
    jw = [dims.dynamic_dim, *dims.joint_hidden]
    for i in range(2):
        shapes[f"dynamic.joint{i}.W"] = (jw[i], jw[i + 1])
    shapes["dynamic.fc0.W"] = (dims.joint_hidden[-1] * k, dims.dynamic_hidden)
    shapes["dynamic.fc1.W"] = (dims.dynamic_hidden, dims.gru_input)
    gin = dims.latent + dims.gru_input
    for gate in ("update", "reset", "cand"):
        shapes[f"dynamic.gru.{gate}.W"] = (gin, dims.latent)
    dw = [dims.latent, *dims.decoder_hidden, 3 * dims.n_vertices]
    for i in range(len(dw) - 1):
        shapes[f"decoder.{i}.W"] = (dw[i], dw[i + 1])
        shapes[f"decoder.{i}.b"] = (dw[i + 1],)
    return shapes


class NetParams:
    """Named parameter arrays, each wrapped in a gradient-tracking leaf."""

    def __init__(self, dims, arrays):
        self.dims = dims
        shapes = _layer_shapes(dims)
        if set(arrays) != set(shapes):
            raise ShapeError("parameter names do not match the network layout")
        self.tensors = {}
        for name in shapes:
            a = np.array(arrays[name], dtype=np.float64)
            if a.shape != shapes[name]:
                raise ShapeError(f"{name}: expected {shapes[name]}, got {a.shape}")
            self.tensors[name] = ad.Tensor(a, requires_grad=True, name=name)

    @classmethod
    def init(cls, dims, seed=0):
        """Uniform fan-in initialization; the last decoder layer starts at zero."""
        rng = np.random.default_rng(seed)
        arrays = {}
        shapes = _layer_shapes(dims)
        last = f"decoder.{len(dims.decoder_hidden)}"
        for name, shape in shapes.items():
            if name.endswith(".b") or name.startswith(last):
                arrays[name] = np.zeros(shape)
                continue
            fan_in = shape[0]
            gain = 1.0 if ".gru." in name else np.sqrt(2.0)
            lim = gain * np.sqrt(3.0 / fan_in)
            arrays[name] = rng.uniform(-lim, lim, size=shape)
        return cls(dims, arrays)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def names(self):
        return list(self.tensors)

    def arrays(self):
        """Plain arrays, for graph-free evaluation."""
        return {k: t.value for k, t in self.tensors.items()}

    def frozen(self):
        """Tensors that carry no gradient (same values)."""
        return {k: t.value.copy() for k, t in self.tensors.items()}

    def grads(self):
        return {k: (np.zeros_like(t.value) if t.grad is None else t.grad) for k, t in self.tensors.items()}

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def dynamic_bias_free(self):
        """Structural check: no dynamic-branch parameter is a bias vector."""
        return not any(n.startswith("dynamic.") and (n.endswith(".b") or self.tensors[n].value.ndim != 2) for n in self.tensors)

    def copy(self):
        return NetParams(self.dims, {k: v.copy() for k, v in self.arrays().items()})


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def linear(x, W, b=None):
    out = ad.matmul(x, W)
    return out if b is None else ad.add(out, b)


def relu(x):
    return ad.relu(x)


def gru_cell(params, x, h):
    """Bias-free GRU: h' = (1 - u) * h + u * tanh([r * h, x] Wc)."""
    p = params
    hx = ad.concat([h, x], axis=-1)
    u = ad.sigmoid(ad.matmul(hx, p["dynamic.gru.update.W"]))
    r = ad.sigmoid(ad.matmul(hx, p["dynamic.gru.reset.W"]))
    c = ad.tanh(ad.matmul(ad.concat([ad.mul(r, h), x], axis=-1), p["dynamic.gru.cand.W"]))
    return ad.add(ad.mul(ad.sub(1.0, u), h), ad.mul(u, c))


def encode_static(params, static_desc):
    """``static_desc`` (..., K, 9) or already flattened (..., 9K) -> (..., d)."""
    sd = ad.value(static_desc)
    k9 = _shape(params["static.0.W"])[0]
    if sd.shape[-1] != k9:
        static_desc = ad.reshape(static_desc, sd.shape[:-2] + (sd.shape[-2] * sd.shape[-1],))
    if ad.value(static_desc).shape[-1] != k9:
        raise ShapeError(f"static encoder expects {k9} inputs, got {ad.value(static_desc).shape[-1]}")
    h = static_desc
    for i in range(4):
        h = linear(h, params[f"static.{i}.W"], params[f"static.{i}.b"])
        if i < 3:
            h = relu(h)
    return h


def dynamic_features(params, dynamic_desc):
    """Per-joint and shared bias-free layers: (..., K, 12) -> (..., gru_input)."""
    dd = ad.value(dynamic_desc)
    if dd.ndim < 2 or dd.shape[-1] != _shape(params["dynamic.joint0.W"])[0]:
        raise ShapeError(f"dynamic descriptor has shape {dd.shape}")
    h = relu(ad.matmul(dynamic_desc, params["dynamic.joint0.W"]))
    h = relu(ad.matmul(h, params["dynamic.joint1.W"]))
    hv = ad.value(h)
    h = ad.reshape(h, hv.shape[:-2] + (hv.shape[-2] * hv.shape[-1],))
    if ad.value(h).shape[-1] != _shape(params["dynamic.fc0.W"])[0]:
        raise ShapeError("joint count does not match the dynamic encoder")
    h = relu(ad.matmul(h, params["dynamic.fc0.W"]))
    return relu(ad.matmul(h, params["dynamic.fc1.W"]))


def _shape(p):
    return ad.value(p).shape


def encode_dynamic(params, dynamic_desc, state):
    """One recurrent step. Returns (z_dynamic, new RecurrentState)."""
    h = gru_cell(params, dynamic_features(params, dynamic_desc), state.gru_hidden)
    return h, RecurrentState(h)


def rollout(params, dynamic_window, hidden=None):
    """Run the dynamic encoder over a window (..., T, K, 12).

    Returns the list of hidden states (one per frame), each (..., d).
    """
    feats = dynamic_features(params, dynamic_window)
    fv = ad.value(feats)
    t_len = fv.shape[-2]
    d = _shape(params["dynamic.gru.update.W"])[1]
    h = np.zeros(fv.shape[:-2] + (d,)) if hidden is None else hidden
    out = []
    for t in range(t_len):
        x_t = ad.take(feats, t, axis=fv.ndim - 2) if ad.needs_grad(feats) else fv[..., t, :]
        h = gru_cell(params, x_t, h)
        out.append(h)
    return out


def decode(params, z):
    """Latent (..., d) -> rest-pose displacement (..., N, 3)."""
    n_layers = sum(1 for k in params if k.startswith("decoder.") and k.endswith(".W"))
    h = z
    for i in range(n_layers):
        h = linear(h, params[f"decoder.{i}.W"], params[f"decoder.{i}.b"])
        if i < n_layers - 1:
            h = relu(h)
    hv = ad.value(h)
    return ad.reshape(h, hv.shape[:-1] + (hv.shape[-1] // 3, 3))


def skin_displacement(rest_vertices, disp, lin, trans):
    """x = A (rest + disp) + b with per-vertex blended transforms.

    ``lin`` (..., N, 3, 3), ``trans`` (..., N, 3); gradient flows to ``disp``.
    """
    local = rest_vertices + ad.value(disp)
    out = np.einsum("...nij,...nj->...ni", lin, local) + trans
    return ad.custom(out, (disp,), (lambda g: np.einsum("...nji,...nj->...ni", lin, g),))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class GarmentRig:
    """What the decoder output is skinned with: rest vertices, blend weights
    and the skeleton's rest pose."""

    rest_vertices: np.ndarray
    weights: np.ndarray
    skeleton: object = field(repr=False)

    def blend(self, global_transforms):
        return blend_matrices(self.weights, skinning_matrices(self.skeleton, global_transforms))


def combine(z_static, z_dynamic, w=1.0):
    if w == 1.0:
        return ad.add(z_static, z_dynamic)
    return ad.add(z_static, ad.scale(z_dynamic, w))


def _check_finite(x):
    if not np.all(np.isfinite(ad.value(x))):
        raise NumericsError("non-finite network output")
    return x


def predict(params, static_window, dynamic_window, rig, global_transforms_t, w=1.0, return_latent=False):
    """Garment positions at the last frame of a window.

    ``static_window`` (T, K, 9), ``dynamic_window`` (T, K, 12); the recurrent
    state starts at zero at the first window frame. ``global_transforms_t``
    are the joint transforms at the last frame.
    """
    if len(ad.value(dynamic_window)) < 1:
        raise ConfigError("window must contain at least one frame")
    hidden = rollout(params, dynamic_window)
    z_s = encode_static(params, ad.value(static_window)[-1])
    z_d = hidden[-1]
    disp = decode(params, combine(z_s, z_d, w))
    lin, trans = rig.blend(global_transforms_t)
    x = _check_finite(skin_displacement(rig.rest_vertices, disp, lin, trans))
    if return_latent:
        return x, LatentCode(ad.value(z_s), ad.value(z_d), w)
    return x


def predict_static(params, static_desc, rig, global_transforms):
    """Prediction from the static code alone (z_dynamic taken as zero)."""
    z_s = encode_static(params, static_desc)
    lin, trans = rig.blend(global_transforms)
    return _check_finite(skin_displacement(rig.rest_vertices, decode(params, z_s), lin, trans))


def decode_triple(params, static_window, dynamic_window, rig, transforms_last3, w=1.0, stop_history=True):
    """Positions at the last three frames from a single recurrent rollout.

    Windows are (..., T, K, C) and ``transforms_last3`` is (..., 3, K, 4, 4),
    oldest first. Returns (x_t, x_{t-1}, x_{t-2}). With ``stop_history`` the
    two earlier states are returned as constants (no gradient path).
    """
    sv = ad.value(static_window)
    if sv.ndim < 3 or sv.shape[-3] < 3:
        raise ConfigError("decode_triple needs a window of at least 3 frames")
    g3 = np.asarray(transforms_last3)
    hidden = rollout(params, dynamic_window)
    outs = []
    for back in range(3):
        z_s = encode_static(params, sv[..., -1 - back, :, :])
        disp = decode(params, combine(z_s, hidden[-1 - back], w))
        lin, trans = rig.blend(g3[..., 2 - back, :, :, :])
        x = _check_finite(skin_displacement(rig.rest_vertices, disp, lin, trans))
        if back and stop_history:
            x = ad.stop_gradient(x)
        outs.append(x)
    return tuple(outs)


class SequencePredictor:
    """Streaming inference: the recurrent state persists across frames."""

    def __init__(self, params, rig, w=1.0):
        self.params = params.arrays() if isinstance(params, NetParams) else params
        self.rig = rig
        self.w = w
        d = self.params["dynamic.gru.update.W"].shape[1]
        self.state = RecurrentState(np.zeros(d))

    def reset(self):
        self.state = RecurrentState(np.zeros_like(self.state.gru_hidden))

    def step(self, static_desc, dynamic_desc, global_transforms):
        z_d, self.state = encode_dynamic(self.params, dynamic_desc, self.state)
        z_s = encode_static(self.params, static_desc)
        disp = decode(self.params, combine(z_s, z_d, self.w))
        lin, trans = self.rig.blend(global_transforms)
        return _check_finite(skin_displacement(self.rig.rest_vertices, disp, lin, trans))
