import numpy as np
import pytest

from neuralcloth import autodiff as ad
from neuralcloth import net, synthetic
from neuralcloth.body import fk_transforms
from neuralcloth.descriptors import prune_joints, sequence_descriptors
from neuralcloth.errors import ConfigError, NumericsError, ShapeError
from neuralcloth.gradcheck import relative_error

SMALL = dict(latent=8, static_hidden=(16, 16, 16), joint_hidden=(4, 4), dynamic_hidden=12, gru_input=6, decoder_hidden=(10, 12))


def small_params(seed=0, n_joints=4, n_vertices=16, jitter=0.1):
    p = net.NetParams.init(net.NetDims(n_joints=n_joints, n_vertices=n_vertices, **SMALL), seed)
    rng = np.random.default_rng(seed + 100)
    for t in p.tensors.values():
        if not t.name.startswith("dynamic.") or not t.name.endswith(".b"):
            t.value += jitter * rng.normal(size=t.value.shape)
    return p


@pytest.fixture(scope="module")
def motion():
    skel = synthetic.pendulum_skeleton()
    seq = synthetic.motion("swing", 20, seed=2)
    glob = fk_transforms(skel, seq.rotations, seq.root_translations)
    s, d = sequence_descriptors(seq, skel, transforms=glob)
    mask = skel.active_mask
    g = synthetic.swatch_garment(4, 4)
    rig = net.GarmentRig(g.vertices, g.blend_weights, skel)
    return prune_joints(s, mask), prune_joints(d, mask), glob, rig


def test_dynamic_branch_is_bias_free():
    p = small_params()
    assert p.dynamic_bias_free()
    assert not any(n.startswith("dynamic.") and n.endswith(".b") for n in p.names())
    assert all(n.replace(".W", ".b") in p.tensors for n in p.names() if n.startswith(("static.", "decoder.")) and n.endswith(".W"))


def test_zero_motion_gives_zero_code():
    dims = net.NetDims(n_joints=4, n_vertices=16, **SMALL)
    for seed in range(100):
        p = net.NetParams.init(dims, seed).arrays()
        z, state = net.encode_dynamic(p, np.zeros((4, 12)), net.RecurrentState.zeros(dims))
        assert np.all(z == 0.0) and np.all(state.gru_hidden == 0.0)


def test_gru_fixed_point_and_memory():
    p = small_params().arrays()
    h0 = np.zeros(8)
    assert np.all(net.gru_cell(p, np.zeros(6), h0) == 0.0)
    assert np.all(net.linear(np.zeros(3), np.ones((3, 2))) == 0.0)
    rng = np.random.default_rng(0)
    state = net.RecurrentState(np.zeros(8))
    z, state = net.encode_dynamic(p, rng.normal(size=(4, 12)), state)
    assert np.any(z != 0)
    z, _ = net.encode_dynamic(p, np.zeros((4, 12)), state)
    assert np.any(z != 0)


def test_static_encoder_shape_and_determinism(motion):
    s = motion[0]
    p = small_params().arrays()
    a, b = net.encode_static(p, s[5]), net.encode_static(p, s[5])
    assert a.shape == (8,) and np.array_equal(a, b)
    with pytest.raises(ShapeError):
        net.encode_static(p, s[5, :3])
    with pytest.raises(ShapeError):
        net.dynamic_features(p, np.zeros((4, 11)))


def test_w_zero_matches_static_prediction(motion):
    s, d, glob, rig = motion
    p = small_params().arrays()
    x0 = net.predict(p, s[:12], d[:12], rig, glob[11], w=0.0)
    xs = net.predict_static(p, s[11], rig, glob[11])
    assert np.array_equal(x0, xs)


def test_code_is_linear_in_w(motion):
    s, d, glob, rig = motion
    p = small_params().arrays()
    codes = [net.predict(p, s[:12], d[:12], rig, glob[11], w=w, return_latent=True)[1] for w in (0.0, 0.5, 2.0)]
    zs = [c.z for c in codes]
    assert np.allclose(zs[1] - zs[0], 0.25 * (zs[2] - zs[0]), atol=1e-12)
    assert np.array_equal(codes[0].z_dynamic, codes[2].z_dynamic)


def test_constant_window_is_static(motion):
    s, d, glob, rig = motion
    p = small_params().arrays()
    still_s = np.repeat(s[7:8], 10, axis=0)
    still_d = np.zeros_like(d[:10])
    x = net.predict(p, still_s, still_d, rig, glob[7])
    assert np.array_equal(x, net.predict_static(p, s[7], rig, glob[7]))
    x_t, x1, x2 = net.decode_triple(p, still_s, still_d, rig, np.repeat(glob[7:8], 3, axis=0))
    assert np.array_equal(x_t, x1) and np.array_equal(x1, x2)


def test_still_padding_keeps_code(motion):
    s, d, glob, rig = motion
    p = small_params().arrays()
    win_s, win_d = s[:8], d[:8]  # frame 0 is still: zero dynamic descriptor
    pad_s = np.concatenate([np.repeat(s[:1], 5, axis=0), win_s])
    pad_d = np.concatenate([np.zeros((5,) + d.shape[1:]), win_d])
    a = net.predict(p, win_s, win_d, rig, glob[7], return_latent=True)[1]
    b = net.predict(p, pad_s, pad_d, rig, glob[7], return_latent=True)[1]
    assert np.array_equal(a.z_dynamic, b.z_dynamic)


def test_decode_triple_prefix_equivalence(motion):
    s, d, glob, rig = motion
    p = small_params().arrays()
    L, t = 10, 15
    lo = t - L + 1
    x_t, x1, x2 = net.decode_triple(p, s[lo : t + 1], d[lo : t + 1], rig, glob[t - 2 : t + 1])
    for back, x in enumerate((x_t, x1, x2)):
        ref = net.predict(p, s[lo : t + 1 - back], d[lo : t + 1 - back], rig, glob[t - back])
        assert np.max(np.abs(x - ref)) < 1e-9
    with pytest.raises(ConfigError):
        net.decode_triple(p, s[:2], d[:2], rig, glob[:3])


def test_stop_history_removes_gradient_path(motion):
    s, d, glob, rig = motion
    p = small_params()
    x_t, x1, x2 = net.decode_triple(p, s[:10], d[:10], rig, glob[7:10])
    assert isinstance(x_t, ad.Tensor) and isinstance(x1, np.ndarray) and isinstance(x2, np.ndarray)
    _, y1, _ = net.decode_triple(p, s[:10], d[:10], rig, glob[7:10], stop_history=False)
    assert isinstance(y1, ad.Tensor) and np.array_equal(ad.value(y1), x1)


def test_rollout_gradient_matches_finite_differences(motion):
    d = motion[1][4:7]
    p = small_params(3)
    rng = np.random.default_rng(5)
    proj = rng.normal(size=8)
    p.zero_grad()
    out = ad.total(ad.mul(net.rollout(p, d)[-1], proj))
    out.backward()
    grads = p.grads()
    for name in ("dynamic.joint0.W", "dynamic.fc1.W", "dynamic.gru.cand.W", "dynamic.gru.reset.W"):
        arr = p[name].value
        idx = [tuple(rng.integers(0, n) for n in arr.shape) for _ in range(8)]
        num = []
        for i in idx:
            old = arr[i]
            vals = []
            for h in (1e-6, -1e-6):
                arr[i] = old + h
                vals.append(float(net.rollout(p.arrays(), d)[-1] @ proj))
            arr[i] = old
            num.append((vals[0] - vals[1]) / 2e-6)
        ana = np.array([grads[name][i] for i in idx])
        assert relative_error(ana, np.array(num)) < 1e-4, name


def test_sequence_predictor_matches_full_rollout(motion):
    s, d, glob, rig = motion
    p = small_params()
    sp = net.SequencePredictor(p, rig)
    outs = [sp.step(s[t], d[t], glob[t]) for t in range(12)]
    ref = net.predict(p.arrays(), s[:12], d[:12], rig, glob[11])
    assert np.max(np.abs(outs[-1] - ref)) < 1e-12
    sp.reset()
    assert np.all(sp.state.gru_hidden == 0.0)


def test_non_finite_output(motion):
    s, d, glob, rig = motion
    arrays = {k: v.copy() for k, v in small_params().arrays().items()}
    arrays["decoder.2.b"][0] = np.nan
    with pytest.raises(NumericsError):
        net.predict_static(arrays, s[3], rig, glob[3])


def test_dims_validation():
    with pytest.raises(ConfigError):
        net.NetDims(n_joints=4, n_vertices=10, static_hidden=(8, 8))
    p = small_params()
    bad = p.arrays()
    bad["static.0.W"] = np.zeros((3, 3))
    with pytest.raises(ShapeError):
        net.NetParams(p.dims, bad)
