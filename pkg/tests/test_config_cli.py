import json

import numpy as np
import pytest

from neuralcloth import net, synthetic
from neuralcloth.cli import main
from neuralcloth.config import Config, build_scene, checkpoint_path, load_config, parse_config
from neuralcloth.errors import AssetError, SchemaError

NET = {"latent": 8, "static_hidden": [16, 16, 16], "joint_hidden": [4, 4], "dynamic_hidden": 12, "gru_input": 6, "decoder_hidden": [10, 12]}


def small_doc(**sections):
    doc = {
        "garment": {"synthetic": "swatch", "resolution": [4, 4]},
        "body": {"synthetic": "pendulum"},
        "train": {"batch_size": 4, "epochs": 1, "val_frac": 0.25, "test_frac": 0.25, **NET},
        "solver": {"tol": 1e-4, "max_iter": 300},
        "io": {"out_dir": "out", "synthetic_motion": {"n_per_action": 1, "n_frames": 12}},
    }
    doc.update(sections)
    return doc


def write_config(tmp_path, doc, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# -- schema -------------------------------------------------------------------------


def test_defaults_parse():
    cfg = parse_config({})
    assert isinstance(cfg, Config) and cfg.garment.synthetic == "cap"
    assert cfg.train.to_train_config().batch_size == 32


@pytest.mark.parametrize(
    "doc, path",
    [
        ({"fabric": {"k_strech": 1.0}}, "fabric.k_strech"),
        ({"train": {"batch_size": 0}}, "train.batch_size"),
        ({"solver": {"armijo_c": 2.0}}, "solver.armijo_c"),
        ({"garment": {"obj": "a.obj", "synthetic": "cap"}}, "garment"),
        ({"io": {"synthetic_motion": {"actions": ["dance"]}}}, "io.synthetic_motion.actions.0"),
        ({"colour": 1}, "colour"),
    ],
)
def test_schema_errors_carry_key_path(doc, path):
    with pytest.raises(SchemaError) as err:
        parse_config(doc)
    assert err.value.key_path == path


def test_load_config_errors(tmp_path):
    with pytest.raises(AssetError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(SchemaError):
        load_config(tmp_path / "bad.json")


def test_relative_paths_and_checkpoint_default(tmp_path):
    cfg, base = load_config(write_config(tmp_path, small_doc()))
    assert checkpoint_path(cfg, base) == tmp_path / "out" / "model.json"
    scene = build_scene(cfg, base)
    assert len(scene.sequences) == 4 and scene.garment.n_vertices == 16
    assert scene.actions == ["swing", "spin", "jump", "still"]


# -- exit codes -----------------------------------------------------------------------


def test_schema_violation_exits_4_without_writing(tmp_path, capsys):
    p = write_config(tmp_path, small_doc(fabric={"k_strech": 1.0}))
    code, _, err = run(capsys, "drape", p)
    assert code == 4 and "fabric.k_strech" in err
    assert not (tmp_path / "out").exists()


def test_missing_asset_exits_2(tmp_path, capsys):
    p = write_config(tmp_path, small_doc(garment={"obj": "missing.obj"}))
    code, _, err = run(capsys, "drape", p)
    assert code == 2 and "missing.obj" in err
    code, _, err = run(capsys, "drape", tmp_path / "absent.json")
    assert code == 2


def test_solver_failure_exits_3_with_frame(tmp_path, capsys):
    p = write_config(tmp_path, small_doc(garment={"synthetic": "cap"}, fabric={"k_stretch": 1e300}))
    code, _, err = run(capsys, "simulate", p, "--frames", "6")
    assert code == 3 and "frame" in err


# -- commands ---------------------------------------------------------------------------


def test_drape_is_byte_identical(tmp_path, capsys):
    p = write_config(tmp_path, small_doc())
    assert run(capsys, "drape", p, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, "drape", p, "--out", tmp_path / "b")[0] == 0
    a = (tmp_path / "a" / "drape" / "frame_000000.obj").read_bytes()
    assert a == (tmp_path / "b" / "drape" / "frame_000000.obj").read_bytes()
    rec = json.loads((tmp_path / "a" / "drape" / "metrics.jsonl").read_text())
    assert {"strain", "bending", "collision_pct", "gravity", "inertia"} <= set(rec)


def test_simulate_and_export(tmp_path, capsys):
    p = write_config(tmp_path, small_doc())
    code, out, _ = run(capsys, "simulate", p, "--frames", "5")
    assert code == 0 and json.loads(out)["frames"] == 5
    sim = tmp_path / "out" / "simulate"
    assert sorted(f.name for f in sim.glob("*.obj")) == [f"frame_{i:06d}.obj" for i in range(5)]
    assert len((sim / "metrics.jsonl").read_text().splitlines()) == 5
    # frames 0 and 1 are the drape of pose 0
    run(capsys, "drape", p, "--index", "0")
    assert (sim / "frame_000000.obj").read_bytes() == (tmp_path / "out" / "drape" / "frame_000000.obj").read_bytes()
    code, _, _ = run(capsys, "export", sim / "states.npz", "--out", tmp_path / "exported")
    assert code == 0
    for i in range(5):
        assert (tmp_path / "exported" / f"frame_{i:06d}.obj").read_bytes() == (sim / f"frame_{i:06d}.obj").read_bytes()
    assert run(capsys, "export", tmp_path / "none.npz", "--out", tmp_path / "x")[0] == 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    p = write_config(tmp, small_doc())
    assert main(["train", str(p), "--max-steps", "3"]) == 0
    return tmp, p


def test_train_writes_checkpoint_and_log(trained):
    tmp, _ = trained
    assert (tmp / "out" / "model.json").is_file()
    lines = (tmp / "out" / "train_log.jsonl").read_text().splitlines()
    assert any(json.loads(l)["split"] == "train" for l in lines)


def test_infer_motion_scale_zero_is_static(trained, capsys):
    tmp, p = trained
    code, _, _ = run(capsys, "infer", p, "--motion-scale", "0", "--with-body", "--out", tmp / "w0")
    assert code == 0
    states = np.load(tmp / "w0" / "infer" / "states.npz")["states"]
    cfg, base = load_config(p)
    scene = build_scene(cfg, base)
    from neuralcloth.descriptors import prune_joints, sequence_descriptors
    from neuralcloth.body import fk_transforms
    from neuralcloth.train import load_checkpoint

    params = load_checkpoint(tmp / "out" / "model.json").arrays()
    seq = scene.sequences[0]
    skel = scene.body.skeleton
    glob = fk_transforms(skel, seq.rotations, seq.root_translations)
    static = prune_joints(sequence_descriptors(seq, skel, transforms=glob)[0], skel.active_mask)
    rig = net.GarmentRig(scene.garment.vertices, scene.garment.blend_weights, skel)
    for t in range(len(seq)):
        assert np.array_equal(states[t], net.predict_static(params, static[t], rig, glob[t]))
    assert len(list((tmp / "w0" / "infer" / "body").glob("*.obj"))) == len(seq)
    code, _, _ = run(capsys, "infer", p, "--out", tmp / "w1")
    assert code == 0
    assert not np.array_equal(np.load(tmp / "w1" / "infer" / "states.npz")["states"], states)


def test_infer_warns_outside_range(trained, capsys, caplog):
    tmp, p = trained
    code, _, _ = run(capsys, "infer", p, "--motion-scale", "2.5", "--out", tmp / "w25")
    assert code == 0 and "outside [0, 2]" in caplog.text


def test_infer_is_byte_identical(trained, capsys):
    tmp, p = trained
    run(capsys, "infer", p, "--out", tmp / "r1")
    run(capsys, "infer", p, "--out", tmp / "r2")
    for f in (tmp / "r1" / "infer").glob("*.obj"):
        assert f.read_bytes() == (tmp / "r2" / "infer" / f.name).read_bytes()


def test_metrics_command(trained, capsys):
    _, p = trained
    code, out, _ = run(capsys, "metrics", p, "--split", "test")
    rec = json.loads(out)
    assert code == 0 and rec["split"] == "test"
    assert {"strain", "bending", "collision_pct", "gravity", "inertia"} <= set(rec)


def test_missing_checkpoint_exits_2(tmp_path, capsys):
    p = write_config(tmp_path, small_doc())
    assert run(capsys, "infer", p)[0] == 2


def test_gradcheck_seed_7(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seed", "7")
    assert code == 0
    worst = float(out.strip().splitlines()[-1].split()[3])
    assert worst < 1e-4


def test_synth_writes_a_loadable_scene(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", tmp_path / "scene", "--motions", "1", "--frames", "12")
    assert code == 0
    cfg, base = load_config(tmp_path / "scene" / "config.json")
    scene = build_scene(cfg, base)
    ref = synthetic.cap_garment()
    assert np.allclose(scene.garment.vertices, ref.vertices, atol=1e-8)
    assert len(scene.sequences) == 4 and scene.actions[1] == "spin"
    assert np.allclose(scene.body.vertices, synthetic.pendulum_body().vertices, atol=1e-8)
