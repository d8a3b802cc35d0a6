import json

import numpy as np
import pytest

from depthvision.cli import PipelineConfig, load_config, main, ConfigError
from depthvision.core import ImageRGB, load_image, read_dvim, write_dvim
from depthvision.lama import LamaConfig, alpha_map, to_gray

TINY_NET = {"gen_base": 4, "disc_base": 4, "refiner_width": 4}


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    w = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--scenes", "8", "--seed", "7", "--out", str(w / "data")]) == 0
    cfg = w / "cfg.json"
    cfg.write_text(json.dumps({"gen_size": 32, "net": TINY_NET, "steps": 4, "batch_size": 2}))
    assert main(["train", "--config", str(cfg), "--dataset", str(w / "data"), "--out", str(w / "w.dvnn")]) == 0
    return w


def test_simulate_byte_identical(work, tmp_path):
    assert main(["simulate", "--scenes", "8", "--seed", "7", "--out", str(tmp_path / "x" / "data")]) == 0
    assert tree_bytes(tmp_path / "x" / "data") == tree_bytes(work / "data")


def test_train_byte_identical(work, tmp_path):
    out = tmp_path / "w.dvnn"
    assert main(["train", "--config", str(work / "cfg.json"), "--dataset", str(work / "data"),
                 "--out", str(out)]) == 0
    assert out.read_bytes() == (work / "w.dvnn").read_bytes()
    m1 = json.loads((work / "w.dvnn.run.json").read_text())
    m2 = json.loads((tmp_path / "w.dvnn.run.json").read_text())
    assert m1["output"]["sha256"] == m2["output"]["sha256"]
    # only the dataset location (relative to each manifest) differs
    m1["config"].pop("dataset"), m2["config"].pop("dataset")
    assert m1["config"] == m2["config"]


def test_run_manifest_contents(work):
    m = json.loads((work / "w.dvnn.run.json").read_text())
    assert m["command"] == "train" and m["seed"] == 0
    assert m["config"]["gen_size"] == 32 and m["config"]["net"] == TINY_NET
    assert m["versions"]["depth_encoding"] == "linear-v1"
    assert "timestamp" not in json.dumps(m)


def test_run_manifest_reproduces_run(work, tmp_path):
    """Feeding the recorded config back in yields the same artifact."""
    m = json.loads((work / "w.dvnn.run.json").read_text())
    cfg = dict(m["config"])
    cfg["dataset"] = str(work / "data")
    cfg["output"] = str(tmp_path / "w.dvnn")
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 0
    assert (tmp_path / "w.dvnn").read_bytes() == (work / "w.dvnn").read_bytes()


def _stages(work, tmp_path, scene, rgb_name, mode):
    s = work / "data" / scene
    common = ["--gen-size", "32"]
    assert main(["project", "--cloud", str(s / "cloud.bin"), "--calib", str(s / "calib.json"),
                 "--out", str(tmp_path / "sparse.dvim")]) == 0
    assert main(["densify", "--depth", str(tmp_path / "sparse.dvim"), "--out", str(tmp_path / "dense.dvim")]) == 0
    assert main(["synth", *common, "--depth", str(tmp_path / "dense.dvim"), "--weights", str(work / "w.dvnn"),
                 "--out", str(tmp_path / "gan.dvim")]) == 0
    assert main(["fuse", "--mode", mode, "--rgb", str(s / rgb_name), "--calib", str(s / "calib.json"),
                 "--gan", str(tmp_path / "gan.dvim"), "--out", str(tmp_path / "fused.dvim")]) == 0
    assert main(["pipeline", *common, "--mode", mode, "--rgb", str(s / rgb_name), "--cloud", str(s / "cloud.bin"),
                 "--calib", str(s / "calib.json"), "--weights", str(work / "w.dvnn"),
                 "--out", str(tmp_path / "pipe.dvim"), "--gan-out", str(tmp_path / "pipe_gan.dvim")]) == 0


@pytest.mark.parametrize("mode", ["full", "pixelwise"])
def test_pipeline_equals_composed_stages(work, tmp_path, mode):
    _stages(work, tmp_path, "scene_0001", "rgb_dark.png", mode)
    assert (tmp_path / "pipe.dvim").read_bytes() == (tmp_path / "fused.dvim").read_bytes()
    assert (tmp_path / "pipe_gan.dvim").read_bytes() == (tmp_path / "gan.dvim").read_bytes()


def test_full_fusion_on_dark_scene_is_synth_output(work, tmp_path):
    _stages(work, tmp_path, "scene_0001", "rgb_dark.png", "full")
    assert np.array_equal(read_dvim(tmp_path / "pipe.dvim"), read_dvim(tmp_path / "gan.dvim"))


def test_fuse_pixelwise_half_dark_card(tmp_path):
    rng = np.random.default_rng(0)
    card = np.ones((8, 8, 3))
    card[:, :4] = 0.0
    write_dvim(tmp_path / "card.dvim", card)
    gan = rng.random((8, 8, 3))
    write_dvim(tmp_path / "gan.dvim", gan)
    assert main(["fuse", "--mode", "pixelwise", "--rgb", str(tmp_path / "card.dvim"),
                 "--gan", str(tmp_path / "gan.dvim"), "--out", str(tmp_path / "f.dvim")]) == 0
    out = read_dvim(tmp_path / "f.dvim")
    assert np.array_equal(out[:, :4], gan[:, :4]) and np.array_equal(out[:, 4:], card[:, 4:])
    # scalar per-pixel reimplementation of the alpha map
    alpha = alpha_map(to_gray(ImageRGB(card)), LamaConfig())
    for i in range(8):
        for j in range(8):
            lum = 0.2126 * card[i, j, 0] + 0.7152 * card[i, j, 1] + 0.0722 * card[i, j, 2]
            assert alpha[i, j] == min(max((lum - 0.15) / (0.35 - 0.15), 0.0), 1.0)


def test_evaluate_byte_identical(work, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}" / "report.json"
        out.parent.mkdir()
        assert main(["evaluate", "--manifest", str(work / "data"), "--mode", "full", "--gen-size", "32",
                     "--endpoint", "mock:luminance", "--weights", str(work / "w.dvnn"), "--out", str(out)]) == 0
        outs.append(tree_bytes(out.parent))
    assert outs[0] == outs[1]
    report = json.loads((tmp_path / "r0" / "report.json").read_text())
    assert report["mode"] == "full" and report["cells"]["acc"]["all"] is not None


def test_evaluate_replay(work, tmp_path):
    a = tmp_path / "a.json"
    assert main(["evaluate", "--manifest", str(work / "data"), "--mode", "camera", "--endpoint", "mock:luminance",
                 "--out", str(a), "--transcript", str(tmp_path / "t.jsonl")]) == 0
    b = tmp_path / "b.json"
    assert main(["evaluate", "--manifest", str(work / "data"), "--mode", "camera",
                 "--endpoint", f"replay:{tmp_path / 't.jsonl'}", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(work, tmp_path, capsys):
    assert main(["fuse", "--rgb", "x.png", "--l-low", "0.5", "--l-high", "0.2", "--out", "o.png"]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err == {"error": "config", "exit_code": 2, "field": "l_high", "message": "l_high: must exceed l_low"}
    assert main(["project", "--cloud", str(tmp_path / "nope.bin"), "--calib", "c.json", "--out", "x"]) == 3
    assert main(["evaluate", "--manifest", str(work / "data"), "--mode", "camera", "--endpoint",
                 "http://127.0.0.1:9/", "--backoff", "0", "--out", str(tmp_path / "r.json")]) == 5
    assert (tmp_path / "r.json").exists()
    assert main(["train", "--config", str(work / "cfg.json"), "--dataset", str(work / "data"), "--lr", "1e30",
                 "--steps", "20", "--out", str(tmp_path / "w.dvnn")]) == 4


def test_errors_are_single_json_lines(tmp_path, capsys):
    main(["densify", "--depth", str(tmp_path / "missing.dvim"), "--out", str(tmp_path / "o.dvim")])
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["exit_code"] == 3


def test_json_logs(work, tmp_path, capsys):
    assert main(["train", "--config", str(work / "cfg.json"), "--dataset", str(work / "data"), "--json-logs",
                 "--log-every", "2", "--out", str(tmp_path / "w.dvnn")]) == 0
    events = [json.loads(line) for line in capsys.readouterr().err.strip().splitlines()]
    steps = [e["step"] for e in events if e["event"] == "train_step"]
    assert steps == [2, 4]


@pytest.mark.parametrize("data,field", [
    ({"l_low": 2.0}, "l_low"),
    ({"mode": "sometimes"}, "mode"),
    ({"steps": 1.5}, "steps"),
    ({"bogus": 1}, "bogus"),
    ({"gen_size": 36}, "gen_size"),
    ({"endpoint": "mock:psychic"}, "endpoint"),
    ({"net": {"nope": 1}}, "net"),
    ({"daytime_bypass": "yes"}, "daytime_bypass"),
])
def test_config_validation_names_field(tmp_path, data, field):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(data))
    with pytest.raises(ConfigError) as ei:
        load_config(str(p), {})
    assert ei.value.field == field


def test_flags_override_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"l_low": 0.1, "seed": 3}))
    cfg = load_config(str(p), {"seed": 9, "l_high": None})
    assert cfg.seed == 9 and cfg.l_low == 0.1 and cfg.l_high == 0.35


def test_config_hash_stable():
    assert PipelineConfig().hash() == PipelineConfig().hash()
    assert PipelineConfig(seed=1).hash() != PipelineConfig().hash()


def test_png_outputs(work, tmp_path):
    s = work / "data" / "scene_0000"
    assert main(["pipeline", "--mode", "off", "--rgb", str(s / "rgb.png"), "--cloud", str(s / "cloud.bin"),
                 "--calib", str(s / "calib.json"), "--out", str(tmp_path / "o.png")]) == 0
    assert load_image(tmp_path / "o.png").data.shape == (128, 128, 3)
