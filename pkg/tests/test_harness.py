import json

import numpy as np
import pytest

from pegcontact import cli, harness
from pegcontact.classifier import Model, save_model
from pegcontact.config import parse_config
from pegcontact.errors import IncompatibleModelError
from pegcontact.geometry import label_offset, sample_contact_offset
from pegcontact.pattern import read_pgm
from pegcontact.pipeline import EpisodeResult

SMALL = """
seed = 4
data.num_episodes = 6
train.epochs = 2
assemble.trials = 2
alt.num_episodes = 3
"""


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_episode_rng_streams():
    a = harness.episode_rng(0, 3, harness.STREAM_COLLECT).random(4)
    assert np.array_equal(a, harness.episode_rng(0, 3, harness.STREAM_COLLECT).random(4))
    assert not np.array_equal(a, harness.episode_rng(0, 3, harness.STREAM_ASSEMBLE).random(4))
    assert not np.array_equal(a, harness.episode_rng(0, 4, harness.STREAM_COLLECT).random(4))


def test_collect_is_byte_identical(tmp_path):
    cfg = parse_config(SMALL)
    d1 = harness.collect(cfg, tmp_path / "a")
    harness.collect(cfg, tmp_path / "b")
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    assert len([k for k in a if k.startswith("traces/")]) == len(d1) == 6
    header = a["traces/episode_00000.csv"].decode().splitlines()[0]
    assert header == harness.TRACE_HEADER
    back = harness.load_dataset(tmp_path / "a", 9)
    assert np.array_equal(back.inputs, d1.inputs) and np.array_equal(back.labels, d1.labels)
    for (dx, dy, _), y in zip(back.meta["offsets"], back.labels):
        assert label_offset(cfg.geometry.build(), dx, dy) == y


def test_parallel_matches_sequential(tmp_path):
    cfg = parse_config(SMALL.replace("num_episodes = 6", "num_episodes = 4"))
    harness.collect(cfg, tmp_path / "seq", write_traces=False)
    harness.collect(cfg, tmp_path / "par", workers=2, write_traces=False)
    assert _files(tmp_path / "seq") == _files(tmp_path / "par")


def test_collection_aborts_on_failures(tmp_path):
    cfg = parse_config(SMALL + "traj.approach_timeout = 0.01\ndata.max_failure_fraction = 0.2\n")
    with pytest.raises(harness.CollectionAbortedError):
        harness.collect(cfg, tmp_path)


@pytest.mark.parametrize("shape,side", [("square", 50), ("pentagon", 37)])
def test_label_distribution(shape, side):
    # class-0 share equals the area ratio of the center region to the offset box
    cfg = parse_config(f"geometry.shape = {shape}\ngeometry.hole_side_mm = {side}\n")
    geom = cfg.geometry.build()
    rng = np.random.default_rng(11)
    n = 40000
    labels = np.array([label_offset(geom, *sample_contact_offset(rng)[:2]) for _ in range(n)])
    share = np.bincount(labels, minlength=geom.num_classes) / n
    n_sides = 4 if shape == "square" else 5
    apothem = 0.002
    area = n_sides * apothem**2 * np.tan(np.pi / n_sides)
    p0 = area / 0.04**2
    assert abs(share[0] - p0) < 4 * np.sqrt(p0 * (1 - p0) / n)
    assert share[1:].min() >= 0.02


def test_render_trace_and_pattern(tmp_path):
    cfg = parse_config(SMALL.replace("num_episodes = 6", "num_episodes = 1"))
    harness.collect(cfg, tmp_path / "d")
    paths = harness.render(tmp_path / "d" / "traces" / "episode_00000.csv", tmp_path / "img")
    assert len(paths) == 12
    assert all(read_pgm(p).shape == (200, 200) for p in paths)
    with pytest.raises(FileNotFoundError):
        harness.render(tmp_path / "nope.csv", tmp_path / "img")


def _res(success, attempts):
    return EpisodeResult((0.0, 0.0, 0.0), 0, 0, attempts, success, 0.0)


def test_histogram_partition():
    rep = harness.CampaignReport([_res(True, 1), _res(True, 1), _res(True, 2), _res(True, 3),
                                  _res(False, 3)], 1.0, np.zeros((9, 9), int), "")
    assert rep.histogram == {"1": 2, "2": 1, "3": 1, ">3": 1}
    assert sum(rep.histogram.values()) == 5
    assert rep.success_rate == pytest.approx(0.8)
    head, row = rep.table("square").splitlines()
    assert head.split() == ["part", "1", "2", "3", ">3", "total", "success"]
    assert row.split() == ["square", "2", "1", "1", "1", "5", "80.0%"]


def test_model_class_mismatch(tmp_path):
    cfg = parse_config(SMALL + "alt.shape = pentagon\nalt.hole_side_mm = 37\n")
    with pytest.raises(IncompatibleModelError):
        harness.crosssize(cfg, Model.init(9, 0), tmp_path)
    with pytest.raises(IncompatibleModelError):
        harness.assemble(cfg, Model.init(11, 0), tmp_path)


def test_cli_end_to_end(tmp_path, capsys):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text(SMALL)
    out = tmp_path / "run"
    base = ["--config", str(cfgfile), "--out", str(out)]
    assert cli.main(["collect", *base]) == 0
    assert cli.main(["train", *base]) == 0
    assert (out / "model" / "model.bin").exists()
    assert cli.main(["assemble", *base]) == 0
    report = (out / "assemble" / "report.txt").read_text()
    assert report.splitlines()[0].split()[:5] == ["part", "1", "2", "3", ">3"]
    lines = (out / "assemble" / "episodes.jsonl").read_text().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert set(rec) >= {"true_offset", "true_label", "predicted_label", "attempts", "success",
                        "final_insertion_depth"}
    assert cli.main(["crosssize", *base]) == 0
    assert "accuracy" in (out / "crosssize" / "crosssize_report.txt").read_text()
    assert cli.main(["render", *base, str(out / "data" / "traces" / "episode_00000.csv")]) == 0
    assert len(list((out / "render").glob("*.pgm"))) == 12
    bad = tmp_path / "p.bin"
    save_model(Model.init(11, 0), bad)
    assert cli.main(["assemble", *base, "--model", str(bad)]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
    capsys.readouterr()
