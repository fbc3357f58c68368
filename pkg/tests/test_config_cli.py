import math

import numpy as np
import pytest

from oracles import knn_reference, vote_reference
from synth import blob_scene, noisy_predictions, ring_centers
from uda_kit.cli import main
from uda_kit.cloud_io import read_labels, write_labels, write_point_cloud
from uda_kit.config import load_config, parse_config
from uda_kit.contrastive import EncoderParams, FinetuneParams
from uda_kit.errors import ConfigError
from uda_kit.range_postprocess import project_spherical
from uda_kit.segmentation import GROUND, NOISE, read_segments

CLASS_MAP = "ignore = 255\n0 -> 0 # ground\n1 -> 1 # thing\n2 -> 2 # other\n"
SCANS = ["000", "001", "002"]


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    root = tmp_path / "data"
    for sub in ("points", "labels", "m0", "m1", "m2"):
        (root / sub).mkdir(parents=True)
    for i, scan in enumerate(SCANS):
        cloud, truth = blob_scene(rng, ring_centers(5 + i), [60] * (5 + i), ground_n=1500, extent=10)
        write_point_cloud(cloud.astype(np.float32), root / "points" / f"{scan}.bin")
        sem = np.where(truth == GROUND, 0, 1 + truth % 2).astype(np.uint32)
        write_labels(sem, root / "labels" / f"{scan}.label")
        for m, pred in enumerate(noisy_predictions(rng, sem.astype(np.int64), [0.1, 0.2, 0.3], 3)):
            write_labels(pred.astype(np.uint32), root / f"m{m}" / f"{scan}.label")
    (root / "scans.txt").write_text("\n".join(SCANS) + "\n")
    (root / "classes.map").write_text(CLASS_MAP)
    return root


def _config(root, extra=""):
    path = root / "run.ini"
    path.write_text(f"""
[data]
points_dir = points
labels_dir = labels
scan_list = scans.txt
class_map = classes.map
output_dir = out

[models]
order = m0 m1 m2
m0 = m0
m1 = m1
m2 = m2

[train]
steps = 4
batch_segments = 8

[augmentation]
crop_enabled = false
{extra}
""")
    return path


def _run(*args):
    return main([str(a) for a in args])


# ---------------------------------------------------------------- config

def test_relative_paths_resolve_against_config_dir(dataset):
    cfg = load_config(_config(dataset))
    assert cfg.points_dir == dataset / "points"
    assert cfg.output_dir == dataset / "out"
    assert [n for n, _ in cfg.models] == ["m0", "m1", "m2"]
    assert cfg.class_map.class_names() == ["ground", "thing", "other"]
    assert cfg.augmentation.crop_enabled is False


def test_overrides_and_seed(dataset):
    cfg = load_config(_config(dataset), ["train.learning_rate=0.5", "run.seed=7", "knn.fov_up_deg=2"])
    assert cfg.train.learning_rate == 0.5
    assert cfg.seed == 7 and cfg.train.rng_seed == 7 and cfg.segmentation.rng_seed == 7
    assert cfg.augmentation.rng_seed == 7
    assert cfg.knn_fov_up == pytest.approx(math.radians(2))


@pytest.mark.parametrize("text, needle", [
    ("[data]\nbogus = 1\n", "data.bogus"),
    ("[nope]\nx = 1\n", "[nope]"),
    ("[train]\nsteps = many\n", "train.steps"),
    ("[data]\npoints_dir = /does/not/exist\n", "points_dir"),
    ("[train]\ndropout_rate = 1.5\n", "train"),
    ("[models]\norder = a\n", "undeclared"),
    ("[data]\nclass_map = builtin:nothing\n", "builtin"),
])
def test_config_errors_name_the_key(text, needle):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert needle in str(info.value)


def test_builtin_map():
    cfg = parse_config("[data]\nclass_map = builtin:semanticposs\n")
    assert cfg.class_map.num_classes == 9


def test_bad_override_shape():
    with pytest.raises(ConfigError):
        parse_config("", overrides=["noequals"])


def test_config_error_exit_code(dataset, capsys):
    assert _run("segment", "--config", _config(dataset), "data.nope=1") == 2
    assert "data.nope" in capsys.readouterr().err


# ---------------------------------------------------------------- segment

def test_segment_writes_assignments_and_summary(dataset, capsys):
    cfg = _config(dataset)
    assert _run("segment", "--config", cfg) == 0
    out = dataset / "out"
    rows = (out / "segment_summary.csv").read_text().splitlines()
    assert rows[0] == "scan,points,ground,noise,segments"
    for row, scan in zip(rows[1:], SCANS):
        a = read_segments(out / "segments" / f"{scan}.seg")
        recount = [scan, a.tags.size, (a.tags == GROUND).sum(), (a.tags == NOISE).sum(), a.num_segments]
        assert row == ",".join(str(int(v)) if not isinstance(v, str) else v for v in recount)
    assert [r.split(",")[-1] for r in rows[1:]] == ["5", "6", "7"]
    assert "segments per scan" in capsys.readouterr().out


def test_segment_deterministic(dataset):
    cfg = _config(dataset)
    _run("segment", "--config", cfg)
    first = {s: (dataset / "out" / "segments" / f"{s}.seg").read_bytes() for s in SCANS}
    _run("segment", "--config", cfg, "--workers", 2)
    assert first == {s: (dataset / "out" / "segments" / f"{s}.seg").read_bytes() for s in SCANS}


def test_empty_scan_list(dataset, capsys):
    (dataset / "scans.txt").write_text("# nothing\n")
    assert _run("segment", "--config", _config(dataset)) != 0
    assert "empty scan list" in capsys.readouterr().err


def test_dry_run_writes_nothing(dataset):
    cfg = _config(dataset)
    assert _run("segment", "--config", cfg, "--dry-run") == 0
    assert _run("vote", "--config", cfg, "--dry-run") == 0
    # eval reads pseudo-labels by default and none exist yet
    assert _run("eval", "--config", cfg, "--dry-run") == 1
    assert not (dataset / "out").exists()


def test_missing_point_cloud(dataset, capsys):
    (dataset / "points" / "001.bin").unlink()
    assert _run("segment", "--config", _config(dataset)) == 1
    assert "001" in capsys.readouterr().err


# ---------------------------------------------------------------- vote

def test_vote_matches_oracle(dataset, capsys):
    assert _run("vote", "--config", _config(dataset)) == 0
    for scan in SCANS:
        preds = [read_labels(dataset / f"m{m}" / f"{scan}.label").tolist() for m in range(3)]
        expected = [vote_reference(col)[0] for col in zip(*preds)]
        assert read_labels(dataset / "out" / "pseudo" / f"{scan}.label").tolist() == expected
    assert "tie-broken points" in (dataset / "out" / "vote_summary.txt").read_text()
    assert "total points" in capsys.readouterr().out


def test_vote_single_model_copies(dataset):
    cfg = _config(dataset)
    text = cfg.read_text().replace("order = m0 m1 m2\nm0 = m0\nm1 = m1\nm2 = m2", "m1 = m1")
    cfg.write_text(text)
    assert _run("vote", "--config", cfg) == 0
    for scan in SCANS:
        assert (read_labels(dataset / "out" / "pseudo" / f"{scan}.label").tolist()
                == read_labels(dataset / "m1" / f"{scan}.label").tolist())


def test_vote_missing_prediction(dataset, capsys):
    (dataset / "m2" / "001.label").unlink()
    assert _run("vote", "--config", _config(dataset)) == 1
    err = capsys.readouterr().err
    assert "001" in err and "m2" in err


# ---------------------------------------------------------------- eval

def test_eval_pred_equals_truth(dataset, capsys):
    cfg = _config(dataset, "[eval]\npred_dir = labels\n")
    assert _run("eval", "--config", cfg) == 0
    csv = (dataset / "out" / "eval_report.csv").read_text()
    assert "iou_avg,1.0" in csv and "acc_avg,1.0" in csv
    assert "IoU avg" in capsys.readouterr().out


def test_eval_matches_evaluation_module(dataset):
    from uda_kit.cloud_io import parse_class_map
    from uda_kit.evaluation import eval_report

    cfg = _config(dataset, "[eval]\npred_dir = m2\n")
    assert _run("eval", "--config", cfg) == 0
    report = eval_report(dataset / "labels", dataset / "m2", SCANS, parse_class_map(CLASS_MAP))
    assert f"iou_avg,{report.miou!r}" in (dataset / "out" / "eval_report.csv").read_text()


def test_eval_count_mismatch(dataset, capsys):
    write_labels(np.zeros(3, dtype=np.uint32), dataset / "m0" / "000.label")
    cfg = _config(dataset, "[eval]\npred_dir = m0\n")
    assert _run("eval", "--config", cfg) == 1
    assert "000" in capsys.readouterr().err


# ---------------------------------------------------------------- training

def test_pretrain_then_finetune(dataset):
    cfg = _config(dataset)
    assert _run("segment", "--config", cfg) == 0
    assert _run("pretrain", "--config", cfg) == 0
    losses = (dataset / "out" / "pretrain_loss.csv").read_text().splitlines()
    assert losses[0] == "step,loss" and len(losses) == 5
    assert EncoderParams.load(dataset / "out" / "encoder.params").is_finite()
    assert _run("vote", "--config", cfg) == 0
    assert _run("finetune", "--config", cfg) == 0
    params = FinetuneParams.load(dataset / "out" / "finetune.params")
    assert params.num_classes == 3
    # fine-tuning starts from the pre-trained backbone
    enc = EncoderParams.load(dataset / "out" / "encoder.params")
    assert params.w1.shape == enc.w1.shape


def test_pretrain_resume_is_continuation(dataset, tmp_path):
    cfg = _config(dataset)
    assert _run("segment", "--config", cfg) == 0
    assert _run("pretrain", "--config", cfg, "train.steps=6", "data.output_dir=full",
                "train.segments_dir=out/segments") == 0
    assert _run("pretrain", "--config", cfg, "train.steps=3", "data.output_dir=first",
                "train.segments_dir=out/segments") == 0
    assert _run("pretrain", "--config", cfg, "train.steps=3", "train.start_step=3", "data.output_dir=second",
                "train.segments_dir=out/segments", "train.init_params=first/encoder.params") == 0
    full = EncoderParams.load(dataset / "full" / "encoder.params")
    resumed = EncoderParams.load(dataset / "second" / "encoder.params")
    assert full.equals(resumed)
    rows = lambda d: (dataset / d / "pretrain_loss.csv").read_text().splitlines()[1:]
    assert rows("first") + rows("second") == rows("full")


def test_pretrain_deterministic(dataset):
    cfg = _config(dataset)
    _run("segment", "--config", cfg)
    _run("pretrain", "--config", cfg)
    first = (dataset / "out" / "encoder.params").read_bytes()
    _run("pretrain", "--config", cfg)
    assert (dataset / "out" / "encoder.params").read_bytes() == first


def test_pretrain_needs_segments(dataset, capsys):
    assert _run("pretrain", "--config", _config(dataset)) == 1
    assert "segment file" in capsys.readouterr().err


# ---------------------------------------------------------------- knn

def test_knn_matches_oracle(dataset):
    cfg = _config(dataset, "[knn]\ninput_dir = m2\nwidth = 256\nheight = 32\n")
    assert _run("knn", "--config", cfg) == 0
    from uda_kit.cloud_io import read_point_cloud

    for scan in SCANS:
        cloud = read_point_cloud(dataset / "points" / f"{scan}.bin")
        labels = read_labels(dataset / "m2" / f"{scan}.label")
        img = project_spherical(cloud, 256, 32)
        expected = knn_reference(labels, img, 5, 5, 1.0, 1.0)
        np.testing.assert_array_equal(read_labels(dataset / "out" / "knn" / f"{scan}.label"), expected)


def test_knn_requires_input_dir(dataset, capsys):
    assert _run("knn", "--config", _config(dataset)) == 2
    assert "knn.input_dir" in capsys.readouterr().err
