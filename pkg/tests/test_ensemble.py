from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import vote_reference
from uda_kit.cloud_io import ClassMap, PredictionSet, pack_labels, parse_class_map, read_labels, write_labels
from uda_kit.ensemble import HardVoter, fuse_scan, generate_pseudo_labels, hard_vote, tally_point
from uda_kit.errors import CountMismatch, EmptyEnsemble, MissingPrediction, UnmappedClass


def _ps(*columns):
    """PredictionSet from per-point tuples (one entry per model)."""
    arr = np.array(columns, dtype=np.uint32).T
    return PredictionSet([f"m{i}" for i in range(arr.shape[0])], list(arr))


def test_unanimous():
    labels, ties = hard_vote(_ps((7, 7, 7)))
    assert labels.tolist() == [7] and ties == 0


def test_majority():
    assert hard_vote(_ps((4, 4, 9)))[0].tolist() == [4]
    assert hard_vote(_ps((9, 4, 4)))[0].tolist() == [4]


def test_two_model_tie_goes_to_first():
    labels, ties = hard_vote(_ps((4, 9)))
    assert labels.tolist() == [4] and ties == 1
    assert hard_vote(_ps((9, 4)))[0].tolist() == [9]


def test_three_way_tie_goes_to_first():
    assert hard_vote(_ps((5, 2, 8)))[0].tolist() == [5]


def test_output_drops_instance_bits():
    preds = [pack_labels(np.array([3]), np.array([inst])) for inst in (1, 2, 3)]
    labels, _ = hard_vote(PredictionSet(["a", "b", "c"], preds))
    assert labels.tolist() == [3]


def test_empty_ensemble():
    with pytest.raises(EmptyEnsemble):
        hard_vote(PredictionSet([], []))


def test_tally_point():
    t = tally_point(_ps((2, 1, 2, 1)), 0)
    assert t.counts == {1: 2, 2: 2} and t.winner == 2 and t.tie_flag


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_exhaustive_small(k):
    cols = list(product(range(4), repeat=k))
    labels, ties = hard_vote(_ps(*cols))
    ref = [vote_reference(c) for c in cols]
    assert labels.tolist() == [w for w, _ in ref]
    assert ties == sum(t for _, t in ref)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.integers(0, 20), min_size=1, max_size=7).map(tuple), min_size=1, max_size=30)
       .filter(lambda cols: len({len(c) for c in cols}) == 1))
def test_vote_properties(cols):
    labels, _ = hard_vote(_ps(*cols))
    for out, col in zip(labels.tolist(), cols):
        assert out in col                       # membership
        if len(set(col)) == 1:
            assert out == col[0]                # unanimity
        assert out == vote_reference(col)[0]


def test_voter_estimator():
    X = np.array([[1, 1, 2], [3, 4, 5], [0, 2, 2]])
    voter = HardVoter().fit(X)
    assert voter.predict(X).tolist() == [1, 3, 2]
    assert voter.tie_count_ == 1
    assert voter.get_params() == {"model_names": None}


# ---------------------------------------------------------------- batch fusion

@pytest.fixture
def three_models(tmp_path):
    rng = np.random.default_rng(0)
    truth = rng.integers(0, 5, 200).astype(np.uint32)
    dirs = []
    for m in range(3):
        d = tmp_path / f"model{m}"
        d.mkdir()
        for scan in ("000", "001"):
            pred = truth.copy()
            flip = rng.random(200) < 0.3
            pred[flip] = rng.integers(0, 5, int(flip.sum()))
            write_labels(pack_labels(pred, rng.integers(0, 3, 200)), d / f"{scan}.label")
        dirs.append((f"model{m}", str(d)))
    return dirs


def test_fuse_matches_hand_majority(three_models, tmp_path):
    cmap = ClassMap.identity(5)
    summary = generate_pseudo_labels(["000", "001"], three_models, cmap, tmp_path / "out")
    for scan in ("000", "001"):
        preds = [read_labels(f"{d}/{scan}.label") & 0xFFFF for _, d in three_models]
        expected = [vote_reference(col)[0] for col in zip(*[p.tolist() for p in preds])]
        assert read_labels(tmp_path / "out" / f"{scan}.label").tolist() == expected
    assert summary.scans == 2 and summary.points == 400
    assert summary.agreement.sum() == 400
    assert summary.agreement[:, 0].sum() == 0


def test_single_model_copies_remapped(tmp_path):
    d = tmp_path / "m"
    d.mkdir()
    write_labels(pack_labels(np.array([10, 30, 0]), np.array([1, 1, 1])), d / "s.label")
    cmap = parse_class_map("ignore = 255\n0 -> 255\n10 -> 0 # car\n30 -> 1 # person\n")
    fused, _, ties = fuse_scan("s", [("m", d)], cmap)
    assert fused.tolist() == [0, 1, 255] and ties == 0


def test_identical_copies(three_models):
    name, d = three_models[0]
    fused, _, _ = fuse_scan("000", [(name, d)] * 4, ClassMap.identity(5))
    assert fused.tolist() == (read_labels(f"{d}/000.label") & 0xFFFF).tolist()


def test_remap_happens_before_voting(tmp_path):
    # KITTI car and truck both become Car/Vehicle, so they outvote the third model
    for name, val in [("a", 10), ("b", 18), ("c", 50)]:
        (tmp_path / name).mkdir()
        write_labels(np.array([val], dtype=np.uint32), tmp_path / name / "s.label")
    from uda_kit.cloud_io import default_class_map

    cmap = default_class_map()
    fused, _, _ = fuse_scan("s", [(n, tmp_path / n) for n in "cab"], cmap)
    assert cmap.names[int(fused[0])] == "Car/Vehicle"


def test_missing_prediction(three_models, tmp_path):
    with pytest.raises(MissingPrediction) as info:
        generate_pseudo_labels(["000", "002"], three_models, ClassMap.identity(5), tmp_path / "o")
    assert "002" in str(info.value) and "model0" in str(info.value)


def test_unmapped_prediction(three_models, tmp_path):
    with pytest.raises(UnmappedClass):
        generate_pseudo_labels(["000"], three_models, ClassMap.identity(3), tmp_path / "o")


def test_point_count_check(three_models, tmp_path):
    (tmp_path / "pts").mkdir()
    (tmp_path / "pts" / "000.bin").write_bytes(b"\0" * 16 * 199)
    with pytest.raises(CountMismatch):
        fuse_scan("000", three_models, ClassMap.identity(5), points_dir=tmp_path / "pts")


def test_workers_do_not_change_output(three_models, tmp_path):
    cmap = ClassMap.identity(5)
    generate_pseudo_labels(["000", "001"], three_models, cmap, tmp_path / "serial")
    generate_pseudo_labels(["000", "001"], three_models, cmap, tmp_path / "par", workers=2)
    for scan in ("000", "001"):
        assert (tmp_path / "serial" / f"{scan}.label").read_bytes() == (tmp_path / "par" / f"{scan}.label").read_bytes()


def test_summary_text(three_models, tmp_path):
    cmap = ClassMap.identity(5)
    summary = generate_pseudo_labels(["000"], three_models, cmap, tmp_path / "o", write=False)
    text = summary.to_text(cmap.class_names())
    assert "total points: 200" in text and "tie-broken points" in text
    assert not (tmp_path / "o").exists()
    assert summary.to_csv().splitlines()[0] == "class,votes_1,votes_2,votes_3"
