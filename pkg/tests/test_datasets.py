import numpy as np
import pytest

from sirobust.attacks import AttackConfig
from sirobust.datasets import (
    Dataset, DatasetError, IdxCountMismatchError, IdxMagicError, IdxTruncatedError, gen_gaussian_blobs,
    gen_two_moons, load_idx, write_idx,
)
from sirobust.defenses import DefenseConfig, OptimizerConfig, train
from sirobust.model import accuracy, mlp

# two 2x2 images and their labels, written out byte by byte
IMAGES = bytes([0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                0, 255, 51, 102,
                204, 1, 0, 255])
LABELS = bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 3])


@pytest.fixture
def idx_pair(tmp_path):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(IMAGES)
    lab.write_bytes(LABELS)
    return img, lab


def test_idx_fixture_round_trip(idx_pair):
    data = load_idx(*idx_pair)
    assert data.inputs.shape == (2, 1, 2, 2)
    expected = np.array([[[0, 255], [51, 102]], [[204, 1], [0, 255]]]) / 255.0
    np.testing.assert_array_equal(data.inputs[:, 0], expected)
    np.testing.assert_array_equal(data.labels, [7, 3])
    assert data.inputs[0, 0, 0, 1] == 1.0
    assert data.inputs[1, 0, 0, 0] == 0.8


def test_idx_without_channel_axis(idx_pair):
    assert load_idx(*idx_pair, add_channel=False).inputs.shape == (2, 2, 2)


def test_write_idx_matches_hand_bytes(tmp_path):
    write_idx(tmp_path / "a.idx", np.array([[[0, 255], [51, 102]], [[204, 1], [0, 255]]]))
    assert (tmp_path / "a.idx").read_bytes() == IMAGES


def test_idx_empty_file_is_truncated(tmp_path, idx_pair):
    empty = tmp_path / "empty.idx"
    empty.write_bytes(b"")
    with pytest.raises(IdxTruncatedError):
        load_idx(empty, idx_pair[1])


def test_idx_short_payload_is_truncated(tmp_path, idx_pair):
    short = tmp_path / "short.idx"
    short.write_bytes(IMAGES[:-1])
    with pytest.raises(IdxTruncatedError):
        load_idx(short, idx_pair[1])
    short.write_bytes(IMAGES[:10])
    with pytest.raises(IdxTruncatedError):
        load_idx(short, idx_pair[1])


def test_idx_bad_magic(tmp_path, idx_pair):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(bytes([0, 0, 0x0D]) + IMAGES[3:])  # float type byte
    with pytest.raises(IdxMagicError):
        load_idx(bad, idx_pair[1])
    bad.write_bytes(b"\x01" + IMAGES[1:])
    with pytest.raises(IdxMagicError):
        load_idx(bad, idx_pair[1])


def test_idx_count_mismatch(tmp_path, idx_pair):
    lab = tmp_path / "lab3.idx"
    lab.write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]))
    with pytest.raises(IdxCountMismatchError):
        load_idx(idx_pair[0], lab)


def test_error_kinds_are_distinct():
    kinds = {IdxMagicError, IdxTruncatedError, IdxCountMismatchError}
    assert len(kinds) == 3
    assert all(issubclass(k, DatasetError) for k in kinds)
    assert not issubclass(IdxMagicError, IdxTruncatedError)


def test_dataset_invariants():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DatasetError):
        Dataset(np.full((2, 2), 1.5), np.zeros(2))
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 2)), np.array([0, -1]))


@pytest.mark.parametrize("gen", [lambda s: gen_two_moons(300, 0.2, seed=s),
                                 lambda s: gen_gaussian_blobs(300, 5, 0.1, seed=s)])
def test_generators_are_deterministic_and_bounded(gen):
    a, b, c = gen(4), gen(4), gen(5)
    assert a.inputs.tobytes() == b.inputs.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert a.inputs.tobytes() != c.inputs.tobytes()
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1
    assert a.inputs.dtype == np.float64 and a.labels.dtype == np.int64


def test_moons_class_balance_and_shape():
    d = gen_two_moons(101, 0.1, seed=0)
    assert d.inputs.shape == (101, 2) and d.num_classes == 2
    assert abs(int((d.labels == 0).sum()) - int((d.labels == 1).sum())) <= 1


def test_blobs_collapse_to_k_points():
    d = gen_gaussian_blobs(200, 6, 0.0, seed=1)
    pts = np.unique(d.inputs, axis=0)
    assert len(pts) == 6
    assert d.num_classes == 6
    for k in range(6):
        assert len(np.unique(d.inputs[d.labels == k], axis=0)) == 1


def test_generators_reject_bad_sizes():
    with pytest.raises(DatasetError):
        gen_two_moons(0)
    with pytest.raises(DatasetError):
        gen_gaussian_blobs(10, K=1)


def test_noiseless_moons_are_learnable():
    data = gen_two_moons(400, 0.0, seed=2)
    cfg = DefenseConfig(inner_attack=AttackConfig(epsilon=0.0, steps=1),
                        optimizer=OptimizerConfig(lr=0.1, epochs=200, milestones=(), batch_size=32))
    ckpt, _ = train(mlp(2, (32, 32), 2, seed=2), data, cfg)
    assert accuracy(ckpt.to_network(), data) == 1.0
