import numpy as np
import pytest

from zira_lab.errors import DomainError
from zira_lab.taskgen import ImageSpec, gen_general, gen_task_sequence, load_datasets, save_datasets


def test_deterministic():
    a, b = gen_general(3), gen_general(3)
    assert [d.digest() for d in a] == [d.digest() for d in b]
    ta, tb = gen_task_sequence(3, 3), gen_task_sequence(3, 3)
    assert [t.train.digest() for t in ta] == [t.train.digest() for t in tb]
    assert gen_general(4)[0].digest() != a[0].digest()


def test_counts_respect_shots():
    train, holdout = gen_general(0, n_classes=4, per_class=5)
    assert np.bincount(train.labels).tolist() == [5] * 4
    assert np.bincount(holdout.labels).tolist() == [20] * 4
    for shots, k in (("1", 1), ("5", 5), ("10", 10), ("full", 50)):
        for t in gen_task_sequence(0, 2, 5, shots):
            assert len(t.train) == 5 * k
            assert len(t.holdout) == 5 * 20
            assert sorted(set(t.train.labels.tolist())) == t.class_ids


def test_disjoint_and_order():
    seq = gen_task_sequence(0, 5, 5)
    ids = [c for t in seq for c in t.class_ids]
    assert len(ids) == len(set(ids)) == 25
    assert min(ids) >= 10
    other = gen_task_sequence(1, 5, 5)
    assert sorted(c for t in other for c in t.class_ids) == sorted(ids)
    assert [t.name for t in other] != [t.name for t in seq] or [t.name for t in gen_task_sequence(2, 5, 5)] != [
        t.name for t in seq]


def test_zero_shift_shares_statistics():
    seq = gen_task_sequence(0, 3, 2, shift_strength=0.0)
    for t in seq:
        assert t.train.meta["gain"] == [1.0, 1.0, 1.0]
        assert t.train.meta["offset"] == [0.0, 0.0, 0.0]


def test_nearest_mean_classifier_separates_two_classes():
    spec = ImageSpec(pixel_noise=0.05)
    train, holdout = gen_general(0, n_classes=2, per_class=50, spec=spec)
    means = np.stack([train.images[train.labels == c].reshape(-1, train.images[0].size).mean(0) for c in (0, 1)])
    flat = holdout.images.reshape(len(holdout), -1)
    pred = np.argmin(((flat[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == holdout.labels) >= 0.99


def test_boxes_lie_in_image():
    train, _ = gen_general(0)
    assert np.all(train.boxes >= 0) and np.all(train.boxes <= 1)


def test_roundtrip(tmp_path):
    seq = gen_task_sequence(0, 2, 3, "5")
    data = [gen_general(0)[1]] + [t.train for t in seq]
    save_datasets(tmp_path / "d.npz", data)
    back = load_datasets(tmp_path / "d.npz")
    assert [d.digest() for d in back] == [d.digest() for d in data]


def test_errors():
    with pytest.raises(DomainError):
        gen_general(0, n_classes=1)
    with pytest.raises(DomainError):
        gen_task_sequence(0, 0)
    with pytest.raises(DomainError):
        gen_task_sequence(0, 2, shift_strength=-1.0)
    with pytest.raises(DomainError):
        gen_task_sequence(0, 2, shots="3")
