import numpy as np
import pytest

from mpca_retrieval.errors import ArgumentError
from mpca_retrieval.storage.formats import features_to_bytes
from mpca_retrieval.utils.synthetic import gen_synthetic


def test_counts_and_ids(trend_dataset):
    ds = trend_dataset
    assert len(ds) == 1000
    assert ds.ids.tolist() == list(range(1000))
    assert ds.dims == (6, 6, 16)
    assert ds.tensors.dtype == np.float32
    assert np.bincount(ds.labels).tolist() == [200] * 5
    assert ds.num_classes == 5


def test_same_arguments_same_bytes():
    a = gen_synthetic(3, 4, (2, 2, 3), 0.5, seed=99)
    b = gen_synthetic(3, 4, (2, 2, 3), 0.5, seed=99)
    assert features_to_bytes(a) == features_to_bytes(b)
    assert features_to_bytes(a) != features_to_bytes(gen_synthetic(3, 4, (2, 2, 3), 0.5, seed=100))


def test_zero_noise_gives_identical_class_members():
    ds = gen_synthetic(3, 5, (2, 3, 2), 0.0, seed=2)
    for c in range(3):
        members = ds.tensors[ds.labels == c]
        assert np.all(members == members[0])
    assert not np.array_equal(ds.tensors[0], ds.tensors[5])


@pytest.mark.parametrize("args", [(1, 5, 0.1), (3, 0, 0.1), (3, 5, -0.5)])
def test_rejects_bad_arguments(args):
    classes, per_class, noise = args
    with pytest.raises(ArgumentError):
        gen_synthetic(classes, per_class, (2, 2, 2), noise, seed=0)


def test_rejects_seed_outside_u64():
    with pytest.raises(ArgumentError):
        gen_synthetic(2, 2, (1, 1, 2), 0.1, seed=-1)
