from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtrident.data import (Dataset, class_means, flip_labels, generate_synthetic, load_csv,
                             nearest_mean_accuracy, partition_dirichlet, split_holdout)
from fedtrident.mathcore import make_rng


def _multiset(ds: Dataset):
    return Counter((tuple(x), int(y)) for x, y in zip(ds.features, ds.labels))


def test_generate_shape():
    ds = generate_synthetic(3, 4, 10, 1.0, 1.0, make_rng(0))
    assert len(ds) == 30
    assert ds.class_counts().tolist() == [10, 10, 10]
    assert ds.feature_dim == 4 and ds.num_classes == 3


def test_generate_nearest_mean_oracle():
    easy = generate_synthetic(3, 8, 200, 100.0, 1.0, make_rng(1))
    assert nearest_mean_accuracy(easy, class_means(3, 8, 100.0)) == 1.0
    hard = generate_synthetic(3, 8, 200, 0.01, 1.0, make_rng(1))
    assert nearest_mean_accuracy(hard, class_means(3, 8, 0.01)) < 0.6


def test_generate_rejects_bad_params():
    with pytest.raises(ValueError):
        generate_synthetic(1, 4, 10, 1.0, 1.0, make_rng(0))
    with pytest.raises(ValueError):
        generate_synthetic(3, 4, 10, 0.0, 1.0, make_rng(0))


def test_generate_is_deterministic():
    a = generate_synthetic(4, 6, 20, 2.0, 1.0, make_rng(5, 1))
    b = generate_synthetic(4, 6, 20, 2.0, 1.0, make_rng(5, 1))
    np.testing.assert_array_equal(a.features, b.features)


def test_adjacent_classes_are_closest():
    means = class_means(6, 32, 1.0)
    dist = np.linalg.norm(means[:, None] - means[None], axis=2)
    for i in range(6):
        gaps = [(abs(i - j), dist[i, j]) for j in range(6) if j != i]
        gaps.sort()
        ds = [d for _, d in gaps]
        assert ds == sorted(ds)


def test_partition_single_client():
    ds = generate_synthetic(3, 4, 10, 1.0, 1.0, make_rng(0))
    (only,) = partition_dirichlet(ds, 1, 0.5, make_rng(1))
    assert _multiset(only) == _multiset(ds)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.floats(0.05, 100.0), st.integers(0, 2**32 - 1))
def test_partition_conserves_samples(K, alpha, seed):
    ds = generate_synthetic(4, 3, 15, 1.0, 1.0, make_rng(seed, 1))
    parts = partition_dirichlet(ds, K, alpha, make_rng(seed, 2))
    assert len(parts) == K
    union = Counter()
    for p in parts:
        union += _multiset(p)
    assert union == _multiset(ds)


def test_partition_concentrated_alpha_is_near_iid():
    ds = generate_synthetic(5, 3, 400, 1.0, 1.0, make_rng(0))
    parts = partition_dirichlet(ds, 10, 1e6, make_rng(1))
    for p in parts:
        share = p.class_counts() / len(p)
        assert np.all(np.abs(share - 0.2) < 0.05)


def test_partition_smaller_alpha_more_skewed():
    def mean_max_share(alpha):
        vals = []
        for seed in range(50):
            ds = generate_synthetic(4, 2, 50, 1.0, 1.0, make_rng(seed, 1))
            for p in partition_dirichlet(ds, 10, alpha, make_rng(seed, 2)):
                if len(p):
                    vals.append(p.class_counts().max() / len(p))
        return np.mean(vals)

    assert mean_max_share(0.1) >= mean_max_share(10.0)


def test_partition_empty_dataset():
    empty = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
    with pytest.raises(ValueError):
        partition_dirichlet(empty, 3, 1.0, make_rng(0))


def test_flip_labels_rule_and_conservation():
    ds = Dataset(np.arange(6.0).reshape(3, 2), [3, 1, 2], 3)
    out = flip_labels(ds, 3, 1)
    assert out.labels.tolist() == [1, 1, 2]
    np.testing.assert_array_equal(out.features, ds.features)
    before, after = ds.class_counts(), out.class_counts()
    assert after[0] == before[0] + before[2]


def test_flip_labels_vacuous_and_idempotent():
    ds = Dataset(np.zeros((2, 2)), [1, 2], 3)
    assert flip_labels(ds, 3, 1).labels.tolist() == [1, 2]
    many = generate_synthetic(4, 2, 5, 1.0, 1.0, make_rng(0))
    once = flip_labels(many, 4, 2)
    np.testing.assert_array_equal(flip_labels(once, 4, 2).labels, once.labels)


def test_flip_labels_out_of_range():
    ds = Dataset(np.zeros((1, 2)), [1], 3)
    with pytest.raises(ValueError):
        flip_labels(ds, 4, 1)
    with pytest.raises(ValueError):
        flip_labels(ds, 2, 2)


def test_split_holdout_is_disjoint_and_stratified():
    ds = generate_synthetic(3, 2, 100, 1.0, 1.0, make_rng(0))
    rest, hold = split_holdout(ds, 0.1, make_rng(1))
    assert hold.class_counts().tolist() == [10, 10, 10]
    assert _multiset(rest) + _multiset(hold) == _multiset(ds)


def test_load_csv_basic(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,2.0,1\n3.0,4.0,2\n")
    ds = load_csv(p)
    assert (len(ds), ds.feature_dim, ds.num_classes) == (2, 2, 2)
    assert ds.labels.tolist() == [1, 2]


def test_load_csv_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n1.0,2.0,3\n")
    ds = load_csv(p)
    assert len(ds) == 1 and ds.num_classes == 3


def test_load_csv_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError):
        load_csv(empty)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1.0,2.0,1\n1.0,2.0,3.0,1\n")
    with pytest.raises(ValueError, match=":2:"):
        load_csv(ragged)
    badlabel = tmp_path / "bad.csv"
    badlabel.write_text("1.0,2.0,x\n")
    with pytest.raises(ValueError, match="not an integer"):
        load_csv(badlabel)
