from __future__ import annotations

import hashlib

import numpy as np
import pytest

from mlet.synthdata import (
    GeneratorSpec,
    SyntheticCtrDataset,
    frequency_scores,
    generate,
    load_criteo_csv,
    read_dataset,
    sample_zipf,
    stratify,
    write_dataset,
    zipf_probs,
)


def small_spec(**kw):
    base = dict(field_sizes=(50, 30), zipf=(1.2,), dense_dim=3, n_train=3000, n_val=300,
                n_test=1000)
    base.update(kw)
    return GeneratorSpec(**base)


def test_default_spec_size():
    spec = GeneratorSpec()
    assert spec.n_samples == 240_000
    assert spec.field_sizes == (1000, 1000) and spec.zipf == (1.2, 1.2) and spec.dense_dim == 4


def test_spec_validation():
    with pytest.raises(ValueError):
        GeneratorSpec(field_sizes=(1, 5))
    with pytest.raises(ValueError):
        GeneratorSpec(zipf=(-0.1,))
    with pytest.raises(ValueError):
        GeneratorSpec(field_sizes=(5, 5, 5), zipf=(1.0, 1.0))


def test_zipf_zero_is_uniform_within_3_sigma():
    rng = np.random.default_rng(0)
    n, size = 20, 200_000
    counts = np.bincount(sample_zipf(rng, n, 0.0, size), minlength=n)
    p = 1 / n
    assert np.all(np.abs(counts - size * p) <= 3 * np.sqrt(size * p * (1 - p)))


def test_zipf_head_outweighs_tail():
    rng = np.random.default_rng(1)
    counts = np.bincount(sample_zipf(rng, 1000, 1.2, 200_000), minlength=1000)
    assert counts[:10].sum() > counts[500:].sum()
    assert np.all(np.diff(zipf_probs(1000, 1.2)) < 0)


def test_generate_invariants():
    ds = generate(small_spec(), seed=4)
    assert len(ds) == 4300 and ds.n_test == 1000
    for f, n in enumerate(ds.field_sizes):
        assert ds.sparse[:, f].min() >= 0 and ds.sparse[:, f].max() < n
    assert set(np.unique(ds.labels)) == {0, 1}
    assert 0 < ds.labels.mean() < 1
    ranges = [ds.split_range(s) for s in ("train", "val", "test")]
    covered = sorted(i for r in ranges for i in r)
    assert covered == list(range(len(ds)))
    assert ds.dense.dtype == np.float32 and ds.dense.shape == (4300, 3)


def test_generate_deterministic_and_seed_sensitive():
    a, b = generate(small_spec(), 5), generate(small_spec(), 5)
    assert np.array_equal(a.sparse, b.sparse) and np.array_equal(a.labels, b.labels)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != generate(small_spec(), 6).fingerprint()


def test_uniform_flag():
    assert generate(small_spec(zipf=(0.0,)), 0).meta["uniform"] is True
    assert generate(small_spec(), 0).meta["uniform"] is False


def test_file_roundtrip_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    write_dataset(generate(small_spec(), 7), p1, truth_sidecar=True)
    write_dataset(generate(small_spec(), 7), p2)
    assert hashlib.sha256(p1.read_bytes()).digest() == hashlib.sha256(p2.read_bytes()).digest()
    assert (tmp_path / "a.bin.truth.npz").exists() and not (tmp_path / "b.bin.truth.npz").exists()
    ds, back = generate(small_spec(), 7), read_dataset(p1)
    assert np.array_equal(back.sparse, ds.sparse)
    assert np.array_equal(back.dense, ds.dense)
    assert np.array_equal(back.labels, ds.labels)
    assert (back.n_train, back.n_val) == (ds.n_train, ds.n_val)
    assert back.fingerprint() == ds.fingerprint()
    # record layout: 2 u32 + 3 f32 + 1 u8
    header_len = p1.read_bytes().index(b"\n") + 1
    assert p1.stat().st_size - header_len == len(ds) * (2 * 4 + 3 * 4 + 1)


def test_read_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b'{"format": "other"}\n')
    with pytest.raises(ValueError):
        read_dataset(p)


def toy_dataset():
    # train: category 0 popular in both fields, 3 never seen
    train = np.array([[0, 0]] * 6 + [[1, 1]] * 2 + [[2, 2]])
    test = np.array([[0, 0], [3, 3], [1, 2], [2, 1], [0, 3], [1, 1], [2, 2], [3, 0], [1, 0], [0, 1]])
    sparse = np.vstack([train, test])
    n = len(sparse)
    return SyntheticCtrDataset((4, 4), sparse, np.zeros((n, 0), np.float32),
                               np.zeros(n, np.uint8), n_train=len(train), n_val=0)


def test_frequency_scores_laplace_smoothed():
    ds = toy_dataset()
    scores = frequency_scores(ds)
    assert scores[0] == 7 * 7 and scores[1] == 1 * 1
    assert np.all(scores > 0)


def test_stratify_toy_extremes():
    most, least = stratify(toy_dataset(), fraction=0.1)
    assert most.tolist() == [0]  # queries only the rank-1 categories
    assert least.tolist() == [1]  # only unseen categories


def test_stratify_partition_sizes_and_order():
    ds = generate(small_spec(), 8)
    most, least = stratify(ds)
    assert len(most) == len(least) == int(np.floor(0.1 * ds.n_test))
    assert not set(most.tolist()) & set(least.tolist())
    scores = frequency_scores(ds)
    assert scores[most].min() >= scores[least].max()
    assert np.array_equal(stratify(ds)[0], most)


def test_stratify_disjoint_under_ties():
    ds = generate(small_spec(field_sizes=(2, 2), zipf=(0.0,), n_test=50), 9)
    most, least = stratify(ds, fraction=0.5)
    assert len(most) == len(least) == 25
    assert not set(most.tolist()) & set(least.tolist())


def test_frequency_biased_generator_rare_slice_clicks_less():
    ds = generate(GeneratorSpec(n_train=50_000, n_val=0, n_test=20_000, freq_bias=2.0), 10)
    most, least = stratify(ds)
    _, _, y = ds.split("test")
    assert y[least].mean() < y[most].mean()


def test_criteo_csv_import(tmp_path):
    rows = []
    rng = np.random.default_rng(11)
    for i in range(20):
        dense = ["" if j == 1 else str(int(rng.integers(0, 100))) for j in range(3)]
        cats = [f"c{int(rng.integers(0, 5))}", "" if i % 4 == 0 else f"x{i % 3}"]
        rows.append("\t".join([str(i % 2)] + dense + cats))
    path = tmp_path / "train.txt"
    path.write_text("\n".join(rows) + "\n")
    ds = load_criteo_csv(path, n_dense=3, n_sparse=2, buckets=[7, 5])
    assert len(ds) == 20 and ds.field_sizes == (7, 5)
    assert (ds.n_train, ds.n_val, ds.n_test) == (16, 2, 2)
    assert ds.sparse[:, 0].max() < 7 and ds.sparse[:, 1].max() < 5
    assert np.all(ds.dense[:, 1] == 0)
    assert ds.labels.tolist() == [i % 2 for i in range(20)]
    # same string, same id
    same = [r.split("\t")[4] for r in rows]
    first = {}
    for tok, idx in zip(same, ds.sparse[:, 0]):
        assert first.setdefault(tok, idx) == idx
    with pytest.raises(ValueError):
        load_criteo_csv(path, n_dense=2, n_sparse=2)
