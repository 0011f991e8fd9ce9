import numpy as np
import pytest

from tripletclass import dataset as ds
from tripletclass.errors import ConfigurationError, ContractError, ValidationError
from tripletclass.knn import EmbeddingSet, KnnIndex, embed_dataset, fit, neighbours, predict
from tripletclass.model import EMBEDDING, HeadSpec, build_model, build_tiny_cnn

from .oracles import knn_scan


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def tied_set(rng, n, d, k_classes=3):
    """References drawn from a small pool (signed axes plus a few random directions) so exact ties are common."""
    axes = np.concatenate([np.eye(d), -np.eye(d)])
    pool = np.concatenate([axes, unit_rows(rng, 3, d)])
    ref = pool[rng.integers(0, len(pool), n)]
    labels = rng.integers(0, k_classes, n)
    queries = np.concatenate([pool[rng.integers(0, len(pool), 5)], unit_rows(rng, 5, d)])
    return ref, labels, queries


def test_self_nearest():
    rng = np.random.default_rng(0)
    ref = EmbeddingSet(unit_rows(rng, 30, 4), rng.integers(0, 3, 30))
    np.testing.assert_array_equal(predict(fit(ref), ref.vectors), ref.labels)


def test_majority_vote():
    angles = np.array([0.0, 0.1, 0.2, 1.5])
    ref = EmbeddingSet(np.stack([np.cos(angles), np.sin(angles)], axis=1), [0, 0, 1, 1])
    assert predict(fit(ref, 3), [[1.0, 0.0]]).tolist() == [0]


def test_vote_tie_goes_to_smaller_summed_distance():
    ref = EmbeddingSet([[1.0, 0.0], [0.0, 1.0]], [1, 0])
    # query nearer the class-1 point; k=2 gives one vote each
    q = np.array([[0.8, 0.6]])
    assert predict(fit(ref, 2), q).tolist() == [1]
    # exact equidistance falls through to the lower class index
    q = np.array([[np.sqrt(0.5), np.sqrt(0.5)]])
    assert predict(fit(ref, 2), q).tolist() == [0]


def test_fifty_points_k5_against_scan():
    rng = np.random.default_rng(7)
    ref, labels, queries = unit_rows(rng, 50, 6), rng.integers(0, 3, 50), unit_rows(rng, 10, 6)
    got = predict(fit(EmbeddingSet(ref, labels), 5), queries)
    assert got.tolist() == knn_scan(ref, labels, queries, 5)


@pytest.mark.parametrize("seed", range(20))
def test_scan_oracle_with_ties(seed):
    rng = np.random.default_rng(seed)
    n, d, k = int(rng.integers(5, 120)), int(rng.integers(2, 9)), int(rng.choice([1, 3, 5]))
    ref, labels, queries = tied_set(rng, n, d)
    got = predict(fit(EmbeddingSet(ref, labels), k), queries)
    assert got.tolist() == knn_scan(ref, labels, queries, k)


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    for _ in range(10):
        ref, labels, queries = tied_set(rng, 60, 4)
        perm = rng.permutation(60)
        for k in (1, 3, 5):
            a = predict(fit(EmbeddingSet(ref, labels), k), queries)
            b = predict(fit(EmbeddingSet(ref[perm], labels[perm]), k), queries)
            np.testing.assert_array_equal(a, b)


def test_cosine_ordering_agrees():
    rng = np.random.default_rng(4)
    ref, queries = unit_rows(rng, 80, 8), unit_rows(rng, 20, 8)
    pos, _ = neighbours(fit(EmbeddingSet(ref, np.zeros(80)), 1), queries)
    np.testing.assert_array_equal(pos[:, 0], np.argmax(queries @ ref.T, axis=1))


def test_neighbour_distances_sorted_chunked():
    rng = np.random.default_rng(5)
    index = fit(EmbeddingSet(unit_rows(rng, 40, 3), rng.integers(0, 2, 40)), 5)
    q = unit_rows(rng, 17, 3)
    pos, dist = neighbours(index, q)
    pos_small, dist_small = neighbours(index, q, max_elements=7)
    np.testing.assert_array_equal(pos, pos_small)
    assert (np.diff(dist, axis=1) >= 0).all()


def test_errors():
    ref = EmbeddingSet([[1.0, 0.0], [0.0, 1.0]], [0, 1])
    with pytest.raises(ConfigurationError):
        fit(ref, 3)
    with pytest.raises(ValidationError):
        fit(EmbeddingSet(np.zeros((0, 2)), np.zeros(0)))
    with pytest.raises(ContractError):
        predict(fit(ref), [[1.0, 0.0, 0.0]])
    with pytest.raises(ContractError):
        EmbeddingSet([[2.0, 0.0]], [0])
    with pytest.raises(ConfigurationError):
        KnnIndex(ref, 1, "cosine")


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    s = EmbeddingSet(unit_rows(rng, 5, 3), [0, 1, 2, 1, 0], "train")
    path = s.to_csv(tmp_path / "e.csv")
    assert path.read_text().splitlines()[0] == "label,v0,v1,v2"
    back = EmbeddingSet.from_csv(path)
    np.testing.assert_array_equal(back.vectors, s.vectors)
    np.testing.assert_array_equal(back.labels, s.labels)


def test_embed_dataset(small_tree):
    m = ds.split(ds.scan_dataset(small_tree, (16, 16, 3)), 0.5, 0)
    spec, _ = build_tiny_cnn((16, 16, 3), 8)
    model = build_model(spec, HeadSpec(EMBEDDING))
    a = embed_dataset(model, m, ds.TRAIN, batch_size=4)
    b = embed_dataset(model, m, ds.TRAIN, batch_size=5)
    assert a.vectors.shape == (6, 8) and a.source_split == ds.TRAIN
    np.testing.assert_array_equal(a.labels, m.labels(ds.TRAIN))
    np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(a.vectors, axis=1), 1.0, atol=1e-6)
