import json

import numpy as np
import pytest

from tripletclass.errors import ContractError
from tripletclass.metrics import (
    EvalReport,
    accuracy,
    binary_counts,
    confusion,
    evaluate,
    f1,
    metrics_table,
    precision,
    recall,
    specificity,
)

from .oracles import tally_metrics

CM = np.array([[5, 1, 0], [0, 4, 2], [1, 0, 7]])


def labels_from_cm(cm):
    t, p = [], []
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            t += [i] * cm[i, j]
            p += [j] * cm[i, j]
    return t, p


def test_confusion_counts():
    t, p = labels_from_cm(CM)
    cm = confusion(t, p, 3)
    np.testing.assert_array_equal(cm.counts, CM)
    assert cm.total == 20
    assert (confusion([0, 1, 2], [0, 1, 2], 3).counts == np.eye(3)).all()
    only0 = confusion([0, 1, 2, 2], [0, 0, 0, 0], 3).counts
    assert only0[:, 1:].sum() == 0


def test_confusion_random_tally():
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 4, 30), rng.integers(0, 4, 30)
    counts = confusion(t, p, 4).counts
    for i in range(4):
        for j in range(4):
            assert counts[i, j] == sum(1 for a, b in zip(t, p) if a == i and b == j)


def test_binary_counts_hand_case():
    t, p = labels_from_cm(CM)
    cm = confusion(t, p, 3)
    assert binary_counts(cm, 0) == (5, 1, 1, 13)
    for c in range(3):
        assert sum(binary_counts(cm, c)) == 20


def test_scalar_formulas():
    assert precision(8, 2) == 0.8
    assert recall(8, 2) == 0.8
    assert f1(0.8, 0.8) == pytest.approx(0.8, abs=1e-15)
    assert precision(0, 0) == recall(0, 0) == specificity(0, 0) == f1(0.0, 0.0) == 0.0
    assert specificity(9, 1) == 0.9


def test_evaluate_hand_case():
    t, p = labels_from_cm(CM)
    report = evaluate(t, p, 3, ["a", "b", "c"])
    assert report.accuracy == 0.8 == accuracy(report.confusion)
    assert report.macro_f1 == pytest.approx(np.mean([m.f1 for m in report.per_class]), abs=1e-15)
    # class a: P = 5/6, R = 5/6
    assert report.per_class[0].f1 == pytest.approx(5 / 6, abs=1e-15)


def test_perfect_predictions():
    r = evaluate([0, 1, 2, 1], [0, 1, 2, 1], 3)
    for row in ("accuracy", "precision", "specificity", "recall", "f1"):
        assert r.table_value(row) == 1.0


def test_oracle_equivalence_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        k = int(rng.choice([2, 3, 5]))
        n = int(rng.integers(1, 80))
        t, p = rng.integers(0, k, n), rng.integers(0, k, n)
        report = evaluate(t, p, k)
        per_class, acc = tally_metrics(t.tolist(), p.tolist(), k)
        assert abs(report.accuracy - acc) <= 1e-12
        for got, want in zip(report.per_class, per_class):
            assert (got.tp, got.fp, got.fn, got.tn) == want[:4]
            for a, b in zip((got.precision, got.recall, got.specificity, got.f1), want[4:]):
                assert abs(a - b) <= 1e-12


def test_binary_macro_is_mean_of_one_vs_rest():
    rng = np.random.default_rng(2)
    t, p = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    r = evaluate(t, p, 2)
    assert r.macro_precision == pytest.approx((r.per_class[0].precision + r.per_class[1].precision) / 2, abs=1e-15)


def test_label_permutation_equivariance():
    rng = np.random.default_rng(3)
    t, p = rng.integers(0, 4, 60), rng.integers(0, 4, 60)
    perm = np.array([2, 0, 3, 1])
    a, b = evaluate(t, p, 4), evaluate(perm[t], perm[p], 4)
    assert a.accuracy == b.accuracy
    for c in range(4):
        assert a.per_class[c].f1 == b.per_class[perm[c]].f1
        assert a.per_class[c].specificity == b.per_class[perm[c]].specificity


def test_metrics_in_unit_interval():
    rng = np.random.default_rng(4)
    r = evaluate(rng.integers(0, 5, 40), rng.integers(0, 5, 40), 5)
    for m in r.per_class:
        assert all(0.0 <= v <= 1.0 for v in (m.precision, m.recall, m.specificity, m.f1))


def test_label_errors():
    with pytest.raises(ContractError):
        confusion([0, 3], [0, 1], 3)
    with pytest.raises(ContractError):
        confusion([0, 1], [0], 3)
    with pytest.raises(ContractError):
        confusion([0], [0], 2, ["only"])


def test_serialization(tmp_path):
    t, p = labels_from_cm(CM)
    r = evaluate(t, p, 3, ["a", "b", "c"])
    doc = json.loads(r.to_json())
    assert "zero_denominator_rule" in doc
    assert EvalReport.from_dict(doc).to_json() == r.to_json()
    table = metrics_table({"m1": r, "m2": r}).splitlines()
    assert table[0] == "metric,m1,m2"
    assert [line.split(",")[0] for line in table[1:]] == ["accuracy", "precision", "specificity", "recall", "f1"]
    paths = r.save(tmp_path)
    assert paths["confusion_csv"].read_text().splitlines() == ["a,b,c", "5,1,0", "0,4,2", "1,0,7"]
