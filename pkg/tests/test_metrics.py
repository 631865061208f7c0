"""Multi-label metrics against an independent naive oracle."""
import numpy as np
import pytest

from knnmlc.mathops import make_rng
from knnmlc.metrics import confusion, group_report, hamming_loss, macro_prf, micro_prf


def naive_metrics(gold, pred):
    """Independent oracle: explicit loops over samples and classes."""
    n = len(gold)
    C = len(gold[0])
    tp = [0] * C
    fp = [0] * C
    fn = [0] * C
    for i in range(n):
        for c in range(C):
            g = gold[i][c]
            p = pred[i][c]
            if g == 1 and p == 1:
                tp[c] += 1
            elif g == 0 and p == 1:
                fp[c] += 1
            elif g == 1 and p == 0:
                fn[c] += 1

    def prf(t, f, m):
        prec = t / (t + f) if t + f > 0 else 0.0
        rec = t / (t + m) if t + m > 0 else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        return prec, rec, f1

    micro = prf(sum(tp), sum(fp), sum(fn))
    per_class = [prf(tp[c], fp[c], fn[c]) for c in range(C)]
    macro = tuple(sum(x[i] for x in per_class) / C for i in range(3))
    return (tp, fp, fn), micro, macro


def random_instance(rng, n=None, C=None):
    n = n or int(rng.integers(1, 30))
    C = C or int(rng.integers(1, 8))
    gold = (rng.random((n, C)) < 0.4).astype(np.int8)
    pred = (rng.random((n, C)) < 0.4).astype(np.int8)
    return gold, pred


class TestConfusion:
    def test_perfect_predictions(self):
        gold = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.int8)
        c = confusion(gold, gold)
        np.testing.assert_array_equal(c.fp, [0, 0])
        np.testing.assert_array_equal(c.fn, [0, 0])
        np.testing.assert_array_equal(c.tp, [2, 2])

    def test_all_zero_predictions(self):
        gold = np.array([[1, 0], [1, 1]], dtype=np.int8)
        pred = np.zeros_like(gold)
        c = confusion(gold, pred)
        np.testing.assert_array_equal(c.tp, [0, 0])
        np.testing.assert_array_equal(c.fp, [0, 0])
        np.testing.assert_array_equal(c.fn, [2, 1])

    def test_hand_counted_example(self):
        gold = [[1, 1, 0], [0, 1, 0]]
        pred = [[1, 0, 0], [0, 1, 1]]
        c = confusion(gold, pred)
        assert int(c.tp.sum()) == 2
        assert int(c.fp.sum()) == 1
        assert int(c.fn.sum()) == 1
        p, r, f1 = micro_prf(c)
        assert (p, r, f1) == pytest.approx((2 / 3, 2 / 3, 2 / 3), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion([[1, 0]], [[1, 0], [0, 1]])


class TestPrf:
    def test_perfect_is_all_ones(self):
        gold = np.array([[1, 0, 1], [0, 1, 0]], dtype=np.int8)
        c = confusion(gold, gold)
        assert micro_prf(c) == (1.0, 1.0, 1.0)
        assert macro_prf(c) == (1.0, 1.0, 1.0)

    def test_single_class_micro_equals_macro(self):
        rng = make_rng(0)
        gold, pred = random_instance(rng, n=25, C=1)
        c = confusion(gold, pred)
        assert micro_prf(c) == pytest.approx(macro_prf(c), abs=1e-15)

    def test_matches_naive_oracle_on_random_instances(self):
        rng = make_rng(1)
        for _ in range(100):
            gold, pred = random_instance(rng)
            c = confusion(gold, pred)
            (tp, fp, fn), micro, macro = naive_metrics(gold.tolist(), pred.tolist())
            np.testing.assert_array_equal(c.tp, tp)
            np.testing.assert_array_equal(c.fp, fp)
            np.testing.assert_array_equal(c.fn, fn)
            assert micro_prf(c) == pytest.approx(micro, abs=1e-15)
            assert macro_prf(c) == pytest.approx(macro, abs=1e-15)

    def test_f1_zero_iff_tp_zero(self):
        rng = make_rng(2)
        for _ in range(200):
            gold, pred = random_instance(rng)
            c = confusion(gold, pred)
            _, _, f1 = micro_prf(c)
            if int(c.tp.sum()) == 0:
                assert f1 == 0.0
            else:
                assert f1 > 0.0

    def test_macro_counts_absent_classes(self):
        # class 2 never appears in gold or pred and must still dilute the mean
        gold = np.array([[1, 0, 0], [1, 0, 0]], dtype=np.int8)
        c = confusion(gold, gold)
        _, _, f1 = macro_prf(c)
        assert f1 == pytest.approx(1 / 3, rel=1e-12)


class TestGroupReport:
    def test_single_group_equals_global_micro(self):
        rng = make_rng(3)
        gold, pred = random_instance(rng, n=30, C=5)
        c = confusion(gold, pred)
        report = group_report(c, {c_: 0 for c_ in range(5)})
        assert report[0]["f1"] == pytest.approx(micro_prf(c)[2], abs=1e-15)

    def test_perfect_predictions_every_group_one(self):
        gold = np.array([[1, 0, 1, 0], [0, 1, 0, 1]], dtype=np.int8)
        c = confusion(gold, gold)
        report = group_report(c, {0: 0, 1: 0, 2: 1, 3: 1})
        assert all(rec["f1"] == 1.0 for rec in report.values())

    def test_empty_group_flagged(self):
        gold = np.array([[1, 0], [1, 0]], dtype=np.int8)
        c = confusion(gold, gold)
        report = group_report(c, {0: 0, 1: 1})
        assert report[1]["f1"] == 0.0
        assert report[1]["defined"] is False
        assert report[0]["defined"] is True

    def test_partition_validated(self):
        gold = np.array([[1, 0]], dtype=np.int8)
        c = confusion(gold, gold)
        with pytest.raises(ValueError):
            group_report(c, {0: 0})  # class 1 missing


class TestHamming:
    def test_perfect_zero(self):
        gold = np.array([[1, 0], [0, 1]], dtype=np.int8)
        assert hamming_loss(gold, gold) == 0.0

    def test_all_wrong_one(self):
        gold = np.array([[1, 0]], dtype=np.int8)
        assert hamming_loss(gold, 1 - gold) == 1.0

    def test_counts_fraction(self):
        gold = np.array([[1, 0, 0, 0]], dtype=np.int8)
        pred = np.array([[1, 1, 0, 0]], dtype=np.int8)
        assert hamming_loss(gold, pred) == 0.25
