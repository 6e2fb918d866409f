import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from apricot.metrics import (HeadReport, auprc, auroc, bootstrap_ci, confusion_at, evaluate_head,
                             midranks, subgroup_eval, wilcoxon_ranksum, write_report_csv,
                             write_report_json, youden_threshold)


def test_midranks_share_ties():
    np.testing.assert_array_equal(midranks([3, 1, 3, 2]), [3.5, 1, 3.5, 2])


@pytest.mark.parametrize("seed", range(20))
def test_auroc_equals_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    s = np.round(rng.uniform(size=n), int(rng.integers(1, 4)))  # coarse rounding forces ties
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    assert auroc(s, y) == oracles.pairwise_auroc(s, y)


@pytest.mark.parametrize("scores, labels, expect", [
    ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1], 0.75),
    ([0.5, 0.5], [0, 1], 0.5),
    ([0.9, 0.1], [0, 1], 0.0),
])
def test_auroc_examples(scores, labels, expect):
    assert auroc(scores, labels) == expect


def test_auroc_single_class_is_undefined():
    assert auroc([0.1, 0.2], [1, 1]) is None
    assert auroc([0.1, 0.2], [0, 0]) is None


@given(st.lists(st.integers(-500, 500), min_size=4, max_size=40), st.integers(0, 2**31 - 1))
def test_auroc_invariant_to_monotone_transform(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(scores))
    y[0], y[1] = 0, 1
    s = np.asarray(scores) / 100.0
    assert auroc(np.exp(s / 5) * 3 + 1, y) == pytest.approx(auroc(s, y), abs=1e-12)


@pytest.mark.parametrize("seed", range(15))
def test_auprc_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 80))
    s = np.round(rng.uniform(size=n), 2)
    y = rng.integers(0, 2, n)
    y[0] = 1
    assert auprc(s, y) == pytest.approx(oracles.enumerate_ap(s.tolist(), y.tolist()), abs=1e-12)


def test_auprc_examples():
    assert auprc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert auprc([0.9, 0.8, 0.1], [0, 1, 0]) == 0.5
    assert auprc([0.2, 0.3], [0, 0]) is None


@pytest.mark.parametrize("seed", range(10))
def test_youden_matches_sweep(seed):
    rng = np.random.default_rng(seed)
    n = 1000 if seed == 0 else int(rng.integers(2, 150))
    s = np.round(rng.normal(size=n), 2)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-2 * s))).astype(int)
    y[0], y[1] = 0, 1
    t, j = youden_threshold(s, y)
    t_ref, j_ref = oracles.sweep_youden(s.tolist(), y.tolist())
    assert t == t_ref
    assert j == pytest.approx(j_ref, abs=1e-12)


def test_youden_perfect_separation():
    assert youden_threshold([0.1, 0.2, 0.7, 0.9], [0, 0, 1, 1]) == (0.7, 1.0)


def test_youden_requires_both_labels():
    with pytest.raises(ValueError):
        youden_threshold([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_confusion_matches_two_by_two_tally(seed):
    rng = np.random.default_rng(seed)
    s, y = rng.uniform(size=50), rng.integers(0, 2, 50)
    t = float(rng.uniform())
    tp = sum(1 for a, b in zip(s, y) if a >= t and b)
    fp = sum(1 for a, b in zip(s, y) if a >= t and not b)
    fn = sum(1 for a, b in zip(s, y) if a < t and b)
    tn = sum(1 for a, b in zip(s, y) if a < t and not b)
    expect = [tp / (tp + fn) if tp + fn else None, tn / (tn + fp) if tn + fp else None,
              tp / (tp + fp) if tp + fp else None, tn / (tn + fn) if tn + fn else None]
    assert list(confusion_at(s, y, t)) == expect


def test_confusion_undefined_and_invalid():
    assert confusion_at([0.1, 0.2], [0, 0], 0.5) == (None, 1.0, None, 1.0)
    with pytest.raises(ValueError):
        confusion_at([0.1], [1], float("nan"))


def test_bootstrap_is_deterministic_under_seed():
    rng = np.random.default_rng(0)
    s, y = rng.uniform(size=300), rng.integers(0, 2, 300)
    a = bootstrap_ci(auroc, (s, y), n=100, seed=11)
    assert a == bootstrap_ci(auroc, (s, y), n=100, seed=11)
    assert a != bootstrap_ci(auroc, (s, y), n=100, seed=12)
    assert a[1] <= a[0] <= a[2]


def test_bootstrap_constant_metric_collapses():
    assert bootstrap_ci(lambda x: 0.7, (np.arange(10),), n=100) == (0.7, 0.7, 0.7)


def test_bootstrap_single_iteration_is_a_point():
    med, lo, hi = bootstrap_ci(lambda x: float(x.mean()), (np.arange(10.0),), n=1, seed=0)
    assert lo == med == hi


def test_bootstrap_retries_undefined_draws():
    y = np.array([1] + [0] * 9)
    med, lo, hi = bootstrap_ci(lambda s, yy: auroc(s, yy), (np.linspace(0, 1, 10), y), n=50, seed=0)
    assert 0 <= lo <= med <= hi <= 1


def test_bootstrap_fails_when_always_undefined():
    with pytest.raises(ValueError):
        bootstrap_ci(lambda x: None, (np.arange(5),), n=5, retry_cap=2)


def test_wilcoxon_small_exact_example():
    u, p = wilcoxon_ranksum([1, 2], [3, 4])
    assert u == 0
    assert p == pytest.approx(1 / 3, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_wilcoxon_exact_matches_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = np.round(rng.normal(size=4), 1), np.round(rng.normal(0.5, size=5), 1)
    assert wilcoxon_ranksum(a, b, "exact")[1] == pytest.approx(oracles.exact_ranksum_p(a, b), abs=1e-12)


@pytest.mark.parametrize("shift", [0.0, 0.5, 1.0, 2.0])
def test_wilcoxon_normal_close_to_exact_at_five_five(shift):
    rng = np.random.default_rng(int(shift * 10))
    for _ in range(10):
        a, b = rng.normal(size=5), rng.normal(shift, size=5)
        exact = wilcoxon_ranksum(a, b, "exact")[1]
        normal = wilcoxon_ranksum(a, b, "normal")[1]
        assert abs(exact - normal) <= 0.05


def test_wilcoxon_identical_samples():
    a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    assert wilcoxon_ranksum(a, a)[1] == pytest.approx(1.0)
    assert wilcoxon_ranksum([2.0] * 8, [2.0] * 8, "normal")[1] == 1.0


def test_wilcoxon_rejects_bad_input():
    with pytest.raises(ValueError):
        wilcoxon_ranksum([], [1])
    with pytest.raises(ValueError):
        wilcoxon_ranksum([1], [2], "bogus")


def test_evaluate_head_uses_full_set_threshold():
    rng = np.random.default_rng(4)
    s, y = rng.uniform(size=200), rng.integers(0, 2, 200)
    r = evaluate_head(s, y, n_boot=20, seed=1)
    assert r.youden_threshold == youden_threshold(s, y)[0]
    assert r.n == 200 and r.n_pos == int(y.sum())
    for name in ("auroc", "auprc", "sensitivity", "specificity", "ppv", "npv"):
        lo_med_hi = getattr(r, name)
        assert lo_med_hi[1] <= lo_med_hi[0] <= lo_med_hi[2]


def test_evaluate_head_single_class_has_no_metrics():
    r = evaluate_head([0.2, 0.3, 0.4], [0, 0, 0])
    assert r.youden_threshold is None and r.auroc is None


STATIC = {"a1": {"age_years": 45, "sex": "F", "race": "White"},
          "a2": {"age_years": 60, "sex": "M", "race": "Black"},
          "a3": {"age_years": 61, "sex": "F", "race": "White"}}


def test_subgroups_partition_the_windows():
    rng = np.random.default_rng(0)
    ids = ["a1", "a2", "a3"] * 20
    s, y = rng.uniform(size=(60, 2)), rng.integers(0, 2, (60, 2))
    out = subgroup_eval(s, y, ids, STATIC, "age", ["x", "y"], n_boot=5)
    assert set(out) == {"young", "old"}
    assert out["young"]["x"].n == 40 and out["old"]["x"].n == 20
    sexes = subgroup_eval(s, y, ids, STATIC, "sex", ["x", "y"], n_boot=5)
    assert sum(r["y"].n for r in sexes.values()) == 60


def test_subgroup_unknown_grouping():
    with pytest.raises(ValueError, match="unknown grouping"):
        subgroup_eval(np.zeros((1, 1)), np.zeros((1, 1)), ["a1"], STATIC, "height", ["x"])


def test_report_writers(tmp_path):
    r = HeadReport(n=3, n_pos=1, youden_threshold=0.5, auroc=(0.8, 0.7, 0.9))
    write_report_csv(tmp_path / "m.csv", r.rows("unstable", "validation"))
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "outcome,cohort,metric,median,lo,hi"
    assert lines[1] == "unstable,validation,auroc,0.800000,0.700000,0.900000"
    assert lines[2] == "unstable,validation,auprc,,,"
    write_report_json(tmp_path / "m.json", {"validation": {"unstable": r}})
    back = json.loads((tmp_path / "m.json").read_text())
    assert back["validation"]["unstable"]["auroc"] == [0.8, 0.7, 0.9]
