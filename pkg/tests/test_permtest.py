import itertools

import numpy as np
import pytest

from npcselect.datamodel import SampleSet
from npcselect.permtest import (ExhaustiveLimitError, PValueMatrix, diff_means_stat, enumerate_partitions,
                                exact_two_sample_pvalue, mc_two_sample_pvalue, pairwise_pvalue_matrix,
                                read_pvalue_matrix, write_pvalue_matrix)

A = (1, 2, 3, 4, 5)
B = (6, 7, 8, 9, 10)


def brute_force_pvalue(a, b):
    pooled = list(a) + list(b)
    n_a = len(a)
    observed = abs(np.mean(a) - np.mean(b))
    eps = 1e-12 * max(1.0, observed)
    hits = total = 0
    for subset in itertools.combinations(range(len(pooled)), n_a):
        rest = [k for k in range(len(pooled)) if k not in subset]
        stat = abs(np.mean([pooled[k] for k in subset]) - np.mean([pooled[k] for k in rest]))
        hits += stat >= observed - eps
        total += 1
    return hits / total


def test_diff_means_stat():
    assert diff_means_stat(A, B).value == -5.0
    assert diff_means_stat(A, A).value == 0.0
    assert diff_means_stat((2, 2), (1, 3)).value == 0.0
    with pytest.raises(ValueError, match="empty group"):
        diff_means_stat((), B)


def test_enumerate_partitions():
    assert sum(1 for _ in enumerate_partitions(5, 5)) == 252
    assert list(enumerate_partitions(1, 1)) == [(0,), (1,)]
    assert list(enumerate_partitions(2, 1)) == [(0, 1), (0, 2), (1, 2)]
    with pytest.raises(ExhaustiveLimitError):
        enumerate_partitions(15, 15, limit=10 ** 6)


def test_exact_pvalue_examples():
    assert exact_two_sample_pvalue(A, B) == pytest.approx(2 / 252, abs=1e-15)
    assert exact_two_sample_pvalue(A, A) == 1.0
    assert exact_two_sample_pvalue((7,) * 5, (7,) * 5) == 1.0


def test_exact_pvalue_matches_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        a, b = rng.normal(size=5), rng.normal(loc=rng.uniform(0, 2), size=5)
        assert exact_two_sample_pvalue(a, b) == brute_force_pvalue(a, b)


def test_exact_pvalue_lattice_and_floor():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = exact_two_sample_pvalue(rng.normal(size=5), rng.normal(size=5))
        k = round(p * 252)
        assert 1 <= k <= 252
        assert p == pytest.approx(k / 252, abs=1e-15)


def test_exact_pvalue_symmetry_and_invariance():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=5), rng.normal(size=5) + 0.7
    p = exact_two_sample_pvalue(a, b)
    assert exact_two_sample_pvalue(b, a) == p
    assert exact_two_sample_pvalue(a + 3.25, b + 3.25) == p
    assert exact_two_sample_pvalue(-2.0 * a, -2.0 * b) == p


def test_monte_carlo_pvalue():
    for seed in range(3):
        p = mc_two_sample_pvalue(A, B, 9999, np.random.default_rng(seed))
        assert abs(p - 2 / 252) <= 0.004
    assert mc_two_sample_pvalue((3,) * 5, (3,) * 5, 200, np.random.default_rng(0)) == 1.0
    p1 = mc_two_sample_pvalue(A, B, 500, np.random.default_rng(11))
    p2 = mc_two_sample_pvalue(A, B, 500, np.random.default_rng(11))
    assert p1 == p2
    assert p1 > 0
    with pytest.raises(ValueError, match="n_perm"):
        mc_two_sample_pvalue(A, B, 50, np.random.default_rng(0))


def test_null_calibration():
    # one pair, 8000 independent null variables
    rng = np.random.default_rng(77)
    train = SampleSet(rng.normal(size=(2, 5, 8000)), np.zeros((2, 1)), ('a', 'b'))
    p = pairwise_pvalue_matrix(train).values[0]
    assert np.mean(p <= 0.05) <= 0.06
    assert np.mean(p <= 0.01) <= 0.015


def _train(n_samples, n_vars, seed=0):
    rng = np.random.default_rng(seed)
    shift = rng.uniform(0, 1, size=(n_samples, 1, n_vars))
    return SampleSet(rng.normal(size=(n_samples, 5, n_vars)) + shift, np.zeros((n_samples, 1)),
                     tuple(f"s{i}" for i in range(n_samples)))


def test_pairwise_matrix_shape_and_order():
    pv = pairwise_pvalue_matrix(_train(3, 2))
    assert pv.values.shape == (3, 2)
    assert [tuple(p) for p in pv.pairs] == [(0, 1), (0, 2), (1, 2)]
    assert pv.kind == 'raw'
    assert pv.method == 'exact'


def test_pairwise_matrix_matches_single_tests():
    train = _train(4, 3, seed=1)
    pv = pairwise_pvalue_matrix(train, chunk_size=2)
    for row, (i, j) in enumerate(pv.pairs):
        for v in range(3):
            expected = exact_two_sample_pvalue(train.measurements[i, :, v], train.measurements[j, :, v])
            assert pv.values[row, v] == expected


def test_identical_blocks_give_ones():
    block = np.random.default_rng(3).normal(size=(1, 5, 4))
    train = SampleSet(np.concatenate([block, block]), np.zeros((2, 1)), ('x', 'y'))
    np.testing.assert_array_equal(pairwise_pvalue_matrix(train).values, np.ones((1, 4)))


@pytest.mark.parametrize('mode', ['exact', 'monte_carlo'])
def test_worker_count_does_not_change_result(mode):
    train = _train(12, 6, seed=4)
    kwargs = dict(mode=mode, seed=8, n_perm=200, chunk_size=5)
    one = pairwise_pvalue_matrix(train, n_workers=1, **kwargs).values
    four = pairwise_pvalue_matrix(train, n_workers=4, **kwargs).values
    eight = pairwise_pvalue_matrix(train, n_workers=8, **kwargs).values
    assert np.array_equal(one, four)
    assert np.array_equal(one, eight)


def test_auto_mode_resolves_to_exact_for_five_reps():
    assert pairwise_pvalue_matrix(_train(3, 2), mode='auto').method == 'exact'


def test_pairwise_errors():
    with pytest.raises(ValueError, match="at least 2 training samples"):
        pairwise_pvalue_matrix(_train(1, 2))
    with pytest.raises(ValueError, match="unknown permutation mode"):
        pairwise_pvalue_matrix(_train(3, 2), mode='bootstrap')


def test_pvalue_matrix_validation():
    with pytest.raises(ValueError, match=r"\(0, 1\]"):
        PValueMatrix(((0, 1),), [[0.0]])
    with pytest.raises(ValueError, match="does not match"):
        PValueMatrix(((0, 1), (0, 2)), [[0.5]])


def test_pvalue_matrix_file(tmp_path):
    pv = pairwise_pvalue_matrix(_train(4, 3, seed=2))
    path = write_pvalue_matrix(pv, tmp_path / 'pvalues.csv')
    header = path.read_text().splitlines()[0]
    assert header == 'i,j,v1,v2,v3'
    back = read_pvalue_matrix(path)
    assert back.pairs == pv.pairs
    np.testing.assert_array_equal(back.values, pv.values)
