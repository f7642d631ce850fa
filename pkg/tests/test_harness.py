import dataclasses
import json

import numpy as np
import pytest

from npcselect.datamodel import SampleSet, average_repetitions, split_train_validation, subset_samples
from npcselect.harness import (MATCHED, PipelineConfig, PipelineError, Report, compare_strategies,
                               recovery_scores, run_pipeline, select_variables)
from npcselect.multiplicity import (SelectionResult, adjust_matrix, contiguous_bands, percentile_cutoffs,
                                    select_by_cutoff, significance_counts)
from npcselect.permtest import pairwise_pvalue_matrix
from npcselect.synthgen import GeneratorConfig, generate_dataset


@pytest.fixture
def pipeline_cfg(lasso_grid):
    generator = GeneratorConfig(n_samples=40, n_components=3, n_levels=4, n_vars=40, noise_sigma=0.2, seed=5)
    return PipelineConfig(generator=generator, lasso_grid=lasso_grid, cutoffs='auto', threads=2)


@pytest.fixture(scope='module')
def report():
    generator = GeneratorConfig(n_samples=40, n_components=3, n_levels=4, n_vars=40, noise_sigma=0.2, seed=5)
    cfg = PipelineConfig(generator=generator, lasso_grid=tuple(np.geomspace(0.5, 0.005, 12)), threads=2)
    return run_pipeline(cfg)


def test_report_structure(report):
    names = [e.strategy for e in report.entries]
    assert names[:2] == ['all', 'lasso']
    assert MATCHED in names
    assert sum(name.startswith('npc@') for name in names) >= 2
    assert report.entry('all').n_selected == 40
    assert all(e.mae >= 0 for e in report.entries)
    assert report.baseline_mae == report.entry('all').mae
    assert report.fingerprint['n_train'] == 30
    assert report.ground_truth is not None
    assert set(report.timing) == {'data', 'split', 'selection', 'ridge', 'evaluate'}


def test_report_entries_carry_bands_and_recovery(report):
    for entry in report.entries:
        assert sum(b.end - b.start + 1 for b in entry.bands) == entry.n_selected
        assert 0.0 <= entry.precision <= 1.0
        assert 0.0 <= entry.recall <= 1.0
    assert report.entry('all').recall == 1.0


def test_matched_strategy_reaches_lasso_size(report):
    lasso = report.entry('lasso').n_selected
    assert report.entry(MATCHED).n_selected >= max(1, lasso)


def test_compare_rows_sorted_with_all_last(report):
    rows = compare_strategies(report)
    sizes = [n for _, n, _ in rows]
    assert sizes == sorted(sizes)
    assert rows[-1][1] == report.entry('all').n_selected
    assert len(rows) >= 3


def test_report_dict_round_trip(report):
    data = json.loads(json.dumps(report.to_dict()))
    again = Report.from_dict(data)
    assert again.to_dict() == report.to_dict()


def test_pipeline_is_deterministic(pipeline_cfg):
    first = run_pipeline(pipeline_cfg).to_dict(include_timing=False)
    second = run_pipeline(pipeline_cfg).to_dict(include_timing=False)
    assert json.dumps(first) == json.dumps(second)


def test_npc_selection_is_precise():
    generator = GeneratorConfig(n_samples=60, n_components=6, n_levels=3, n_vars=130, noise_sigma=0.05, seed=1)
    samples, truth = generate_dataset(generator)
    split = split_train_validation(samples, 0.75, 1)
    train = subset_samples(samples, split.train_indices)
    counts = significance_counts(adjust_matrix(pairwise_pvalue_matrix(train, n_workers=2)), 0.05)
    p90 = percentile_cutoffs(counts, (90,))[0]
    top = select_by_cutoff(counts, p90)
    assert p90 > 0
    precision, _ = recovery_scores(top.selected, truth)
    assert precision >= 0.8
    # uninformative variables are never significant against any pair
    null = sorted(set(range(130)) - set(truth))
    assert counts.counts[null].max() == 0


def test_noise_free_informative_variables_reach_every_differing_pair():
    generator = GeneratorConfig(n_samples=30, n_components=3, n_levels=4, n_vars=40, noise_sigma=0.0, seed=2)
    samples, truth = generate_dataset(generator)
    train = subset_samples(samples, range(20))
    n_pairs = 190
    counts = significance_counts(adjust_matrix(pairwise_pvalue_matrix(train)), 0.05).counts
    values = average_repetitions(train).values
    checked = 0
    for v in truth:
        differing = sum(abs(values[i, v] - values[j, v]) > 1e-9 for i in range(20) for j in range(i + 1, 20))
        # identical repetitions put every differing pair at the 2/252 floor
        if differing * 0.05 > 1.01 * (2 / 252) * n_pairs:
            assert counts[v] == differing
            checked += 1
    assert checked > 0


def test_validation_rows_do_not_leak_into_selection(pipeline_cfg):
    samples, _ = generate_dataset(pipeline_cfg.generator)
    split = split_train_validation(samples, 0.75, 0)
    before = select_variables(samples, split, pipeline_cfg)

    measurements = samples.measurements.copy()
    rng = np.random.default_rng(99)
    for i in split.validation_indices:
        measurements[i] = rng.normal(size=measurements[i].shape) * 10
    mutated = SampleSet(measurements, samples.responses, samples.sample_ids)
    after = select_variables(mutated, split, pipeline_cfg)

    assert before.strategies.keys() == after.strategies.keys()
    for name in before.strategies:
        assert before.strategies[name].selected == after.strategies[name].selected
    np.testing.assert_array_equal(before.counts.counts, after.counts.counts)


def test_pvalue_matrix_persisted_and_reused(tmp_path, pipeline_cfg):
    samples, _ = generate_dataset(pipeline_cfg.generator)
    split = split_train_validation(samples, 0.75, 0)
    first = select_variables(samples, split, pipeline_cfg, output_dir=tmp_path)
    cached = tmp_path / 'pvalues.csv'
    assert cached.exists()

    reuse = PipelineConfig(generator=pipeline_cfg.generator, lasso_grid=pipeline_cfg.lasso_grid,
                           pvalues_path=str(cached))
    second = select_variables(samples, split, reuse)
    np.testing.assert_array_equal(first.counts.counts, second.counts.counts)


def test_named_pvalue_file_is_created_where_named(tmp_path, pipeline_cfg):
    samples, _ = generate_dataset(pipeline_cfg.generator)
    split = split_train_validation(samples, 0.75, 0)
    named = tmp_path / 'cache' / 'matrix.csv'
    cfg = dataclasses.replace(pipeline_cfg, pvalues_path=str(named))
    first = select_variables(samples, split, cfg, output_dir=tmp_path / 'out')
    assert named.exists()
    assert not (tmp_path / 'out' / 'pvalues.csv').exists()

    second = select_variables(samples, split, cfg)
    np.testing.assert_array_equal(first.counts.counts, second.counts.counts)


def test_full_size_pair_count():
    samples, _ = generate_dataset(GeneratorConfig(n_vars=2, seed=0))
    assert samples.n_samples == 250
    split = split_train_validation(samples, 0.75, 0)
    assert len(split.train_indices) == 187
    matrix = pairwise_pvalue_matrix(subset_samples(samples, split.train_indices), n_workers=2)
    assert matrix.values.shape == (17391, 2)


def test_stage_errors_are_tagged(tmp_path):
    cfg = PipelineConfig(data_path=str(tmp_path / 'missing.csv'))
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg)
    assert info.value.stage == 'data'
    assert 'missing.csv' in str(info.value)


def test_pipeline_config_validation():
    with pytest.raises(ValueError, match="exactly one data source"):
        PipelineConfig()
    with pytest.raises(ValueError, match="alpha"):
        PipelineConfig(data_path='x.csv', alpha=1.5)
    with pytest.raises(ValueError, match="unsupported model"):
        PipelineConfig(data_path='x.csv', model='svm')


def test_contiguous_bands_in_entries_match_selection(report):
    entry = report.entry(MATCHED)
    assert tuple(contiguous_bands(SelectionResult(entry.selected, 'npc', 40))) == entry.bands
