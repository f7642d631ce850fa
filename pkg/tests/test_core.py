import json

import pytest

from npcselect.core import build_parser, cli_main, parse_args, UsageError

SMALL = ['--n-samples', '30', '--n-components', '3', '--n-levels', '4', '--n-vars', '40',
         '--noise-sigma', '0.2', '--n-lambdas', '8', '--lambda-min-ratio', '0.05', '--threads', '2', '-q']


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / 'a', tmp_path / 'b'
    assert cli_main(['generate', '--seed', '7', '--out', str(a)] + SMALL) == 0
    assert cli_main(['generate', '--seed', '7', '--out', str(b)] + SMALL) == 0
    assert (a / 'data.csv').read_bytes() == (b / 'data.csv').read_bytes()
    assert (a / 'ground_truth.csv').read_bytes() == (b / 'ground_truth.csv').read_bytes()


def test_pipeline_with_config_file(tmp_path):
    cfg = tmp_path / 'default.cfg'
    cfg.write_text(
        "# small synthetic run\n"
        "n_samples = 30\nn-components = 3\nn_levels = 4\nn_vars = 40\n"
        "noise_sigma = 0.2\nn_lambdas = 8\nlambda_min_ratio = 0.05\nthreads = 2\nquiet = true\n"
    )
    out = tmp_path / 'run1'
    assert cli_main(['pipeline', '--config', str(cfg), '--out', str(out)]) == 0
    for name in ('report.json', 'counts.csv', 'mae_vs_k.csv', 'selection_map.csv', 'pvalues.csv',
                 'selection_all.csv', 'selection_lasso.csv', 'selection_npc_at_matched.csv'):
        assert (out / name).exists(), name
    report = json.loads((out / 'report.json').read_text())
    assert report['fingerprint']['n_samples'] == 30


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / 'c.cfg'
    cfg.write_text("alpha = 0.1\nseed = 3\n")
    _, args = parse_args(['select', '--config', str(cfg), '--alpha', '0.01'])
    assert args.alpha == 0.01
    assert args.seed == 3


def test_percentile_scale_option(tmp_path):
    cfg = tmp_path / 'c.cfg'
    cfg.write_text("percentile-scale = quantile\npeak_width = 3\n")
    _, args = parse_args(['pipeline', '--config', str(cfg)])
    assert args.percentile_scale == 'quantile'
    assert args.peak_width == 3.0
    assert cli_main(['pipeline', '--percentile-scale', 'median']) == 1


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / 'c.cfg'
    cfg.write_text("colour = blue\n")
    with pytest.raises(UsageError, match="unknown config key"):
        parse_args(['pipeline', '--config', str(cfg)])
    assert cli_main(['pipeline', '--config', str(cfg)]) == 1


def test_usage_errors_exit_one(capsys):
    assert cli_main(['frobnicate']) == 1
    assert cli_main(['pipeline', '--no-such-flag']) == 1
    assert cli_main([]) == 1
    assert 'usage' in capsys.readouterr().err


def test_missing_data_exits_two(tmp_path, capsys):
    missing = tmp_path / 'missing.csv'
    assert cli_main(['select', '--data', str(missing), '--out', str(tmp_path / 'o')]) == 2
    assert 'missing.csv' in capsys.readouterr().err


def test_staged_commands_match_pipeline_layout(tmp_path, capsys):
    out = tmp_path / 'staged'
    args = ['--seed', '1', '--out', str(out)] + SMALL
    assert cli_main(['generate', 'select', 'fit', 'evaluate'] + args) == 0
    assert (out / 'split.json').exists()
    assert (out / 'selections.json').exists()
    assert any((out / 'models').glob('*.json'))
    assert (out / 'mae_vs_k.csv').read_text().startswith('strategy,n_selected,mae')

    assert cli_main(['compare'] + args) == 0
    stdout = capsys.readouterr().out
    assert stdout.splitlines()[0].split() == ['strategy', 'n_selected', 'mae']
    assert (out / 'comparison.csv').exists()


def test_stored_split_must_match_seed_and_fraction(tmp_path, capsys):
    out = tmp_path / 'resplit'
    args = ['--out', str(out)] + SMALL
    assert cli_main(['generate', 'select', '--seed', '1'] + args) == 0
    stored = (out / 'split.json').read_bytes()
    capsys.readouterr()

    assert cli_main(['fit', '--seed', '2'] + args) == 2
    err = capsys.readouterr().err
    assert 'split.json' in err and 'seed 2' in err
    assert cli_main(['select', '--seed', '1', '--fraction', '0.5'] + args) == 2
    assert (out / 'split.json').read_bytes() == stored

    assert cli_main(['fit', '--seed', '1'] + args) == 0


def test_interrupt_exits_two(tmp_path, monkeypatch, capsys):
    def interrupted(command, args, logger):
        raise KeyboardInterrupt

    monkeypatch.setattr('npcselect.core.dispatch', interrupted)
    assert cli_main(['generate', '--out', str(tmp_path / 'o')]) == 2
    assert 'Interrupted by user' in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert cli_main(['--help']) == 0
    assert 'pipeline' in capsys.readouterr().out


def test_parser_lists_commands():
    action = next(a for a in build_parser()._actions if a.dest == 'commands')
    assert set(action.choices) == {'generate', 'select', 'fit', 'evaluate', 'pipeline', 'compare'}
