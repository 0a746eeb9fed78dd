import os

import pytest
import structlog
from click.testing import CliRunner

from nomad_adaptive_exploration.cli import cli_main, main
from nomad_adaptive_exploration.harness import RunLog, RunLogRow
from nomad_adaptive_exploration.metrics import emit_csv

DATA = os.path.join(os.path.dirname(__file__), '..', 'data')


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    structlog.reset_defaults()


def write_run(root, variant, evals):
    log = RunLog(variant=variant, seed=0, arm_labels=['only'])
    log.rows.append(RunLogRow(0, 0, float('nan'), evals[0], float('nan'), (1.0,)))
    for t, value in enumerate(evals, start=1):
        log.rows.append(RunLogRow(t, 10 * t, 0.0, value, float('nan'), (1.0,)))
    emit_csv(log, root / 'runs' / variant / '0' / 'log.csv')


def tree(root):
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob('*'))
        if path.is_file()
    }


def test_rank_outcomes_file(capsys):
    assert cli_main(['rank', os.path.join(DATA, 'outcomes.csv')]) == 0
    assert capsys.readouterr().out.splitlines() == ['A=1.0000', 'B=0.0000']


def test_rank_writes_a_summary(tmp_path):
    out = tmp_path / 'summary'
    result = CliRunner().invoke(
        main, ['rank', os.path.join(DATA, 'outcomes.csv'), '--out', str(out)]
    )
    assert result.exit_code == 0, result.output
    assert (out / 'summary.csv').read_text().splitlines()[0] == (
        'variant,metric,mean,stderr,seeds'
    )


def test_unknown_subcommand_is_a_usage_error():
    assert cli_main(['frobnicate']) == 2


def test_bad_config_fails(tmp_path):
    path = tmp_path / 'bad.yaml'
    path.write_text('episodes: -1\n')
    assert cli_main(['train', '--config', str(path), '--out', str(tmp_path)]) == 1


def test_train_is_reproducible(tmp_path):
    args = ['train', '--deterministic', '--seed', '7', '--episodes', '5', '--actors', '1']
    for name in ('a', 'b'):
        assert cli_main([*args, '--out', str(tmp_path / name)]) == 0
    a, b = tree(tmp_path / 'a'), tree(tmp_path / 'b')
    assert 'runs/adaptive-return/7/log.csv' in a
    assert 'runs/adaptive-return/7/config.yaml' in a
    assert 'figures/eval_return.svg' in a
    assert a == b


def test_drop_picks_the_early_leader(tmp_path, capsys):
    write_run(tmp_path, 'fixed-0', [1.0] * 5 + [0.0] * 5)
    write_run(tmp_path, 'fixed-1', [0.0] * 5 + [1.0] * 5)
    write_run(tmp_path, 'oracle', [0.5] * 10)
    assert cli_main(['drop', str(tmp_path)]) == 0
    assert capsys.readouterr().out.splitlines() == [
        'early_best=fixed-0',
        'score=0.0000',
        'drop=1.0000',
    ]


def test_drop_needs_two_candidates(tmp_path):
    write_run(tmp_path, 'fixed-0', [1.0] * 10)
    assert cli_main(['drop', str(tmp_path)]) == 1


def test_rank_over_run_directories(tmp_path, capsys):
    game = tmp_path / 'corridor'
    write_run(game, 'fixed-0', [0.0] * 10)
    write_run(game, 'oracle', [1.0] * 10)
    assert cli_main(['rank', str(game)]) == 0
    assert capsys.readouterr().out.splitlines() == ['fixed-0=0.0000', 'oracle=1.0000']


def test_rank_prints_four_decimals(tmp_path, capsys):
    game = tmp_path / 'corridor'
    for variant, value in [('low', 0.1), ('mid', 0.2), ('high', 0.3)]:
        write_run(game, variant, [value] * 10)
    assert cli_main(['rank', str(game)]) == 0
    assert capsys.readouterr().out.splitlines() == [
        'high=1.0000',
        'low=0.0000',
        'mid=0.5000',
    ]


def test_bench(tmp_path):
    result = CliRunner().invoke(
        main,
        [
            'bench',
            '--bandit',
            'uniform',
            '--bandit',
            'adaptive',
            '--steps',
            '50',
            '--seeds',
            '2',
            '--out',
            str(tmp_path),
        ],
    )
    assert result.exit_code == 0, result.output
    lines = [line for line in result.output.splitlines() if 'average_reward=' in line]
    assert [line.split()[0] for line in lines] == ['uniform', 'adaptive']
    assert (tmp_path / 'summary.csv').exists()


@pytest.mark.slow
def test_lavaworld_nonstationary_subset(tmp_path):
    result = CliRunner().invoke(
        main,
        [
            'lavaworld-nonstationary',
            '--episodes',
            '20',
            '--seeds',
            '2',
            '--deterministic',
            '--variant',
            'oracle',
            '--variant',
            'uniform',
            '--out',
            str(tmp_path),
        ],
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'figures' / 'greedy_success.svg').exists()
    assert sorted(p.name for p in (tmp_path / 'runs').iterdir()) == [
        'oracle',
        'uniform',
    ]
