import os.path

import pytest
from nomad.client import normalize_all, parse
from nomad.datamodel import EntryArchive, EntryMetadata

from nomad_adaptive_exploration.schema_packages.schema_package import ExplorationRun


def test_schema_package():
    test_file = os.path.join('tests', 'data', 'test.archive.yaml')
    entry_archive = parse(test_file)[0]
    normalize_all(entry_archive)

    run = entry_archive.data
    assert run.entry_name == 'oracle seed 2'
    assert run.episodes == 10
    assert run.total_env_steps == 101
    assert run.final_horizon == pytest.approx(67.38)
    assert run.outcome == pytest.approx(1.0)
    assert run.early_outcome == pytest.approx(0.1)
    assert run.message.startswith('G = 1 ')
    assert run.favourite_arm == 'epsilon=0.01'
    assert run.arm_traces[1].final_probability == pytest.approx(0.2)


def test_run_without_evaluations():
    entry_archive = EntryArchive(
        metadata=EntryMetadata(), data=ExplorationRun(variant='uniform', seed=1)
    )
    normalize_all(entry_archive)

    run = entry_archive.data
    assert run.outcome is None
    assert run.message.startswith('No outcome')
    assert run.favourite_arm is None
