import nomad.normalizing  # noqa: F401  (load plugin normalizers before importing ours)
from nomad.client import normalize_all
from nomad.datamodel import EntryArchive, EntryMetadata

from nomad_adaptive_exploration.normalizers.normalizer import run_tags
from nomad_adaptive_exploration.schema_packages.schema_package import ExplorationRun


def oracle_run(**kwargs):
    return ExplorationRun(
        variant='oracle',
        seed=0,
        bandit_kind='adaptive',
        fitness_kind='oracle',
        modulation_set='lavaworld',
        environment='lavaworld',
        **kwargs,
    )


def test_run_tags():
    run = oracle_run(tags=['mine', ' oracle ', ''])

    assert run_tags(run) == [
        'mine',
        'oracle',
        'bandit:adaptive',
        'fitness:oracle',
        'modulations:lavaworld',
        'env:lavaworld',
    ]


def test_unknown_kinds_are_not_tagged():
    assert run_tags(ExplorationRun(variant='uniform')) == ['uniform']


def test_normalizer():
    entry_archive = EntryArchive(metadata=EntryMetadata(), data=oracle_run())
    normalize_all(entry_archive)

    assert 'bandit:adaptive' in entry_archive.data.tags
    assert 'oracle' in entry_archive.results.eln.tags
    assert 'env:lavaworld' in entry_archive.results.eln.tags
