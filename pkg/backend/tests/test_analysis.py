import pytest

from analysis import OPTICAL_METRICS, instance_table, robustness_study
from errors import InvalidArgumentError
from models import GeneratorConfig, OpticalConfig
from synthetic import synth_dataset

OPTICS = OpticalConfig(grid_n=64)
SCENES = GeneratorConfig(size=32, n_classes=4, min_classes=2, max_classes=4)


@pytest.fixture(scope='module')
def instances():
    return synth_dataset(11, 12, OPTICS, 0.6, SCENES)


def test_table_columns(instances):
    table = instance_table(instances)
    assert set(table) == set(OPTICAL_METRICS) | {'mece', 'miou', 'temperature'}
    assert all(len(column) == 12 for column in table.values())
    assert table['temperature'] == [1.0] * 12
    assert all(0.0 <= v <= 1.0 for v in table['miou'])


def test_true_temperatures_reduce_mece(instances):
    raw = instance_table(instances)['mece']
    calibrated = instance_table(instances, [inst.true_optimal_t for inst in instances])['mece']
    assert sum(calibrated) < sum(raw)


def test_study_reports_every_metric(instances):
    report = robustness_study(instances, fit=False)
    assert report['n_instances'] == 12
    for name in OPTICAL_METRICS:
        for target in ('mece', 'miou'):
            assert set(report['metrics'][name][target]) == {'xi', 'pearson_rho'}


def test_study_with_sensitivity_fit(instances):
    report = robustness_study(instances)
    assert 'fit' in report['metrics']['strehl']['mece']


def test_study_argument_checks(instances):
    with pytest.raises(InvalidArgumentError):
        instance_table([])
    with pytest.raises(InvalidArgumentError):
        instance_table(instances, [1.0, 2.0])
