import numpy as np
import numpy.testing as npt
import pytest

import calibrators
from calibration_metrics import mece
from calibrators import (
    apply_temperature, calibrate, compare_ensembles, ensemble_evaluate, evaluate_mece, fit_ts,
    gaussian_fit, k_factor, optimal_instance_temperature, predict_temperature,
    temperature_deviation_histogram, train_calibrator
)
from errors import InsufficientDataError, InvalidArgumentError, TrainingError
from models import (
    CalibratorModel, EnsembleReport, GeneratorConfig, LabelMap, OpticalConfig, TrainConfig,
    ZernikeVector
)
from synthetic import calibrated_fixture, synth_dataset

QUICK = TrainConfig(input_size=32, widths=(4, 8), hidden=8, max_epochs=3, batch_size=4)
SCENES = GeneratorConfig(size=32, n_classes=4, min_classes=2, max_classes=4)
OPTICS = OpticalConfig(grid_n=64)


def fixture_set(t_star, n=2, shape=(128, 128), seed=0):
    pairs = [calibrated_fixture(seed + i, shape=shape, t_star=t_star) for i in range(n)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


# ========================================
# Temperature scaling
# ========================================

def test_unit_temperature_is_plain_softmax():
    logits = np.random.default_rng(0).normal(size=(4, 4, 3))
    e = np.exp(logits)
    npt.assert_allclose(apply_temperature(logits, 1.0), e / e.sum(-1, keepdims=True))


def test_infinite_temperature_limit_is_uniform():
    npt.assert_allclose(apply_temperature(np.random.default_rng(0).normal(size=(2, 2, 4)), 1e7), 0.25, atol=1e-6)


@pytest.mark.parametrize("t_star", [0.5, 2.0])
def test_ts_recovers_ground_truth_temperature(t_star):
    logits, labels = fixture_set(t_star)
    t, nll = fit_ts(logits, labels)
    assert t == pytest.approx(t_star, rel=0.04)
    assert nll > 0


def test_ts_on_calibrated_set_stays_at_one():
    logits, labels = fixture_set(1.0, seed=20)
    assert fit_ts(logits, labels)[0] == pytest.approx(1.0, abs=0.05)


def test_ts_needs_data():
    with pytest.raises(InvalidArgumentError):
        fit_ts([], [])


def test_calibration_preserves_predictions():
    logits, _ = calibrated_fixture(1, shape=(32, 32), t_star=2.0)
    model = CalibratorModel('ts', temperature=3.7)
    npt.assert_array_equal(calibrate(model, logits).argmax(-1), logits.data.argmax(-1))


# ========================================
# Per-instance oracle
# ========================================

def test_oracle_on_calibrated_instance(calibrated):
    logits, labels = calibrated
    assert optimal_instance_temperature(logits, labels).temperature == pytest.approx(1.0, rel=0.1)


def test_oracle_on_sharpened_instance():
    logits, labels = calibrated_fixture(9, shape=(256, 256), t_star=2.0)
    best = optimal_instance_temperature(logits, labels)
    assert best.temperature == pytest.approx(2.0, abs=0.1)
    assert not best.degenerate


def test_oracle_never_worse_than_unit_temperature():
    instances = synth_dataset(3, 100, OPTICS, 1.0, SCENES)
    assert len(instances) == 100
    for inst in instances:
        best = optimal_instance_temperature(inst.logits, inst.labels)
        assert best.mece <= mece(inst.logits, inst.labels, 1.0) + 1e-12


def test_single_class_instance_is_degenerate():
    logits, _ = calibrated_fixture(2, shape=(16, 16))
    best = optimal_instance_temperature(logits, LabelMap(np.zeros((16, 16))))
    assert best.degenerate


# ========================================
# PTS / PIPTS training
# ========================================

def quick_set(seed=0, n=6, law='defocus'):
    cfg = GeneratorConfig(size=32, n_classes=4, min_classes=2, max_classes=4, temperature_law=law)
    return synth_dataset(seed, n, OPTICS, 1.0, cfg)


def test_ts_variant_through_train_calibrator():
    model = train_calibrator('ts', quick_set(law='constant'))
    assert model.variant == 'ts'
    assert model.temperature == pytest.approx(2.0, rel=0.1)
    assert model.meta['config']['training'] == TrainConfig().to_dict()


@pytest.mark.parametrize("variant", ['pts', 'pipts'])
def test_training_is_deterministic(variant):
    data = quick_set()
    a = train_calibrator(variant, data, train_cfg=QUICK, seed=4)
    b = train_calibrator(variant, data, train_cfg=QUICK, seed=4)
    assert sorted(a.params) == sorted(b.params)
    for key in a.params:
        npt.assert_array_equal(a.params[key], b.params[key])
    assert a.meta['best_epoch'] >= 1
    assert len(a.meta['loss_history']) <= QUICK.max_epochs


def test_non_finite_loss_aborts_with_diagnostics(monkeypatch):
    monkeypatch.setattr(calibrators, 'instance_loss', lambda *a, **k: (float('nan'), float('nan'), float('nan')))
    with pytest.raises(TrainingError) as info:
        train_calibrator('pts', quick_set(), train_cfg=QUICK, seed=1)
    assert info.value.diagnostics['epoch'] == 1
    assert info.value.diagnostics['variant'] == 'pts'


def test_model_serialization_keeps_predictions():
    data = quick_set()
    model = train_calibrator('pipts', data, train_cfg=QUICK, seed=2)
    restored = CalibratorModel.from_dict(model.to_dict())
    assert restored.config_hash() == model.config_hash()
    for inst in data:
        assert predict_temperature(restored, inst.logits, inst.alpha) == pytest.approx(
            predict_temperature(model, inst.logits, inst.alpha), rel=1e-4)


def test_forward_variant_mismatch():
    model = train_calibrator('pts', quick_set(), train_cfg=QUICK)
    with pytest.raises(InvalidArgumentError):
        calibrators.pipts_forward(model, quick_set()[0].logits, ZernikeVector())


@pytest.mark.slow
def test_pts_learns_a_constant_temperature():
    cfg = TrainConfig(input_size=32, widths=(4, 8), hidden=8, learning_rate=0.05,
                      max_epochs=150, plateau_epochs=20, patience_epochs=40)
    model = train_calibrator('pts', quick_set(0, 24, 'constant'), train_cfg=cfg, seed=0)
    for inst in quick_set(100, 6, 'constant'):
        assert 1.8 <= predict_temperature(model, inst.logits) <= 2.2


@pytest.mark.slow
def test_physical_prior_beats_logits_only():
    cfg = TrainConfig(input_size=32, widths=(4, 8), hidden=8, learning_rate=0.01,
                      max_epochs=150, plateau_epochs=20, patience_epochs=40)
    train_set, eval_set = quick_set(0, 32), quick_set(500, 16)
    pts = ensemble_evaluate('pts', train_set, eval_set, 11, train_cfg=cfg)
    pipts = ensemble_evaluate('pipts', train_set, eval_set, 11, train_cfg=cfg, baseline=pts)
    assert pipts.mean < pts.mean
    assert pipts.significant


@pytest.mark.slow
def test_physical_prior_adds_nothing_without_aberration_dependence():
    cfg = TrainConfig(input_size=32, widths=(4, 8), hidden=8, learning_rate=0.01,
                      max_epochs=150, plateau_epochs=20, patience_epochs=40)
    train_set, eval_set = quick_set(0, 32, 'constant'), quick_set(500, 16, 'constant')
    pts = ensemble_evaluate('pts', train_set, eval_set, 11, train_cfg=cfg)
    pipts = ensemble_evaluate('pipts', train_set, eval_set, 11, train_cfg=cfg, baseline=pts)
    assert not pipts.significant


@pytest.mark.slow
def test_median_training_loss_decreases():
    cfg = TrainConfig(input_size=32, widths=(4, 8), hidden=8, learning_rate=0.01,
                      max_epochs=40, plateau_epochs=100, patience_epochs=100)
    data = quick_set(0, 12, 'constant')
    histories = [train_calibrator('pts', data, train_cfg=cfg, seed=s).meta['loss_history'] for s in range(5)]
    assert all(len(h) == 40 for h in histories)
    median = np.median(np.array(histories), axis=0)
    assert np.mean(median[-5:]) <= np.mean(median[:5])
    assert median[-1] <= median[0]


# ========================================
# Ensembles
# ========================================

def test_k_factor_for_eleven_members():
    assert k_factor(11) == 2.23


def test_identical_seeds_have_zero_spread():
    report = ensemble_evaluate('pts', quick_set(), quick_set(9, 3), n_members=3,
                               seeds=[5, 5, 5], train_cfg=QUICK)
    assert report.std_of_mean == 0.0
    assert len(set(report.member_mece)) == 1
    assert report.failed_members == []


def test_failed_members_are_excluded(monkeypatch):
    real = calibrators.train_calibrator

    def flaky(variant, train_set, loss_cfg, train_cfg, seed):
        if seed == 1:
            raise TrainingError("Non-finite loss", {'seed': seed})
        return real(variant, train_set, loss_cfg, train_cfg, seed)

    monkeypatch.setattr(calibrators, 'train_calibrator', flaky)
    report = ensemble_evaluate('pts', quick_set(), quick_set(9, 3), n_members=3, train_cfg=QUICK)
    assert report.failed_members == [1]
    assert len(report.member_mece) == 2


def test_ensemble_with_too_few_survivors(monkeypatch):
    def broken(*args, **kwargs):
        raise TrainingError("Non-finite loss")

    monkeypatch.setattr(calibrators, 'train_calibrator', broken)
    with pytest.raises(InsufficientDataError):
        ensemble_evaluate('pts', quick_set(), quick_set(9, 3), n_members=2, train_cfg=QUICK)


def test_ensemble_argument_checks():
    with pytest.raises(InvalidArgumentError):
        ensemble_evaluate('pts', [], [], n_members=1)
    with pytest.raises(InvalidArgumentError):
        ensemble_evaluate('pts', [], [], n_members=3, seeds=[1, 2])


def test_significance_rule():
    a = EnsembleReport('pipts', [0.010], 0.010, 0.001, 2.23)
    b = EnsembleReport('pts', [0.015], 0.015, 0.001, 2.23)
    assert compare_ensembles(a, b)
    c = EnsembleReport('pts', [0.012], 0.012, 0.001, 2.23)
    assert not compare_ensembles(a, c)


def test_evaluate_mece_at_unit_temperature_matches_metric():
    data = quick_set(4, 3)
    identity = CalibratorModel('ts', temperature=1.0)
    expected = np.mean([mece(inst.logits, inst.labels, 1.0) for inst in data])
    assert evaluate_mece(identity, data) == pytest.approx(expected)


# ========================================
# Temperature deviation
# ========================================

def deviation_set(n=12):
    logits, labels = calibrated_fixture(0, shape=(8, 8))
    return [(logits, labels, ZernikeVector()) for _ in range(n)]


def test_perfect_calibrator_has_no_deviation():
    model = CalibratorModel('ts', temperature=2.0)
    fit = temperature_deviation_histogram(model, deviation_set(), optimal_temperatures=[2.0] * 12)
    assert fit.mu == 0.0 and fit.sigma == 0.0


def test_constant_offset_is_recovered():
    model = CalibratorModel('ts', temperature=2.0)
    fit = temperature_deviation_histogram(model, deviation_set(), optimal_temperatures=[1.7] * 12)
    assert fit.mu == pytest.approx(0.3)


def test_gaussian_fit_is_the_sample_mle():
    d = np.random.default_rng(2).normal(0.4, 0.2, size=500)
    fit = gaussian_fit(d)
    assert fit.mu == pytest.approx(d.mean(), abs=1e-6)
    assert fit.sigma == pytest.approx(d.std(ddof=0), abs=1e-9)
    assert fit.sigma_mu == pytest.approx(fit.sigma / np.sqrt(500))
    assert fit.sigma_sigma == pytest.approx(fit.sigma / np.sqrt(1000))
    assert sum(fit.histogram['counts']) == 500


def test_deviation_needs_ten_instances():
    with pytest.raises(InsufficientDataError):
        temperature_deviation_histogram(CalibratorModel('ts', temperature=1.0), deviation_set(9))
