"""
Aberro CLI
Subcommands: degrade, optics-metrics, ece, calibrate, xi, fit-sensitivity,
synth, ensemble, report, study. Reports are pretty-printed JSON written to
--report or standard output.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from config import config_block, configure_logging, load_json_config
from errors import AberroError, ConfigError, InvalidArgumentError
from models import (
    GeneratorConfig, LabelMap, LogitTensor, OpticalConfig, SampleSeries, SmoothLossConfig,
    TrainConfig, VARIANTS, CalibratorModel, ZernikeVector
)
from reports import dumps, ece_report, optics_report, xi_report

logger = logging.getLogger('aberro.cli')

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


# ========================================
# Helpers
# ========================================

def _load_config(path) -> dict:
    return load_json_config(path) if path else {}


def _optics(args) -> OpticalConfig:
    cfg = config_block(_load_config(getattr(args, 'config', None)), 'optics', OpticalConfig)
    overrides = {
        name: getattr(args, name)
        for name in ('grid_n', 'wavelength', 'f_number', 'pixel_pitch')
        if getattr(args, name, None) is not None
    }
    return replace(cfg, **overrides) if overrides else cfg


def _read_json(path) -> dict:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read {path}: {e}")


def _load_dataset(path):
    from file_storage import DatasetStore
    return DatasetStore().load_dataset(path)


def _load_model(path) -> CalibratorModel:
    return CalibratorModel.from_dict(_read_json(path))


def _emit(report: dict, args):
    text = dumps(report, timestamp=not args.no_timestamp)
    if args.report:
        with open(args.report, 'w', encoding='utf-8') as f:
            f.write(text)
        logger.info(f"Report written to {args.report}")
    else:
        sys.stdout.write(text)


# ========================================
# Subcommands
# ========================================

def cmd_degrade(args) -> int:
    from fourier_optics import compute_psf, degrade_image, resample_psf
    from tensor_io import read_pgm, write_pgm

    cfg = _optics(args)
    alpha = ZernikeVector.from_cli(args.zernike)
    image = read_pgm(args.input)
    kernel = resample_psf(compute_psf(alpha, cfg), cfg.pixel_pitch)
    write_pgm(args.output, degrade_image(image, kernel), bits=args.bits)
    report = optics_report(alpha, cfg)
    report.update({'image_shape': list(image.shape), 'kernel_size': kernel.grid.shape[0]})
    _emit(report, args)
    return EXIT_OK


def cmd_optics_metrics(args) -> int:
    _emit(optics_report(ZernikeVector.from_cli(args.zernike), _optics(args)), args)
    return EXIT_OK


def cmd_ece(args) -> int:
    from calibration_metrics import mece, pooled_mece
    from tensor_io import read_tensor

    if args.dataset:
        instances = _load_dataset(args.dataset)
        scores = [mece(inst.logits, inst.labels, args.temperature, args.bins) for inst in instances]
        report = {
            'temperature': args.temperature,
            'n_bins': args.bins,
            'n_instances': len(instances),
            'mean_mece': float(np.mean(scores)),
            'pooled_mece': pooled_mece(
                [(inst.logits, inst.labels, args.temperature) for inst in instances], args.bins
            ),
            'instance_mece': scores
        }
    elif args.logits and args.labels:
        logits = LogitTensor(read_tensor(args.logits))
        labels = LabelMap(read_tensor(args.labels), args.ignore_id)
        report = ece_report(logits, labels, args.temperature, args.bins)
    else:
        raise ConfigError("ece needs --dataset, or both --logits and --labels")
    _emit(report, args)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from calibrators import evaluate_mece, train_calibrator

    data = _load_config(args.config)
    train_set = _load_dataset(args.train)
    model = train_calibrator(
        args.variant, train_set,
        config_block(data, 'smooth_loss', SmoothLossConfig),
        config_block(data, 'training', TrainConfig),
        seed=args.seed
    )
    with open(args.out, 'w', encoding='utf-8') as f:
        json.dump(model.to_dict(), f, indent=2, sort_keys=True)
    logger.info(f"Calibrator written to {args.out}")

    report = {'variant': args.variant, 'seed': args.seed, 'config_hash': model.config_hash(),
              'temperature': model.temperature, 'n_train': len(train_set)}
    if args.val:
        val_set = _load_dataset(args.val)
        identity = CalibratorModel('ts', temperature=1.0)
        report['validation'] = {
            'n_instances': len(val_set),
            'mece_uncalibrated': evaluate_mece(identity, val_set),
            'mece_calibrated': evaluate_mece(model, val_set)
        }
    _emit(report, args)
    return EXIT_OK


def cmd_xi(args) -> int:
    from correlation import self_test, xi_decay_study

    if args.self_test:
        report = self_test(range(args.seeds))
        if args.decay:
            report['decay'] = xi_decay_study()
        _emit(report, args)
        return EXIT_OK if report['status'] == 'pass' else EXIT_RUNTIME
    if args.x or args.y:
        if not (args.x and args.y):
            raise ConfigError("xi needs both --x and --y")
        from tensor_io import read_tensor
        x, y = read_tensor(args.x).ravel(), read_tensor(args.y).ravel()
        if x.size != y.size:
            raise InvalidArgumentError(f"--x has {x.size} samples but --y has {y.size}")
        series = SampleSeries(x, y)
    elif args.series:
        series = SampleSeries.from_dict(_read_json(args.series))
    else:
        raise ConfigError("xi needs --x and --y, --series or --self-test")
    _emit(xi_report(series, args.tie_seed), args)
    return EXIT_OK


def cmd_fit_sensitivity(args) -> int:
    from sensitivity import sensitivity_report

    series = SampleSeries.from_dict(_read_json(args.series))
    fit = sensitivity_report(series, n_mc=args.mc, k=args.k, seed=args.seed, fixed_beta3=args.fixed_beta3)
    report = fit.to_dict()
    report.update({'n': series.n, 'n_mc': args.mc if series.sigma_y is not None else 0})
    _emit(report, args)
    return EXIT_OK


def cmd_synth(args) -> int:
    from file_storage import DatasetStore
    from synthetic import synth_dataset

    data = _load_config(args.config)
    generator = config_block(data, 'generator', GeneratorConfig)
    if args.law:
        generator = replace(generator, temperature_law=args.law)
    optics = _optics(args)
    instances = synth_dataset(args.seed, args.n, optics, args.half_range, generator)
    meta = {'seed': args.seed, 'half_range': args.half_range,
            'optics': optics.to_dict(), 'generator': generator.to_dict()}
    target = DatasetStore().save_dataset(args.out, instances, meta)
    _emit({
        'n_instances': len(instances),
        'seed': args.seed,
        'true_optimal_t': [inst.true_optimal_t for inst in instances],
        'manifest': str(target / 'manifest.json')
    }, args)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    from calibrators import ensemble_evaluate

    data = _load_config(args.config)
    loss_cfg = config_block(data, 'smooth_loss', SmoothLossConfig)
    train_cfg = config_block(data, 'training', TrainConfig)
    train_set = _load_dataset(args.train)
    eval_set = _load_dataset(args.eval)
    seeds = [args.seed + i for i in range(args.members)]

    baseline = None
    if args.baseline:
        baseline = ensemble_evaluate(args.baseline, train_set, eval_set, args.members, seeds,
                                     loss_cfg, train_cfg, n_jobs=args.jobs)
    result = ensemble_evaluate(args.variant, train_set, eval_set, args.members, seeds,
                               loss_cfg, train_cfg, baseline=baseline, n_jobs=args.jobs)
    report = {'ensemble': result.to_dict()}
    if baseline is not None:
        report['baseline'] = baseline.to_dict()
    _emit(report, args)
    return EXIT_OK


def cmd_report(args) -> int:
    from health import get_system_status

    status = get_system_status()
    _emit({'system_status': status}, args)
    return EXIT_OK if all(v['status'] == 'pass' for v in status.values()) else EXIT_RUNTIME


def cmd_study(args) -> int:
    from analysis import robustness_study
    from calibrators import optimal_instance_temperature, predict_temperature

    instances = _load_dataset(args.dataset)
    if args.temperatures == 'oracle':
        temperatures = [
            optimal_instance_temperature(inst.logits, inst.labels, args.bins).temperature
            for inst in instances
        ]
    elif args.temperatures == 'true':
        temperatures = [inst.true_optimal_t for inst in instances]
    elif args.temperatures == 'one':
        temperatures = None
    else:
        model = _load_model(args.temperatures)
        temperatures = [predict_temperature(model, inst.logits, inst.alpha) for inst in instances]
    report = robustness_study(instances, temperatures, _optics(args), args.bins,
                              tie_seed=args.seed, n_mc=0, k=args.k)
    _emit(report, args)
    return EXIT_OK


# ========================================
# Parser
# ========================================

def _add_common(p):
    p.add_argument('--seed', type=int, default=0, help='seed for every random choice')
    p.add_argument('--report', default=None, help='write the JSON report here instead of stdout')
    p.add_argument('--no-timestamp', action='store_true', help='omit generated_at (byte-identical reruns)')


def _add_optics(p):
    p.add_argument('--config', default=None, help='JSON config with "schema": 1')
    p.add_argument('--grid-n', dest='grid_n', type=int, default=None)
    p.add_argument('--wavelength', type=float, default=None, help='meters')
    p.add_argument('--f-number', dest='f_number', type=float, default=None)
    p.add_argument('--pixel-pitch', dest='pixel_pitch', type=float, default=None, help='meters')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='aberro', description='Optics-to-calibration toolkit')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('degrade', help='blur a PGM image with the PSF of a Zernike vector')
    p.add_argument('--input', '--image', dest='input', required=True, help='8 or 16-bit PGM')
    p.add_argument('--output', '--out', dest='output', required=True)
    p.add_argument('--zernike', required=True, help='a3,a4,a5 in waves')
    p.add_argument('--bits', type=int, choices=(8, 16), default=8)
    _add_optics(p)
    _add_common(p)
    p.set_defaults(handler=cmd_degrade)

    p = sub.add_parser('optics-metrics', help='MTF at half-Nyquist, Strehl ratio and OIG')
    p.add_argument('--zernike', required=True, help='a3,a4,a5 in waves')
    _add_optics(p)
    _add_common(p)
    p.set_defaults(handler=cmd_optics_metrics)

    p = sub.add_parser('ece', help='mECE / ECE / AUREC of an instance or a dataset')
    p.add_argument('--dataset', default=None)
    p.add_argument('--logits', default=None, help='H x W x C TNSR file')
    p.add_argument('--labels', default=None, help='H x W TNSR file')
    p.add_argument('--ignore-id', dest='ignore_id', type=int, default=None)
    p.add_argument('--temperature', type=float, default=1.0)
    p.add_argument('--bins', type=int, default=10)
    _add_common(p)
    p.set_defaults(handler=cmd_ece)

    p = sub.add_parser('calibrate', help='fit a TS / PTS / PIPTS calibrator')
    p.add_argument('variant', choices=VARIANTS)
    p.add_argument('--train', required=True)
    p.add_argument('--val', default=None)
    p.add_argument('--config', default=None)
    p.add_argument('--out', required=True, help='calibrator JSON')
    _add_common(p)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser('xi', help="Chatterjee's xi of a series, or the reference self-test")
    p.add_argument('--x', default=None, help='TNSR file of x samples')
    p.add_argument('--y', default=None, help='TNSR file of y samples')
    p.add_argument('--series', default=None, help='JSON {"x": [...], "y": [...]}')
    p.add_argument('--tie-seed', dest='tie_seed', type=int, default=0)
    p.add_argument('--self-test', dest='self_test', action='store_true')
    p.add_argument('--seeds', type=int, default=100, help='self-test repetitions')
    p.add_argument('--decay', action='store_true', help='add the discontinuity decay curve')
    _add_common(p)
    p.set_defaults(handler=cmd_xi)

    p = sub.add_parser('fit-sensitivity', help='exponential + linear fit with uncertainty band')
    p.add_argument('--series', required=True, help='JSON {"x", "y", "sigma_y"}')
    p.add_argument('--mc', type=int, default=1000)
    p.add_argument('--k', type=float, default=1.96)
    p.add_argument('--fixed-beta3', dest='fixed_beta3', type=float, default=None)
    _add_common(p)
    p.set_defaults(handler=cmd_fit_sensitivity)

    p = sub.add_parser('synth', help='write a synthetic dataset')
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--half-range', dest='half_range', type=float, default=1.0, help='waves')
    p.add_argument('--law', choices=('strehl', 'defocus', 'constant'), default=None)
    _add_optics(p)
    _add_common(p)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser('ensemble', help='deep-ensemble mECE with significance against a baseline')
    p.add_argument('variant', choices=VARIANTS)
    p.add_argument('--baseline', choices=VARIANTS, default=None)
    p.add_argument('--train', required=True)
    p.add_argument('--eval', required=True)
    p.add_argument('--members', type=int, default=11)
    p.add_argument('--jobs', type=int, default=None)
    p.add_argument('--config', default=None)
    _add_common(p)
    p.set_defaults(handler=cmd_ensemble)

    p = sub.add_parser('report', help='numerical self-checks per subsystem')
    _add_common(p)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser('study', help='optical metrics vs mECE / mIoU robustness study')
    p.add_argument('--dataset', required=True)
    p.add_argument('--temperatures', default='one',
                   help="'one', 'oracle', 'true' or a calibrator JSON file")
    p.add_argument('--bins', type=int, default=10)
    p.add_argument('--k', type=float, default=1.96)
    _add_optics(p)
    _add_common(p)
    p.set_defaults(handler=cmd_study)
    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        return args.handler(args)
    except AberroError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except (KeyError, TypeError, ValueError) as e:
        logger.error(f"{args.command} failed on malformed input: {e!r}")
        return EXIT_RUNTIME


def main(argv=None) -> int:
    configure_logging('cli')
    return cli_dispatch(argv)


if __name__ == '__main__':
    sys.exit(main())
