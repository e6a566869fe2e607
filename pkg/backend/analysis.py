"""
Aberro Robustness Study
Relates per-instance optical quality (MTF at half-Nyquist, Strehl, OIG) to
calibration (mECE) and segmentation quality (mIoU): xi and Pearson per optical
metric, plus the exponential + linear sensitivity fit of mECE on each metric.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from calibration_metrics import mece, miou, predictions
from correlation import chatterjee_xi, pearson_rho
from errors import AberroError, InvalidArgumentError
from fourier_optics import optical_metrics
from models import LabelMap, OpticalConfig, SampleSeries
from sensitivity import sensitivity_report

logger = logging.getLogger(__name__)

OPTICAL_METRICS = ('mtf_half_nyquist', 'strehl', 'oig')


def instance_table(instances, temperatures: Optional[Sequence[float]] = None,
                   optics: OpticalConfig = None, n_bins: int = 10) -> dict:
    """Column table: optical metrics, mECE (at the given temperatures, else 1) and mIoU"""
    if not instances:
        raise InvalidArgumentError("Robustness study needs at least one instance")
    if temperatures is not None and len(temperatures) != len(instances):
        raise InvalidArgumentError(f"{len(temperatures)} temperatures for {len(instances)} instances")
    table = {name: [] for name in OPTICAL_METRICS + ('mece', 'miou', 'temperature')}
    for i, inst in enumerate(instances):
        metrics = inst.metrics or optical_metrics(inst.alpha, optics)
        t = 1.0 if temperatures is None else float(temperatures[i])
        pred = LabelMap(predictions(inst.logits), inst.labels.ignore_id)
        for name in OPTICAL_METRICS:
            table[name].append(getattr(metrics, name))
        table['mece'].append(mece(inst.logits, inst.labels, t, n_bins))
        table['miou'].append(miou(pred, inst.labels, inst.logits.c)[0])
        table['temperature'].append(t)
    return table


def _safe(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except AberroError as e:
        logger.warning(f"{fn.__name__} skipped: {e}")
        return None


def robustness_study(instances, temperatures: Optional[Sequence[float]] = None,
                     optics: OpticalConfig = None, n_bins: int = 10, tie_seed: int = 0,
                     fit: bool = True, n_mc: int = 0, k: float = 1.96) -> dict:
    table = instance_table(instances, temperatures, optics, n_bins)
    report = {'n_instances': len(instances), 'table': table, 'metrics': {}}
    for name in OPTICAL_METRICS:
        x = np.asarray(table[name])
        entry = {}
        for target in ('mece', 'miou'):
            series = SampleSeries(x, table[target])
            entry[target] = {
                'xi': _safe(chatterjee_xi, series, tie_seed),
                'pearson_rho': _safe(pearson_rho, series)
            }
        if fit:
            result = _safe(sensitivity_report, SampleSeries(x, table['mece']), n_mc=n_mc, k=k, seed=tie_seed)
            entry['mece']['fit'] = result.to_dict() if result is not None else None
        report['metrics'][name] = entry
    logger.info(f"Robustness study over {len(instances)} instances")
    return report
