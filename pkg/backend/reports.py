"""
Aberro Reports
JSON report builders shared by the CLI and the HTTP API.
"""
import json
import math
from datetime import datetime, timezone

import numpy as np

from calibration_metrics import (
    aurec, class_bins, confidence_map, ece, mece_from_bins, predictions, reliability_bins,
    reliability_diagram
)
from correlation import chatterjee_xi, pearson_rho
from errors import UndefinedMetricError
from fourier_optics import optical_metrics
from models import LabelMap, LogitTensor, OpticalConfig, SampleSeries, ZernikeVector


def json_safe(value):
    """numpy scalars/arrays to Python, non-finite floats to None"""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dumps(report: dict, timestamp: bool = True) -> str:
    """Pretty-printed, key-sorted JSON; byte-identical for identical inputs without timestamp"""
    payload = json_safe(report)
    if timestamp:
        payload['generated_at'] = datetime.now(timezone.utc).isoformat()
    return json.dumps(payload, indent=2, sort_keys=True) + '\n'


def optics_report(alpha: ZernikeVector, cfg: OpticalConfig = None) -> dict:
    cfg = cfg or OpticalConfig()
    report = optical_metrics(alpha, cfg).to_dict()
    report['zernike'] = alpha.to_dict()
    report['optics'] = cfg.to_dict()
    return report


def ece_report(logits: LogitTensor, labels: LabelMap, t: float = 1.0, n_bins: int = 10) -> dict:
    """mECE, pixel-level ECE / AUREC and the reliability diagram data"""
    valid = labels.valid_mask()
    conf = confidence_map(logits, t)[valid]
    correct = (predictions(logits) == labels.data)[valid]
    overall = reliability_bins(conf, correct, n_bins)
    per_class = class_bins(logits, labels, t, n_bins)
    try:
        pixel_aurec = aurec(overall)
    except UndefinedMetricError:
        pixel_aurec = None
    return {
        'temperature': t,
        'n_bins': n_bins,
        'mece': mece_from_bins(per_class),
        'ece': ece(overall),
        'aurec': pixel_aurec,
        'reliability_diagram': reliability_diagram(overall),
        'per_class': {
            str(cls): {'ece': ece(b), 'aurec': aurec(b), 'bins': b.to_dict()}
            for cls, b in sorted(per_class.items())
        }
    }


def xi_report(series: SampleSeries, tie_seed: int = 0) -> dict:
    report = {'n': series.n, 'tie_seed': tie_seed, 'xi': chatterjee_xi(series, tie_seed)}
    try:
        report['pearson_rho'] = pearson_rho(series)
    except UndefinedMetricError:
        report['pearson_rho'] = None
    return report
