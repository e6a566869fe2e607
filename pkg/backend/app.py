"""
Aberro Flask API
JSON surface over the optics / calibration / correlation library
"""
import logging

from flask import Flask, request, jsonify
from flask_cors import CORS

from config import configure_logging, get_env
from errors import AberroError
from models import LabelMap, LogitTensor, OpticalConfig, SampleSeries, ZernikeVector
from reports import ece_report, json_safe, optics_report, xi_report

configure_logging('backend')
logger = logging.getLogger(__name__)

app = Flask(__name__)
CORS(app)


def _zernike(payload) -> ZernikeVector:
    value = payload.get('zernike', [0.0, 0.0, 0.0])
    if isinstance(value, dict):
        return ZernikeVector.from_dict(value)
    if isinstance(value, str):
        return ZernikeVector.from_cli(value)
    return ZernikeVector.second_order(*value)


def _failure(e: Exception):
    if isinstance(e, (AberroError, KeyError, TypeError)):
        logger.warning(f"Rejected request on {request.path}: {e}")
        return jsonify({'error': str(e)}), 400
    logger.exception(f"Unexpected failure on {request.path}")
    return jsonify({'error': str(e)}), 500


# ========================================
# Status
# ========================================

@app.route('/api/health', methods=['GET'])
def health_check():
    """Health check endpoint"""
    return jsonify({'status': 'healthy', 'service': 'Aberro API'})


@app.route('/api/system-status', methods=['GET'])
def system_status():
    """Numerical self-checks per subsystem"""
    from health import get_system_status
    return jsonify(get_system_status())


# ========================================
# Computation
# ========================================

@app.route('/api/optics-metrics', methods=['POST'])
def optics_metrics():
    """MTF at half-Nyquist, Strehl and OIG for a Zernike vector"""
    try:
        payload = request.get_json(force=True) or {}
        cfg = OpticalConfig.from_dict(payload.get('optics') or {})
        return jsonify(json_safe(optics_report(_zernike(payload), cfg)))
    except Exception as e:
        return _failure(e)


@app.route('/api/ece', methods=['POST'])
def ece_metrics():
    """mECE / ECE / AUREC and reliability-diagram data for one instance"""
    try:
        payload = request.get_json(force=True) or {}
        logits = LogitTensor(payload['logits'])
        labels = LabelMap(payload['labels'], payload.get('ignore_id'))
        report = ece_report(
            logits, labels,
            float(payload.get('temperature', 1.0)),
            int(payload.get('bins', 10))
        )
        return jsonify(json_safe(report))
    except Exception as e:
        return _failure(e)


@app.route('/api/xi', methods=['POST'])
def xi_metrics():
    """Chatterjee xi and Pearson rho of a paired series"""
    try:
        payload = request.get_json(force=True) or {}
        series = SampleSeries(payload['x'], payload['y'])
        return jsonify(json_safe(xi_report(series, int(payload.get('tie_seed', 0)))))
    except Exception as e:
        return _failure(e)


if __name__ == '__main__':
    port = int(get_env('PORT', 5000))
    app.run(host='0.0.0.0', port=port, debug=True)
