import math
import logging

import numpy as np

logger = logging.getLogger(__name__)


def check_zernike():
    try:
        from zernike import inner_product
        norm = inner_product(4, 4, 512)
        cross = inner_product(3, 5, 512)
        if abs(norm - 1.0) > 1e-2 or abs(cross) > 1e-2:
            return False, f"Basis not orthonormal (<Z4,Z4>={norm:.4f}, <Z3,Z5>={cross:.4f})"
        return True, "Orthonormal basis"
    except Exception as e:
        return False, str(e)


def check_optics():
    try:
        from fourier_optics import diffraction_limited, spectral_grid, strehl
        from models import OpticalConfig, ZernikeVector
        cfg = OpticalConfig(grid_n=128)
        ref = diffraction_limited(cfg)
        if strehl(ref, ref) != 1.0:
            return False, "Diffraction-limited Strehl differs from 1"
        value = strehl(spectral_grid(ZernikeVector.second_order(0.0, 0.05, 0.0), cfg), ref)
        marechal = math.exp(-(2 * math.pi * 0.05) ** 2)
        if abs(value - marechal) > 0.02:
            return False, f"Strehl {value:.4f} vs Marechal {marechal:.4f}"
        return True, f"Strehl(0.05 waves defocus) = {value:.4f}"
    except Exception as e:
        return False, str(e)


def check_metrics():
    try:
        from calibration_metrics import ece, reliability_bins
        value = ece(reliability_bins([0.8, 0.8], [True, False], 10))
        if abs(value - 0.3) > 1e-12:
            return False, f"Hand-checked ECE gives {value}"
        return True, "ECE fixture reproduced"
    except Exception as e:
        return False, str(e)


def check_loss():
    try:
        from smooth_loss import pipts_loss
        at_pole = pipts_loss(0.0, 0.0)
        at_unit = pipts_loss(0.0, 1.0)
        if abs(at_pole - 0.125) > 1e-12 or not 2.7e-8 < at_unit < 2.9e-8:
            return False, f"Loss constants off: L(0,0)={at_pole}, L(0,1)={at_unit:.3g}"
        return True, "Loss constants reproduced"
    except Exception as e:
        return False, str(e)


def check_correlation():
    try:
        from correlation import chatterjee_xi
        from models import SampleSeries
        n = 10
        value = chatterjee_xi(SampleSeries(np.arange(n), np.arange(n) ** 2))
        if abs(value - (1 - 3 / (n + 1))) > 1e-12:
            return False, f"Closed-form xi mismatch: {value}"
        return True, "Closed-form xi reproduced"
    except Exception as e:
        return False, str(e)


def check_tensor_io():
    try:
        from tensor_io import decode_tensor, encode_tensor
        sample = np.arange(6, dtype=np.float32).reshape(2, 3)
        if not np.array_equal(decode_tensor(encode_tensor(sample)), sample):
            return False, "TNSR round trip altered the data"
        return True, "TNSR round trip"
    except Exception as e:
        return False, str(e)


def get_system_status():
    checks = {
        'zernike': check_zernike,
        'optics': check_optics,
        'calibration_metrics': check_metrics,
        'smooth_loss': check_loss,
        'correlation': check_correlation,
        'tensor_io': check_tensor_io
    }
    status = {}
    for name, check in checks.items():
        ok, message = check()
        if not ok:
            logger.warning(f"Self-check {name} failed: {message}")
        status[name] = {"status": "pass" if ok else "fail", "message": message}
    return status
