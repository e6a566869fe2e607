"""
Aberro Domain Models
Plain dataclasses for the optics -> calibration pipeline, each with to_dict()
for JSON reports (and from_dict() where the record is read back).
"""
import base64
import hashlib
import json
import math
from dataclasses import dataclass, field, fields, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigError, InvalidArgumentError


def _from_block(cls, block: dict):
    """Construct config dataclass `cls` from a dict, rejecting unknown keys"""
    known = {f.name for f in fields(cls)}
    unknown = set(block) - known
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in block.items():
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    return cls(**kwargs)


# ========================================
# Optics
# ========================================

@dataclass(frozen=True)
class ZernikeVector:
    """Zernike coefficients in waves, OSA/ANSI single index"""
    osa: Tuple[int, ...] = (3, 4, 5)
    alpha: Tuple[float, ...] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        osa = tuple(int(j) for j in self.osa)
        alpha = tuple(float(a) for a in self.alpha)
        if len(osa) != len(alpha):
            raise InvalidArgumentError(f"osa has {len(osa)} entries but alpha has {len(alpha)}")
        if any(j < 0 for j in osa):
            raise InvalidArgumentError("OSA indices must be non-negative")
        if any(b <= a for a, b in zip(osa, osa[1:])):
            raise InvalidArgumentError(f"OSA indices must be strictly increasing: {osa}")
        if not all(math.isfinite(a) for a in alpha):
            raise InvalidArgumentError("Zernike coefficients must be finite")
        object.__setattr__(self, 'osa', osa)
        object.__setattr__(self, 'alpha', alpha)

    @classmethod
    def second_order(cls, a3: float, a4: float, a5: float) -> 'ZernikeVector':
        return cls((3, 4, 5), (a3, a4, a5))

    @classmethod
    def from_cli(cls, text: str) -> 'ZernikeVector':
        """Parse the `--zernike a3,a4,a5` flag"""
        try:
            values = [float(v) for v in text.split(',')]
        except ValueError:
            raise InvalidArgumentError(f"Cannot parse Zernike coefficients: {text!r}")
        if len(values) != 3:
            raise InvalidArgumentError(f"Expected three coefficients a3,a4,a5, got {len(values)}")
        return cls.second_order(*values)

    @classmethod
    def from_dict(cls, data: dict) -> 'ZernikeVector':
        return cls(tuple(data['osa']), tuple(data['alpha_waves']))

    def get(self, j: int) -> float:
        return dict(zip(self.osa, self.alpha)).get(j, 0.0)

    def prior_vector(self) -> np.ndarray:
        """(alpha_3, alpha_4, alpha_5), the physical prior fed to PIPTS"""
        return np.array([self.get(3), self.get(4), self.get(5)], dtype=float)

    @property
    def rms(self) -> float:
        """RMS wavefront error in waves (orthonormal basis, piston excluded)"""
        return math.sqrt(sum(a * a for j, a in zip(self.osa, self.alpha) if j > 0))

    def __add__(self, other: 'ZernikeVector') -> 'ZernikeVector':
        merged = {}
        for j, a in list(zip(self.osa, self.alpha)) + list(zip(other.osa, other.alpha)):
            merged[j] = merged.get(j, 0.0) + a
        keys = sorted(merged)
        return ZernikeVector(tuple(keys), tuple(merged[k] for k in keys))

    def to_dict(self):
        return {'osa': list(self.osa), 'alpha_waves': list(self.alpha)}


@dataclass
class WavefrontMap:
    grid: np.ndarray   # optical path difference in waves, zero outside the pupil
    mask: np.ndarray   # inscribed unit disk
    n: int


@dataclass(frozen=True)
class OpticalConfig:
    grid_n: int = 256
    pad_factor: int = 2
    wavelength: float = 550e-9     # meters
    f_number: float = 2.0
    pixel_pitch: float = 3.0e-6    # meters
    mtf_mode: str = 'real_part'    # or 'modulus'

    def __post_init__(self):
        if self.grid_n < 16 or self.grid_n & (self.grid_n - 1):
            raise InvalidArgumentError(f"grid_n must be a power of two >= 16, got {self.grid_n}")
        if self.pad_factor < 2:
            raise InvalidArgumentError(f"pad_factor must be >= 2, got {self.pad_factor}")
        if min(self.wavelength, self.f_number, self.pixel_pitch) <= 0:
            raise InvalidArgumentError("wavelength, f_number and pixel_pitch must be positive")
        if self.mtf_mode not in ('real_part', 'modulus'):
            raise InvalidArgumentError(f"Unknown mtf_mode {self.mtf_mode!r}")

    @property
    def field_n(self) -> int:
        return self.pad_factor * self.grid_n

    @property
    def cutoff(self) -> float:
        """Incoherent cutoff frequency 1/(lambda N), cycles per meter"""
        return 1.0 / (self.wavelength * self.f_number)

    @property
    def half_nyquist(self) -> float:
        return 1.0 / (4.0 * self.pixel_pitch)

    @classmethod
    def from_dict(cls, data: dict) -> 'OpticalConfig':
        return _from_block(cls, data)

    def to_dict(self):
        return asdict(self)


@dataclass
class PSF:
    grid: np.ndarray         # non-negative, unit sum
    sample_spacing: float    # meters per pixel in the image plane
    cutoff: float = float('inf')   # incoherent cutoff, cycles/meter


@dataclass
class SpectralGrid:
    otf: np.ndarray          # complex, zero frequency at the array center
    mtf: np.ndarray
    freq_step: float         # cycles/meter per bin
    cutoff: float            # cycles/meter
    mtf_mode: str = 'real_part'

    def geometry(self):
        return (self.otf.shape, round(self.freq_step, 6), round(self.cutoff, 3))


@dataclass
class OpticalMetrics:
    mtf_half_nyquist: float
    strehl: float
    oig: float
    mtf_monotone: Optional[bool] = None

    def to_dict(self):
        return {
            'mtf_half_nyquist': self.mtf_half_nyquist,
            'strehl': self.strehl,
            'oig': self.oig,
            'mtf_is_monotone': self.mtf_monotone
        }


# ========================================
# Segmentation outputs
# ========================================

@dataclass
class LogitTensor:
    data: np.ndarray   # H x W x C pre-softmax scores

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise InvalidArgumentError(f"Logits must be H x W x C, got shape {self.data.shape}")
        if self.data.shape[2] < 2:
            raise InvalidArgumentError("Logits need at least two classes")
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgumentError("Logits contain non-finite entries")

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]


@dataclass
class LabelMap:
    data: np.ndarray                 # H x W class IDs
    ignore_id: Optional[int] = None

    def __post_init__(self):
        self.data = np.asarray(self.data).astype(np.int64)
        if self.data.ndim != 2:
            raise InvalidArgumentError(f"Label map must be H x W, got shape {self.data.shape}")

    def valid_mask(self) -> np.ndarray:
        if self.ignore_id is None:
            return np.ones(self.data.shape, dtype=bool)
        return self.data != self.ignore_id


@dataclass
class ReliabilityBins:
    """Per-bin sums; means are derived so shards merge associatively"""
    n_bins: int
    counts: np.ndarray
    confidence_sums: np.ndarray
    accuracy_sums: np.ndarray

    @classmethod
    def empty(cls, n_bins: int) -> 'ReliabilityBins':
        return cls(n_bins, np.zeros(n_bins, dtype=np.int64), np.zeros(n_bins), np.zeros(n_bins))

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    @property
    def mean_confidence(self) -> np.ndarray:
        return np.divide(self.confidence_sums, self.counts, out=np.zeros(self.n_bins), where=self.counts > 0)

    @property
    def mean_accuracy(self) -> np.ndarray:
        return np.divide(self.accuracy_sums, self.counts, out=np.zeros(self.n_bins), where=self.counts > 0)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_bins + 1)

    def merge(self, other: 'ReliabilityBins') -> 'ReliabilityBins':
        if other.n_bins != self.n_bins:
            raise InvalidArgumentError(f"Cannot merge {self.n_bins} bins with {other.n_bins} bins")
        return ReliabilityBins(
            self.n_bins,
            self.counts + other.counts,
            self.confidence_sums + other.confidence_sums,
            self.accuracy_sums + other.accuracy_sums
        )

    def to_dict(self):
        edges = self.edges
        return {
            'n_bins': self.n_bins,
            'total_count': self.total_count,
            'bins': [
                {
                    'lower': float(edges[m]),
                    'upper': float(edges[m + 1]),
                    'count': int(self.counts[m]),
                    'mean_confidence': float(self.mean_confidence[m]),
                    'mean_accuracy': float(self.mean_accuracy[m])
                }
                for m in range(self.n_bins)
            ]
        }


# ========================================
# Calibration
# ========================================

@dataclass(frozen=True)
class SmoothLossConfig:
    beta_s: float = 1000.0
    eta: float = 50.0
    kappa: float = 8.0
    n_bins: int = 10

    def __post_init__(self):
        if min(self.beta_s, self.eta, self.kappa) <= 0:
            raise InvalidArgumentError("beta_s, eta and kappa must be positive")
        if self.n_bins < 1:
            raise InvalidArgumentError("n_bins must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> 'SmoothLossConfig':
        return _from_block(cls, data)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 1000
    plateau_epochs: int = 40
    patience_epochs: int = 100
    lr_factor: float = 0.1
    validation_fraction: float = 0.2
    input_size: int = 32
    widths: Tuple[int, ...] = (16, 32, 64)
    hidden: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidArgumentError("learning_rate, batch_size and max_epochs must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidArgumentError("validation_fraction must lie in [0, 1)")
        if self.input_size % (2 ** len(self.widths)):
            raise InvalidArgumentError("input_size must be divisible by 2**len(widths)")

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        return _from_block(cls, data)

    def to_dict(self):
        data = asdict(self)
        data['widths'] = list(self.widths)
        return data


VARIANTS = ('ts', 'pts', 'pipts')


@dataclass
class CalibratorModel:
    """Tagged union: 'ts' carries a scalar temperature, 'pts'/'pipts' carry network weights"""
    variant: str
    temperature: Optional[float] = None
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"Unknown calibrator variant {self.variant!r}")
        if self.variant == 'ts' and not (self.temperature and self.temperature > 0):
            raise InvalidArgumentError("TS calibrator needs a positive temperature")

    def config_hash(self) -> str:
        blob = json.dumps(self.meta.get('config', {}), sort_keys=True).encode('utf-8')
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self):
        return {
            'variant': self.variant,
            'temperature': self.temperature,
            'seed': self.seed,
            'config_hash': self.config_hash(),
            'meta': self.meta,
            'params': {
                name: {
                    'shape': list(value.shape),
                    'float32_base64': base64.b64encode(np.asarray(value, dtype='<f4').tobytes()).decode('ascii')
                }
                for name, value in sorted(self.params.items())
            }
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'CalibratorModel':
        params = {}
        for name, blob in (data.get('params') or {}).items():
            raw = base64.b64decode(blob['float32_base64'])
            params[name] = np.frombuffer(raw, dtype='<f4').astype(float).reshape(blob['shape'])
        return cls(
            variant=data['variant'],
            temperature=data.get('temperature'),
            params=params,
            seed=int(data.get('seed', 0)),
            meta=data.get('meta') or {}
        )


@dataclass
class TemperatureOptimum:
    temperature: float
    mece: float
    degenerate: bool = False

    def to_dict(self):
        return asdict(self)


@dataclass
class EnsembleReport:
    variant: str
    member_mece: List[float]
    mean: float
    std_of_mean: float
    k_factor: float
    significant: bool = False
    baseline_mean: Optional[float] = None
    failed_members: List[int] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass
class GaussianFit:
    deltas: List[float]
    mu: float
    sigma: float
    sigma_mu: float
    sigma_sigma: float
    histogram: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


# ========================================
# Analysis
# ========================================

@dataclass
class SampleSeries:
    x: np.ndarray
    y: np.ndarray
    sigma_y: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.size != self.y.size:
            raise InvalidArgumentError(f"x has {self.x.size} samples but y has {self.y.size}")
        if self.x.size < 2:
            raise InvalidArgumentError("A series needs at least two samples")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise InvalidArgumentError("Series values must be finite")
        if self.sigma_y is not None:
            self.sigma_y = np.asarray(self.sigma_y, dtype=float).ravel()
            if self.sigma_y.size != self.x.size or np.any(self.sigma_y <= 0):
                raise InvalidArgumentError("sigma_y must be positive with one entry per sample")

    @property
    def n(self) -> int:
        return self.x.size

    @classmethod
    def from_dict(cls, data: dict) -> 'SampleSeries':
        if not isinstance(data, dict):
            raise InvalidArgumentError("A series must be a JSON object")
        missing = [k for k in ('x', 'y') if k not in data]
        if missing:
            raise InvalidArgumentError(f"Series is missing {', '.join(missing)}")
        try:
            return cls(data['x'], data['y'], data.get('sigma_y'))
        except (TypeError, ValueError) as e:
            if isinstance(e, InvalidArgumentError):
                raise
            raise InvalidArgumentError(f"Series values must be numeric: {e}") from e

    def to_dict(self):
        return {
            'x': self.x.tolist(),
            'y': self.y.tolist(),
            'sigma_y': None if self.sigma_y is None else self.sigma_y.tolist()
        }


@dataclass
class FitResult:
    beta: np.ndarray
    covariance: np.ndarray
    unexplained_variance: float = float('nan')
    band: Optional[dict] = None
    model: str = 'full'                  # exponential + linear, or the nested 'linear' model
    fixed_beta3: Optional[float] = None
    cost: float = float('nan')

    def to_dict(self):
        return {
            'beta': np.asarray(self.beta).tolist(),
            'covariance': np.asarray(self.covariance).tolist(),
            'unexplained_variance': self.unexplained_variance,
            'band': self.band,
            'model': self.model,
            'fixed_beta3': self.fixed_beta3,
            'cost': self.cost
        }


# ========================================
# Synthetic data
# ========================================

@dataclass(frozen=True)
class GeneratorConfig:
    size: int = 64
    n_classes: int = 8
    min_classes: int = 4
    max_classes: int = 8
    amplitude_range: Tuple[float, float] = (2.0, 3.5)
    edge_gain: float = 1.5
    image_noise: float = 0.01
    temperature_law: str = 'strehl'     # 'strehl' | 'defocus' | 'constant'
    temperature_gain: float = 1.5
    constant_temperature: float = 2.0

    def __post_init__(self):
        if not 2 <= self.min_classes <= self.max_classes <= self.n_classes:
            raise InvalidArgumentError("Need 2 <= min_classes <= max_classes <= n_classes")
        if self.temperature_law not in ('strehl', 'defocus', 'constant'):
            raise InvalidArgumentError(f"Unknown temperature_law {self.temperature_law!r}")
        if self.size < 32 or self.size % 32:
            raise InvalidArgumentError("Scene size must be a positive multiple of 32")

    @classmethod
    def from_dict(cls, data: dict) -> 'GeneratorConfig':
        return _from_block(cls, data)

    def to_dict(self):
        data = asdict(self)
        data['amplitude_range'] = list(self.amplitude_range)
        return data


@dataclass
class SyntheticInstance:
    image: np.ndarray
    labels: LabelMap
    logits: LogitTensor
    alpha: ZernikeVector
    true_optimal_t: float
    metrics: Optional[OpticalMetrics] = None

    def to_dict(self):
        """Manifest entry (arrays live in TNSR files)"""
        return {
            'alpha': self.alpha.to_dict(),
            'true_optimal_t': self.true_optimal_t,
            'metrics': self.metrics.to_dict() if self.metrics else None,
            'shape': list(self.logits.data.shape)
        }
