"""
Aberro Temperature Network
Instance-wise temperature predictor used by PTS and PIPTS: a stack of stride-2
2x2 convolutions over downsampled logits, global average pooling, optional
concatenation of the Zernike prior (alpha_3, alpha_4, alpha_5), a two-layer
head and a softplus output. Forward and reverse passes are written out by hand.
"""
import logging
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from errors import InvalidArgumentError
from models import TrainConfig

logger = logging.getLogger(__name__)

PRIOR_WIDTH = 3
# softplus^-1(1): the untrained network starts at T = 1
UNIT_TEMPERATURE_BIAS = float(np.log(np.expm1(1.0)))
STATS_KEY = 'input_stats'


# ========================================
# Activations
# ========================================

def gelu(x):
    """x * Phi(x)"""
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_prime(x):
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def softplus(x):
    return np.logaddexp(0.0, x)


# ========================================
# Parameters
# ========================================

def conv_names(cfg: TrainConfig):
    return [f'conv{i + 1}' for i in range(len(cfg.widths))]


def stored_conv_names(params: Dict[str, np.ndarray]):
    """Conv blocks present in `params`, in layer order (conv2 before conv10)"""
    names = [k[:-2] for k in params if k.startswith('conv') and k.endswith('_w')]
    return sorted(names, key=lambda name: int(name[len('conv'):]))


def init_params(variant: str, n_classes: int, cfg: TrainConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """He-normal trunk, prior weights start at zero so PIPTS begins as PTS"""
    if variant not in ('pts', 'pipts'):
        raise InvalidArgumentError(f"Temperature network variant must be 'pts' or 'pipts', got {variant!r}")
    params = {}
    c_in = n_classes
    for name, c_out in zip(conv_names(cfg), cfg.widths):
        params[f'{name}_w'] = rng.normal(0.0, np.sqrt(2.0 / (4 * c_in)), size=(2, 2, c_in, c_out))
        params[f'{name}_b'] = np.zeros(c_out)
        c_in = c_out
    params['fc1_w'] = rng.normal(0.0, np.sqrt(2.0 / c_in), size=(c_in, cfg.hidden))
    params['fc1_b'] = np.zeros(cfg.hidden)
    if variant == 'pipts':
        params['fc1_alpha'] = np.zeros((PRIOR_WIDTH, cfg.hidden))
    params['fc2_w'] = rng.normal(0.0, 0.01, size=cfg.hidden)
    params['fc2_b'] = np.array([UNIT_TEMPERATURE_BIAS])
    params[STATS_KEY] = np.array([0.0, 1.0])
    return params


def trainable(params: Dict[str, np.ndarray]):
    return [k for k in sorted(params) if k != STATS_KEY]


def has_prior(params) -> bool:
    return 'fc1_alpha' in params


# ========================================
# Input
# ========================================

def downsample(logits: np.ndarray, size: int) -> np.ndarray:
    """Block-average H x W x C logits down to size x size x C"""
    h, w, c = logits.shape
    if h % size or w % size:
        raise InvalidArgumentError(f"Logit resolution {h}x{w} is not a multiple of the network input {size}")
    return logits.reshape(size, h // size, size, w // size, c).mean(axis=(1, 3))


def input_statistics(batch: np.ndarray) -> np.ndarray:
    std = float(batch.std())
    return np.array([float(batch.mean()), std if std > 0 else 1.0])


def prepare_batch(logit_list: Sequence[np.ndarray], size: int) -> np.ndarray:
    return np.stack([downsample(np.asarray(l, dtype=float), size) for l in logit_list])


# ========================================
# Forward / backward
# ========================================

def _patches(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B * H/2 * W/2, 4C) non-overlapping 2x2 patches"""
    b, h, w, c = x.shape
    return (x.reshape(b, h // 2, 2, w // 2, 2, c)
             .transpose(0, 1, 3, 2, 4, 5)
             .reshape(b * (h // 2) * (w // 2), 4 * c))


def _unpatch(dp: np.ndarray, shape) -> np.ndarray:
    b, h, w, c = shape
    return (dp.reshape(b, h // 2, w // 2, 2, 2, c)
              .transpose(0, 1, 3, 2, 4, 5)
              .reshape(b, h, w, c))


def forward(params: Dict[str, np.ndarray], x: np.ndarray, alpha: Optional[np.ndarray] = None):
    """
    x: (B, S, S, C) downsampled logits; alpha: (B, 3) for PIPTS.
    Returns (temperatures (B,), cache for backward).
    """
    names = stored_conv_names(params)
    if x.ndim != 4 or x.shape[1] != x.shape[2]:
        raise InvalidArgumentError(f"Network input must be (B, S, S, C), got {x.shape}")
    if x.shape[-1] != params['conv1_w'].shape[2]:
        raise InvalidArgumentError(f"Network expects {params['conv1_w'].shape[2]} classes, got {x.shape[-1]}")
    if x.shape[1] % (2 ** len(names)):
        raise InvalidArgumentError(f"Input size {x.shape[1]} does not match {len(names)} stride-2 blocks")

    mean, std = params[STATS_KEY]
    a = (x - mean) / std
    blocks = []
    for name in names:
        shape = a.shape
        patches = _patches(a)
        kernel = params[f'{name}_w']
        z = patches @ kernel.reshape(-1, kernel.shape[-1]) + params[f'{name}_b']
        a = gelu(z).reshape(shape[0], shape[1] // 2, shape[2] // 2, kernel.shape[-1])
        blocks.append((shape, patches, z))

    batch = a.shape[0]
    features = a.reshape(batch, -1, a.shape[-1]).mean(axis=1)
    pre1 = features @ params['fc1_w'] + params['fc1_b']
    if has_prior(params):
        if alpha is None:
            raise InvalidArgumentError("PIPTS forward needs the Zernike prior")
        alpha = np.asarray(alpha, dtype=float).reshape(batch, PRIOR_WIDTH)
        pre1 = pre1 + alpha @ params['fc1_alpha']
    hidden = gelu(pre1)
    u = hidden @ params['fc2_w'] + params['fc2_b'][0]
    cache = {
        'blocks': blocks, 'names': names, 'pooled_shape': a.shape,
        'features': features, 'pre1': pre1, 'hidden': hidden, 'u': u, 'alpha': alpha
    }
    return softplus(u), cache


def backward(params: Dict[str, np.ndarray], cache: dict, upstream: np.ndarray) -> Dict[str, np.ndarray]:
    """Vector-Jacobian product sum_b upstream_b * dT_b/dtheta for every trainable tensor"""
    grads = {}
    du = np.asarray(upstream, dtype=float) * expit(cache['u'])
    grads['fc2_w'] = cache['hidden'].T @ du
    grads['fc2_b'] = np.array([du.sum()])

    d_pre1 = np.outer(du, params['fc2_w']) * gelu_prime(cache['pre1'])
    grads['fc1_w'] = cache['features'].T @ d_pre1
    grads['fc1_b'] = d_pre1.sum(axis=0)
    if has_prior(params):
        grads['fc1_alpha'] = cache['alpha'].T @ d_pre1
    d_features = d_pre1 @ params['fc1_w'].T

    b, h, w, c = cache['pooled_shape']
    d_a = np.broadcast_to(d_features[:, None, None, :] / (h * w), (b, h, w, c))
    for name, (shape, patches, z) in zip(reversed(cache['names']), reversed(cache['blocks'])):
        kernel = params[f'{name}_w']
        d_z = d_a.reshape(-1, kernel.shape[-1]) * gelu_prime(z)
        grads[f'{name}_w'] = (patches.T @ d_z).reshape(kernel.shape)
        grads[f'{name}_b'] = d_z.sum(axis=0)
        d_a = _unpatch(d_z @ kernel.reshape(-1, kernel.shape[-1]).T, shape)
    return grads


def predict(params: Dict[str, np.ndarray], logits: np.ndarray, alpha=None, size: int = 32) -> float:
    """Temperature of one H x W x C instance"""
    x = downsample(np.asarray(logits, dtype=float), size)[None]
    prior = None if alpha is None else np.asarray(alpha, dtype=float)[None]
    t, _ = forward(params, x, prior)
    return float(t[0])


def flatten(params: Dict[str, np.ndarray], keys) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in keys])


def unflatten(vector: np.ndarray, like: Dict[str, np.ndarray], keys) -> Dict[str, np.ndarray]:
    out = dict(like)
    pos = 0
    for k in keys:
        size = like[k].size
        out[k] = vector[pos:pos + size].reshape(like[k].shape)
        pos += size
    return out
