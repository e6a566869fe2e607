"""
Aberro Tensor IO
TNSR binary tensors (little-endian, versioned header) and PGM (P5) images.

TNSR layout:
    magic   4 bytes  b"TNSR"
    version u16      1
    dtype   u8       1 = float32, 2 = int32, 3 = uint8
    rank    u8
    dims    rank x u64
    payload row-major values
"""
import logging
import os
import struct

import numpy as np
from PIL import Image

from errors import InvalidArgumentError, TensorFormatError

logger = logging.getLogger(__name__)

MAGIC = b'TNSR'
VERSION = 1
PREFIX = struct.Struct('<4sHBB')
DTYPES = {1: np.dtype('<f4'), 2: np.dtype('<i4'), 3: np.dtype('u1')}


def _dtype_code(array: np.ndarray) -> int:
    if array.dtype == np.uint8 or array.dtype == np.bool_:
        return 3
    if np.issubdtype(array.dtype, np.integer):
        return 2
    if np.issubdtype(array.dtype, np.floating):
        return 1
    raise InvalidArgumentError(f"Unsupported tensor dtype {array.dtype}")


def encode_tensor(array) -> bytes:
    array = np.asarray(array)
    code = _dtype_code(array)
    header = PREFIX.pack(MAGIC, VERSION, code, array.ndim)
    header += struct.pack(f'<{array.ndim}Q', *array.shape)
    return header + np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < PREFIX.size:
        raise TensorFormatError(f"Truncated header: {len(blob)} of {PREFIX.size} bytes", offset=len(blob))
    magic, version, code, rank = PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"Bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise TensorFormatError(f"Unsupported version {version}", offset=4)
    if code not in DTYPES:
        raise TensorFormatError(f"Unknown dtype code {code}", offset=6)

    dims_end = PREFIX.size + 8 * rank
    if len(blob) < dims_end:
        raise TensorFormatError(f"Truncated dims: need {dims_end} header bytes", offset=len(blob))
    shape = struct.unpack_from(f'<{rank}Q', blob, PREFIX.size)
    dtype = DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = len(blob) - dims_end
    if actual != expected:
        raise TensorFormatError(f"Payload length mismatch: expected {expected} bytes, found {actual}", offset=dims_end)
    return np.frombuffer(blob, dtype=dtype, offset=dims_end).reshape(shape).copy()


def write_tensor(path, array):
    with open(path, 'wb') as f:
        f.write(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    with open(path, 'rb') as f:
        return decode_tensor(f.read())


# ========================================
# PGM
# ========================================

def read_pgm(path) -> np.ndarray:
    """8- or 16-bit binary PGM -> float image in [0, 1]"""
    with Image.open(path) as img:
        if img.format != 'PPM' or img.mode not in ('L', 'I', 'I;16', 'I;16B'):
            raise InvalidArgumentError(f"{path} is not a grayscale PGM (format {img.format}, mode {img.mode})")
        scale = 255.0 if img.mode == 'L' else 65535.0
        return np.asarray(img, dtype=float) / scale


def write_pgm(path, image, bits: int = 8):
    """Float image in [0, 1] -> binary P5 PGM"""
    if bits not in (8, 16):
        raise InvalidArgumentError(f"PGM depth must be 8 or 16 bits, got {bits}")
    image = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if bits == 8:
        out = Image.fromarray(np.rint(image * 255.0).astype(np.uint8))
    else:
        out = Image.fromarray(np.rint(image * 65535.0).astype(np.int32))
    out.save(path, format='PPM')
    logger.debug(f"Wrote {bits}-bit PGM {os.path.basename(str(path))} {image.shape}")
