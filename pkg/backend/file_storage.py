import json
import hashlib
import logging
from pathlib import Path
from typing import List

from config import get_env, CONFIG_SCHEMA
from errors import IntegrityError, ConfigError
from models import LabelMap, LogitTensor, OpticalMetrics, SyntheticInstance, ZernikeVector
from tensor_io import read_tensor, write_tensor

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
PARTS = ('image', 'labels', 'logits')


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


class DatasetStore:
    """
    Dataset directories of TNSR triples (image, labels, logits) per instance plus a
    manifest.json carrying per-instance metadata and a SHA-256 per file.
    """

    def __init__(self, root: str = None):
        self.root = Path(root or get_env('DATA_DIR', '.'))
        self.is_readonly = False
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError:
            # Read-only filesystem: explicit absolute paths still work for reading
            logger.warning(f"Data directory {self.root} is not writable")
            self.is_readonly = True

    def _resolve(self, name) -> Path:
        path = Path(name)
        return path if path.is_absolute() else self.root / path

    def save_dataset(self, name, instances: List[SyntheticInstance], meta: dict = None) -> Path:
        """Write every instance as TNSR files and the manifest; returns the directory"""
        target = self._resolve(name)
        target.mkdir(parents=True, exist_ok=True)

        entries = []
        for i, inst in enumerate(instances):
            files = {}
            arrays = {
                'image': inst.image.astype('float32'),
                'labels': inst.labels.data.astype('int32'),
                'logits': inst.logits.data.astype('float32')
            }
            for part in PARTS:
                filename = f'instance_{i:04d}_{part}.tnsr'
                write_tensor(target / filename, arrays[part])
                files[part] = {'file': filename, 'sha256': sha256_file(target / filename)}
            entry = inst.to_dict()
            entry['files'] = files
            entry['ignore_id'] = inst.labels.ignore_id
            entries.append(entry)

        manifest = {'schema': CONFIG_SCHEMA, 'n_instances': len(entries), 'meta': meta or {}, 'instances': entries}
        with open(target / MANIFEST, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        logger.info(f"Saved {len(entries)} instances to {target}")
        return target

    def read_manifest(self, name) -> dict:
        path = self._resolve(name) / MANIFEST
        try:
            with open(path, 'r', encoding='utf-8') as f:
                manifest = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read dataset manifest {path}: {e}")
        if manifest.get('schema') != CONFIG_SCHEMA:
            raise ConfigError(f"Manifest {path} has schema {manifest.get('schema')!r}, expected {CONFIG_SCHEMA}")
        return manifest

    def verify(self, name) -> dict:
        """Check every file hash against the manifest; raises IntegrityError on mismatch"""
        target = self._resolve(name)
        manifest = self.read_manifest(name)
        for i, entry in enumerate(manifest['instances']):
            for part, info in entry['files'].items():
                path = target / info['file']
                if not path.exists():
                    raise IntegrityError(f"Instance {i}: missing {part} file {info['file']}")
                if sha256_file(path) != info['sha256']:
                    raise IntegrityError(f"Instance {i}: {part} file {info['file']} fails its SHA-256 check")
        return manifest

    def load_dataset(self, name, verify: bool = True) -> List[SyntheticInstance]:
        target = self._resolve(name)
        manifest = self.verify(name) if verify else self.read_manifest(name)
        instances = []
        for entry in manifest['instances']:
            files = entry['files']
            metrics = entry.get('metrics')
            instances.append(SyntheticInstance(
                image=read_tensor(target / files['image']['file']).astype(float),
                labels=LabelMap(read_tensor(target / files['labels']['file']), entry.get('ignore_id')),
                logits=LogitTensor(read_tensor(target / files['logits']['file'])),
                alpha=ZernikeVector.from_dict(entry['alpha']),
                true_optimal_t=float(entry['true_optimal_t']),
                metrics=OpticalMetrics(
                    metrics['mtf_half_nyquist'], metrics['strehl'], metrics['oig'], metrics.get('mtf_is_monotone')
                ) if metrics else None
            ))
        logger.info(f"Loaded {len(instances)} instances from {target}")
        return instances
