import os
import json
import logging
from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()

CONFIG_SCHEMA = 1

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def get_env(key, default=None):
    """
    Get environment variable, checking for standard key and 'ABERRO_' prefix.
    Example: get_env('THREADS') checks 'THREADS' then 'ABERRO_THREADS' then 'aberro_THREADS'.
    """
    val = os.getenv(key)
    if val is None:
        val = os.getenv(f'ABERRO_{key}')

    # Also check lowercase prefix just in case
    if val is None:
        val = os.getenv(f'aberro_{key}')

    if val is None:
        val = default
    return val


def worker_count(requested: int = None) -> int:
    """Number of parallel workers, capped by ABERRO_THREADS (default 1)"""
    try:
        cap = int(get_env('THREADS', 1))
    except (TypeError, ValueError):
        cap = 1
    cap = max(cap, 1)
    if requested is None:
        return cap
    return max(1, min(int(requested), cap))


def configure_logging(log_name: str = 'aberro'):
    """
    Console logging always, file logging under logs/ when the directory is writable.
    Called once from entry points (cli.py, app.py); library modules only use getLogger.
    """
    log_handlers = [logging.StreamHandler()]  # Console output always

    log_dir = get_env('LOG_DIR', 'logs')
    try:
        # May fail on read-only filesystems
        os.makedirs(log_dir, exist_ok=True)
        log_handlers.append(logging.FileHandler(os.path.join(log_dir, f'{log_name}.log'), mode='a', encoding='utf-8'))
    except OSError:
        pass

    level_name = str(get_env('LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=log_handlers
    )


def load_json_config(path) -> dict:
    """
    Load a versioned JSON config file.
    The file must carry "schema": 1; blocks ("optics", "smooth_loss", "training",
    "generator") are returned as plain dicts for the dataclass from_dict() helpers.
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}")

    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a JSON object")
    schema = data.get('schema')
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"Config {path} has schema {schema!r}, expected {CONFIG_SCHEMA}")
    return data


def config_block(data: dict, name: str, cls):
    """Build dataclass `cls` from block `name` of a loaded config (defaults when absent)"""
    block = (data or {}).get(name)
    if block is None:
        return cls()
    if not isinstance(block, dict):
        raise ConfigError(f"Config block '{name}' must be an object")
    return cls.from_dict(block)
