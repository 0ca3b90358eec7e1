import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from rest_framework.renderers import JSONRenderer

from equiv_app.errors import ConfigError, SpectralParameterError

logger = logging.getLogger(__name__)


def get_stable_hash(*parts):
    """
    Creates a consistent hash of the given values for caching.
    Arrays are hashed by their bytes, everything else by repr.
    """
    digest = hashlib.md5()
    for part in parts:
        if isinstance(part, np.ndarray):
            digest.update(np.ascontiguousarray(part).tobytes())
            digest.update(str(part.dtype).encode('utf-8'))
        else:
            digest.update(repr(part).encode('utf-8', errors='ignore'))
        digest.update(b'|')
    return digest.hexdigest()


# --- PARSING ---

def parse_complex(text):
    """
    Parse a spectral argument from the command line.
    Accepts Python syntax and the mathematician's 'i' ("-1", "0.3+0.7i", "2i").
    """
    if isinstance(text, (int, float, complex)):
        return complex(text)
    cleaned = str(text).strip().replace(' ', '').replace('i', 'j')
    if cleaned in ('j', '+j'):
        cleaned = '1j'
    elif cleaned == '-j':
        cleaned = '-1j'
    try:
        return complex(cleaned)
    except ValueError as e:
        raise SpectralParameterError(f"invalid spectral parameter: cannot parse '{text}'") from e


def parse_sigma_spec(spec, p):
    """
    Build population eigenvalues (descending) from a short description.

    Args:
        spec: one of 'identity', 'zero', 'diag:1,2,3', 'two-level:a,b',
            'uniform:a,b', or 'csv:<path>' (first column of a CSV file)
        p: dimension; required except for 'diag' and 'csv' specs

    Returns:
        np.ndarray: eigenvalues in descending order
    """
    if not spec:
        raise ConfigError("sigma spec is empty")
    kind, _, argument = str(spec).partition(':')
    kind = kind.strip().lower()

    def _numbers(count=None):
        try:
            values = [float(item) for item in argument.split(',') if item.strip()]
        except ValueError as e:
            raise ConfigError(f"sigma spec '{spec}' has a non-numeric entry") from e
        if count is not None and len(values) != count:
            raise ConfigError(f"sigma spec '{spec}' needs exactly {count} numbers")
        return values

    def _need_p():
        if p is None or int(p) < 1:
            raise ConfigError(f"sigma spec '{spec}' needs a positive dimension p")
        return int(p)

    if kind == 'identity':
        eigenvalues = np.ones(_need_p())
    elif kind == 'zero':
        eigenvalues = np.zeros(_need_p())
    elif kind == 'diag':
        eigenvalues = np.array(_numbers())
        if p is not None and len(eigenvalues) != int(p):
            raise ConfigError(f"sigma spec '{spec}' has {len(eigenvalues)} entries, expected p={p}")
    elif kind == 'two-level':
        high, low = _numbers(2)
        size = _need_p()
        eigenvalues = np.where(np.arange(size) < (size + 1) // 2, high, low).astype(float)
    elif kind == 'uniform':
        low, high = _numbers(2)
        eigenvalues = np.linspace(low, high, _need_p())
    elif kind == 'csv':
        path = Path(argument)
        if not path.is_file():
            raise ConfigError(f"sigma file not found: {argument}")
        eigenvalues = pd.read_csv(path).iloc[:, 0].to_numpy(dtype=np.float64)
        if p is not None and len(eigenvalues) != int(p):
            raise ConfigError(f"sigma file has {len(eigenvalues)} rows, expected p={p}")
    else:
        raise ConfigError(f"unknown sigma spec '{spec}'")

    if eigenvalues.size == 0:
        raise ConfigError(f"sigma spec '{spec}' yields no eigenvalues")
    if not np.all(np.isfinite(eigenvalues)) or np.any(eigenvalues < 0):
        raise ConfigError(f"sigma spec '{spec}' must give finite nonnegative eigenvalues")
    return np.sort(eigenvalues)[::-1].copy()


# --- OUTPUT ---

def ensure_output_dir(path=None):
    directory = Path(path or settings.SPEQ_OUTPUT_DIR)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {directory}: {e}") from e
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"output directory {directory} is not writable")
    return directory


def write_csv(path, columns):
    """
    Write named columns to CSV with a fixed float format so reruns are byte-identical.

    Args:
        path: destination file
        columns: dict of column name -> sequence, insertion order kept
    """
    frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False, float_format='%.12g', lineterminator='\n')
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return Path(path)


def read_csv(path, required_columns=()):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    frame = pd.read_csv(path)
    missing = [name for name in required_columns if name not in frame.columns]
    if missing:
        raise ConfigError(f"{path} is missing columns: {', '.join(missing)}")
    return frame


def read_matrix(path):
    """Headerless numeric CSV as a 2-D float array (a single column comes back as p x 1)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        values = pd.read_csv(path, header=None).to_numpy(dtype=np.float64)
    except ValueError as e:
        raise ConfigError(f"{path} is not a numeric CSV: {e}") from e
    if values.size == 0:
        raise ConfigError(f"{path} is empty")
    return values


def _json_safe(value):
    # NaN and inf are not JSON; they come out as null
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    if isinstance(value, (float, np.floating)) and not np.isfinite(value):
        return None
    return value


def render_json(data):
    """JSON bytes for a report, key order as given."""
    return JSONRenderer().render(_json_safe(data))


# --- WORKER POOL ---

def resolve_threads(threads=None):
    """Thread count from the flag, falling back to SPEQ_THREADS."""
    value = threads if threads is not None else settings.SPEQ_THREADS
    try:
        value = int(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid thread count '{value}'") from e
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def run_parallel(func, items, threads=None):
    """
    Map func over items on a thread pool.
    Results come back in input order, so reductions over them are deterministic.
    """
    items = list(items)
    workers = min(resolve_threads(threads), max(1, len(items)))
    if workers == 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
