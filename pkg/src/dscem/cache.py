"""On-disk cache of precomputed sample sets.

File layout (little-endian)::

    magic    8s   b"DSCEMLCD"
    version  u2
    scheme   u1   0 = lcd-optimized, 1 = random-gaussian
    status   u1   index into STATUSES
    dim      u4
    count    u4
    cvm      f8   NaN when absent
    gradnorm f8
    sha256   32s  digest of the payload
    payload  count * dim f8, row-major
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lcd import OptimizerConfig, SampleSet, Scheme, optimize_samples

log = logging.getLogger(__name__)

MAGIC = b"DSCEMLCD"
VERSION = 1
_HEADER = struct.Struct("<8sHBBIIdd32s")
_SCHEMES = [Scheme.LCD, Scheme.RANDOM]
STATUSES = ["converged", "max-iter", "stalled", "random"]

CACHE_ENV = "DSCEM_CACHE_DIR"


class CacheError(Exception):
    pass


class CacheMiss(CacheError):
    """No cached set exists for the requested key."""


class CacheChecksumError(CacheError):
    """File is truncated or its payload does not match the stored digest."""


class CacheKeyError(CacheError, KeyError):
    """File holds a set of a different dimension or count than requested."""


@dataclass(frozen=True)
class SampleCacheKey:
    dim: int
    count: int

    def __post_init__(self):
        if self.dim < 1 or self.count < 1:
            raise ValueError("cache key needs positive dim and count")

    @property
    def filename(self) -> str:
        return f"lcd_d{self.dim}_n{self.count}.bin"


def encode(samples: SampleSet) -> bytes:
    payload = samples.points.astype("<f8", copy=False).tobytes(order="C")
    cvm = float("nan") if samples.cvm_score is None else samples.cvm_score
    status = STATUSES.index(samples.status) if samples.status in STATUSES else 2
    header = _HEADER.pack(MAGIC, VERSION, _SCHEMES.index(samples.scheme), status,
                          samples.dim, samples.count, cvm, samples.grad_norm,
                          hashlib.sha256(payload).digest())
    return header + payload


def decode(blob: bytes) -> SampleSet:
    if len(blob) < _HEADER.size:
        raise CacheChecksumError("file shorter than header")
    magic, version, scheme, status, dim, count, cvm, gnorm, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CacheChecksumError("bad magic")
    if version != VERSION:
        raise CacheError(f"unsupported cache version {version}")
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * dim * count or hashlib.sha256(payload).digest() != digest:
        raise CacheChecksumError("payload checksum mismatch")
    points = np.frombuffer(payload, dtype="<f8").reshape(count, dim).astype(np.float64)
    return SampleSet(points, _SCHEMES[scheme], None if np.isnan(cvm) else float(cvm),
                     STATUSES[status], float(gnorm))


def save_cache(samples: SampleSet, path) -> Path:
    """Write ``samples`` atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode(samples))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load_cache(key: SampleCacheKey, path) -> SampleSet:
    path = Path(path)
    if path.is_dir():
        path = path / key.filename
    if not path.exists():
        raise CacheMiss(f"no cached set for d={key.dim}, N={key.count} at {path}")
    samples = decode(path.read_bytes())
    if (samples.dim, samples.count) != (key.dim, key.count):
        raise CacheKeyError(f"{path} holds d={samples.dim}, N={samples.count}; "
                            f"requested d={key.dim}, N={key.count}")
    return samples


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "dscem"))


class SampleCache:
    """Directory of sample sets keyed by (dim, count), generated on demand."""

    def __init__(self, root=None, strict: bool = False, config: OptimizerConfig | None = None):
        self.root = Path(root) if root is not None else default_cache_dir()
        self.strict = strict
        self.config = config or OptimizerConfig()
        self._memo: dict[SampleCacheKey, SampleSet] = {}

    def path(self, dim: int, count: int) -> Path:
        return self.root / SampleCacheKey(dim, count).filename

    def get(self, dim: int, count: int) -> SampleSet:
        key = SampleCacheKey(dim, count)
        if key in self._memo:
            return self._memo[key]
        try:
            samples = load_cache(key, self.root / key.filename)
        except CacheMiss:
            if self.strict:
                raise
            warnings.warn(f"sample cache miss for d={dim}, N={count}; optimizing now", stacklevel=2)
            samples = optimize_samples(dim, count, self.config)
            save_cache(samples, self.root / key.filename)
        self._memo[key] = samples
        return samples
