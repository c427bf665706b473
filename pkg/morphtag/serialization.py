"""The morphtag-v1 checkpoint container.

Layout::

    morphtag-v1\\n
    {json header}\\n
    <float64 little-endian payload, parameters in header order>

The header carries the resolved model config, its digest, free-form
metadata (vocabulary, label schemes) and the parameter index.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import LoadError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 'morphtag-v1'
PAYLOAD_DTYPE = np.dtype('<f8')


def canonical_json(value):
    return json.dumps(value, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def config_digest(config):
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def parameter_checksum(state, prefix=''):
    """Digest of the raw bytes of every parameter whose name starts with ``prefix``."""
    digest = hashlib.sha256()
    for name in sorted(state):
        if name.startswith(prefix):
            digest.update(name.encode('utf-8'))
            digest.update(np.ascontiguousarray(state[name], dtype=PAYLOAD_DTYPE).tobytes())
    return digest.hexdigest()


@dataclass
class Checkpoint:
    config: dict
    state: dict
    metadata: dict = field(default_factory=dict)


def write_checkpoint(path, checkpoint):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = [{'name': name, 'shape': list(np.shape(value))} for name, value in checkpoint.state.items()]
    header = {
        'format': FORMAT_VERSION,
        'config': checkpoint.config,
        'config_digest': config_digest(checkpoint.config),
        'metadata': checkpoint.metadata,
        'parameters': index,
    }
    with path.open('wb') as fh:
        fh.write(f"{FORMAT_VERSION}\n".encode('ascii'))
        fh.write(canonical_json(header).encode('utf-8') + b'\n')
        for value in checkpoint.state.values():
            fh.write(np.ascontiguousarray(value, dtype=PAYLOAD_DTYPE).tobytes())
    logger.info("checkpoint written to %s (%d parameters)", path, len(index))
    return path


def read_checkpoint(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc

    first_nl = raw.find(b'\n')
    second_nl = raw.find(b'\n', first_nl + 1)
    if first_nl < 0 or second_nl < 0:
        raise LoadError(f"{path}: truncated header")
    version = raw[:first_nl].decode('ascii', errors='replace')
    if version != FORMAT_VERSION:
        raise LoadError(f"{path}: unsupported format {version!r}, expected {FORMAT_VERSION!r}")
    try:
        header = json.loads(raw[first_nl + 1:second_nl].decode('utf-8'))
    except ValueError as exc:
        raise LoadError(f"{path}: unreadable header ({exc})") from exc
    if config_digest(header['config']) != header['config_digest']:
        raise LoadError(f"{path}: config digest does not match its config")

    state = {}
    offset = second_nl + 1
    for entry in header['parameters']:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * PAYLOAD_DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise LoadError(f"{path}: payload ends inside parameter {entry['name']}")
        values = np.frombuffer(raw, dtype=PAYLOAD_DTYPE, count=count, offset=offset)
        state[entry['name']] = values.astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise LoadError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return Checkpoint(config=header['config'], state=state, metadata=header.get('metadata', {}))
