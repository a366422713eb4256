"""
Checkpoint files.

Little-endian layout: magic "GATCKPT1"; u32 header length; UTF-8 header of
sorted `key=value` lines (`model.*` spec fields plus `meta.*` entries such as
the epoch, validation PLCC and optimizer step); u32 tensor count; then per
tensor: u32 name length, name, u32 ndim, ndim x u32 dims, float32 data.
Tensor names are prefixed `param/`, `buffer/`, `adam.m/` or `adam.v/`.
"""
import logging
import shutil
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from gatiaa.models import Model, build_model
from gatiaa.utils.errors import CheckpointError, GatiaaError

logger = logging.getLogger(__name__)

MAGIC = b'GATCKPT1'
U32 = struct.Struct('<I')
FLOAT = np.dtype('<f4')


@dataclass
class Checkpoint:
    model: Model
    epoch: Optional[int] = None
    val_plcc: Optional[float] = None
    optimizer_step: int = 0
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)


def _pack_tensor(name: str, value: np.ndarray) -> bytes:
    encoded = name.encode('utf-8')
    value = np.ascontiguousarray(value, dtype=FLOAT)
    parts = [U32.pack(len(encoded)), encoded, U32.pack(value.ndim)]
    parts.extend(U32.pack(d) for d in value.shape)
    parts.append(value.tobytes())
    return b''.join(parts)


def encode_checkpoint(model: Model, optimizer=None, epoch: Optional[int] = None,
                      val_plcc: Optional[float] = None) -> bytes:
    header = {f"model.{line.split('=', 1)[0]}": line.split('=', 1)[1] for line in model.spec.to_lines()}
    header['meta.seed'] = str(model.seed)
    if epoch is not None:
        header['meta.epoch'] = str(epoch)
    if val_plcc is not None:
        header['meta.val_plcc'] = repr(float(val_plcc))

    tensors = []
    for name, p in model.named_parameters().items():
        tensors.append((f"param/{name}", p.value))
    for name, value in model.named_buffers().items():
        tensors.append((f"buffer/{name}", value))
    if optimizer is not None:
        header['meta.optimizer_step'] = str(optimizer.state.step)
        for name, m in optimizer.state.first_moments.items():
            tensors.append((f"adam.m/{name}", m))
        for name, v in optimizer.state.second_moments.items():
            tensors.append((f"adam.v/{name}", v))

    text = '\n'.join(f"{k}={header[k]}" for k in sorted(header)).encode('utf-8')
    parts = [MAGIC, U32.pack(len(text)), text, U32.pack(len(tensors))]
    parts.extend(_pack_tensor(name, value) for name, value in tensors)
    return b''.join(parts)


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise CheckpointError(f"{self.path}: truncated {what} at byte {self.offset}",
                                  {'path': self.path, 'offset': self.offset})
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return U32.unpack(self.take(U32.size, what))[0]


def decode_checkpoint(payload: bytes, path: str = '<memory>') -> Checkpoint:
    from gatiaa.schemas import load_model_spec

    reader = _Reader(payload, path)
    if reader.take(len(MAGIC), 'magic') != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)", {'path': path})
    text = reader.take(reader.u32('header length'), 'header').decode('utf-8')
    header = {}
    for line in text.splitlines():
        key, sep, value = line.partition('=')
        if not sep:
            raise CheckpointError(f"{path}: malformed header line {line!r}", {'path': path})
        header[key] = value

    spec_values = {k[len('model.'):]: v for k, v in header.items() if k.startswith('model.')}
    try:
        spec = load_model_spec(spec_values)
    except GatiaaError as e:
        raise CheckpointError(f"{path}: invalid model spec: {e.message}", {'path': path})
    model = build_model(spec, seed=int(header.get('meta.seed', 0)))
    params = model.named_parameters()

    checkpoint = Checkpoint(model=model, meta={k: v for k, v in header.items() if k.startswith('meta.')})
    if 'meta.epoch' in header:
        checkpoint.epoch = int(header['meta.epoch'])
    if 'meta.val_plcc' in header:
        checkpoint.val_plcc = float(header['meta.val_plcc'])
    checkpoint.optimizer_step = int(header.get('meta.optimizer_step', 0))

    seen = set()
    for _ in range(reader.u32('tensor count')):
        name = reader.take(reader.u32('name length'), 'tensor name').decode('utf-8')
        shape = tuple(reader.u32('dimension') for _ in range(reader.u32('rank')))
        count = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(reader.take(count * FLOAT.itemsize, f"tensor {name}"),
                              dtype=FLOAT).reshape(shape).astype(np.float32)
        kind, _, key = name.partition('/')
        if kind == 'param':
            if key not in params or params[key].shape != shape:
                raise CheckpointError(f"{path}: parameter {key} does not match the model spec",
                                      {'path': path, 'tensor': key, 'shape': shape})
            params[key].value[...] = value
            seen.add(key)
        elif kind == 'buffer':
            try:
                model.load_buffer(key, value)
            except KeyError:
                raise CheckpointError(f"{path}: unknown buffer {key}", {'path': path, 'tensor': key})
        elif kind == 'adam.m':
            checkpoint.first_moments[key] = value
        elif kind == 'adam.v':
            checkpoint.second_moments[key] = value
        else:
            raise CheckpointError(f"{path}: unknown tensor kind in {name!r}", {'path': path})
    if reader.offset != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after tensor table", {'path': path})
    missing = set(params) - seen
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)[:5]}",
                              {'path': path, 'missing': sorted(missing)})
    return checkpoint


def save_checkpoint(path, model: Model, optimizer=None, epoch: Optional[int] = None,
                    val_plcc: Optional[float] = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(model, optimizer, epoch, val_plcc))
    except OSError as e:
        logger.error(f"Error writing checkpoint {path}: {str(e)}")
        raise CheckpointError(f"cannot write checkpoint {path}: {e.strerror}", {'path': str(path)})
    logger.info(f"checkpoint saved: {path}")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}", {'path': str(path)})
    return decode_checkpoint(path.read_bytes(), str(path))


def copy_checkpoint(source, target) -> Path:
    target = Path(target)
    shutil.copyfile(source, target)
    return target