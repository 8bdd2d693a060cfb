"""체크포인트 바이너리 형식.

    b"AFCK" | u32 version | u32 len + JSON config | u32 count
    tensor: u32 len + UTF-8 name | u32 rank | u32 dims... | float64 payload

정수는 모두 little-endian unsigned 32-bit.
"""
import json
import logging
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ShapeError
from .policy import init_policy_weights
from .schemas import RunConfig

logger = logging.getLogger(__name__)

MAGIC = b"AFCK"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_config(config):
    return json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def encode_checkpoint(config, tensors):
    blob = encode_config(config)
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(blob)), blob, _U32.pack(len(tensors))]
    for name, array in tensors.items():
        array = np.ascontiguousarray(array, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts += [_U32.pack(len(raw_name)), raw_name, _U32.pack(array.ndim)]
        parts += [_U32.pack(d) for d in array.shape]
        parts.append(array.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]


def decode_checkpoint(buf):
    reader = _Reader(bytes(buf))
    if reader.take(4) != MAGIC:
        raise CheckpointError("not an actionflow checkpoint (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, this build reads version {VERSION}")
    try:
        config = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint config is not valid JSON: {exc}") from exc
    tensors = {}
    for _ in range(reader.u32()):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("tensor name is not UTF-8") from exc
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor '{name}'")
        tensors[name] = data
    if reader.pos != len(reader.buf):
        raise CheckpointError(f"{len(reader.buf) - reader.pos} trailing bytes after the last tensor")
    return config, tensors


def write_checkpoint(path, config, tensors):
    Path(path).write_bytes(encode_checkpoint(config, tensors))


def read_checkpoint(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(buf)


def save_policy(path, weights, run_config):
    config = run_config.model_dump(mode="json")
    config.update(obs_dim=weights.obs_dim, n_actions=weights.n_actions, state_dim=weights.state_dim)
    write_checkpoint(path, config, weights.state_dict())
    logger.info("saved %d tensors to %s", len(weights.state_dict()), path)


def load_policy(path):
    """(weights, run_config) 를 돌려준다."""
    config, tensors = read_checkpoint(path)
    try:
        obs_dim = config.pop("obs_dim")
        n_actions = config.pop("n_actions")
        state_dim = config.pop("state_dim")
    except KeyError as exc:
        raise CheckpointError(f"checkpoint config lacks {exc}") from exc
    try:
        run_config = RunConfig.model_validate(config)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint config does not validate: {exc}") from exc
    weights = init_policy_weights(run_config.train.ipa, obs_dim, n_actions, np.random.default_rng(0), state_dim=state_dim)
    try:
        weights.load_state_dict(tensors)
    except ShapeError as exc:
        raise CheckpointError(str(exc)) from exc
    return weights, run_config
