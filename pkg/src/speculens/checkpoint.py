"""Binary checkpoint container: bit-exact save/load of named tensors.

Layout (all integers little-endian):

    8 bytes   magic "SPCLNS01"
    u32       format version (currently 1)
    u64       training step
    u64 + n   config echo as UTF-8 JSON
    u32       tensor count
    per tensor:
        u16 + n   name (UTF-8)
        u8  + n   numpy dtype string (e.g. "<f4")
        u8        rank
        u64 * r   dimensions
        raw       payload, C order, little-endian

Tensors are written in sorted-name order so files are reproducible.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"SPCLNS01"
VERSION = 1


def _le(arr):
    # Force little-endian without copying when already native-LE.
    dt = arr.dtype.newbyteorder("<")
    return np.ascontiguousarray(arr, dtype=dt)


def save_checkpoint(path, tensors, step=0, config=None):
    """Write named arrays plus a step counter and a config echo."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg_bytes = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", int(step)))
            f.write(struct.pack("<Q", len(cfg_bytes)))
            f.write(cfg_bytes)
            f.write(struct.pack("<I", len(tensors)))
            for name in sorted(tensors):
                arr = _le(np.asarray(tensors[name]))
                name_b = name.encode("utf-8")
                dtype_b = arr.dtype.str.encode("ascii")
                f.write(struct.pack("<H", len(name_b)))
                f.write(name_b)
                f.write(struct.pack("<B", len(dtype_b)))
                f.write(dtype_b)
                f.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    f.write(struct.pack("<Q", dim))
                f.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint '{path}': {exc}") from exc


def _read_exact(f, n, path):
    buf = f.read(n)
    if len(buf) != n:
        raise ConfigError(f"truncated checkpoint '{path}'")
    return buf


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors, step, config)."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            if _read_exact(f, len(MAGIC), path) != MAGIC:
                raise ConfigError(f"'{path}' is not a checkpoint (bad magic)")
            (version,) = struct.unpack("<I", _read_exact(f, 4, path))
            if version != VERSION:
                raise ConfigError(
                    f"checkpoint '{path}' has format version {version}, "
                    f"this build reads {VERSION}"
                )
            (step,) = struct.unpack("<Q", _read_exact(f, 8, path))
            (cfg_len,) = struct.unpack("<Q", _read_exact(f, 8, path))
            config = json.loads(_read_exact(f, cfg_len, path).decode("utf-8"))
            (count,) = struct.unpack("<I", _read_exact(f, 4, path))
            tensors = {}
            for _ in range(count):
                (name_len,) = struct.unpack("<H", _read_exact(f, 2, path))
                name = _read_exact(f, name_len, path).decode("utf-8")
                (dt_len,) = struct.unpack("<B", _read_exact(f, 1, path))
                dtype = np.dtype(_read_exact(f, dt_len, path).decode("ascii"))
                (rank,) = struct.unpack("<B", _read_exact(f, 1, path))
                shape = tuple(
                    struct.unpack("<Q", _read_exact(f, 8, path))[0]
                    for _ in range(rank)
                )
                n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
                data = np.frombuffer(_read_exact(f, n_bytes, path), dtype=dtype)
                tensors[name] = data.reshape(shape).copy()
            return tensors, step, config
    except OSError as exc:
        raise OSError(f"cannot read checkpoint '{path}': {exc}") from exc


def save_model_checkpoint(path, generator, discriminator, step, extra_config=None):
    """Store both networks in one file, names prefixed gen./disc."""
    tensors = {}
    for name, arr in generator.state().items():
        tensors[f"gen.{name}"] = arr
    for name, arr in discriminator.state().items():
        tensors[f"disc.{name}"] = arr
    config = {"model": generator.config.to_dict()}
    if extra_config:
        config.update(extra_config)
    save_checkpoint(path, tensors, step=step, config=config)


def load_model_checkpoint(path, generator, discriminator=None):
    """Restore weights in place; returns (step, config)."""
    tensors, step, config = load_checkpoint(path)
    gen_state = {
        name[len("gen.") :]: arr
        for name, arr in tensors.items()
        if name.startswith("gen.")
    }
    generator.load_state(gen_state)
    if discriminator is not None:
        disc_state = {
            name[len("disc.") :]: arr
            for name, arr in tensors.items()
            if name.startswith("disc.")
        }
        discriminator.load_state(disc_state)
    return step, config
