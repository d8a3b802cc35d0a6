"""DVNN weight files.

Layout (little-endian)::

    b"DVNN" | u32 format version | u32 config length | config JSON (canonical)
    | parameter blobs in declaration order (generator, refiner, discriminator)
    | optional Adam state: per optimizer u64 step, then m blobs, then v blobs
    | u32 CRC32 of everything above
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..densify import DEFAULT_MAX_RANGE, ENCODING_VERSION
from .nets import NetConfig, Nets
from .optim import AdamState
from .resize import RESIZE_VERSION

MAGIC = b"DVNN"
FORMAT_VERSION = 1
MODULE_ORDER = ("generator", "refiner", "discriminator")


class WeightFileError(ValueError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _ordered_params(nets: Nets):
    mods = nets.modules()
    return [(f"{m}.{name}", t) for m in MODULE_ORDER for name, t in mods[m].params.items()]


def build_config(nets: Nets, max_range: float = DEFAULT_MAX_RANGE, optimizer: dict | None = None,
                 extra: dict | None = None) -> dict:
    cfg = {
        "arch": nets.cfg.to_dict(),
        "encoding_version": ENCODING_VERSION,
        "resize_version": RESIZE_VERSION,
        "max_range": float(max_range),
        "params": [[name, list(t.data.shape)] for name, t in _ordered_params(nets)],
        "optimizer": optimizer,
    }
    if extra:
        cfg["extra"] = extra
    return cfg


def save_weights(path, nets: Nets, g_state: AdamState | None = None, d_state: AdamState | None = None,
                 max_range: float = DEFAULT_MAX_RANGE, extra: dict | None = None) -> None:
    dt = np.dtype(nets.cfg.dtype).newbyteorder("<")
    optimizer = None
    if g_state is not None and d_state is not None:
        optimizer = {
            name: {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps}
            for name, s in (("g", g_state), ("d", d_state))
        }
    cfg_bytes = canonical_json(build_config(nets, max_range, optimizer, extra))
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg_bytes)), cfg_bytes]
    for _, t in _ordered_params(nets):
        parts.append(np.ascontiguousarray(t.data, dtype=dt).tobytes())
    if optimizer is not None:
        for s in (g_state, d_state):
            parts.append(struct.pack("<Q", s.t))
            parts.extend(np.ascontiguousarray(a, dtype=dt).tobytes() for a in s.m)
            parts.extend(np.ascontiguousarray(a, dtype=dt).tobytes() for a in s.v)
    body = b"".join(parts)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    tmp.replace(path)


class LoadedWeights:
    def __init__(self, nets, config, g_state, d_state):
        self.nets = nets
        self.config = config
        self.g_state = g_state
        self.d_state = d_state

    @property
    def max_range(self) -> float:
        return self.config["max_range"]


def load_weights(path, expected: NetConfig | None = None) -> LoadedWeights:
    """Read and validate a weight file; nothing is returned unless every check passes."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise WeightFileError(f"{path}: not a DVNN weight file")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise WeightFileError(f"{path}: CRC mismatch (truncated or corrupt file)")
    version, clen = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    off = 12 + clen
    config = json.loads(body[12:off])
    if config.get("encoding_version") != ENCODING_VERSION:
        raise WeightFileError(
            f"{path}: depth encoding {config.get('encoding_version')!r}, expected {ENCODING_VERSION!r}"
        )
    if config.get("resize_version") != RESIZE_VERSION:
        raise WeightFileError(
            f"{path}: resize {config.get('resize_version')!r}, expected {RESIZE_VERSION!r}"
        )
    arch = NetConfig.from_dict(config["arch"])
    if expected is not None:
        for k, v in expected.to_dict().items():
            if config["arch"].get(k) != v:
                raise WeightFileError(
                    f"{path}: architecture field {k!r} is {config['arch'].get(k)!r}, expected {v!r}"
                )
    dt = np.dtype(arch.dtype).newbyteorder("<")
    nets = Nets(arch, seed=0)
    params = _ordered_params(nets)
    if [[n, list(t.data.shape)] for n, t in params] != config["params"]:
        raise WeightFileError(f"{path}: parameter table does not match architecture")

    def take(shape):
        nonlocal off
        nbytes = int(np.prod(shape)) * dt.itemsize
        if off + nbytes > len(body):
            raise WeightFileError(f"{path}: payload shorter than declared parameters")
        a = np.frombuffer(body, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape)
        off += nbytes
        return a.astype(arch.dtype)

    loaded = [take(t.data.shape) for _, t in params]
    states = []
    if config.get("optimizer"):
        g_params = [t for n, t in params if not n.startswith("discriminator.")]
        d_params = [t for n, t in params if n.startswith("discriminator.")]
        for key, plist in (("g", g_params), ("d", d_params)):
            if off + 8 > len(body):
                raise WeightFileError(f"{path}: missing optimizer state")
            (t_step,) = struct.unpack_from("<Q", body, off)
            off += 8
            m = [take(p.data.shape) for p in plist]
            v = [take(p.data.shape) for p in plist]
            states.append(AdamState(m, v, int(t_step), **config["optimizer"][key]))
    if off != len(body):
        raise WeightFileError(f"{path}: {len(body) - off} trailing bytes")
    for (_, t), a in zip(params, loaded):
        t.data = a
    g_state, d_state = states if states else (None, None)
    return LoadedWeights(nets, config, g_state, d_state)
