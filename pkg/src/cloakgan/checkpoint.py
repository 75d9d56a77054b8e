"""Binary checkpoint files for network parameters and optimizer state.

Layout, all little-endian:

    magic "CKPT", format version byte (1)
    u32 parameter count, then per parameter:
        u16 name length, UTF-8 name, u8 ndim, ndim * u32 shape, f32 data
    u8 optimizer flag; when 1:
        f64 lr, beta1, beta2, eps
        u32 state count, then per state (shape taken from the parameter
        of the same name): u16 + name, u64 step, f32 m data, f32 v data
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Adam, AdamState, Tensor
from .errors import ConfigurationError

_MAGIC = b"CKPT"
_VERSION = 1


def _write_name(fh, name: str):
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_name(fh) -> str:
    (ln,) = struct.unpack("<H", fh.read(2))
    return fh.read(ln).decode("utf-8")


def _write_array(fh, arr: np.ndarray):
    fh.write(arr.astype("<f4").tobytes())


def _read_array(fh, shape) -> np.ndarray:
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    buf = fh.read(4 * count)
    if len(buf) != 4 * count:
        raise ConfigurationError("checkpoint truncated")
    return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)


def save_checkpoint(path, params: dict, optimizer: Adam | None = None) -> None:
    """Write a name -> Tensor dict (and optionally its Adam state) to disk."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes([_VERSION]))
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            _write_name(fh, name)
            fh.write(bytes([t.data.ndim]))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            _write_array(fh, t.data)
        if optimizer is None:
            fh.write(bytes([0]))
            return
        fh.write(bytes([1]))
        fh.write(struct.pack("<dddd", optimizer.lr, optimizer.beta1,
                             optimizer.beta2, optimizer.eps))
        fh.write(struct.pack("<I", len(optimizer.state)))
        for name, st in optimizer.state.items():
            if name not in params:
                raise ConfigurationError(f"optimizer state {name!r} has no parameter")
            _write_name(fh, name)
            fh.write(struct.pack("<Q", st.step))
            _write_array(fh, st.m)
            _write_array(fh, st.v)


def load_checkpoint(path):
    """Read back (params, optimizer) as written by :func:`save_checkpoint`.

    ``optimizer`` is None when the file holds no state. Parameters come back
    as float32 tensors with requires_grad set.
    """
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint file")
        version = fh.read(1)[0]
        if version != _VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, Tensor] = {}
        for _ in range(count):
            name = _read_name(fh)
            ndim = fh.read(1)[0]
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            params[name] = Tensor(_read_array(fh, shape), requires_grad=True)
        (has_opt,) = fh.read(1)
        if not has_opt:
            return params, None
        lr, b1, b2, eps = struct.unpack("<dddd", fh.read(32))
        opt = Adam(params, lr=lr, beta1=b1, beta2=b2, eps=eps)
        (n_states,) = struct.unpack("<I", fh.read(4))
        for _ in range(n_states):
            name = _read_name(fh)
            if name not in params:
                raise ConfigurationError(f"{path}: state {name!r} has no parameter")
            (step,) = struct.unpack("<Q", fh.read(8))
            st = AdamState(params[name].shape, np.float32)
            st.step = step
            st.m = _read_array(fh, params[name].shape)
            st.v = _read_array(fh, params[name].shape)
            opt.state[name] = st
        return params, opt
