"""Named parameter storage, Adam, and the binary parameter format.

Binary layout (little-endian)::

    magic b"FDD2DPRM", version u16, adam step u64, entry count u32
    per entry, sorted by name:
        name length u16, UTF-8 name, flags u8 (bit 0: trainable),
        ndim u8, dims u32 x ndim, values f64 x size,
        Adam m and v (f64 x size each) for trainable entries
    crc32 u32 over all preceding bytes
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"FDD2DPRM"
VERSION = 1


class ShapeMismatch(ValueError):
    pass


class ParameterFormatError(ValueError):
    pass


@dataclass
class Entry:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    trainable: bool = True


class ParameterStore:
    """Trainable weights and non-trainable buffers, iterated in name order."""

    def __init__(self):
        self._entries: dict[str, Entry] = {}
        self.step = 0

    def add(self, name: str, value, trainable: bool = True) -> np.ndarray:
        if name in self._entries:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self._entries[name] = Entry(value, np.zeros_like(value), np.zeros_like(value),
                                    np.zeros_like(value), trainable)
        return value

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name) -> np.ndarray:
        return self._entries[name].value

    def entry(self, name) -> Entry:
        return self._entries[name]

    def grad(self, name) -> np.ndarray:
        return self._entries[name].grad

    def accumulate(self, name, g):
        e = self._entries[name]
        if np.shape(g) != e.grad.shape:
            raise ShapeMismatch(f"{name}: gradient shape {np.shape(g)} != {e.grad.shape}")
        e.grad += g

    def names(self, trainable: bool | None = None) -> list[str]:
        return [n for n in sorted(self._entries)
                if trainable is None or self._entries[n].trainable == trainable]

    def zero_grad(self):
        for e in self._entries.values():
            e.grad.fill(0.0)

    def count(self, prefix: str = "") -> int:
        return sum(self._entries[n].value.size for n in self.names(trainable=True) if n.startswith(prefix))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: e.value.copy() for n, e in self._entries.items()}

    def restore(self, values: dict[str, np.ndarray]):
        for n, v in values.items():
            self._entries[n].value[...] = v

    # -- serialization

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<HQI", VERSION, self.step, len(self._entries))]
        for name in sorted(self._entries):
            e = self._entries[name]
            raw = name.encode()
            out.append(struct.pack("<H", len(raw)) + raw)
            out.append(struct.pack("<BB", int(e.trainable), e.value.ndim))
            out.append(struct.pack(f"<{e.value.ndim}I", *e.value.shape))
            out.append(e.value.astype("<f8").tobytes())
            if e.trainable:
                out.append(e.m.astype("<f8").tobytes())
                out.append(e.v.astype("<f8").tobytes())
        body = b"".join(out)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ParameterStore":
        if buf[:8] != MAGIC:
            raise ParameterFormatError("bad magic")
        if len(buf) < 26:
            raise ParameterFormatError("truncated parameter file")
        (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
        if zlib.crc32(buf[:-4]) != crc:
            raise ParameterFormatError("crc32 mismatch")
        version, step, n = struct.unpack_from("<HQI", buf, 8)
        if version != VERSION:
            raise ParameterFormatError(f"unsupported version {version}")
        pos = 8 + 14
        store = cls()
        store.step = step
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + ln].decode()
            pos += 2 + ln
            trainable, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1

            def take():
                nonlocal pos
                arr = np.frombuffer(buf, "<f8", size, pos).reshape(shape).astype(np.float64)
                pos += 8 * size
                return arr

            value = store.add(name, take(), trainable=bool(trainable))
            if trainable:
                store._entries[name].m[...] = take()
                store._entries[name].v[...] = take()
            del value
        if pos != len(buf) - 4:
            raise ParameterFormatError("trailing bytes in parameter file")
        return store


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update of every trainable entry."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in store.names(trainable=True):
        e = store.entry(name)
        e.m *= beta1
        e.m += (1.0 - beta1) * e.grad
        e.v *= beta2
        e.v += (1.0 - beta2) * (e.grad * e.grad)
        e.value -= lr * (e.m / c1) / (np.sqrt(e.v / c2) + eps)
