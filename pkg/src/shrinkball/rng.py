"""Counter-based random streams.

Every draw is a pure function of ``(master_seed, path_index, substream,
index)``: the Philox4x64-10 block cipher is keyed by ``(master_seed,
path_index)`` and fed the counter ``(index // 4, substream, 0, 0)``.  Path
``i`` therefore never depends on how many draws path ``i - 1`` consumed,
and any subset of paths can be regenerated in isolation.

Uniforms use 53 bits of one output word mapped to the open interval
(0, 1).  Normals come from the Box-Muller transform applied to pairs of
words (cosine branch for even indices, sine branch for odd ones), so one
block yields exactly four normals and draw accounting never depends on
rejection.

The compiled kernel in :mod:`shrinkball._kernels` reproduces the same
integer stream; the floating point transform may differ from numpy by a
few ulps.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "StreamKey",
    "philox4x64",
    "raw_blocks",
    "uniforms",
    "normals",
    "gaussian_increments",
    "derive_seed",
    "SUB_DRIVE",
    "SUB_BRIDGE",
    "SUB_REFINE",
    "SUB_COUPLED",
]

# substream layout
SUB_DRIVE = 0          # driving Brownian increments
SUB_BRIDGE = 1         # bridge-crossing coins, one uniform per interval
SUB_REFINE = 2         # + interval index: fresh draws for substep refinement
SUB_COUPLED = 1 << 62  # + coarsening factor: coins of coupled coarse tracks

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_M53 = 2.0 ** -53
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class StreamKey:
    """Address of one random stream."""

    master_seed: int
    path_index: int
    substream_counter: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed <= _U64:
            raise DomainError("master_seed must fit in 64 unsigned bits")
        if self.path_index < 0 or self.path_index > _U64:
            raise DomainError("path_index must be a non-negative 64-bit integer")
        if self.substream_counter < 0 or self.substream_counter > _U64:
            raise DomainError("substream_counter must be a non-negative 64-bit integer")

    def substream(self, counter: int) -> "StreamKey":
        return StreamKey(self.master_seed, self.path_index, counter)


def derive_seed(master_seed: int, label: str) -> int:
    """Deterministic 64-bit child seed for an auxiliary sample family."""
    h = hashlib.blake2b(f"{master_seed}:{label}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def _mulhilo(a, b):
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    cross = (ll >> _S32) + (lh & _LO32) + hl
    hi = hh + (lh >> _S32) + (cross >> _S32)
    return hi, a * b


def philox4x64(counter, key):
    """Philox4x64-10 on broadcastable uint64 arrays.

    ``counter`` has trailing dimension 4 and ``key`` trailing dimension 2.
    """
    c = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    shape = np.broadcast_shapes(c.shape[:-1], k.shape[:-1])
    c0, c1, c2, c3 = (np.broadcast_to(c[..., i], shape).copy() for i in range(4))
    k0 = np.broadcast_to(k[..., 0], shape).copy()
    k1 = np.broadcast_to(k[..., 1], shape).copy()
    with np.errstate(over="ignore"):
        for rnd in range(10):
            if rnd:
                k0 += _W0
                k1 += _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def raw_blocks(master_seed, paths, substream, first_block, n_blocks):
    """Output words for blocks ``first_block .. first_block + n_blocks - 1``.

    Returns a uint64 array of shape ``(len(paths), n_blocks, 4)``.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.uint64))
    blocks = np.arange(first_block, first_block + n_blocks, dtype=np.uint64)
    counter = np.zeros((1, n_blocks, 4), dtype=np.uint64)
    counter[0, :, 0] = blocks
    counter[0, :, 1] = np.uint64(substream)
    key = np.empty((paths.size, 1, 2), dtype=np.uint64)
    key[:, 0, 0] = np.uint64(master_seed)
    key[:, 0, 1] = paths
    return philox4x64(counter, key)


def _to_unit(words):
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def uniforms(master_seed, paths, substream, start, count):
    """Uniform(0, 1) draws ``start .. start + count - 1`` for each path."""
    paths = np.atleast_1d(paths)
    if count <= 0 or paths.size == 0:
        return np.empty((paths.size, max(count, 0)))
    b0 = start >> 2
    b1 = (start + count - 1) >> 2
    words = raw_blocks(master_seed, paths, substream, b0, b1 - b0 + 1)
    u = _to_unit(words.reshape(paths.size, -1))
    off = start - 4 * b0
    return u[:, off:off + count]


def normals(master_seed, paths, substream, start, count):
    """Standard normal draws ``start .. start + count - 1`` for each path."""
    paths = np.atleast_1d(paths)
    if count <= 0 or paths.size == 0:
        return np.empty((paths.size, max(count, 0)))
    b0 = start >> 2
    b1 = (start + count - 1) >> 2
    words = raw_blocks(master_seed, paths, substream, b0, b1 - b0 + 1)
    u = _to_unit(words)
    rad = np.sqrt(-2.0 * np.log(u[..., 0::2]))
    ang = 2.0 * np.pi * u[..., 1::2]
    z = np.empty(u.shape)
    z[..., 0::2] = rad * np.cos(ang)
    z[..., 1::2] = rad * np.sin(ang)
    z = z.reshape(paths.size, -1)
    off = start - 4 * b0
    return z[:, off:off + count]


def gaussian_increments(key: StreamKey, count: int, variance: float) -> np.ndarray:
    """I.i.d. Normal(0, variance) draws from the stream addressed by ``key``."""
    if not variance >= 0:
        raise DomainError(f"variance must be non-negative, got {variance}")
    if count < 1:
        raise DomainError(f"count must be positive, got {count}")
    z = normals(key.master_seed, [key.path_index], key.substream_counter, 0, count)[0]
    return np.sqrt(variance) * z
