"""Counter-based random streams (Philox4x32-10).

Every draw is a pure function of ``(seed, stream, step, particle)``, so a
particle's noise does not depend on how particles are chunked or scheduled
across workers.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# Stream tags keep independent uses of one master seed apart.
STREAM_INIT = 1
STREAM_FORWARD = 2
STREAM_REVERSED = 3
STREAM_REFERENCE = 4


def philox4x32(counter, key, rounds: int = 10) -> np.ndarray:
    """Philox4x32 block function.

    ``counter`` has shape ``(..., 4)`` and ``key`` shape ``(2,)`` or
    ``(..., 2)``; both are interpreted as uint32 words.  Returns uint32 words
    of shape ``(..., 4)``.
    """
    ctr = np.asarray(counter, dtype=np.uint32)
    k = np.asarray(key, dtype=np.uint32)
    c0, c1, c2, c3 = (ctr[..., i].astype(np.uint64) for i in range(4))
    k0 = np.broadcast_to(k[..., 0], c0.shape).astype(np.uint32)
    k1 = np.broadcast_to(k[..., 1], c0.shape).astype(np.uint32)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            p0 = c0 * _M0
            p1 = c2 * _M1
            hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
            hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
            c0, c1, c2, c3 = (hi1 ^ c1 ^ k0.astype(np.uint64), lo1,
                              hi0 ^ c3 ^ k1.astype(np.uint64), lo0)
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def seed_key(seed: int) -> np.ndarray:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint32)


def _counters(stream: int, step, particles) -> np.ndarray:
    particles = np.asarray(particles, dtype=np.uint64)
    ctr = np.empty(particles.shape + (4,), dtype=np.uint32)
    ctr[..., 0] = np.uint32(step & 0xFFFFFFFF)
    ctr[..., 1] = (particles & _MASK).astype(np.uint32)
    ctr[..., 2] = np.uint32(stream)
    ctr[..., 3] = np.uint32((step >> 32) & 0xFFFFFFFF)
    return ctr


@nb.njit(cache=True)
def _mulhilo(a, b):
    p = a * b
    return p >> np.uint64(32), p & np.uint64(0xFFFFFFFF)


@nb.njit(cache=True)
def _philox_uniforms(k0, k1, stream, step, ids, out):
    # Same block function as ``philox4x32`` on counters (step_lo, id, stream, step_hi).
    m0 = np.uint64(0xD2511F53)
    m1 = np.uint64(0xCD9E8D57)
    w0 = np.uint64(0x9E3779B9)
    w1 = np.uint64(0xBB67AE85)
    mask = np.uint64(0xFFFFFFFF)
    scale = 2.0 ** -53
    for i in range(ids.shape[0]):
        c0 = np.uint64(step) & mask
        c1 = np.uint64(ids[i]) & mask
        c2 = np.uint64(stream) & mask
        c3 = (np.uint64(step) >> np.uint64(32)) & mask
        a0 = np.uint64(k0)
        a1 = np.uint64(k1)
        for r in range(10):
            if r > 0:
                a0 = (a0 + w0) & mask
                a1 = (a1 + w1) & mask
            hi0, lo0 = _mulhilo(c0, m0)
            hi1, lo1 = _mulhilo(c2, m1)
            c0, c1, c2, c3 = hi1 ^ c1 ^ a0, lo1, hi0 ^ c3 ^ a1, lo0
        a = ((c0 >> np.uint64(5)) << np.uint64(26)) | (c1 >> np.uint64(6))
        b = ((c2 >> np.uint64(5)) << np.uint64(26)) | (c3 >> np.uint64(6))
        out[i, 0] = (float(a) + 0.5) * scale
        out[i, 1] = (float(b) + 0.5) * scale


@nb.njit(cache=True)
def _box_muller(u, dim, out):
    for i in range(u.shape[0]):
        r = np.sqrt(-2.0 * np.log(u[i, 0]))
        theta = 2.0 * np.pi * u[i, 1]
        out[i, 0] = r * np.cos(theta)
        if dim == 2:
            out[i, 1] = r * np.sin(theta)


def uniforms(seed: int, stream: int, step: int, particles) -> np.ndarray:
    """Two uniforms in (0, 1) with 53-bit resolution per particle, shape (N, 2)."""
    key = seed_key(seed)
    ids = np.ascontiguousarray(np.asarray(particles, dtype=np.int64).ravel())
    out = np.empty((ids.size, 2))
    _philox_uniforms(int(key[0]), int(key[1]), int(stream), int(step), ids, out)
    return out


def uniforms_reference(seed: int, stream: int, step: int, particles) -> np.ndarray:
    """Pure numpy version of ``uniforms`` built on ``philox4x32``."""
    words = philox4x32(_counters(stream, int(step), particles), seed_key(seed))
    w = words.astype(np.uint64)
    a = ((w[..., 0] >> np.uint64(5)) << np.uint64(26)) | (w[..., 1] >> np.uint64(6))
    b = ((w[..., 2] >> np.uint64(5)) << np.uint64(26)) | (w[..., 3] >> np.uint64(6))
    u = np.stack([a, b], axis=-1).astype(np.float64)
    return (u + 0.5) * 2.0**-53


def normals(seed: int, stream: int, step: int, particles, dim: int) -> np.ndarray:
    """Standard normal draws of shape ``(N, dim)`` for ``dim <= 2``.

    One Philox block per particle feeds a Box-Muller pair.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    u = uniforms(seed, stream, step, particles)
    out = np.empty((u.shape[0], dim))
    _box_muller(u, dim, out)
    return out
