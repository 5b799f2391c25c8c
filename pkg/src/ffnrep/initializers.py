"""Deterministic per-tensor weight initialization.

Each tensor draws from its own Philox stream keyed by ``(seed, name)``, so
values never depend on the order in which tensors are created.
"""

from __future__ import annotations

import hashlib

import numpy as np

INIT_STD = 0.02
CLIP_SIGMAS = 2.0


def tensor_generator(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD, clip: float = CLIP_SIGMAS):
    """Normal(0, std) restricted to ``[-clip*std, clip*std]`` by rejection."""
    n = int(np.prod(shape, dtype=np.int64))
    out = np.empty(n, dtype=np.float64)
    filled = 0
    bound = clip * std
    while filled < n:
        draw = rng.normal(0.0, std, size=max(n - filled, 16) * 11 // 10 + 8)
        keep = draw[np.abs(draw) <= bound]
        take = min(len(keep), n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out.reshape(shape)


def init_weights(shape, seed: int, name: str, std: float = INIT_STD, dtype=np.float64) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"dimensions must be non-negative, got {shape}")
    return truncated_normal(tensor_generator(seed, name), shape, std).astype(dtype)


def truncated_normal_std(std: float = INIT_STD, clip: float = CLIP_SIGMAS) -> float:
    """Standard deviation of the clipped distribution (closed form)."""
    from scipy.stats import truncnorm

    return float(truncnorm.std(-clip, clip) * std)
