"""Dense kernels used by the blocks and the rewrite pass.

Activations are numpy arrays whose last axis is the channel axis; a plain
``(tokens, channels)`` matrix is the common case, but every per-channel op
also accepts leading batch axes. ``float64`` is the verification dtype and
``float32`` the benchmark dtype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import BoundsError, DegenerateBatchError, DimensionError, StateError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_matrix(x, dtype=None) -> np.ndarray:
    """Coerce to a C-contiguous 2-D array of a supported float dtype."""
    a = np.asarray(x, dtype=dtype)
    if a.dtype not in SUPPORTED_DTYPES:
        a = a.astype(np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return np.ascontiguousarray(a)


@dataclass
class BatchNormParams:
    """Per-channel normalization state.

    ``running_mean``/``running_var`` are buffers updated only by
    :func:`batchnorm_train_step`; ``gamma``/``beta`` are the learnable affine.
    Reparameterization requires ``frozen``.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    frozen: bool = False

    def __post_init__(self):
        n = len(self.gamma)
        for name in ("beta", "running_mean", "running_var"):
            if len(getattr(self, name)) != n:
                raise DimensionError(
                    f"BatchNorm vector {name} has length {len(getattr(self, name))}, expected {n}"
                )
        if np.any(np.asarray(self.running_var) < 0):
            raise ValueError("running_var must be non-negative")
        if not self.eps >= 0:
            raise ValueError("eps must be non-negative")

    @classmethod
    def identity(cls, channels: int, dtype=np.float64, eps: float = 1e-5) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            eps=eps,
        )

    @property
    def channels(self) -> int:
        return len(self.gamma)

    def scale(self) -> np.ndarray:
        return self.gamma / np.sqrt(self.running_var + self.eps)

    def freeze(self) -> "BatchNormParams":
        self.frozen = True
        return self

    def copy(self) -> "BatchNormParams":
        return BatchNormParams(
            self.gamma.copy(),
            self.beta.copy(),
            self.running_mean.copy(),
            self.running_var.copy(),
            self.eps,
            self.frozen,
        )


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-6

    @classmethod
    def identity(cls, channels: int, dtype=np.float64, eps: float = 1e-6) -> "LayerNormParams":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype), eps)

    @property
    def channels(self) -> int:
        return len(self.gamma)

    def copy(self) -> "LayerNormParams":
        return LayerNormParams(self.gamma.copy(), self.beta.copy(), self.eps)


# ---------------------------------------------------------------------------
# products


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Accepts leading batch axes on ``a`` (``b`` is then broadcast), which is
    how token-major activations of shape ``(batch, tokens, C)`` hit a weight.
    """
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim >= 2 else 0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul dtype mismatch: {a.dtype} x {b.dtype}")
    return np.matmul(a, b)


def matmul_reference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop product with a fixed summation order (k ascending).

    Slow; used as the oracle for :func:`matmul` and for tiny hand instances.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=np.result_type(a, b))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# activations


# float32 erf: rational fit on [-4, 4] (erf saturates to +-1 in f32 beyond),
# max abs error ~5e-7. scipy's erf is ~4x slower and only float64 needs it.
_ERF_P = np.array(
    [-2.72614225801306e-10, 2.77068142495902e-08, -2.10102402082508e-06, -5.69250639462346e-05,
     -7.34990630326855e-04, -2.95459980854025e-03, -1.60960333262415e-02],
    dtype=np.float32,
)
_ERF_Q = np.array(
    [-1.45660718464996e-05, -2.13374055278905e-04, -1.68282697438203e-03, -7.37332916720468e-03,
     -1.42647390514189e-02],
    dtype=np.float32,
)
_CHUNK = 1 << 16


def _erf32_inplace(x: np.ndarray) -> np.ndarray:
    np.clip(x, -4.0, 4.0, out=x)
    x2 = x * x
    p = np.full_like(x, _ERF_P[0])
    for a in _ERF_P[1:]:
        p *= x2
        p += a
    q = np.full_like(x, _ERF_Q[0])
    for b in _ERF_Q[1:]:
        q *= x2
        q += b
    np.multiply(p, x, out=x)
    x /= q
    return x


def _cdf32(x: np.ndarray) -> np.ndarray:
    # chunked so the polynomial passes stay in cache
    flat = np.ascontiguousarray(x).reshape(-1)
    out = np.empty_like(flat)
    for s in range(0, flat.size, _CHUNK):
        buf = flat[s : s + _CHUNK] * np.float32(1.0 / _SQRT2)
        _erf32_inplace(buf)
        buf += 1.0
        buf *= 0.5
        out[s : s + _CHUNK] = buf
    return out.reshape(x.shape)


def normal_cdf(x):
    x = np.asarray(x)
    if x.dtype == np.float32:
        return _cdf32(x)
    return 0.5 * (1.0 + erf(x / _SQRT2))


def normal_pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU, ``x * Phi(x)``."""
    x = np.asarray(x)
    return (x * normal_cdf(x)).astype(x.dtype, copy=False)


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of :func:`gelu`: ``Phi(x) + x * phi(x)``."""
    x = np.asarray(x)
    return (normal_cdf(x) + x * normal_pdf(x)).astype(x.dtype, copy=False)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x, axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= np.sum(z, axis=-1, keepdims=True)
    return z


# ---------------------------------------------------------------------------
# normalization


def _check_channels(x: np.ndarray, channels: int, what: str):
    if x.shape[-1] != channels:
        raise DimensionError(f"{what}: input has {x.shape[-1]} channels, parameters have {channels}")


def batchnorm_eval(x: np.ndarray, bn: BatchNormParams) -> np.ndarray:
    """Normalize with the stored running statistics only."""
    _check_channels(x, bn.channels, "batchnorm_eval")
    s = bn.scale()
    return x * s + (bn.beta - s * bn.running_mean)


def batchnorm_batch(x: np.ndarray, bn: BatchNormParams):
    """Normalize over rows with the batch statistics, without touching ``bn``.

    Returns ``(y, mean, var)`` where ``var`` is the biased batch variance.
    """
    _check_channels(x, bn.channels, "batchnorm")
    rows = x.reshape(-1, bn.channels)
    if rows.shape[0] < 2:
        raise DegenerateBatchError("batch statistics need at least two rows")
    mean = rows.mean(axis=0)
    var = rows.var(axis=0)
    y = (x - mean) / np.sqrt(var + bn.eps) * bn.gamma + bn.beta
    return y, mean, var


def batchnorm_train_step(x: np.ndarray, bn: BatchNormParams, momentum: float = 0.1) -> np.ndarray:
    """Batch-statistics normalization plus an EMA update of the running stats.

    Running variance uses the unbiased estimate. Zero-variance channels are
    handled by ``eps``.
    """
    if bn.frozen:
        raise StateError("cannot run a train step on a frozen BatchNorm")
    if not 0.0 < momentum <= 1.0:
        raise ValueError(f"momentum must be in (0, 1], got {momentum}")
    y, mean, var = batchnorm_batch(x, bn)
    m = x.size // bn.channels
    unbiased = var * (m / (m - 1))
    bn.running_mean = ((1.0 - momentum) * bn.running_mean + momentum * mean).astype(bn.running_mean.dtype)
    bn.running_var = ((1.0 - momentum) * bn.running_var + momentum * unbiased).astype(bn.running_var.dtype)
    return y


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    if len(gamma) != x.shape[-1] or len(beta) != x.shape[-1]:
        raise DimensionError(
            f"layernorm: input has {x.shape[-1]} channels, gamma/beta have {len(gamma)}/{len(beta)}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(np.square(xc), axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gamma + beta


def layernorm_p(x: np.ndarray, ln: LayerNormParams) -> np.ndarray:
    return layernorm(x, ln.gamma, ln.beta, ln.eps)


def normalize(x: np.ndarray, norm) -> np.ndarray:
    """Eval-mode application of either norm type."""
    if isinstance(norm, BatchNormParams):
        return batchnorm_eval(x, norm)
    return layernorm_p(x, norm)


# ---------------------------------------------------------------------------
# structural helpers


def slice_cols(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    n = x.shape[-1]
    if not 0 <= lo <= hi <= n:
        raise BoundsError(f"column slice [{lo}, {hi}) out of range for {n} columns")
    return x[..., lo:hi]


def concat_cols(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_cols: leading shapes differ, {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-1)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ, {a.shape} vs {b.shape}")
    return a + b


def add_bias(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.ndim(b) != 1 or len(b) != x.shape[-1]:
        raise DimensionError(f"add_bias: bias shape {np.shape(b)} does not match {x.shape[-1]} columns")
    return x + b


def mean_over_rows(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=-2)


def rel_frobenius(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b||_F / ||b||_F`` computed in float64; 0 when both are zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = np.linalg.norm(b)
    num = np.linalg.norm(a - b)
    if den == 0.0:
        return float(num)
    return float(num / den)
