"""Pure-numpy implementations of the hot kernels.

This is the fallback backend; `subscore_mtl.backend._ckernels` provides the
same functions compiled with Cython. Both use the tanh-form GELU and compute
reduction statistics in float64 regardless of the array dtype, so the two
backends agree to within a few ulps of float32.
"""

import numpy as np

NAME = "numpy"

# sqrt(2/pi), coefficient of the tanh-form GELU
_GELU_C = 0.7978845608028654
_GELU_A = 0.044715


def gelu(x):
    x = np.asarray(x)
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad(x, gy):
    x = np.asarray(x)
    x2 = x * x
    inner = _GELU_C * (x + _GELU_A * x * x2)
    t = np.tanh(inner)
    sech2 = 1.0 - t * t
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * sech2 * dinner)


def softmax_lastdim(x):
    x = np.asarray(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad_lastdim(y, gy):
    # dL/dx = y * (gy - sum(gy * y))
    dot = np.sum(gy * y, axis=-1, keepdims=True)
    return y * (gy - dot)


def layernorm(x, gamma, beta, eps):
    """Normalize over the last axis; returns (y, mean, rstd) with float64 stats."""
    x = np.asarray(x)
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = np.square(x - mean).mean(axis=-1, keepdims=True, dtype=np.float64)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * rstd
    y = (xhat * gamma + beta).astype(x.dtype, copy=False)
    return y, mean.astype(x.dtype), rstd.astype(x.dtype)


def layernorm_grad(x, gamma, mean, rstd, gy):
    """Backward of layernorm; returns (gx, dgamma, dbeta)."""
    x = np.asarray(x)
    n = x.shape[-1]
    xhat = (x - mean) * rstd
    g = gy * gamma
    dbeta = gy.reshape(-1, n).sum(axis=0)
    dgamma = (gy * xhat).reshape(-1, n).sum(axis=0)
    gsum = g.sum(axis=-1, keepdims=True)
    gxhat_sum = (g * xhat).sum(axis=-1, keepdims=True)
    gx = (g - gsum / n - xhat * gxhat_sum / n) * rstd
    return gx.astype(x.dtype, copy=False), dgamma, dbeta


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, in place on param, m and v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    mhat = m / bc1
    vhat = v / bc2
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def zscore(x):
    """Center/scale to mean 0, population sd 1; returns (y, mean, sd)."""
    x = np.asarray(x)
    mean = float(x.mean(dtype=np.float64))
    sd = float(np.sqrt(np.square(x - mean).mean(dtype=np.float64)))
    if sd == 0.0:
        return np.zeros_like(x), mean, sd
    y = ((x - mean) / sd).astype(x.dtype, copy=False)
    return y, mean, sd
