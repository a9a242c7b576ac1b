# Compiled implementations of the hot kernels. Same API as numpy_kernels;
# accumulations run in double precision regardless of array dtype, so results
# agree with the numpy backend to within a few ulps of float32.

import numpy as np

from libc.math cimport exp, sqrt, tanh

ctypedef fused floating:
    float
    double

NAME = "cython"

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


cdef void gelu_kernel(const floating[::1] x, floating[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, inner
    for i in range(n):
        v = <double> x[i]
        inner = GELU_C * (v + GELU_A * v * v * v)
        out[i] = <floating> (0.5 * v * (1.0 + tanh(inner)))


cdef void gelu_grad_kernel(const floating[::1] x, const floating[::1] gy,
                           floating[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, v2, inner, t, sech2, dinner
    for i in range(n):
        v = <double> x[i]
        v2 = v * v
        inner = GELU_C * (v + GELU_A * v * v2)
        t = tanh(inner)
        sech2 = 1.0 - t * t
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * v2)
        out[i] = <floating> (<double> gy[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * dinner))


cdef void softmax_kernel(const floating[:, ::1] x, floating[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double mx, total, e
    for i in range(rows):
        mx = <double> x[i, 0]
        for j in range(1, cols):
            if <double> x[i, j] > mx:
                mx = <double> x[i, j]
        total = 0.0
        for j in range(cols):
            e = exp(<double> x[i, j] - mx)
            out[i, j] = <floating> e
            total += e
        for j in range(cols):
            out[i, j] = <floating> (<double> out[i, j] / total)


cdef void softmax_grad_kernel(const floating[:, ::1] y, const floating[:, ::1] gy,
                              floating[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, rows = y.shape[0], cols = y.shape[1]
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += <double> gy[i, j] * <double> y[i, j]
        for j in range(cols):
            out[i, j] = <floating> (<double> y[i, j] * (<double> gy[i, j] - dot))


cdef void layernorm_kernel(const floating[:, ::1] x, const floating[::1] gamma,
                           const floating[::1] beta, double eps,
                           floating[:, ::1] out, floating[::1] mean_out,
                           floating[::1] rstd_out) noexcept nogil:
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double mean, var, rstd, d
    for i in range(rows):
        mean = 0.0
        for j in range(cols):
            mean += <double> x[i, j]
        mean /= cols
        var = 0.0
        for j in range(cols):
            d = <double> x[i, j] - mean
            var += d * d
        var /= cols
        rstd = 1.0 / sqrt(var + eps)
        mean_out[i] = <floating> mean
        rstd_out[i] = <floating> rstd
        for j in range(cols):
            out[i, j] = <floating> (((<double> x[i, j] - mean) * rstd)
                                    * <double> gamma[j] + <double> beta[j])


cdef void layernorm_grad_kernel(const floating[:, ::1] x, const floating[::1] gamma,
                                const floating[::1] mean, const floating[::1] rstd,
                                const floating[:, ::1] gy, floating[:, ::1] gx,
                                double[::1] dgamma, double[::1] dbeta) noexcept nogil:
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double m, r, xhat, g, gsum, gxhat_sum
    for i in range(rows):
        m = <double> mean[i]
        r = <double> rstd[i]
        gsum = 0.0
        gxhat_sum = 0.0
        for j in range(cols):
            xhat = (<double> x[i, j] - m) * r
            g = <double> gy[i, j] * <double> gamma[j]
            gsum += g
            gxhat_sum += g * xhat
            dgamma[j] += <double> gy[i, j] * xhat
            dbeta[j] += <double> gy[i, j]
        for j in range(cols):
            xhat = (<double> x[i, j] - m) * r
            g = <double> gy[i, j] * <double> gamma[j]
            gx[i, j] = <floating> ((g - gsum / cols - xhat * gxhat_sum / cols) * r)


cdef void adam_kernel(floating[::1] p, const floating[::1] g, floating[::1] m,
                      floating[::1] v, double lr, double beta1, double beta2,
                      double eps, double bc1, double bc2) noexcept nogil:
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, mi, vi
    for i in range(n):
        gi = <double> g[i]
        mi = beta1 * <double> m[i] + (1.0 - beta1) * gi
        vi = beta2 * <double> v[i] + (1.0 - beta2) * gi * gi
        m[i] = <floating> mi
        v[i] = <floating> vi
        p[i] = <floating> (<double> p[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps))


cdef void zscore_kernel(const floating[::1] x, floating[::1] out,
                        double mean, double sd) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = <floating> ((<double> x[i] - mean) / sd)


cdef void moments_kernel(const floating[::1] x, double* mean, double* sd) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double total = 0.0, sq = 0.0, d
    for i in range(n):
        total += <double> x[i]
    mean[0] = total / n
    for i in range(n):
        d = <double> x[i] - mean[0]
        sq += d * d
    sd[0] = sqrt(sq / n)


def _gelu(floating[::1] x, floating[::1] out):
    with nogil:
        gelu_kernel(x, out)


def _gelu_grad(floating[::1] x, floating[::1] gy, floating[::1] out):
    with nogil:
        gelu_grad_kernel(x, gy, out)


def _softmax(floating[:, ::1] x, floating[:, ::1] out):
    with nogil:
        softmax_kernel(x, out)


def _softmax_grad(floating[:, ::1] y, floating[:, ::1] gy, floating[:, ::1] out):
    with nogil:
        softmax_grad_kernel(y, gy, out)


def _layernorm(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta,
               double eps, floating[:, ::1] out, floating[::1] mean_out,
               floating[::1] rstd_out):
    with nogil:
        layernorm_kernel(x, gamma, beta, eps, out, mean_out, rstd_out)


def _layernorm_grad(floating[:, ::1] x, floating[::1] gamma, floating[::1] mean,
                    floating[::1] rstd, floating[:, ::1] gy, floating[:, ::1] gx,
                    double[::1] dgamma, double[::1] dbeta):
    with nogil:
        layernorm_grad_kernel(x, gamma, mean, rstd, gy, gx, dgamma, dbeta)


def _adam(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
          double lr, double beta1, double beta2, double eps, double bc1, double bc2):
    with nogil:
        adam_kernel(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2)


def _moments(floating[::1] x):
    cdef double mean = 0.0, sd = 0.0
    with nogil:
        moments_kernel(x, &mean, &sd)
    return mean, sd


def _zscore(floating[::1] x, floating[::1] out, double mean, double sd):
    with nogil:
        zscore_kernel(x, out, mean, sd)


def _check_dtype(arr):
    if arr.dtype not in (np.float32, np.float64):
        raise TypeError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
    return arr


def gelu(x):
    x = _check_dtype(np.ascontiguousarray(x))
    out = np.empty_like(x)
    _gelu(x.reshape(-1), out.reshape(-1))
    return out


def gelu_grad(x, gy):
    x = _check_dtype(np.ascontiguousarray(x))
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    out = np.empty_like(x)
    _gelu_grad(x.reshape(-1), gy.reshape(-1), out.reshape(-1))
    return out


def softmax_lastdim(x):
    x = _check_dtype(np.ascontiguousarray(x))
    n = x.shape[-1]
    out = np.empty_like(x)
    _softmax(x.reshape(-1, n), out.reshape(-1, n))
    return out


def softmax_grad_lastdim(y, gy):
    y = _check_dtype(np.ascontiguousarray(y))
    gy = np.ascontiguousarray(gy, dtype=y.dtype)
    n = y.shape[-1]
    out = np.empty_like(y)
    _softmax_grad(y.reshape(-1, n), gy.reshape(-1, n), out.reshape(-1, n))
    return out


def layernorm(x, gamma, beta, eps):
    x = _check_dtype(np.ascontiguousarray(x))
    gamma = np.ascontiguousarray(gamma, dtype=x.dtype)
    beta = np.ascontiguousarray(beta, dtype=x.dtype)
    n = x.shape[-1]
    rows = x.size // n
    out = np.empty_like(x)
    mean = np.empty(rows, dtype=x.dtype)
    rstd = np.empty(rows, dtype=x.dtype)
    _layernorm(x.reshape(-1, n), gamma, beta, float(eps),
               out.reshape(-1, n), mean, rstd)
    stat_shape = x.shape[:-1] + (1,)
    return out, mean.reshape(stat_shape), rstd.reshape(stat_shape)


def layernorm_grad(x, gamma, mean, rstd, gy):
    x = _check_dtype(np.ascontiguousarray(x))
    gamma = np.ascontiguousarray(gamma, dtype=x.dtype)
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    n = x.shape[-1]
    rows = x.size // n
    gx = np.empty_like(x)
    dgamma = np.zeros(n, dtype=np.float64)
    dbeta = np.zeros(n, dtype=np.float64)
    _layernorm_grad(x.reshape(-1, n), gamma,
                    np.ascontiguousarray(mean, dtype=x.dtype).reshape(rows),
                    np.ascontiguousarray(rstd, dtype=x.dtype).reshape(rows),
                    gy.reshape(-1, n), gx.reshape(-1, n), dgamma, dbeta)
    return gx, dgamma.astype(x.dtype), dbeta.astype(x.dtype)


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    param = _check_dtype(param)
    grad = np.ascontiguousarray(grad, dtype=param.dtype)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    _adam(param.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
          float(lr), float(beta1), float(beta2), float(eps), bc1, bc2)


def zscore(x):
    x = _check_dtype(np.ascontiguousarray(x))
    flat = x.reshape(-1)
    mean, sd = _moments(flat)
    if sd == 0.0:
        return np.zeros_like(x), mean, sd
    out = np.empty_like(x)
    _zscore(flat, out.reshape(-1), mean, sd)
    return out, mean, sd
