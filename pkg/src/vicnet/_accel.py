"""Hot inner loops, compiled with numba when available.

Each kernel has a pure-numpy twin with the same signature. The numba path is
used unless ``VICNET_DISABLE_NUMBA`` is set to a truthy value in the
environment (read once, at import time) or numba cannot be imported.
Both paths agree to floating-point round-off; within one path results are
bit-reproducible.
"""
import os

import numpy as np

_DISABLED = os.environ.get("VICNET_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by VICNET_DISABLE_NUMBA")
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def depthwise_forward_np(xpad, w, stride, n_out):
    """out[b, l, c] = sum_k xpad[b, l*stride + k, c] * w[c, k]."""
    n_ch, k_size = w.shape
    out = np.zeros((xpad.shape[0], n_out, n_ch), dtype=xpad.dtype)
    span = (n_out - 1) * stride + 1
    for k in range(k_size):
        out += xpad[:, k:k + span:stride, :] * w[:, k]
    return out


def depthwise_backward_np(xpad, w, dout, stride):
    n_ch, k_size = w.shape
    n_out = dout.shape[1]
    span = (n_out - 1) * stride + 1
    dxpad = np.zeros_like(xpad)
    dw = np.empty_like(w)
    for k in range(k_size):
        dw[:, k] = (dout * xpad[:, k:k + span:stride, :]).sum(axis=(0, 1))
        dxpad[:, k:k + span:stride, :] += dout * w[:, k]
    return dxpad, dw


def col2im_np(dcols, stride, n_pad):
    """Scatter-add (B, L_out, C, K) column gradients back onto (B, n_pad, C)."""
    b, n_out, n_ch, k_size = dcols.shape
    dxpad = np.zeros((b, n_pad, n_ch), dtype=dcols.dtype)
    span = (n_out - 1) * stride + 1
    for k in range(k_size):
        dxpad[:, k:k + span:stride, :] += dcols[:, :, :, k]
    return dxpad


def prelu_forward_np(x, alpha):
    neg = x < 0
    return np.where(neg, alpha * x, x)


def prelu_backward_np(x, alpha, dy):
    neg = x < 0
    da = (dy * x * neg).sum(axis=(0, 1))
    return np.where(neg, alpha * dy, dy), da


def batchnorm_train_np(x, gamma, beta, eps):
    """Normalize with batch statistics; returns (y, xhat, mean, var, inv_std)."""
    mean = x.mean(axis=(0, 1))
    var = x.var(axis=(0, 1))
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mean) * inv
    return gamma * xhat + beta, xhat, mean, var, inv


def batchnorm_backward_np(dy, xhat, gamma, inv):
    """Gradient through batch-statistics normalization; (dx, dgamma, dbeta)."""
    m = dy.shape[0] * dy.shape[1]
    dbeta = dy.sum(axis=(0, 1))
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dx = (gamma * inv / m) * (m * dy - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


def charge_steps_np(soc0, soc_end, stage_until, stage_current, capacity_ah, dt):
    """Forward-Euler SOC trajectory for a piecewise constant-current protocol.

    A step of ``dt`` seconds uses the current of the stage whose ``until``
    SOC is the first one above the SOC at the start of the step. The final
    step is shortened so the trajectory ends exactly at ``soc_end``.

    Returns (t, soc, current) sample arrays; ``current[i]`` is the current
    flowing at sample ``i`` (the current of the step ending there for i > 0).
    """
    ts = [np.zeros(1)]
    socs = [np.array([soc0])]
    cur = [np.array([stage_current[0]])]
    t_now = 0.0
    soc = soc0
    for until, amps in zip(stage_until, stage_current):
        stop = min(until, soc_end)
        if soc >= stop:
            continue
        dsoc = amps * dt / (3600.0 * capacity_ah)
        n = max(int(np.ceil((stop - soc) / dsoc - 1e-9)), 1)
        k = np.arange(1, n + 1, dtype=np.float64)
        seg_soc = soc + k * dsoc
        seg_t = t_now + k * dt
        if stop >= soc_end:
            prev = soc + (n - 1) * dsoc
            seg_t[-1] = t_now + (n - 1) * dt + (soc_end - prev) / dsoc * dt
            seg_soc[-1] = soc_end
        soc = seg_soc[-1]
        t_now = seg_t[-1]
        ts.append(seg_t)
        socs.append(seg_soc)
        cur.append(np.full(n, amps))
        if soc >= soc_end:
            break
    return np.concatenate(ts), np.concatenate(socs), np.concatenate(cur)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _depthwise_forward_nb(xpad, w, stride, n_out):
        b_size = xpad.shape[0]
        n_ch, k_size = w.shape
        out = np.zeros((b_size, n_out, n_ch), dtype=xpad.dtype)
        for b in range(b_size):
            for l in range(n_out):
                base = l * stride
                for k in range(k_size):
                    for c in range(n_ch):
                        out[b, l, c] += xpad[b, base + k, c] * w[c, k]
        return out

    @njit(cache=True)
    def _depthwise_backward_nb(xpad, w, dout, stride):
        b_size, n_out, n_ch = dout.shape
        k_size = w.shape[1]
        dxpad = np.zeros_like(xpad)
        dw = np.zeros_like(w)
        for b in range(b_size):
            for l in range(n_out):
                base = l * stride
                for k in range(k_size):
                    for c in range(n_ch):
                        g = dout[b, l, c]
                        dw[c, k] += g * xpad[b, base + k, c]
                        dxpad[b, base + k, c] += g * w[c, k]
        return dxpad, dw

    @njit(cache=True)
    def _col2im_nb(dcols, stride, n_pad):
        b_size, n_out, n_ch, k_size = dcols.shape
        dxpad = np.zeros((b_size, n_pad, n_ch), dtype=dcols.dtype)
        for b in range(b_size):
            for l in range(n_out):
                base = l * stride
                for c in range(n_ch):
                    for k in range(k_size):
                        dxpad[b, base + k, c] += dcols[b, l, c, k]
        return dxpad

    @njit(cache=True)
    def _charge_steps_nb(soc0, soc_end, stage_until, stage_current, capacity_ah, dt):
        n_stage = stage_until.shape[0]
        n_max = 1
        soc = soc0
        for s in range(n_stage):
            stop = min(stage_until[s], soc_end)
            if soc < stop:
                dsoc = stage_current[s] * dt / (3600.0 * capacity_ah)
                n_max += int(np.ceil((stop - soc) / dsoc)) + 1
                soc = stop
        t = np.empty(n_max)
        soc_out = np.empty(n_max)
        cur = np.empty(n_max)
        t[0] = 0.0
        soc_out[0] = soc0
        cur[0] = stage_current[0]
        i = 1
        soc = soc0
        t_now = 0.0
        for s in range(n_stage):
            stop = min(stage_until[s], soc_end)
            if soc >= stop:
                continue
            amps = stage_current[s]
            dsoc = amps * dt / (3600.0 * capacity_ah)
            n = max(int(np.ceil((stop - soc) / dsoc - 1e-9)), 1)
            for k in range(1, n + 1):
                t[i] = t_now + k * dt
                soc_out[i] = soc + k * dsoc
                cur[i] = amps
                i += 1
            if stop >= soc_end:
                prev = soc + (n - 1) * dsoc
                t[i - 1] = t_now + (n - 1) * dt + (soc_end - prev) / dsoc * dt
                soc_out[i - 1] = soc_end
            soc = soc_out[i - 1]
            t_now = t[i - 1]
            if soc >= soc_end:
                break
        return t[:i].copy(), soc_out[:i].copy(), cur[:i].copy()


    @njit(cache=True)
    def _prelu_forward_nb(x, alpha):
        b_size, n, c_size = x.shape
        y = np.empty_like(x)
        for b in range(b_size):
            for l in range(n):
                for c in range(c_size):
                    v = x[b, l, c]
                    y[b, l, c] = alpha[c] * v if v < 0 else v
        return y

    @njit(cache=True)
    def _prelu_backward_nb(x, alpha, dy):
        b_size, n, c_size = x.shape
        dx = np.empty_like(dy)
        da = np.zeros(c_size, dtype=np.float64)
        for b in range(b_size):
            for l in range(n):
                for c in range(c_size):
                    v = x[b, l, c]
                    g = dy[b, l, c]
                    if v < 0:
                        dx[b, l, c] = alpha[c] * g
                        da[c] += g * v
                    else:
                        dx[b, l, c] = g
        return dx, da.astype(alpha.dtype)

    @njit(cache=True)
    def _batchnorm_train_nb(x, gamma, beta, eps):
        b_size, n, c_size = x.shape
        m = b_size * n
        mean = np.zeros(c_size, dtype=np.float64)
        var = np.zeros(c_size, dtype=np.float64)
        for b in range(b_size):
            for l in range(n):
                for c in range(c_size):
                    mean[c] += x[b, l, c]
        for c in range(c_size):
            mean[c] /= m
        for b in range(b_size):
            for l in range(n):
                for c in range(c_size):
                    d = x[b, l, c] - mean[c]
                    var[c] += d * d
        inv = np.empty(c_size, dtype=x.dtype)
        for c in range(c_size):
            var[c] /= m
            inv[c] = 1.0 / np.sqrt(var[c] + eps)
        xhat = np.empty_like(x)
        y = np.empty_like(x)
        for b in range(b_size):
            for l in range(n):
                for c in range(c_size):
                    h = (x[b, l, c] - mean[c]) * inv[c]
                    xhat[b, l, c] = h
                    y[b, l, c] = gamma[c] * h + beta[c]
        return y, xhat, mean.astype(x.dtype), var.astype(x.dtype), inv

    @njit(cache=True)
    def _batchnorm_backward_nb(dy, xhat, gamma, inv):
        b_size, n, c_size = dy.shape
        m = b_size * n
        dbeta = np.zeros(c_size, dtype=np.float64)
        dgamma = np.zeros(c_size, dtype=np.float64)
        for b in range(b_size):
            for l in range(n):
                for c in range(c_size):
                    g = dy[b, l, c]
                    dbeta[c] += g
                    dgamma[c] += g * xhat[b, l, c]
        dx = np.empty_like(dy)
        for b in range(b_size):
            for l in range(n):
                for c in range(c_size):
                    dx[b, l, c] = (gamma[c] * inv[c] / m) * (m * dy[b, l, c] - dbeta[c] - xhat[b, l, c] * dgamma[c])
        return dx, dgamma.astype(dy.dtype), dbeta.astype(dy.dtype)

    def prelu_forward(x, alpha):
        return _prelu_forward_nb(np.ascontiguousarray(x), alpha)

    def prelu_backward(x, alpha, dy):
        return _prelu_backward_nb(np.ascontiguousarray(x), alpha, np.ascontiguousarray(dy))

    def batchnorm_train(x, gamma, beta, eps):
        return _batchnorm_train_nb(np.ascontiguousarray(x), gamma, beta, eps)

    def batchnorm_backward(dy, xhat, gamma, inv):
        return _batchnorm_backward_nb(np.ascontiguousarray(dy), xhat, gamma, inv)

    def depthwise_forward(xpad, w, stride, n_out):
        return _depthwise_forward_nb(np.ascontiguousarray(xpad), np.ascontiguousarray(w), stride, n_out)

    def depthwise_backward(xpad, w, dout, stride):
        return _depthwise_backward_nb(np.ascontiguousarray(xpad), np.ascontiguousarray(w),
                                      np.ascontiguousarray(dout), stride)

    def col2im(dcols, stride, n_pad):
        return _col2im_nb(np.ascontiguousarray(dcols), stride, n_pad)

    def charge_steps(soc0, soc_end, stage_until, stage_current, capacity_ah, dt):
        return _charge_steps_nb(float(soc0), float(soc_end),
                                np.asarray(stage_until, dtype=np.float64),
                                np.asarray(stage_current, dtype=np.float64),
                                float(capacity_ah), float(dt))

else:
    depthwise_forward = depthwise_forward_np
    depthwise_backward = depthwise_backward_np
    col2im = col2im_np
    prelu_forward = prelu_forward_np
    prelu_backward = prelu_backward_np
    batchnorm_train = batchnorm_train_np
    batchnorm_backward = batchnorm_backward_np

    def charge_steps(soc0, soc_end, stage_until, stage_current, capacity_ah, dt):
        return charge_steps_np(float(soc0), float(soc_end),
                               np.asarray(stage_until, dtype=np.float64),
                               np.asarray(stage_current, dtype=np.float64),
                               float(capacity_ah), float(dt))
