"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (loops, direct definitions) and stays
independent of the library code paths it checks.
"""

from __future__ import annotations

import numpy as np


def naive_conv1d(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Triple-loop cross-correlation; x (B, C, T), w (O, C, K)."""
    b, c, t = x.shape
    o, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    t_out = (xp.shape[2] - k) // stride + 1
    out = np.zeros((b, o, t_out), dtype=np.float64)
    for bi in range(b):
        for oi in range(o):
            for ti in range(t_out):
                acc = 0.0
                for ci in range(c):
                    for ki in range(k):
                        acc += xp[bi, ci, ti * stride + ki] * w[oi, ci, ki]
                out[bi, oi, ti] = acc
    return out


def naive_full_convolution(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """O(N*K) linear convolution."""
    n, k = len(x), len(h)
    out = np.zeros(n + k - 1, dtype=np.float64)
    for i in range(n):
        out[i : i + k] += x[i] * h
    return out


def naive_dft_power(frame: np.ndarray, nfft: int) -> np.ndarray:
    """|DFT|^2 on the positive bins, direct O(N^2) summation."""
    x = np.zeros(nfft, dtype=np.float64)
    x[: min(len(frame), nfft)] = frame[:nfft]
    bins = nfft // 2 + 1
    out = np.zeros(bins)
    for k in range(bins):
        re = 0.0
        im = 0.0
        for n in range(nfft):
            angle = -2.0 * np.pi * k * n / nfft
            re += x[n] * np.cos(angle)
            im += x[n] * np.sin(angle)
        out[k] = re * re + im * im
    return out


def naive_dct2_orthonormal(values: np.ndarray) -> np.ndarray:
    """Definition-level orthonormal DCT-II of one vector."""
    n = len(values)
    out = np.zeros(n)
    for k in range(n):
        acc = 0.0
        for m in range(n):
            acc += values[m] * np.cos(np.pi * (2 * m + 1) * k / (2 * n))
        scale = np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
        out[k] = scale * acc
    return out


def naive_deltas(values: np.ndarray) -> np.ndarray:
    """Regression delta with +/-2 reach and edge replication."""
    n, d = values.shape
    out = np.zeros_like(values)
    for t in range(n):
        num = np.zeros(d)
        for k in (1, 2):
            hi = values[min(t + k, n - 1)]
            lo = values[max(t - k, 0)]
            num += k * (hi - lo)
        out[t] = num / 10.0
    return out


def schroeder_t60(taps: np.ndarray, sample_rate: int, lo_db=-5.0, hi_db=-25.0) -> float:
    """Backward-integrated energy decay, line fit between lo_db and hi_db."""
    energy = np.asarray(taps, dtype=np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    db = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-30))
    idx = np.where((db <= lo_db) & (db >= hi_db))[0]
    if len(idx) < 8:
        raise ValueError("decay range too short for a fit")
    slope = np.polyfit(idx / sample_rate, db[idx], 1)[0]
    return -60.0 / slope


def measured_snr_db(mix: np.ndarray, clean: np.ndarray) -> float:
    """SNR of (clean, mix - clean) by direct power summation."""
    noise = mix.astype(np.float64) - clean.astype(np.float64)
    return 10.0 * np.log10(np.sum(clean.astype(np.float64) ** 2) / np.sum(noise**2))


def sequential_qrnn(x, w_z, b_z, w_f, b_f, w_o, b_o, kernel):
    """Step-by-step QRNN reference: per-step gate dot products + recurrence."""

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    b, c, t = x.shape
    h_dim = w_z.shape[0]
    xp = np.concatenate([np.zeros((b, c, kernel - 1), dtype=x.dtype), x], axis=2)
    out = np.zeros((b, h_dim, t), dtype=x.dtype)
    for bi in range(b):
        c_state = np.zeros(h_dim, dtype=x.dtype)
        for ti in range(t):
            window = xp[bi, :, ti : ti + kernel]  # (C, K)
            z = np.tanh(np.tensordot(w_z, window, axes=([1, 2], [0, 1])) + b_z)
            f = sigmoid(np.tensordot(w_f, window, axes=([1, 2], [0, 1])) + b_f)
            o = sigmoid(np.tensordot(w_o, window, axes=([1, 2], [0, 1])) + b_o)
            c_state = f * c_state + (1.0 - f) * z
            out[bi, :, ti] = o * c_state
    return out


def gradcheck(build_loss, params, n_coords=12, h=1e-5, rng=None):
    """Max relative error between autodiff grads and central differences.

    `build_loss()` must rebuild the graph from `params` (list of Tensors with
    float64 data) and return the scalar loss tensor. Checks `n_coords`
    sampled coordinates per parameter.
    """
    rng = rng or np.random.default_rng(0)
    loss = build_loss()
    for p in params:
        p.grad = None
    loss.backward()
    grads = [p.grad.copy() for p in params]

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        count = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().data)
            flat[i] = orig - h
            down = float(build_loss().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            ad_g = g.reshape(-1)[i]
            denom = max(abs(fd), abs(ad_g), 1e-6)
            worst = max(worst, abs(fd - ad_g) / denom)
    return worst
