"""Clean-signal feature extraction on a fixed 10 ms frame grid.

Every extractor lands on the same grid: floor(samples / hop) frames, frame t
starting at t*hop, tail zero-padded. That keeps worker targets frame-aligned
with the encoder output regardless of window length. All math runs in
float64; callers cast to float32 at the training boundary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import Waveform
from .errors import (
    EvenWindow,
    IncompatibleVersion,
    IoFailure,
    MalformedContainer,
    TooFewFrames,
    TooShort,
)

HOP_SECONDS = 0.010
SHORT_WINDOW_SECONDS = 0.025
LONG_WINDOW_SECONDS = 0.200
FFT_SIZE = 512
LOG_FLOOR = 1e-10
PREEMPHASIS = 0.97
N_FILTERS = 40
N_MFCC = 13
GAMMATONE_FMIN = 100.0

SHORT_KINDS = ("lps", "mfcc", "fbank", "gammatone")
LONG_KINDS = ("lps_long", "mfcc_long", "fbank_long", "gammatone_long")
FEATURE_KINDS = SHORT_KINDS + ("prosody",) + LONG_KINDS


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (frames, dims)
    hop: float
    window: float
    kind: str

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


def pre_emphasize(samples: np.ndarray, coeff: float = PREEMPHASIS) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = x[1:] - coeff * x[:-1]
    return out


def _frame_raw(samples: np.ndarray, win: int, hop: int, n_frames: int | None = None) -> np.ndarray:
    """Frames without a taper; frame t covers [t*hop, t*hop + win), tail padded."""
    x = np.asarray(samples, dtype=np.float64)
    if n_frames is None:
        n_frames = len(x) // hop
    need = (n_frames - 1) * hop + win
    if need > len(x):
        x = np.concatenate([x, np.zeros(need - len(x))])
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def frame_signal(wave: Waveform, window_s: float, hop_s: float) -> np.ndarray:
    """Hamming-windowed frames of shape (n_frames, window); see module grid rules."""
    win = int(round(window_s * wave.sample_rate))
    hop = int(round(hop_s * wave.sample_rate))
    if win < hop:
        raise ValueError(f"window {window_s} shorter than hop {hop_s}")
    if len(wave) < win:
        raise TooShort(f"signal of {len(wave)} samples shorter than window {win}")
    return _frame_raw(wave.samples, win, hop) * np.hamming(win)


def power_spectrum(frames: np.ndarray, nfft: int = FFT_SIZE) -> np.ndarray:
    """|FFT|^2 over the positive bins, one row per frame."""
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    return (spec.real**2 + spec.imag**2).astype(np.float64)


def log_power_spectrum(frames: np.ndarray) -> FeatureMatrix:
    lps = np.log(np.maximum(power_spectrum(frames), LOG_FLOOR))
    return FeatureMatrix(lps, HOP_SECONDS, SHORT_WINDOW_SECONDS, "lps")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(
    n_filters: int = N_FILTERS,
    nfft: int = FFT_SIZE,
    sample_rate: int = 16000,
    fmin: float = 0.0,
    fmax: float = 8000.0,
):
    """Triangular mel filters evaluated on the rfft bin grid.

    Returns (weights, centers_hz); weights is (n_filters, nfft // 2 + 1) with
    unit peak per triangle.
    """
    pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    weights = np.zeros((n_filters, len(freqs)))
    for j in range(n_filters):
        lo, center, hi = pts[j], pts[j + 1], pts[j + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        weights[j] = np.clip(np.minimum(up, down), 0.0, None)
    return weights, pts[1:-1].copy()


def mel_fbank(frames: np.ndarray, n_filters: int = N_FILTERS) -> FeatureMatrix:
    weights, _ = mel_filterbank(n_filters)
    energies = power_spectrum(frames) @ weights.T
    vals = np.log(np.maximum(energies, LOG_FLOOR))
    return FeatureMatrix(vals, HOP_SECONDS, SHORT_WINDOW_SECONDS, "fbank")


@lru_cache(maxsize=4)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are coefficients."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * m + 1) * k / (2 * n))
    d[0] *= np.sqrt(0.5)
    return d


def mfcc(frames: np.ndarray, n_coeffs: int = N_MFCC) -> FeatureMatrix:
    logmel = mel_fbank(frames).values
    vals = logmel @ dct_matrix(logmel.shape[1])[:n_coeffs].T
    return FeatureMatrix(vals, HOP_SECONDS, SHORT_WINDOW_SECONDS, "mfcc")


def erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_to_hz(r):
    return (10.0 ** (np.asarray(r, dtype=np.float64) / 21.4) - 1.0) / 0.00437


@lru_cache(maxsize=8)
def gammatone_filterbank(
    n_filters: int = N_FILTERS,
    nfft: int = FFT_SIZE,
    sample_rate: int = 16000,
    fmin: float = GAMMATONE_FMIN,
    fmax: float = 8000.0,
):
    """4th-order gammatone magnitude responses sampled on the rfft grid.

    Filters are realized as FIR taps (impulse response truncated at nfft
    samples), then peak-normalized in the frequency domain. Returns
    (weights, centers_hz, taps) so tests can probe the realized responses.
    """
    centers = erb_rate_to_hz(np.linspace(erb_rate(fmin), erb_rate(fmax), n_filters))
    t = np.arange(nfft) / sample_rate
    taps = np.zeros((n_filters, nfft))
    for j, fc in enumerate(centers):
        bw = 1.019 * 24.7 * (0.00437 * fc + 1.0)
        taps[j] = t**3 * np.exp(-2.0 * np.pi * bw * t) * np.cos(2.0 * np.pi * fc * t)
    spec = np.abs(np.fft.rfft(taps, n=nfft, axis=1)) ** 2
    spec /= spec.max(axis=1, keepdims=True)
    return spec, centers, taps


def gammatone(frames: np.ndarray, n_filters: int = N_FILTERS) -> FeatureMatrix:
    weights, _, _ = gammatone_filterbank(n_filters)
    energies = power_spectrum(frames) @ weights.T
    vals = np.log(np.maximum(energies, LOG_FLOOR))
    return FeatureMatrix(vals, HOP_SECONDS, SHORT_WINDOW_SECONDS, "gammatone")


# --- prosody -----------------------------------------------------------------

F0_MIN = 50.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.5
SILENCE_POWER = 1e-8


def prosody(wave: Waveform) -> FeatureMatrix:
    """4 dims per frame: interpolated log-F0, voicing, log-energy, ZCR."""
    sr = wave.sample_rate
    win = int(round(SHORT_WINDOW_SECONDS * sr))
    hop = int(round(HOP_SECONDS * sr))
    if len(wave) < win:
        raise TooShort("prosody needs at least one analysis window")
    frames = _frame_raw(wave.samples, win, hop)
    n = frames.shape[0]

    power = (frames**2).sum(axis=1)
    log_energy = np.log(np.maximum(power, LOG_FLOOR))
    signs = frames >= 0.0
    zcr = (signs[:, 1:] != signs[:, :-1]).mean(axis=1)

    lag_lo = int(np.floor(sr / F0_MAX))
    lag_hi = int(np.ceil(sr / F0_MIN))
    lag_hi = min(lag_hi, win - 1)
    nfft = 1
    while nfft < 2 * win:
        nfft *= 2
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    autoc = np.fft.irfft(spec.real**2 + spec.imag**2, n=nfft, axis=1)[:, : lag_hi + 1]
    # normalized autocorrelation: r(tau) / sqrt(E[0:N-tau] * E[tau:N])
    csq = np.concatenate([np.zeros((n, 1)), np.cumsum(frames**2, axis=1)], axis=1)
    taus = np.arange(lag_hi + 1)
    e_head = csq[:, win - taus] - csq[:, 0:1]
    e_tail = csq[:, win : win + 1] - csq[:, taus]
    denom = np.sqrt(np.maximum(e_head * e_tail, 1e-30))
    rho = autoc / denom

    band = rho[:, lag_lo : lag_hi + 1]
    peak = band.max(axis=1)
    # earliest local maximum within tolerance of the global peak, else the
    # octave below the true pitch wins the argmax by float jitter (classic
    # pitch halving on strongly periodic signals)
    inner = band[:, 1:-1]
    is_local_peak = (inner >= band[:, :-2]) & (inner >= band[:, 2:])
    candidate = is_local_peak & (inner >= (peak - 0.02)[:, None])
    has_candidate = candidate.any(axis=1)
    first_local = np.argmax(candidate, axis=1) + 1
    fallback = np.argmax(band, axis=1)
    best = np.where(has_candidate, first_local, fallback) + lag_lo
    voicing = np.clip(rho[np.arange(n), best], 0.0, 1.0)
    voicing = np.where(power > SILENCE_POWER, voicing, 0.0)

    # parabolic lag refinement around the autocorrelation peak
    lag = best.astype(np.float64)
    interior = (best > lag_lo) & (best < lag_hi)
    if interior.any():
        i = np.where(interior)[0]
        y0 = rho[i, best[i] - 1]
        y1 = rho[i, best[i]]
        y2 = rho[i, best[i] + 1]
        denom2 = y0 - 2.0 * y1 + y2
        shift = np.zeros_like(denom2)
        np.divide(0.5 * (y0 - y2), denom2, out=shift, where=np.abs(denom2) > 1e-12)
        lag[i] = best[i] + np.clip(shift, -0.5, 0.5)

    f0 = sr / lag
    voiced = voicing >= VOICING_THRESHOLD
    if voiced.any():
        idx = np.arange(n, dtype=np.float64)
        log_f0 = np.interp(idx, idx[voiced], np.log(f0[voiced]))
    else:
        log_f0 = np.full(n, np.log(100.0))

    vals = np.stack([log_f0, voicing, log_energy, zcr], axis=1)
    return FeatureMatrix(vals, HOP_SECONDS, SHORT_WINDOW_SECONDS, "prosody")


# --- derivatives / context ---------------------------------------------------

DELTA_REACH = 2
_DELTA_DENOM = 2.0 * sum(k * k for k in range(1, DELTA_REACH + 1))


def _delta(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    pad = np.concatenate(
        [values[:1].repeat(DELTA_REACH, axis=0), values, values[-1:].repeat(DELTA_REACH, axis=0)]
    )
    out = np.zeros_like(values)
    for k in range(1, DELTA_REACH + 1):
        out += k * (pad[DELTA_REACH + k : DELTA_REACH + k + n] - pad[DELTA_REACH - k : DELTA_REACH - k + n])
    return out / _DELTA_DENOM


def add_deltas(feat: FeatureMatrix) -> FeatureMatrix:
    """Append first and second regression deltas along the dim axis."""
    if feat.n_frames < 2 * DELTA_REACH + 1:
        raise TooFewFrames(f"deltas need >= {2 * DELTA_REACH + 1} frames, got {feat.n_frames}")
    d1 = _delta(feat.values)
    d2 = _delta(d1)
    vals = np.concatenate([feat.values, d1, d2], axis=1)
    return FeatureMatrix(vals, feat.hop, feat.window, feat.kind)


def stack_context(feat: FeatureMatrix, w: int = 7) -> FeatureMatrix:
    """Concatenate frames t-w//2 .. t+w//2 per position, edges replicated."""
    if w % 2 == 0:
        raise EvenWindow(f"context window must be odd, got {w}")
    half = w // 2
    n = feat.n_frames
    cols = []
    for off in range(-half, half + 1):
        idx = np.clip(np.arange(n) + off, 0, n - 1)
        cols.append(feat.values[idx])
    return FeatureMatrix(np.concatenate(cols, axis=1), feat.hop, feat.window, feat.kind)


# --- long-window variants ------------------------------------------------------

# number of 25 ms sub-windows on the 10 ms grid covered by one 200 ms window
_LONG_SEGMENTS = int((LONG_WINDOW_SECONDS - SHORT_WINDOW_SECONDS) / HOP_SECONDS) + 1


def _long_power(wave: Waveform) -> np.ndarray:
    """200 ms power spectral estimate per 10 ms frame (averaged periodograms)."""
    sr = wave.sample_rate
    win = int(round(SHORT_WINDOW_SECONDS * sr))
    hop = int(round(HOP_SECONDS * sr))
    if len(wave) < win:
        raise TooShort("long-window features need at least one short window")
    n = len(wave) // hop
    frames = _frame_raw(pre_emphasize(wave.samples), win, hop, n_frames=n + _LONG_SEGMENTS - 1)
    frames *= np.hamming(win)
    p = power_spectrum(frames)
    csum = np.cumsum(p, axis=0)
    csum = np.concatenate([np.zeros((1, p.shape[1])), csum], axis=0)
    return (csum[_LONG_SEGMENTS:] - csum[:-_LONG_SEGMENTS])[:n] / _LONG_SEGMENTS


def long_window_features(wave: Waveform, kind: str) -> FeatureMatrix:
    """Spectral features over 200 ms analysis windows, same 10 ms grid.

    The long-window spectrum is the average of the 25 ms periodograms tiled
    across the window, so frame t lines up index-for-index with the short
    variants while describing a 200 ms neighbourhood.
    """
    base = kind[:-5] if kind.endswith("_long") else kind
    if base not in SHORT_KINDS:
        raise ValueError(f"no long-window variant for kind {kind!r}")
    p = _long_power(wave)
    if base == "lps":
        vals = np.log(np.maximum(p, LOG_FLOOR))
    elif base == "fbank":
        weights, _ = mel_filterbank()
        vals = np.log(np.maximum(p @ weights.T, LOG_FLOOR))
    elif base == "mfcc":
        weights, _ = mel_filterbank()
        logmel = np.log(np.maximum(p @ weights.T, LOG_FLOOR))
        vals = logmel @ dct_matrix(logmel.shape[1])[:N_MFCC].T
    else:  # gammatone
        weights, _, _ = gammatone_filterbank()
        vals = np.log(np.maximum(p @ weights.T, LOG_FLOOR))
    return FeatureMatrix(vals, HOP_SECONDS, LONG_WINDOW_SECONDS, base + "_long")


def extract_feature(wave: Waveform, kind: str) -> FeatureMatrix:
    """Uniform entry point over every feature kind on the canonical grid."""
    if kind in LONG_KINDS:
        return long_window_features(wave, kind)
    if kind == "prosody":
        return prosody(wave)
    if kind not in SHORT_KINDS:
        raise ValueError(f"unknown feature kind {kind!r}")
    frames = frame_signal(
        Waveform(pre_emphasize(wave.samples), wave.sample_rate),
        SHORT_WINDOW_SECONDS,
        HOP_SECONDS,
    )
    if kind == "lps":
        return log_power_spectrum(frames)
    if kind == "fbank":
        return mel_fbank(frames)
    if kind == "mfcc":
        return mfcc(frames)
    return gammatone(frames)


# --- PFEA binary tensor files ---------------------------------------------------

PFEA_MAGIC = b"PFEA"
PFEA_VERSION = 1


def write_pfea(path: str, values: np.ndarray, meta: dict) -> None:
    """Write a (frames, dims) float32 matrix plus a JSON sidecar."""
    if values.ndim != 2:
        raise ValueError("PFEA stores rank-2 matrices")
    arr = np.ascontiguousarray(values, dtype="<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(PFEA_MAGIC)
            fh.write(struct.pack("<III", PFEA_VERSION, arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes())
        with open(path + ".json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_pfea(path: str) -> tuple[np.ndarray, dict]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != PFEA_MAGIC:
        raise MalformedContainer(f"{path}: not a PFEA file")
    version, frames, dims = struct.unpack("<III", raw[4:16])
    if version != PFEA_VERSION:
        raise IncompatibleVersion(f"{path}: PFEA version {version}")
    need = 16 + 4 * frames * dims
    if len(raw) < need:
        raise MalformedContainer(f"{path}: truncated payload")
    values = np.frombuffer(raw[16:need], dtype="<f4").reshape(frames, dims).copy()
    try:
        with open(path + ".json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError:
        meta = {}
    return values, meta
