"""Waveform encoder: learnable sinc band-pass front end, seven conv blocks
with batch norm + PReLU, projected skip connections summed into the output,
and a single causal QRNN layer, producing 256-dim embeddings every 10 ms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ShapeMismatch, TooShort

EMBEDDING_DIM = 256


@dataclass
class EncoderConfig:
    sample_rate: int = 16000
    sinc_filters: int = 64
    sinc_kernel: int = 251
    sinc_stride: int = 1
    block_channels: tuple = (64, 128, 128, 256, 256, 256, 256)
    block_kernels: tuple = (21, 11, 11, 11, 11, 11, 11)
    block_strides: tuple = (10, 2, 2, 2, 2, 1, 1)
    qrnn_hidden: int = 256
    qrnn_kernel: int = 2
    embedding_dim: int = EMBEDDING_DIM
    sinc_min_low_hz: float = 30.0
    sinc_min_band_hz: float = 50.0

    @property
    def hop_samples(self) -> int:
        hop = self.sinc_stride
        for s in self.block_strides:
            hop *= s
        return hop

    def validate(self) -> None:
        if not (len(self.block_channels) == len(self.block_kernels) == len(self.block_strides)):
            raise ValueError("block spec lists must have equal length")
        want = self.sample_rate // 100  # one frame per 10 ms
        if self.hop_samples != want:
            raise ValueError(f"stride product {self.hop_samples} != hop {want}")

    def to_meta(self) -> dict:
        return {
            "sample_rate": str(self.sample_rate),
            "sinc_filters": str(self.sinc_filters),
            "sinc_kernel": str(self.sinc_kernel),
            "sinc_stride": str(self.sinc_stride),
            "block_channels": ",".join(map(str, self.block_channels)),
            "block_kernels": ",".join(map(str, self.block_kernels)),
            "block_strides": ",".join(map(str, self.block_strides)),
            "qrnn_hidden": str(self.qrnn_hidden),
            "qrnn_kernel": str(self.qrnn_kernel),
            "embedding_dim": str(self.embedding_dim),
            "sinc_min_low_hz": str(self.sinc_min_low_hz),
            "sinc_min_band_hz": str(self.sinc_min_band_hz),
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "EncoderConfig":
        def ints(key):
            return tuple(int(v) for v in meta[key].split(","))

        return cls(
            sample_rate=int(meta["sample_rate"]),
            sinc_filters=int(meta["sinc_filters"]),
            sinc_kernel=int(meta["sinc_kernel"]),
            sinc_stride=int(meta["sinc_stride"]),
            block_channels=ints("block_channels"),
            block_kernels=ints("block_kernels"),
            block_strides=ints("block_strides"),
            qrnn_hidden=int(meta["qrnn_hidden"]),
            qrnn_kernel=int(meta["qrnn_kernel"]),
            embedding_dim=int(meta["embedding_dim"]),
            sinc_min_low_hz=float(meta["sinc_min_low_hz"]),
            sinc_min_band_hz=float(meta["sinc_min_band_hz"]),
        )


def sinc_bandpass_kernels(
    p_low: Tensor,
    p_band: Tensor,
    kernel_size: int,
    sample_rate: int,
    min_low_hz: float,
    min_band_hz: float,
) -> Tensor:
    """Realize band-pass FIR kernels from unconstrained cutoff parameters.

    f1 = min_low + |p_low| and f2 = f1 + min_band + |p_band|, both capped
    below Nyquist, so 0 < f1 < f2 < fs/2 for any parameter values. The kernel
    is the difference of two windowed sinc low-passes; the gradient w.r.t.
    the cutoffs is analytic (d/df of f*sinc(2fm/fs) is cos(2*pi*f*m/fs)).
    """
    fs = float(sample_rate)
    nyquist = fs / 2.0
    cap_hi = nyquist - 1.0
    cap_lo = cap_hi - min_band_hz

    # constraint map in float64 so the minimum bandwidth holds exactly
    f1_raw = min_low_hz + np.abs(p_low.data.astype(np.float64))
    f1 = np.minimum(f1_raw, cap_lo)
    f2_raw = f1 + min_band_hz + np.abs(p_band.data.astype(np.float64))
    f2 = np.minimum(f2_raw, cap_hi)

    m = (np.arange(kernel_size) - (kernel_size - 1) / 2.0)[None, :]  # (1, K)
    window = np.hamming(kernel_size)[None, :]
    f1c = f1[:, None]
    f2c = f2[:, None]
    kernels = (
        (2.0 * f2c / fs) * np.sinc(2.0 * f2c * m / fs)
        - (2.0 * f1c / fs) * np.sinc(2.0 * f1c * m / fs)
    ) * window
    out = kernels[:, None, :].astype(p_low.data.dtype)  # (O, 1, K)

    def vjp(g):
        gk = g[:, 0, :]
        d_f2 = (gk * (2.0 / fs) * np.cos(2.0 * np.pi * f2c * m / fs) * window).sum(axis=1)
        d_f1 = (gk * -(2.0 / fs) * np.cos(2.0 * np.pi * f1c * m / fs) * window).sum(axis=1)
        f2_free = (f2_raw < cap_hi).astype(g.dtype)
        f1_free = (f1_raw < cap_lo).astype(g.dtype)
        d_pband = d_f2 * f2_free * np.sign(p_band.data)
        d_plow = (d_f1 + d_f2 * f2_free) * f1_free * np.sign(p_low.data)
        return d_plow, d_pband

    return ad._from_op(out, (p_low, p_band), vjp)


class SincLayer:
    """First convolution; every kernel is a parameterized band-pass filter."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, prefix: str):
        self.cfg = cfg
        n = cfg.sinc_filters
        nyquist = cfg.sample_rate / 2.0
        # mel-spaced initial cutoffs across the usable band
        mel = np.linspace(
            2595.0 * np.log10(1.0 + cfg.sinc_min_low_hz / 700.0),
            2595.0 * np.log10(1.0 + (nyquist - 200.0) / 700.0),
            n + 1,
        )
        hz = 700.0 * (10.0 ** (mel / 2595.0) - 1.0)
        f1 = hz[:-1]
        band = np.diff(hz)
        self.p_low = Parameter(f"{prefix}/p_low", f1 - cfg.sinc_min_low_hz)
        self.p_band = Parameter(f"{prefix}/p_band", np.maximum(band - cfg.sinc_min_band_hz, 0.0))

    def cutoffs(self) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        cap_hi = cfg.sample_rate / 2.0 - 1.0
        cap_lo = cap_hi - cfg.sinc_min_band_hz
        f1 = np.minimum(
            cfg.sinc_min_low_hz + np.abs(self.p_low.data.astype(np.float64)), cap_lo
        )
        f2 = np.minimum(
            f1 + cfg.sinc_min_band_hz + np.abs(self.p_band.data.astype(np.float64)),
            cap_hi,
        )
        return f1, f2

    def kernels(self) -> Tensor:
        return sinc_bandpass_kernels(
            self.p_low,
            self.p_band,
            self.cfg.sinc_kernel,
            self.cfg.sample_rate,
            self.cfg.sinc_min_low_hz,
            self.cfg.sinc_min_band_hz,
        )

    def forward(self, x: Tensor) -> Tensor:
        pad = (self.cfg.sinc_kernel - 1) // 2
        return ad.conv1d(x, self.kernels(), stride=self.cfg.sinc_stride, padding=pad)

    def parameters(self) -> list[Parameter]:
        return [self.p_low, self.p_band]


class BatchNorm1d:
    def __init__(self, channels: int, prefix: str, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(f"{prefix}/gamma", np.ones(channels, dtype=np.float32))
        self.beta = Parameter(f"{prefix}/beta", np.zeros(channels, dtype=np.float32))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps
        self.prefix = prefix

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return ad.batchnorm1d(
            x, self.gamma, self.beta,
            self.running_mean, self.running_var,
            training, self.momentum, self.eps,
        )

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.prefix}/running_mean": self.running_mean,
            f"{self.prefix}/running_var": self.running_var,
        }


def _he_conv(rng, out_ch, in_ch, kernel):
    scale = np.sqrt(2.0 / (in_ch * kernel))
    return (rng.standard_normal((out_ch, in_ch, kernel)) * scale).astype(np.float32)


class ConvBlock:
    """conv -> batch norm -> PReLU, the repeated encoder unit."""

    def __init__(self, in_ch, out_ch, kernel, stride, rng, prefix):
        self.kernel = kernel
        self.stride = stride
        self.w = Parameter(f"{prefix}/conv/w", _he_conv(rng, out_ch, in_ch, kernel))
        self.b = Parameter(f"{prefix}/conv/b", np.zeros(out_ch, dtype=np.float32))
        self.bn = BatchNorm1d(out_ch, f"{prefix}/bn")
        self.alpha = Parameter(f"{prefix}/prelu/alpha", np.full(out_ch, 0.25, dtype=np.float32))

    def forward(self, x: Tensor, training: bool) -> Tensor:
        pad = (self.kernel - 1) // 2
        h = ad.conv1d(x, self.w, self.b, stride=self.stride, padding=pad)
        h = self.bn.forward(h, training)
        return ad.prelu(h, self.alpha)

    def parameters(self):
        return [self.w, self.b, *self.bn.parameters(), self.alpha]

    def buffers(self):
        return self.bn.buffers()


class SkipAggregate:
    """Project every block output to the embedding width and sum them.

    Each tapped activation is downsampled to the final frame rate by strided
    selection, passed through a learned 1x1 projection, and added together
    with the (projected) last block path.
    """

    def __init__(self, channels: tuple, emb_dim: int, rng, prefix):
        self.projections = []
        # each path is scaled down by the path count so the SUM starts near
        # unit variance; otherwise the QRNN gates saturate at init
        gain = 1.0 / np.sqrt(len(channels))
        for i, ch in enumerate(channels):
            w = Parameter(f"{prefix}/proj{i}/w", gain * _he_conv(rng, emb_dim, ch, 1))
            b = Parameter(f"{prefix}/proj{i}/b", np.zeros(emb_dim, dtype=np.float32))
            self.projections.append((w, b))

    def forward(self, block_outputs: list[Tensor], strides: list[int], t_out: int) -> Tensor:
        total = None
        for (w, b), h, sel in zip(self.projections, block_outputs, strides):
            if sel > 1:
                h = ad.subsample_time(h, sel)
            if h.shape[2] < t_out:
                raise ShapeMismatch(
                    f"skip path gives {h.shape[2]} frames, need {t_out}"
                )
            if h.shape[2] > t_out:
                h = ad.narrow(h, 2, 0, t_out)
            proj = ad.conv1d(h, w, b)
            total = proj if total is None else ad.add(total, proj)
        return total

    def parameters(self):
        return [p for pair in self.projections for p in pair]


class QRNNLayer:
    """Convolutional gates over time plus the sequential forget-gate pooling."""

    def __init__(self, in_ch, hidden, kernel, rng, prefix):
        self.kernel = kernel
        scale = np.sqrt(1.0 / (in_ch * kernel))

        def w(name):
            return Parameter(
                f"{prefix}/{name}/w",
                (rng.standard_normal((hidden, in_ch, kernel)) * scale).astype(np.float32),
            )

        self.w_z, self.b_z = w("z"), Parameter(f"{prefix}/z/b", np.zeros(hidden, dtype=np.float32))
        self.w_f, self.b_f = w("f"), Parameter(f"{prefix}/f/b", np.zeros(hidden, dtype=np.float32))
        self.w_o, self.b_o = w("o"), Parameter(f"{prefix}/o/b", np.zeros(hidden, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        xp = ad.pad1d(x, self.kernel - 1, 0)  # causal: gates at t see x_{<=t}
        z = ad.tanh(ad.conv1d(xp, self.w_z, self.b_z))
        f = ad.sigmoid(ad.conv1d(xp, self.w_f, self.b_f))
        o = ad.sigmoid(ad.conv1d(xp, self.w_o, self.b_o))
        c = ad.fo_pool(z, f)
        return ad.mul(o, c)

    def gates(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        xp = ad.pad1d(x, self.kernel - 1, 0)
        return (
            ad.tanh(ad.conv1d(xp, self.w_z, self.b_z)),
            ad.sigmoid(ad.conv1d(xp, self.w_f, self.b_f)),
            ad.sigmoid(ad.conv1d(xp, self.w_o, self.b_o)),
        )

    def parameters(self):
        return [self.w_z, self.b_z, self.w_f, self.b_f, self.w_o, self.b_o]


class Encoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.sinc = SincLayer(cfg, rng, "encoder/sinc")
        self.blocks = []
        in_ch = cfg.sinc_filters
        for i, (ch, k, s) in enumerate(
            zip(cfg.block_channels, cfg.block_kernels, cfg.block_strides)
        ):
            self.blocks.append(ConvBlock(in_ch, ch, k, s, rng, f"encoder/block{i}"))
            in_ch = ch
        self.skip = SkipAggregate(cfg.block_channels, cfg.embedding_dim, rng, "encoder/skip")
        self.qrnn = QRNNLayer(cfg.embedding_dim, cfg.qrnn_hidden, cfg.qrnn_kernel, rng, "encoder/qrnn")
        self.emb_w = Parameter(
            "encoder/emb/w", _he_conv(rng, cfg.embedding_dim, cfg.qrnn_hidden, 1)
        )
        self.emb_b = Parameter("encoder/emb/b", np.zeros(cfg.embedding_dim, dtype=np.float32))

        # cumulative stride after each block, for skip-path downsampling
        self.cum_strides = []
        acc = cfg.sinc_stride
        for s in cfg.block_strides:
            acc *= s
            self.cum_strides.append(acc)
        self.skip_selects = [cfg.hop_samples // s for s in self.cum_strides]

    def forward(self, x: Tensor, training: bool) -> Tensor:
        """(B, 1, T) waveform batch -> (B, emb_dim, T // hop) embeddings."""
        hop = self.cfg.hop_samples
        t_in = x.shape[2]
        t_out = t_in // hop
        if t_out < 1:
            raise TooShort(f"input of {t_in} samples is under one hop ({hop})")
        h = self.sinc.forward(x)
        outs = []
        for block in self.blocks:
            h = block.forward(h, training)
            outs.append(h)
        agg = self.skip.forward(outs, self.skip_selects, t_out)
        q = self.qrnn.forward(agg)
        return ad.conv1d(q, self.emb_w, self.emb_b)

    def encode(self, samples: np.ndarray) -> np.ndarray:
        """Eval-mode embedding of one waveform: (T,) -> (T // hop, emb_dim)."""
        with ad.no_grad():
            x = Tensor(np.asarray(samples, dtype=np.float32)[None, None, :])
            out = self.forward(x, training=False)
        return out.data[0].T.copy()

    def parameters(self) -> list[Parameter]:
        params = list(self.sinc.parameters())
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend(self.skip.parameters())
        params.extend(self.qrnn.parameters())
        params.extend([self.emb_w, self.emb_b])
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for block in self.blocks:
            out.update(block.buffers())
        return out
