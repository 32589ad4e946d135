"""The twelve self-supervised workers.

Ten regression heads predict clean-signal features (short/long window, with
deltas and 7-frame context) from the embedding of the distorted input; two
binary heads discriminate same-sentence from cross-sentence embedding pairs
at frame (LIM) and chunk (GIM) granularity. Heads are deliberately small:
one 256-unit hidden layer, nothing configurable beyond the output width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import features as F
from .audio_io import Waveform
from .autodiff import Parameter, Tensor
from .errors import EmptyList, FrameGridMismatch, SingleUtteranceBatch

REGRESSION_KINDS = (
    "wave",
    "lps",
    "mfcc",
    "fbank",
    "gammatone",
    "prosody",
    "lps_long",
    "mfcc_long",
    "fbank_long",
    "gammatone_long",
)

CONTEXT_FRAMES = 7
HIDDEN_UNITS = 256
STD_FLOOR = 1e-3


@dataclass(frozen=True)
class WorkerSpec:
    name: str
    kind: str  # regression | lim | gim
    target_kind: str | None = None
    hidden: int = HIDDEN_UNITS


def default_roster() -> list[WorkerSpec]:
    roster = [WorkerSpec(k, "regression", k) for k in REGRESSION_KINDS]
    roster.append(WorkerSpec("lim", "lim"))
    roster.append(WorkerSpec("gim", "gim"))
    return roster


def base_feature_dim(target_kind: str, sample_rate: int = 16000) -> int:
    base = target_kind[:-5] if target_kind.endswith("_long") else target_kind
    return {
        "lps": F.FFT_SIZE // 2 + 1,
        "mfcc": F.N_MFCC,
        "fbank": F.N_FILTERS,
        "gammatone": F.N_FILTERS,
        "prosody": 4,
    }[base]


def target_dim(target_kind: str, sample_rate: int = 16000) -> int:
    """Output width of one regression worker."""
    if target_kind == "wave":
        return int(round(F.HOP_SECONDS * sample_rate))
    return base_feature_dim(target_kind, sample_rate) * 3 * CONTEXT_FRAMES


def regression_targets(samples: np.ndarray, target_kind: str, sample_rate: int = 16000) -> np.ndarray:
    """Worker target matrix (frames, dims) computed from the clean signal.

    The waveform worker predicts the raw samples under each frame; every
    other worker gets features + deltas stacked over a 7-frame context.
    """
    if target_kind == "wave":
        hop = int(round(F.HOP_SECONDS * sample_rate))
        n = len(samples) // hop
        return np.asarray(samples[: n * hop], dtype=np.float64).reshape(n, hop)
    wave = Waveform(np.asarray(samples, dtype=np.float32), sample_rate)
    feat = F.extract_feature(wave, target_kind)
    return F.stack_context(F.add_deltas(feat), CONTEXT_FRAMES).values


class TargetStandardizer:
    """Per-dimension mean/std of each worker target over the training corpus."""

    def __init__(self, kinds=REGRESSION_KINDS, sample_rate: int = 16000):
        self.kinds = tuple(kinds)
        self.sample_rate = sample_rate
        self.mean: dict[str, np.ndarray] = {}
        self.std: dict[str, np.ndarray] = {}

    def fit(self, chunks: list[np.ndarray]) -> None:
        for kind in self.kinds:
            count = 0
            acc = None
            acc2 = None
            for samples in chunks:
                t = regression_targets(samples, kind, self.sample_rate)
                if acc is None:
                    acc = t.sum(axis=0)
                    acc2 = (t * t).sum(axis=0)
                else:
                    acc += t.sum(axis=0)
                    acc2 += (t * t).sum(axis=0)
                count += t.shape[0]
            mean = acc / count
            var = np.maximum(acc2 / count - mean * mean, 0.0)
            self.mean[kind] = mean.astype(np.float32)
            self.std[kind] = np.maximum(np.sqrt(var), STD_FLOOR).astype(np.float32)

    def transform(self, kind: str, values: np.ndarray) -> np.ndarray:
        return ((values - self.mean[kind]) / self.std[kind]).astype(np.float32)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for kind in self.kinds:
            out[f"__stats__/{kind}/mean"] = self.mean[kind]
            out[f"__stats__/{kind}/std"] = self.std[kind]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for kind in self.kinds:
            self.mean[kind] = arrays[f"__stats__/{kind}/mean"]
            self.std[kind] = arrays[f"__stats__/{kind}/std"]


def _init_linear(rng, out_dim, in_dim):
    scale = np.sqrt(1.0 / in_dim)
    return (rng.standard_normal((out_dim, in_dim)) * scale).astype(np.float32)


class WorkerHead:
    """linear(in -> 256) + PReLU + linear(256 -> out); capacity is fixed."""

    def __init__(self, prefix: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w1 = Parameter(f"{prefix}/fc1/w", _init_linear(rng, HIDDEN_UNITS, in_dim))
        self.b1 = Parameter(f"{prefix}/fc1/b", np.zeros(HIDDEN_UNITS, dtype=np.float32))
        self.alpha = Parameter(f"{prefix}/prelu/alpha", np.full(HIDDEN_UNITS, 0.25, dtype=np.float32))
        self.w2 = Parameter(f"{prefix}/fc2/w", _init_linear(rng, out_dim, HIDDEN_UNITS))
        self.b2 = Parameter(f"{prefix}/fc2/b", np.zeros(out_dim, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        h = ad.prelu(ad.linear(x, self.w1, self.b1), self.alpha)
        return ad.linear(h, self.w2, self.b2)

    def parameters(self):
        return [self.w1, self.b1, self.alpha, self.w2, self.b2]

    @property
    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _flatten_frames(emb: Tensor, t_keep: int) -> Tensor:
    """(B, C, T) -> (B * t_keep, C), truncating the time axis first."""
    b, c, t = emb.shape
    if t > t_keep:
        emb = ad.narrow(emb, 2, 0, t_keep)
    return ad.reshape(ad.transpose(emb, (0, 2, 1)), (b * t_keep, c))


def regression_worker_loss(
    emb: Tensor,
    clean_batch: list[np.ndarray],
    spec: WorkerSpec,
    head: WorkerHead,
    standardizer: TargetStandardizer,
    sample_rate: int = 16000,
) -> Tensor:
    """Frame-wise MSE between head(embedding) and standardized clean targets."""
    targets = []
    for samples in clean_batch:
        t = regression_targets(samples, spec.target_kind, sample_rate)
        targets.append(standardizer.transform(spec.target_kind, t))
    target = np.stack(targets)  # (B, T_t, dim)
    b, c, t_emb = emb.shape
    t_tgt = target.shape[1]
    if abs(t_emb - t_tgt) > 1:
        raise FrameGridMismatch(f"embedding {t_emb} frames vs target {t_tgt}")
    t_common = min(t_emb, t_tgt)
    pred = head.forward(_flatten_frames(emb, t_common))
    flat_target = target[:, :t_common].reshape(b * t_common, -1)
    return ad.mse_loss(pred, Tensor(flat_target))


# --- contrastive sampling -------------------------------------------------------


@dataclass(frozen=True)
class LimSample:
    """Index triple: anchor/positive share a chunk, negative is cross-utterance."""

    anchor_elem: np.ndarray
    anchor_frame: np.ndarray
    positive_frame: np.ndarray
    negative_elem: np.ndarray
    negative_frame: np.ndarray
    utterance_ids: tuple


@dataclass(frozen=True)
class GimSample:
    """Per element: positive is its second chunk, negative another utterance's."""

    negative_elem: np.ndarray
    utterance_ids: tuple
    overlap_fallback: tuple  # elements whose two draws could not be distinct


def _negative_elements(utterance_ids, rng, per_element: int = 1) -> np.ndarray:
    ids = list(utterance_ids)
    out = np.empty(len(ids) * per_element, dtype=np.int64)
    for i, utt in enumerate(ids):
        candidates = [j for j, other in enumerate(ids) if other != utt]
        if not candidates:
            raise SingleUtteranceBatch(
                "contrastive sampling needs >= 2 distinct utterances per batch"
            )
        for k in range(per_element):
            out[i * per_element + k] = candidates[int(rng.integers(len(candidates)))]
    return out


def lim_sample(
    utterance_ids, n_frames: int, rng: np.random.Generator, per_element: int = 1
) -> LimSample:
    """(anchor, positive, negative) frame triples, per_element per chunk."""
    if n_frames < 2:
        raise ValueError("lim sampling needs at least two frames per chunk")
    b = len(utterance_ids)
    neg_elem = _negative_elements(utterance_ids, rng, per_element)
    n = b * per_element
    anchor_elem = np.repeat(np.arange(b, dtype=np.int64), per_element)
    anchor_frame = rng.integers(0, n_frames, size=n)
    shift = rng.integers(1, n_frames, size=n)
    positive_frame = (anchor_frame + shift) % n_frames  # distinct from anchor
    negative_frame = rng.integers(0, n_frames, size=n)
    return LimSample(
        anchor_elem=anchor_elem,
        anchor_frame=anchor_frame.astype(np.int64),
        positive_frame=positive_frame.astype(np.int64),
        negative_elem=neg_elem,
        negative_frame=negative_frame.astype(np.int64),
        utterance_ids=tuple(utterance_ids),
    )


def gim_sample(
    utterance_ids, second_draw_offsets, first_draw_offsets, rng, per_element: int = 1
) -> GimSample:
    return GimSample(
        negative_elem=_negative_elements(utterance_ids, rng, per_element),
        utterance_ids=tuple(utterance_ids),
        overlap_fallback=tuple(
            i
            for i, (a, b) in enumerate(zip(first_draw_offsets, second_draw_offsets))
            if a == b
        ),
    )


def infomax_loss(
    head: WorkerHead, anchor: Tensor, positive: Tensor, negative: Tensor
) -> Tensor:
    """Mean of the positive-pair and negative-pair binary cross-entropies.

    Averaging the two terms separately keeps the loss balanced even when
    negatives are sampled more densely than positives.
    """
    pos_logits = head.forward(ad.concat([anchor, positive], axis=1))
    neg_anchor = anchor
    if negative.shape[0] != anchor.shape[0]:
        reps = negative.shape[0] // anchor.shape[0]
        neg_anchor = ad.take_rows(anchor, np.repeat(np.arange(anchor.shape[0]), reps))
    neg_logits = head.forward(ad.concat([neg_anchor, negative], axis=1))
    pos = ad.bce_logits_loss(
        pos_logits, np.ones(pos_logits.shape, dtype=np.float32)
    )
    neg = ad.bce_logits_loss(
        neg_logits, np.zeros(neg_logits.shape, dtype=np.float32)
    )
    half = Tensor(np.asarray(0.5, dtype=pos.data.dtype))
    return ad.mul(ad.add(pos, neg), half)


def lim_worker_loss(emb: Tensor, sample: LimSample, head: WorkerHead) -> Tensor:
    anchor = ad.gather_frames(emb, sample.anchor_elem, sample.anchor_frame)
    positive = ad.gather_frames(emb, sample.anchor_elem, sample.positive_frame)
    negative = ad.gather_frames(emb, sample.negative_elem, sample.negative_frame)
    return infomax_loss(head, anchor, positive, negative)


def gim_worker_loss(emb_a: Tensor, emb_b: Tensor, sample: GimSample, head: WorkerHead) -> Tensor:
    anchor = ad.mean(emb_a, axis=2)
    positive = ad.mean(emb_b, axis=2)
    negative = ad.take_rows(positive, sample.negative_elem)
    return infomax_loss(head, anchor, positive, negative)


def total_loss(worker_losses: list[Tensor]) -> Tensor:
    """Unweighted average of the active worker costs."""
    if not worker_losses:
        raise EmptyList("no worker losses to average")
    acc = worker_losses[0]
    for one in worker_losses[1:]:
        acc = ad.add(acc, one)
    scale = np.asarray(1.0 / len(worker_losses), dtype=acc.data.dtype)
    return ad.mul(acc, Tensor(scale))


class WorkerSet:
    """All twelve heads plus their specs, keyed for checkpointing."""

    def __init__(self, roster: list[WorkerSpec], embedding_dim: int, rng, sample_rate: int = 16000):
        names = [s.name for s in roster]
        if len(set(names)) != len(names):
            raise ValueError("worker names must be unique")
        self.roster = list(roster)
        self.sample_rate = sample_rate
        self.heads: dict[str, WorkerHead] = {}
        for spec in roster:
            if spec.kind == "regression":
                out_dim = target_dim(spec.target_kind, sample_rate)
                in_dim = embedding_dim
            else:
                out_dim = 1
                in_dim = 2 * embedding_dim
            self.heads[spec.name] = WorkerHead(f"workers/{spec.name}", in_dim, out_dim, rng)

    def parameters(self) -> list[Parameter]:
        out = []
        for spec in self.roster:
            out.extend(self.heads[spec.name].parameters())
        return out
