"""Training loop, frozen-feature extraction, linear probing, and batch
contamination. Everything is driven by one seeded Generator, so a (config,
seed) pair reproduces checkpoints and loss curves bit for bit.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import workers as W
from .audio_io import Chunk, Waveform, chunk_samples, draw_chunk, load_manifest, read_wav, write_wav
from .autodiff import Tensor
from .checkpoint import ADAM_PREFIX, STATS_PREFIX, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .distortion import contaminate
from .encoder import Encoder, EncoderConfig
from .errors import DegenerateSplit, EmptyCorpus, NonFiniteLoss
from .features import HOP_SECONDS, write_pfea
from .optim import Adam, PolySchedule
from .rir import default_rir_pool

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorpusEntry:
    utterance_id: str
    speaker_id: str
    wave: Waveform


def load_corpus(manifest_path: str, role: str, sample_rate: int) -> list[CorpusEntry]:
    manifest = load_manifest(manifest_path, role=role)
    entries = []
    for row in manifest:
        wave = read_wav(row.path)
        if wave.sample_rate != sample_rate:
            raise ValueError(
                f"{row.path}: {wave.sample_rate} Hz; the trainer only accepts "
                f"{sample_rate} Hz input (resampling is out of scope)"
            )
        entries.append(CorpusEntry(row.utterance_id, row.speaker_id, wave))
    return entries


@dataclass
class Model:
    encoder: Encoder
    workers: W.WorkerSet
    standardizer: W.TargetStandardizer
    encoder_cfg: EncoderConfig

    def parameters(self):
        return self.encoder.parameters() + self.workers.parameters()

    def arrays(self) -> dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.parameters()}
        out.update(self.encoder.buffers())
        return out


def build_model(enc_cfg: EncoderConfig, rng: np.random.Generator) -> Model:
    encoder = Encoder(enc_cfg, rng)
    workers = W.WorkerSet(W.default_roster(), enc_cfg.embedding_dim, rng, enc_cfg.sample_rate)
    standardizer = W.TargetStandardizer(sample_rate=enc_cfg.sample_rate)
    return Model(encoder, workers, standardizer, enc_cfg)


def model_meta(model: Model) -> dict[str, str]:
    meta = model.encoder_cfg.to_meta()
    meta["workers"] = ",".join(s.name for s in model.workers.roster)
    meta["hop_seconds"] = str(HOP_SECONDS)
    return meta


def save_model(path: str, model: Model, extra_meta: dict | None = None,
               adam: Adam | None = None) -> None:
    arrays = model.arrays()
    if model.standardizer.mean:
        arrays.update(model.standardizer.state())
    if adam is not None:
        arrays[f"{ADAM_PREFIX}step"] = np.asarray([adam.step_count], dtype=np.float32)
        for name, m in adam.m.items():
            arrays[f"{ADAM_PREFIX}m/{name}"] = m
        for name, v in adam.v.items():
            arrays[f"{ADAM_PREFIX}v/{name}"] = v
    meta = model_meta(model)
    if extra_meta:
        meta.update({k: str(v) for k, v in extra_meta.items()})
    save_checkpoint(path, arrays, meta)


def load_model(path: str) -> tuple[Model, dict[str, str]]:
    arrays, meta = load_checkpoint(path)
    enc_cfg = EncoderConfig.from_meta(meta)
    model = build_model(enc_cfg, np.random.default_rng(0))
    for p in model.parameters():
        if p.name not in arrays:
            raise KeyError(f"checkpoint missing parameter {p.name}")
        if arrays[p.name].shape != p.data.shape:
            raise ValueError(f"shape mismatch for {p.name}")
        p.data = arrays[p.name].copy()
    for name, buf in model.encoder.buffers().items():
        if name in arrays:
            buf[...] = arrays[name]
    if any(k.startswith(STATS_PREFIX) for k in arrays):
        model.standardizer.load_state(arrays)
    return model, meta


# --- pretraining -----------------------------------------------------------------


def _stats_chunks(corpus: list[CorpusEntry], per_utt: int, sample_rate: int) -> list[np.ndarray]:
    """Deterministic chunk picks (evenly spaced offsets) for target statistics."""
    want = chunk_samples(sample_rate)
    out = []
    for entry in corpus:
        n = len(entry.wave)
        for j in range(per_utt):
            if n <= want:
                padded = np.zeros(want, dtype=np.float32)
                padded[:n] = entry.wave.samples
                out.append(padded)
                break
            offset = (n - want) * j // max(1, per_utt - 1) if per_utt > 1 else 0
            out.append(np.array(entry.wave.samples[offset : offset + want]))
    return out


def _epoch_batches(n_utts: int, batch_size: int, rng) -> list[np.ndarray]:
    """One epoch = utterance_count random chunk draws, grouped into batches."""
    picks = rng.integers(0, n_utts, size=n_utts)
    batches = [picks[i : i + batch_size] for i in range(0, n_utts, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _distinct_draw(entry: CorpusEntry, first: Chunk, rng) -> Chunk:
    """Second chunk for the global task; distinct offset when possible."""
    for _ in range(8):
        second = draw_chunk(entry.wave, rng, entry.utterance_id)
        if second.offset_samples != first.offset_samples:
            return second
    return second  # utterance too short for distinct draws; overlapping fallback


def pretrain(cfg: TrainConfig) -> str:
    """Run self-supervised pretraining; returns the final checkpoint path."""
    cfg.validate()
    sample_rate = cfg.encoder.sample_rate
    corpus = load_corpus(cfg.clean_manifest, "clean_speech", sample_rate)
    if len(corpus) < 2:
        raise EmptyCorpus(f"need >= 2 utterances, got {len(corpus)}")

    rng = np.random.default_rng(cfg.seed)
    dist = cfg.distortion
    if dist.reverb.enabled and dist.reverb.p > 0:
        dist.reverb.rir_pool = default_rir_pool(
            rng, cfg.rir_count, cfg.rir_max_order, sample_rate
        )
    if dist.noise.enabled and dist.noise.p > 0 and cfg.noise_manifest:
        noise_corpus = load_corpus(cfg.noise_manifest, "noise", sample_rate)
        dist.noise.noise_pool = [e.wave for e in noise_corpus]
    if dist.overlap.enabled and dist.overlap.p > 0:
        overlap_corpus = (
            load_corpus(cfg.overlap_manifest, "overlap_speech", sample_rate)
            if cfg.overlap_manifest
            else corpus
        )
        dist.overlap.speech_pool = [(e.wave, e.speaker_id) for e in overlap_corpus]

    model = build_model(cfg.encoder, rng)
    log.info("fitting target statistics over %d utterances", len(corpus))
    model.standardizer.fit(
        _stats_chunks(corpus, cfg.stats_chunks_per_utterance, sample_rate)
    )

    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    save_model(os.path.join(cfg.checkpoint_dir, "init.pckp"), model,
               {"step": 0, "epoch": 0})

    steps_per_epoch = len(_epoch_batches(len(corpus), cfg.batch_size, np.random.default_rng(0)))
    total_steps = cfg.epochs * steps_per_epoch
    schedule = PolySchedule(cfg.lr0, total_steps, cfg.schedule_power)
    adam = Adam(model.parameters())
    csv_path = os.path.join(cfg.checkpoint_dir, "losses.csv")
    csv = open(csv_path, "w", encoding="utf-8")
    csv.write("step,worker,loss\n")

    regression_specs = [s for s in model.workers.roster if s.kind == "regression"]
    step = 0
    final_path = os.path.join(cfg.checkpoint_dir, "final.pckp")
    for epoch in range(1, cfg.epochs + 1):
        for batch in _epoch_batches(len(corpus), cfg.batch_size, rng):
            entries = [corpus[i] for i in batch]
            if len({e.utterance_id for e in entries}) < 2:
                entries[-1] = corpus[(batch[-1] + 1) % len(corpus)]
            step += 1

            chunks_a, chunks_b, dist_a = [], [], []
            for entry in entries:
                a = draw_chunk(entry.wave, rng, entry.utterance_id)
                b = _distinct_draw(entry, a, rng)
                xa, log_a = contaminate(a, dist, rng, speaker_id=entry.speaker_id)
                xb, _ = contaminate(b, dist, rng, speaker_id=entry.speaker_id)
                chunks_a.append((a, xa))
                chunks_b.append((b, xb))
                dist_a.append(log_a)

            xa = Tensor(np.stack([x.samples for _, x in chunks_a])[:, None, :])
            xb = Tensor(np.stack([x.samples for _, x in chunks_b])[:, None, :])
            emb_a = model.encoder.forward(xa, training=True)
            emb_b = model.encoder.forward(xb, training=True)

            utt_ids = [e.utterance_id for e in entries]
            clean = [c.samples for c, _ in chunks_a]
            losses: dict[str, Tensor] = {}
            for spec in regression_specs:
                losses[spec.name] = W.regression_worker_loss(
                    emb_a, clean, spec, model.workers.heads[spec.name],
                    model.standardizer, sample_rate,
                )
            lim_idx = W.lim_sample(
                utt_ids, emb_a.shape[2], rng, per_element=cfg.lim_triples_per_chunk
            )
            losses["lim"] = W.lim_worker_loss(emb_a, lim_idx, model.workers.heads["lim"])
            gim_idx = W.gim_sample(
                utt_ids,
                [c.offset_samples for c, _ in chunks_b],
                [c.offset_samples for c, _ in chunks_a],
                rng,
                per_element=cfg.gim_negatives_per_chunk,
            )
            losses["gim"] = W.gim_worker_loss(
                emb_a, emb_b, gim_idx, model.workers.heads["gim"]
            )

            total = W.total_loss(list(losses.values()))
            if not np.isfinite(total.data):
                dump = {
                    "step": step,
                    "losses": {k: float(v.data) for k, v in losses.items()},
                    "utterances": utt_ids,
                    "distortions": dist_a,
                }
                dump_path = os.path.join(cfg.checkpoint_dir, f"nonfinite_step{step}.json")
                with open(dump_path, "w", encoding="utf-8") as fh:
                    json.dump(dump, fh, indent=2)
                csv.close()
                raise NonFiniteLoss(f"step {step}: non-finite total loss, see {dump_path}")

            adam.zero_grad()
            total.backward()
            adam.step(schedule.lr(step - 1))

            if step == 1 or step == total_steps or step % cfg.log_interval == 0:
                for name, value in losses.items():
                    csv.write(f"{step},{name},{float(value.data):.8e}\n")
                csv.write(f"{step},total,{float(total.data):.8e}\n")
                csv.flush()
                log.info("step %d/%d total %.4f", step, total_steps, float(total.data))

        save_model(
            os.path.join(cfg.checkpoint_dir, f"epoch_{epoch:03d}.pckp"),
            model, {"step": step, "epoch": epoch}, adam=adam,
        )

    csv.close()
    save_model(final_path, model, {"step": step, "epoch": cfg.epochs})
    return final_path


# --- frozen-feature extraction ------------------------------------------------------


def encode_utterance(encoder: Encoder, samples: np.ndarray, sample_rate: int) -> np.ndarray:
    """Eval-mode embedding of a whole utterance via non-overlapping 2 s windows."""
    hop = encoder.cfg.hop_samples
    want = chunk_samples(sample_rate)
    n = len(samples)
    n_windows = max(1, int(np.ceil(n / want)))
    padded = np.zeros(n_windows * want, dtype=np.float32)
    padded[:n] = samples
    pieces = [
        encoder.encode(padded[i * want : (i + 1) * want]) for i in range(n_windows)
    ]
    frames = np.concatenate(pieces, axis=0)
    return frames[: n // hop]  # drop frames that cover only padding


def extract(checkpoint_path: str, manifest_path: str, out_dir: str) -> list[str]:
    """Write one PFEA embedding file (+ JSON sidecar) per manifest utterance."""
    model, meta = load_model(checkpoint_path)
    sample_rate = model.encoder_cfg.sample_rate
    corpus = load_corpus(manifest_path, "clean_speech", sample_rate)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for entry in corpus:
        emb = encode_utterance(model.encoder, entry.wave.samples, sample_rate)
        path = os.path.join(out_dir, entry.utterance_id + ".pfea")
        write_pfea(
            path,
            emb.astype(np.float32),
            {
                "kind": "embedding",
                "hop": HOP_SECONDS,
                "window": 2.0,
                "utterance_id": entry.utterance_id,
                "sample_rate": sample_rate,
                "dims": int(emb.shape[1]),
            },
        )
        written.append(path)
    return written


# --- linear probe ---------------------------------------------------------------------


@dataclass
class ProbeConfig:
    checkpoint: str
    manifest: str
    out_json: str = ""
    seed: int = 0
    epochs: int = 100
    lr: float = 1e-2
    train_fraction: float = 0.75
    min_per_class: int = 4


def probe(cfg: ProbeConfig) -> dict:
    """Train a linear classifier on mean-pooled frozen embeddings."""
    model, _ = load_model(cfg.checkpoint)
    sample_rate = model.encoder_cfg.sample_rate
    corpus = load_corpus(cfg.manifest, "clean_speech", sample_rate)

    classes = sorted({e.speaker_id for e in corpus})
    if len(classes) < 2:
        raise DegenerateSplit("probe needs at least two classes")
    per_class = {c: [e for e in corpus if e.speaker_id == c] for c in classes}
    for c, members in per_class.items():
        if len(members) < cfg.min_per_class:
            raise DegenerateSplit(
                f"class {c!r} has {len(members)} utterances, need {cfg.min_per_class}"
            )

    feats = {
        e.utterance_id: _mean_embedding(model.encoder, e, sample_rate) for e in corpus
    }
    rng = np.random.default_rng(cfg.seed)
    train_x, train_y, test_x, test_y = [], [], [], []
    for ci, c in enumerate(classes):
        members = per_class[c]
        order = rng.permutation(len(members))
        n_train = int(round(cfg.train_fraction * len(members)))
        n_train = min(max(n_train, 1), len(members) - 1)
        for rank, idx in enumerate(order):
            target_x = train_x if rank < n_train else test_x
            target_y = train_y if rank < n_train else test_y
            target_x.append(feats[members[idx].utterance_id])
            target_y.append(ci)

    x_train = np.stack(train_x).astype(np.float32)
    y_train = np.asarray(train_y)
    x_test = np.stack(test_x).astype(np.float32)
    y_test = np.asarray(test_y)

    # standardize with training statistics, then fit the linear layer
    mu = x_train.mean(axis=0)
    sd = np.maximum(x_train.std(axis=0), 1e-6)
    x_train = (x_train - mu) / sd
    x_test = (x_test - mu) / sd

    k = len(classes)
    w = ad.Parameter("probe/w", np.zeros((k, x_train.shape[1]), dtype=np.float32))
    b = ad.Parameter("probe/b", np.zeros(k, dtype=np.float32))
    adam = Adam([w, b])
    xt = Tensor(x_train)
    for _ in range(cfg.epochs):
        loss = ad.softmax_cross_entropy(ad.linear(xt, w, b), y_train)
        adam.zero_grad()
        loss.backward()
        adam.step(cfg.lr)

    def accuracy(x, y):
        with ad.no_grad():
            logits = ad.linear(Tensor(x), w, b).data
        return float((logits.argmax(axis=1) == y).mean()), logits.argmax(axis=1)

    train_acc, _ = accuracy(x_train, y_train)
    test_acc, test_pred = accuracy(x_test, y_test)
    confusion = np.zeros((k, k), dtype=int)
    for truth, pred in zip(y_test, test_pred):
        confusion[truth, pred] += 1

    report = {
        "classes": classes,
        "n_train": len(y_train),
        "n_test": len(y_test),
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
        "confusion_matrix": confusion.tolist(),
    }
    if cfg.out_json:
        with open(cfg.out_json, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    return report


def _mean_embedding(encoder: Encoder, entry: CorpusEntry, sample_rate: int) -> np.ndarray:
    emb = encode_utterance(encoder, entry.wave.samples, sample_rate)
    return emb.mean(axis=0)


# --- batch contamination ----------------------------------------------------------------


def contaminate_corpus(cfg: TrainConfig, manifest_path: str, out_dir: str, seed: int) -> str:
    """Offline variant of the online module: one distorted WAV per utterance."""
    sample_rate = cfg.encoder.sample_rate
    corpus = load_corpus(manifest_path, "clean_speech", sample_rate)
    dist = cfg.distortion
    rng = np.random.default_rng(seed)
    # pools are rebuilt unconditionally so a reused config cannot desync the
    # draw stream between runs with the same seed
    if dist.reverb.enabled and dist.reverb.p > 0:
        dist.reverb.rir_pool = default_rir_pool(
            rng, cfg.rir_count, cfg.rir_max_order, sample_rate
        )
    if dist.noise.enabled and dist.noise.p > 0 and cfg.noise_manifest:
        noise_corpus = load_corpus(cfg.noise_manifest, "noise", sample_rate)
        dist.noise.noise_pool = [e.wave for e in noise_corpus]
    if dist.overlap.enabled and dist.overlap.p > 0:
        overlap_corpus = (
            load_corpus(cfg.overlap_manifest, "overlap_speech", sample_rate)
            if cfg.overlap_manifest
            else corpus
        )
        dist.overlap.speech_pool = [(e.wave, e.speaker_id) for e in overlap_corpus]

    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "distortion_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in corpus:
            pseudo = Chunk(
                entry.utterance_id, 0, entry.wave.samples, sample_rate, padded=False
            )
            distorted, applied = contaminate(pseudo, dist, rng, speaker_id=entry.speaker_id)
            out_path = os.path.join(out_dir, entry.utterance_id + ".wav")
            write_wav(
                Waveform(distorted.samples, sample_rate, entry.wave.encoding),
                out_path,
                encoding=entry.wave.encoding,
            )
            fh.write(
                json.dumps({"utterance_id": entry.utterance_id, "applied": applied})
                + "\n"
            )
    return log_path
