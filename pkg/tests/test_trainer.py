import hashlib
import json
import os

import numpy as np
import pytest

import pase.trainer as T
import pase.workers as W
from pase.audio_io import Waveform, read_wav, write_wav
from pase.autodiff import Tensor
from pase.config import TrainConfig
from pase.errors import EmptyCorpus, NonFiniteLoss
from pase.features import read_pfea


def micro_train_config(paths, out_dir, **overrides) -> TrainConfig:
    cfg = TrainConfig(
        clean_manifest=paths["train"],
        noise_manifest=paths["noise"],
        checkpoint_dir=str(out_dir),
        batch_size=4,
        epochs=2,
        seed=5,
        rir_count=3,
        rir_max_order=6,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="module")
def trained(micro_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    cfg = micro_train_config(micro_corpus, out)
    final = T.pretrain(cfg)
    return {"cfg": cfg, "final": final, "dir": out, "paths": micro_corpus}


def test_pretrain_writes_expected_artifacts(trained):
    out = trained["dir"]
    assert os.path.exists(trained["final"])
    assert os.path.exists(out / "init.pckp")
    assert os.path.exists(out / "epoch_001.pckp")
    assert os.path.exists(out / "epoch_002.pckp")
    assert os.path.exists(out / "losses.csv")


def test_loss_csv_complete_and_monotone(trained):
    rows = open(trained["dir"] / "losses.csv").read().strip().splitlines()
    assert rows[0] == "step,worker,loss"
    workers_per_step = {}
    steps_in_order = []
    for row in rows[1:]:
        step, worker, loss = row.split(",")
        float(loss)
        workers_per_step.setdefault(int(step), []).append(worker)
        if not steps_in_order or steps_in_order[-1] != int(step):
            steps_in_order.append(int(step))
    assert steps_in_order == sorted(steps_in_order)
    want = {s.name for s in W.default_roster()} | {"total"}
    for step, names in workers_per_step.items():
        assert set(names) == want, f"step {step} missing workers"
        assert len(names) == 13


def test_pretrain_bitwise_reproducible(micro_corpus, tmp_path):
    cfg_a = micro_train_config(micro_corpus, tmp_path / "a", epochs=1)
    cfg_b = micro_train_config(micro_corpus, tmp_path / "b", epochs=1)
    final_a = T.pretrain(cfg_a)
    final_b = T.pretrain(cfg_b)
    assert open(final_a, "rb").read() == open(final_b, "rb").read()
    assert (
        open(tmp_path / "a" / "losses.csv").read()
        == open(tmp_path / "b" / "losses.csv").read()
    )


def test_checkpoint_round_trip_embeddings(trained, tmp_path, rng):
    model, _ = T.load_model(trained["final"])
    chunk = rng.uniform(-0.5, 0.5, 32000).astype(np.float32)
    emb_first = model.encoder.encode(chunk)

    again = str(tmp_path / "resaved.pckp")
    T.save_model(again, model)
    model2, _ = T.load_model(again)
    emb_second = model2.encoder.encode(chunk)
    assert np.array_equal(emb_first, emb_second)


def test_extract_shapes_and_determinism(trained, tmp_path):
    manifest = tmp_path / "one.tsv"
    wav_path = tmp_path / "four_half.wav"
    rng = np.random.default_rng(3)
    write_wav(Waveform(rng.uniform(-0.5, 0.5, 72000).astype(np.float32), 16000), str(wav_path))
    manifest.write_text(f"u45\tspk\t{wav_path}\n", encoding="utf-8")

    out_a = tmp_path / "feat_a"
    out_b = tmp_path / "feat_b"
    files_a = T.extract(trained["final"], str(manifest), str(out_a))
    files_b = T.extract(trained["final"], str(manifest), str(out_b))
    values, meta = read_pfea(files_a[0])
    # 4.5 s: padded to three 2 s windows, only the 450 real frames kept
    assert values.shape == (450, 256)
    assert meta["kind"] == "embedding"
    assert open(files_a[0], "rb").read() == open(files_b[0], "rb").read()


def test_extract_four_seconds_gives_400_frames(trained, tmp_path):
    manifest = tmp_path / "four.tsv"
    wav_path = tmp_path / "four.wav"
    rng = np.random.default_rng(4)
    write_wav(Waveform(rng.uniform(-0.5, 0.5, 64000).astype(np.float32), 16000), str(wav_path))
    manifest.write_text(f"u4\tspk\t{wav_path}\n", encoding="utf-8")
    files = T.extract(trained["final"], str(manifest), str(tmp_path / "feat"))
    values, _ = read_pfea(files[0])
    assert values.shape == (400, 256)


def test_probe_reports_and_leaves_checkpoint_frozen(trained, tmp_path):
    ckpt_hash_before = hashlib.sha256(open(trained["final"], "rb").read()).hexdigest()
    report = T.probe(
        T.ProbeConfig(
            checkpoint=trained["final"],
            manifest=trained["paths"]["probe"],
            out_json=str(tmp_path / "report.json"),
            seed=0,
            min_per_class=2,
        )
    )
    assert set(report) >= {
        "classes", "train_accuracy", "test_accuracy", "confusion_matrix", "n_train", "n_test",
    }
    saved = json.load(open(tmp_path / "report.json"))
    assert saved["classes"] == report["classes"]
    conf = np.asarray(report["confusion_matrix"])
    assert conf.sum() == report["n_test"]
    ckpt_hash_after = hashlib.sha256(open(trained["final"], "rb").read()).hexdigest()
    assert ckpt_hash_before == ckpt_hash_after  # frozen weights stay frozen


def test_probe_shuffled_labels_near_chance(trained, tmp_path):
    entries = open(trained["paths"]["probe"], encoding="utf-8").read().strip().splitlines()
    entries = [e for e in entries if not e.startswith("#")]
    rows = [e.split("\t") for e in entries]
    speakers = [r[1] for r in rows]
    shuffled = np.random.default_rng(0).permutation(speakers)
    manifest = tmp_path / "shuffled.tsv"
    manifest.write_text(
        "\n".join(f"{r[0]}\t{s}\t{r[2]}" for r, s in zip(rows, shuffled)) + "\n",
        encoding="utf-8",
    )
    report = T.probe(
        T.ProbeConfig(
            checkpoint=trained["final"], manifest=str(manifest), seed=1, min_per_class=2
        )
    )
    n = report["n_test"]
    chance = 1.0 / len(report["classes"])
    sigma = np.sqrt(chance * (1 - chance) / n)
    assert report["test_accuracy"] <= chance + 3 * sigma


def test_pretrain_rejects_tiny_corpus(tmp_path, micro_corpus):
    lines = [
        l for l in open(micro_corpus["train"], encoding="utf-8").read().splitlines()
        if l and not l.startswith("#")
    ]
    manifest = tmp_path / "one.tsv"
    manifest.write_text(lines[0] + "\n", encoding="utf-8")
    cfg = micro_train_config(micro_corpus, tmp_path / "out")
    cfg.clean_manifest = str(manifest)
    with pytest.raises(EmptyCorpus):
        T.pretrain(cfg)


def test_pretrain_aborts_on_nonfinite_loss(micro_corpus, tmp_path, monkeypatch):
    def poisoned(emb, clean, spec, head, standardizer, sample_rate=16000):
        return Tensor(np.asarray(np.nan, dtype=np.float32))

    monkeypatch.setattr(T.W, "regression_worker_loss", poisoned)
    cfg = micro_train_config(micro_corpus, tmp_path / "out", epochs=1)
    with pytest.raises(NonFiniteLoss):
        T.pretrain(cfg)
    dumps = [f for f in os.listdir(tmp_path / "out") if f.startswith("nonfinite")]
    assert len(dumps) == 1
    dump = json.load(open(tmp_path / "out" / dumps[0]))
    assert "losses" in dump and "utterances" in dump


def test_contaminate_corpus_all_off_is_bitwise_identity(micro_corpus, tmp_path):
    cfg = micro_train_config(micro_corpus, tmp_path / "ck")
    for name in ("reverb", "noise", "freq_mask", "temporal_mask", "clip", "overlap"):
        getattr(cfg.distortion, name).p = 0.0
    out_dir = tmp_path / "dirty"
    log_path = T.contaminate_corpus(cfg, micro_corpus["train"], str(out_dir), seed=0)
    for line in open(log_path, encoding="utf-8"):
        entry = json.loads(line)
        assert entry["applied"] == []
    for row in open(micro_corpus["train"], encoding="utf-8").read().splitlines():
        if not row or row.startswith("#"):
            continue
        utt, _, path = row.split("\t")
        original = read_wav(path)
        distorted = read_wav(str(out_dir / f"{utt}.wav"))
        assert np.array_equal(original.samples, distorted.samples)


def test_contaminate_corpus_seeded_runs_identical(micro_corpus, tmp_path):
    cfg = micro_train_config(micro_corpus, tmp_path / "ck")
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    log_a = T.contaminate_corpus(cfg, micro_corpus["train"], str(out_a), seed=7)
    log_b = T.contaminate_corpus(cfg, micro_corpus["train"], str(out_b), seed=7)
    assert open(log_a).read() == open(log_b).read()
    names = [f for f in os.listdir(out_a) if f.endswith(".wav")]
    for name in names:
        assert open(out_a / name, "rb").read() == open(out_b / name, "rb").read()
