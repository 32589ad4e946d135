import numpy as np
import pytest

import pase.autodiff as ad
import pase.workers as W
from pase.audio_io import Chunk
from pase.autodiff import Tensor
from pase.distortion import DistortionConfig, contaminate
from pase.errors import EmptyList, FrameGridMismatch, SingleUtteranceBatch

SR = 16000


def test_default_roster_has_twelve_unique_workers():
    roster = W.default_roster()
    assert len(roster) == 12
    names = [s.name for s in roster]
    assert len(set(names)) == 12
    kinds = {s.kind for s in roster}
    assert kinds == {"regression", "lim", "gim"}
    assert sum(s.kind == "regression" for s in roster) == 10


@pytest.mark.parametrize(
    "kind,dim",
    [
        ("wave", 160),
        ("lps", 257 * 3 * 7),
        ("mfcc", 13 * 3 * 7),  # 273, the shape contract
        ("fbank", 40 * 3 * 7),
        ("gammatone", 40 * 3 * 7),
        ("prosody", 4 * 3 * 7),
        ("lps_long", 257 * 3 * 7),
        ("mfcc_long", 13 * 3 * 7),
        ("fbank_long", 40 * 3 * 7),
        ("gammatone_long", 40 * 3 * 7),
    ],
)
def test_target_dims(kind, dim):
    assert W.target_dim(kind, SR) == dim


def test_mfcc_worker_target_dim_is_273():
    assert W.target_dim("mfcc", SR) == 13 * 3 * 7 == 273


def test_regression_targets_shapes(rng):
    samples = rng.uniform(-0.5, 0.5, 32000).astype(np.float32)
    wave_target = W.regression_targets(samples, "wave", SR)
    assert wave_target.shape == (200, 160)
    assert np.array_equal(wave_target.reshape(-1), samples.astype(np.float64))
    mfcc_target = W.regression_targets(samples, "mfcc", SR)
    assert mfcc_target.shape == (200, 273)


def test_targets_depend_only_on_clean_chunk(rng):
    clean = rng.uniform(-0.5, 0.5, 32000).astype(np.float32)
    chunk = Chunk("u", 0, clean, SR)
    cfg = DistortionConfig()
    cfg.reverb.enabled = cfg.noise.enabled = cfg.overlap.enabled = False
    distorted_a, _ = contaminate(chunk, cfg, np.random.default_rng(1))
    distorted_b, _ = contaminate(chunk, cfg, np.random.default_rng(2))
    assert not np.array_equal(distorted_a.samples, distorted_b.samples)
    # the worker target never looks at either distorted variant
    t1 = W.regression_targets(clean, "fbank", SR)
    t2 = W.regression_targets(clean, "fbank", SR)
    assert np.array_equal(t1, t2)


def test_standardizer_round_trip(rng):
    chunks = [rng.uniform(-0.5, 0.5, 32000).astype(np.float32) for _ in range(3)]
    std = W.TargetStandardizer(kinds=("mfcc", "wave"), sample_rate=SR)
    std.fit(chunks)
    raw = W.regression_targets(chunks[0], "mfcc", SR)
    z = std.transform("mfcc", raw)
    assert z.dtype == np.float32
    assert np.all(np.isfinite(z))

    state = std.state()
    other = W.TargetStandardizer(kinds=("mfcc", "wave"), sample_rate=SR)
    other.load_state(state)
    assert np.array_equal(other.transform("mfcc", raw), z)


def test_standardized_corpus_targets_have_unit_scale(rng):
    chunks = [rng.uniform(-0.5, 0.5, 32000).astype(np.float32) for _ in range(4)]
    std = W.TargetStandardizer(kinds=("fbank",), sample_rate=SR)
    std.fit(chunks)
    stacked = np.concatenate(
        [std.transform("fbank", W.regression_targets(c, "fbank", SR)) for c in chunks]
    )
    assert np.abs(stacked.mean(axis=0)).max() < 1e-3
    assert np.abs(stacked.std(axis=0) - 1.0).max() < 1e-3


def test_worker_head_capacity_is_fixed(rng):
    head = W.WorkerHead("h", 256, 273, rng)
    expected = 256 * 256 + 256 + 256 + 273 * 256 + 273
    assert head.parameter_count == expected
    out = head.forward(Tensor(rng.standard_normal((5, 256)).astype(np.float32)))
    assert out.data.shape == (5, 273)


def test_regression_worker_loss_zero_when_head_matches(rng):
    samples = [rng.uniform(-0.3, 0.3, 32000).astype(np.float32)]
    std = W.TargetStandardizer(kinds=("mfcc",), sample_rate=SR)
    std.fit(samples)
    target = std.transform("mfcc", W.regression_targets(samples[0], "mfcc", SR))

    class PerfectHead:
        def forward(self, flat):
            return Tensor(target.reshape(-1, target.shape[1]).astype(np.float32))

    emb = Tensor(rng.standard_normal((1, 256, 200)).astype(np.float32))
    spec = W.WorkerSpec("mfcc", "regression", "mfcc")
    loss = W.regression_worker_loss(emb, samples, spec, PerfectHead(), std, SR)
    assert loss.item() == 0.0


def test_regression_worker_frame_grid_mismatch(rng):
    samples = [rng.uniform(-0.3, 0.3, 32000).astype(np.float32)]
    std = W.TargetStandardizer(kinds=("mfcc",), sample_rate=SR)
    std.fit(samples)
    emb = Tensor(rng.standard_normal((1, 256, 150)).astype(np.float32))  # 50 off
    spec = W.WorkerSpec("mfcc", "regression", "mfcc")
    head = W.WorkerHead("h", 256, 273, rng)
    with pytest.raises(FrameGridMismatch):
        W.regression_worker_loss(emb, samples, spec, head, std, SR)


# --- contrastive sampling ----------------------------------------------------------


def test_lim_sample_contracts(rng):
    utts = ["a", "a", "b", "c"]
    sample = W.lim_sample(utts, 200, rng)
    assert np.all(sample.anchor_frame != sample.positive_frame)
    for i, neg in enumerate(sample.negative_elem):
        assert utts[neg] != utts[i]


def test_lim_sample_two_utterances_cross(rng):
    utts = ["a", "b"]
    for _ in range(20):
        s = W.lim_sample(utts, 50, rng)
        assert list(s.negative_elem) == [1, 0]


def test_lim_sample_rejects_single_utterance(rng):
    with pytest.raises(SingleUtteranceBatch):
        W.lim_sample(["a", "a", "a"], 100, rng)


def test_lim_anchor_frames_uniform():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(5)
    frames = []
    for _ in range(5000):
        s = W.lim_sample(["a", "b"], 200, rng)
        frames.extend(s.anchor_frame.tolist())
    counts, _ = np.histogram(frames, bins=20, range=(0, 200))
    _, p = scipy_stats.chisquare(counts)
    assert p > 0.01


def test_gim_sample_contracts(rng):
    utts = ["a", "b", "c"]
    sample = W.gim_sample(utts, [10, 20, 30], [10, 99, 30], rng)
    for i, neg in enumerate(sample.negative_elem):
        assert utts[neg] != utts[i]
    assert sample.overlap_fallback == (0, 2)  # equal offsets flagged


def test_gim_mean_matches_naive_summation(rng):
    data = rng.standard_normal((3, 8, 20))
    got = ad.mean(Tensor(data), axis=2).data
    want = np.stack([[sum(data[b, c, t] for t in range(20)) / 20 for c in range(8)] for b in range(3)])
    assert np.max(np.abs(got - want)) < 1e-12


def test_gim_anchor_of_constant_embedding_equals_frames(rng):
    frame = rng.standard_normal((2, 8, 1))
    emb = Tensor(np.repeat(frame, 25, axis=2))
    anchor = ad.mean(emb, axis=2).data
    assert np.allclose(anchor, frame[:, :, 0], atol=1e-12)


# --- info-max loss ----------------------------------------------------------------


def test_infomax_loss_log2_at_zero_logits(rng):
    head = W.WorkerHead("h", 8, 1, rng)
    head.w2.data[:] = 0.0
    head.b2.data[:] = 0.0  # logits forced to 0 on every pair
    x = Tensor(rng.standard_normal((6, 4)).astype(np.float32))
    loss = W.infomax_loss(head, x, x, x)
    assert loss.item() == pytest.approx(np.log(2), rel=1e-6)


def test_infomax_loss_separable_case(rng):
    class SignHead:
        def forward(self, pair):
            anchor, other = pair.data[:, :4], pair.data[:, 4:]
            same = np.sign((anchor * other).sum(axis=1, keepdims=True))
            return Tensor((50.0 * same).astype(np.float32))

    anchor = Tensor(np.ones((5, 4), dtype=np.float32))
    positive = Tensor(np.ones((5, 4), dtype=np.float32))
    negative = Tensor(-np.ones((5, 4), dtype=np.float32))
    loss = W.infomax_loss(SignHead(), anchor, positive, negative)
    assert loss.item() < 1e-9


def test_infomax_loss_matches_direct_bce(rng):
    head = W.WorkerHead("h", 16, 1, rng)
    a = Tensor(rng.standard_normal((7, 8)).astype(np.float32))
    p = Tensor(rng.standard_normal((7, 8)).astype(np.float32))
    n = Tensor(rng.standard_normal((7, 8)).astype(np.float32))
    loss = W.infomax_loss(head, a, p, n)

    with ad.no_grad():
        pos = head.forward(ad.concat([a, p], axis=1)).data.reshape(-1).astype(np.float64)
        neg = head.forward(ad.concat([a, n], axis=1)).data.reshape(-1).astype(np.float64)
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    direct = float(
        np.mean(np.concatenate([-np.log(sig(pos)), -np.log(1.0 - sig(neg))]))
    )
    assert loss.item() == pytest.approx(direct, abs=1e-6)


def test_total_loss_contracts(rng):
    one = Tensor(np.asarray(1.0, dtype=np.float32))
    three = Tensor(np.asarray(3.0, dtype=np.float32))
    assert W.total_loss([one, three]).item() == pytest.approx(2.0)
    assert W.total_loss([three]).item() == pytest.approx(3.0)

    losses = [Tensor(np.asarray(v)) for v in rng.uniform(0, 2, 12)]
    want = float(np.mean([t.data for t in losses]))
    assert W.total_loss(losses).item() == pytest.approx(want, abs=1e-12)

    with pytest.raises(EmptyList):
        W.total_loss([])


def test_total_loss_gradient_distributes_equally(rng):
    leaves = [Tensor(np.asarray(v), requires_grad=True) for v in rng.uniform(0, 1, 6)]
    W.total_loss(list(leaves)).backward()
    for leaf in leaves:
        assert leaf.grad == pytest.approx(1.0 / 6.0)


def test_worker_set_parameters_unique(rng):
    ws = W.WorkerSet(W.default_roster(), 256, rng, SR)
    names = [p.name for p in ws.parameters()]
    assert len(names) == len(set(names))
    assert len(ws.heads) == 12
    assert ws.heads["lim"].w1.data.shape == (256, 512)  # pair input
    assert ws.heads["wave"].w2.data.shape == (160, 256)
