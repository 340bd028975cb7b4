"""Batch sampling, SGD stepping, usage accounting, resume semantics."""

import json

import numpy as np
import pytest

from verbfocus.corpus import CaptionRecord, DatasetManifest, VerbPhrase, VideoRecord
from verbfocus.encoders import DualEncoders, EncoderConfig
from verbfocus.losses import LossConfig
from verbfocus.trainer import (
    TrainConfig,
    TrainState,
    TrainerError,
    UsageCounter,
    desk_config,
    load_train_checkpoint,
    materialize_batch,
    reference_config,
    sample_epoch,
    save_train_checkpoint,
    simulate_usage,
    train_loop,
    train_step,
)

from conftest import crossed_manifest


def tiny_cfg(**overrides):
    overrides.setdefault("batch_size", 4)
    overrides.setdefault("epochs", 2)
    overrides.setdefault("encoder", EncoderConfig(dim=6))
    return desk_config(**overrides)


def test_train_config_validation_and_roundtrip():
    cfg = tiny_cfg()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(n_hard_max=-1)
    with pytest.raises(ValueError):
        TrainConfig(checkpoint_every=-1)


def test_presets():
    """desk: lr 0.05 / sigma 0.05. reference: lr 1e-7 / sigma 5e-3, wd 1e-2."""
    desk = desk_config()
    assert desk.learning_rate == 0.05
    assert desk.loss.sigma == 0.05
    ref = reference_config()
    assert ref.learning_rate == 1e-7
    assert ref.loss.sigma == 5e-3
    assert ref.weight_decay == 1e-2
    override = desk_config(learning_rate=0.2)
    assert override.learning_rate == 0.2


def test_sample_epoch_partitions_train_captions():
    manifest = crossed_manifest(n_contexts=3, verbs=2, cell=2)
    cfg = tiny_cfg(batch_size=5)
    plan = sample_epoch(manifest, cfg, epoch=0)
    seen = [i for r in plan.records for i in r.caption_indices]
    # 12 captions at batch size 5: two full batches and a final pair.
    assert sorted(seen) == list(range(12))
    assert [len(r.caption_indices) for r in plan.records] == [5, 5, 2]


def test_sample_epoch_drops_short_tail():
    manifest = crossed_manifest(n_contexts=3, verbs=1, cell=1)
    plan = sample_epoch(manifest, tiny_cfg(batch_size=2), epoch=0)
    # 3 captions at batch size 2: the lone trailing item cannot form a batch.
    assert [len(r.caption_indices) for r in plan.records] == [2]


def test_sample_epoch_deterministic_and_epoch_varying():
    manifest = crossed_manifest(n_contexts=4, verbs=2, cell=1)
    cfg = tiny_cfg()
    a = sample_epoch(manifest, cfg, epoch=0)
    b = sample_epoch(manifest, cfg, epoch=0)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]
    c = sample_epoch(manifest, cfg, epoch=1)
    assert [r.caption_indices for r in a.records] != [r.caption_indices for r in c.records]


def test_sample_epoch_caps_hard_negatives():
    manifest = crossed_manifest(n_contexts=2, verbs=2, cell=1, copies=4)
    cfg = tiny_cfg(n_hard_max=3)
    plan = sample_epoch(manifest, cfg, epoch=0)
    pools = {}
    for idx, g in enumerate(manifest.generations):
        pools.setdefault((g.parent_video_id, g.parent_caption), []).append(idx)
    for record in plan.records:
        for ci, hidx in zip(record.caption_indices, record.hard_indices):
            cap = manifest.captions[ci]
            pool = pools.get((cap.video_id, cap.text), [])
            assert len(hidx) == min(len(pool), 3)
            assert set(hidx) <= set(pool)
            assert len(set(hidx)) == len(hidx)


def test_sample_epoch_empty_train_split_is_an_error():
    videos = [VideoRecord("v1", "val")]
    captions = [CaptionRecord("v1", "a cat sleeping", (VerbPhrase("sleeping"),))]
    manifest = DatasetManifest(videos, captions, [])
    with pytest.raises(TrainerError):
        sample_epoch(manifest, tiny_cfg(), epoch=0)


def test_phrase_choices_mark_phrase_free_captions():
    videos = [VideoRecord("v1", "train"), VideoRecord("v2", "train")]
    captions = [
        CaptionRecord("v1", "a plain scene"),
        CaptionRecord("v2", "a dog running", (VerbPhrase("running"),)),
    ]
    manifest = DatasetManifest(videos, captions, [])
    plan = sample_epoch(manifest, tiny_cfg(batch_size=2), epoch=0)
    record = plan.records[0]
    choice_by_caption = dict(zip(record.caption_indices, record.phrase_choices))
    assert choice_by_caption[0] == -1
    assert choice_by_caption[1] == 0


def test_materialize_batch_shapes_and_mask():
    manifest = crossed_manifest(n_contexts=2, verbs=2, cell=1, copies=2)
    cfg = tiny_cfg(batch_size=4, n_hard_max=2)
    enc = DualEncoders.from_manifest(manifest, cfg.encoder)
    record = sample_epoch(manifest, cfg, epoch=0).records[0]
    batch = materialize_batch(manifest, enc, record)
    B = len(record.caption_indices)
    assert batch.video.shape == (B, 6)
    assert batch.caption.shape == (B, 6)
    assert len(batch.hard) == B
    assert batch.verb is not None and batch.verb_mask.all()
    for i, ci in enumerate(record.caption_indices):
        np.testing.assert_array_equal(
            batch.video[i], enc.encode_video(manifest.captions[ci].video_id))
        np.testing.assert_array_equal(
            batch.caption[i], enc.encode_text(manifest.captions[ci].text))


def test_train_step_descends_on_tiny_manifest():
    manifest = crossed_manifest(n_contexts=3, verbs=2, cell=1, copies=1)
    cfg = tiny_cfg(batch_size=6, epochs=30, seed=1)
    state, metrics = train_loop(manifest, cfg)
    assert state.epoch == 30
    assert metrics[-1]["total"] < metrics[0]["total"]
    for key in ("epoch", "total", "t2v", "chn", "verb_phrase", "wall_ms"):
        assert key in metrics[0]


def test_train_loop_writes_metrics_log(tmp_path):
    manifest = crossed_manifest(n_contexts=2, verbs=2, cell=1)
    cfg = tiny_cfg(batch_size=4, epochs=3)
    log = tmp_path / "metrics.jsonl"
    train_loop(manifest, cfg, log_path=log)
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1, 2]


def test_resume_is_bit_exact(tmp_path):
    manifest = crossed_manifest(n_contexts=3, verbs=2, cell=1, copies=1)
    straight_cfg = tiny_cfg(batch_size=4, epochs=6, seed=7)
    straight, _ = train_loop(manifest, straight_cfg)

    half_cfg = tiny_cfg(batch_size=4, epochs=3, seed=7)
    half, _ = train_loop(manifest, half_cfg)
    ckpt = tmp_path / "half.bin"
    save_train_checkpoint(ckpt, half, half_cfg)
    resumed_state, _ = load_train_checkpoint(ckpt)
    assert resumed_state.epoch == 3
    resumed, _ = train_loop(manifest, straight_cfg, state=resumed_state)

    assert np.array_equal(resumed.encoders.video_table, straight.encoders.video_table)
    assert np.array_equal(resumed.encoders.token_table, straight.encoders.token_table)
    assert resumed.step == straight.step


def test_checkpoint_header_is_timing_free(tmp_path):
    manifest = crossed_manifest(n_contexts=2, verbs=2, cell=1)
    cfg = tiny_cfg(batch_size=4, epochs=1)
    state, _ = train_loop(manifest, cfg)
    path = tmp_path / "ckpt.bin"
    save_train_checkpoint(path, state, cfg)
    header = json.loads(path.read_bytes().split(b"\n", 1)[0])
    assert set(header) == {"format", "version", "train_config", "epoch", "step"}


def test_periodic_checkpoints(tmp_path):
    manifest = crossed_manifest(n_contexts=2, verbs=2, cell=1)
    cfg = tiny_cfg(batch_size=4, epochs=5, checkpoint_every=2)
    train_loop(manifest, cfg, checkpoint_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == [
        "checkpoint_epoch00002.bin",
        "checkpoint_epoch00004.bin",
        "checkpoint_final.bin",
    ]


def test_frozen_video_tower_stays_fixed():
    manifest = crossed_manifest(n_contexts=2, verbs=2, cell=1)
    cfg = tiny_cfg(batch_size=4, epochs=2,
                   encoder=EncoderConfig(dim=6, freeze_video=True))
    enc = DualEncoders.from_manifest(manifest, cfg.encoder)
    before = enc.video_table.copy()
    state, _ = train_loop(manifest, cfg, state=TrainState(encoders=enc))
    np.testing.assert_array_equal(state.encoders.video_table, before)
    assert not np.array_equal(state.encoders.token_table,
                              DualEncoders.from_manifest(manifest, cfg.encoder).token_table)


def test_usage_counter_accounting():
    """One batch of 3 with known phrases and negatives, tallied by hand."""
    videos = [VideoRecord(f"v{i}", "train") for i in range(3)]
    captions = [
        CaptionRecord("v0", "cap zero", (VerbPhrase("alpha"),)),
        CaptionRecord("v1", "cap one", (VerbPhrase("alpha"),)),
        CaptionRecord("v2", "cap two", (VerbPhrase("beta"),)),
    ]
    manifest = DatasetManifest(videos, captions, [])
    from verbfocus.trainer import BatchIndexRecord

    record = BatchIndexRecord(0, 0, [0, 1, 2], [[], [], []], [0, 0, 0])
    for variant, expected_alpha in (("baseline", 4 / 2), ("hn", 4 / 2), ("calibrated_hn", 4 / 2)):
        counter = UsageCounter(variant)
        counter.observe(manifest, record)
        # alpha: 2 positives, each with B-1 = 2 negative uses.
        assert counter.ratios()["alpha"] == expected_alpha

    gen_manifest = crossed_manifest(n_contexts=2, verbs=2, cell=1, copies=1)
    cfg = tiny_cfg(batch_size=4, loss=LossConfig(sigma=0.05, negative_variant="hn_uncalibrated"))
    hn = simulate_usage(gen_manifest, cfg, epochs=2)
    cal = simulate_usage(gen_manifest, cfg, epochs=2, variant="calibrated_hn")
    # Uncalibrated counts each sampled negative B times, calibrated once.
    assert all(hn.neg[c] >= cal.neg[c] for c in hn.neg)
    assert hn.pos == cal.pos


def test_usage_counter_accepts_loss_variant_names():
    assert UsageCounter("none").variant == "baseline"
    assert UsageCounter("hn_uncalibrated").variant == "hn"
    assert UsageCounter("calibrated_hn").variant == "calibrated_hn"
