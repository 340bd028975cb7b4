"""End-to-end command flow: gen, calibrate, train, eval, report."""

import json

import pytest

from verbfocus.cli import ConfigError, DEFAULTS, load_config, main
from verbfocus.corpus import CaptionRecord, DatasetManifest, VerbPhrase, VideoRecord, save_manifest
from verbfocus.evaluation import MultipleChoiceItem, save_mc_items


def write_corpus(path):
    texts = [
        ("v0", "a person eating in the park", "eating"),
        ("v1", "a person running in the park", "running"),
        ("v2", "a person walking near the lake", "walking"),
        ("v3", "a person swimming near the lake", "swimming"),
        ("v4", "a person sleeping at home", "sleeping"),
        ("v5", "a person cooking at home", "cooking"),
    ]
    videos = [VideoRecord(vid, "train") for vid, _, _ in texts]
    videos.append(VideoRecord("v6", "val"))
    captions = [CaptionRecord(vid, text, (VerbPhrase(verb),)) for vid, text, verb in texts]
    captions.append(CaptionRecord("v6", "a person reading at home", (VerbPhrase("reading"),)))
    manifest = DatasetManifest(videos, captions, [])
    save_manifest(manifest, path)
    return manifest


def write_config(path, manifest_path, out_dir, **sections):
    cfg = {
        "manifest": str(manifest_path),
        "out": str(out_dir),
        "loss": {"sigma": 0.05},
        "train": {"batch_size": 4, "epochs": 3, "learning_rate": 0.05},
        "encoder": {"dim": 8},
    }
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def test_load_config_defaults_and_merge(tmp_path):
    assert load_config(None) == DEFAULTS
    p = tmp_path / "c.json"
    p.write_text('{"seed": 5, "train": {"epochs": 7}}')
    cfg = load_config(str(p))
    assert cfg["seed"] == 5
    assert cfg["train"]["epochs"] == 7
    assert cfg["train"]["batch_size"] == DEFAULTS["train"]["batch_size"]


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(str(p))
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(p))
    p.write_text('{"trai": {}}')
    with pytest.raises(ConfigError, match="unknown config key: trai"):
        load_config(str(p))
    p.write_text('{"train": {"learning_rat": 0.1}}')
    with pytest.raises(ConfigError, match="train.learning_rat"):
        load_config(str(p))


def test_pipeline_gen_calibrate_train_eval_report(tmp_path, capsys):
    manifest_path = tmp_path / "manifest.jsonl"
    write_corpus(manifest_path)
    out = tmp_path / "run"
    cfg_path = write_config(
        tmp_path / "cfg.json", manifest_path, out,
        gen={"backend": "random_verb", "candidates_per_caption": 3,
             "lexicon": "manifest"},
        eval={"mc_items": str(tmp_path / "mc.jsonl"),
              "retrieval_pairs": str(tmp_path / "pairs.jsonl"),
              "classification": str(tmp_path / "task.jsonl"),
              "pair_ap": str(tmp_path / "scored.jsonl"),
              "verb_split": True,
              "subset_m": 3},
    )

    assert main(["gen", "--config", str(cfg_path)]) == 0
    assert (out / "manifest_generated.jsonl").exists()
    gen_report = json.loads((out / "gen_report.json").read_text())
    assert gen_report["backend"] == "random_verb"
    assert gen_report["network_calls"] == 0
    assert gen_report["generated"]["hard_negative"] > 0
    assert (out / "config.json").exists()

    assert main(["calibrate", "--config", str(cfg_path)]) == 0
    cal_report = json.loads((out / "calibration_report.json").read_text())
    assert cal_report["kept"] > 0
    assert (out / "manifest_calibrated.jsonl").exists()

    assert main(["train", "--config", str(cfg_path)]) == 0
    assert (out / "checkpoints" / "checkpoint_final.bin").exists()
    rows = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1, 2]

    # Eval task files reference the trained corpus.
    items = [
        MultipleChoiceItem("v0", (
            "a person eating in the park",
            "a person running in the park",
            "a person walking near the lake",
            "a person swimming near the lake",
            "a person sleeping at home",
        ), 0, ("positive", "hard_verb_negative", "random_negative",
               "random_negative", "random_negative")),
    ]
    save_mc_items(tmp_path / "mc.jsonl", items)
    with open(tmp_path / "pairs.jsonl", "w") as fh:
        for vid, text in [("v0", "a person eating in the park"),
                          ("v1", "a person running in the park"),
                          ("v2", "a person walking near the lake")]:
            fh.write(json.dumps({"record": "pair", "video_id": vid, "text": text}) + "\n")
    with open(tmp_path / "task.jsonl", "w") as fh:
        labels = ["person eating", "person running", "person walking",
                  "person swimming", "person sleeping", "person cooking"]
        fh.write(json.dumps({"record": "class_labels", "labels": labels}) + "\n")
        for i in range(6):
            fh.write(json.dumps({"record": "class_item", "video_id": f"v{i}",
                                 "class_index": i}) + "\n")
    with open(tmp_path / "scored.jsonl", "w") as fh:
        fh.write(json.dumps({"record": "scored_pair", "video_id": "v0",
                             "text": "a person eating in the park", "label": "pos"}) + "\n")
        fh.write(json.dumps({"record": "scored_pair", "video_id": "v0",
                             "text": "a person running in the park", "label": "neg"}) + "\n")

    assert main(["eval", "--config", str(cfg_path)]) == 0
    report = json.loads((out / "eval_report.json").read_text())
    assert set(report) == {"multiple_choice", "retrieval", "zero_shot",
                           "verb_split", "subset_resample", "pair_ap"}
    # All six labels share the context token "person", so the verb split
    # covers every class.
    assert report["verb_split"]["class_indices"] == [0, 1, 2, 3, 4, 5]
    assert (out / "confusion.csv").exists()

    assert main(["report", "--config", str(cfg_path)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert {"gen_report", "calibration_report", "eval_report", "train"} <= set(summary)
    capsys.readouterr()


def test_missing_artifact_errors(tmp_path, capsys):
    manifest_path = tmp_path / "manifest.jsonl"
    write_corpus(manifest_path)
    out = tmp_path / "run"
    cfg_path = write_config(tmp_path / "cfg.json", manifest_path, out,
                            gen={"backend": "random_verb"})

    assert main(["calibrate", "--config", str(cfg_path)]) == 1
    assert "run the gen command first" in capsys.readouterr().err

    assert main(["eval", "--config", str(cfg_path)]) == 1
    assert "run the train command first" in capsys.readouterr().err

    assert main(["gen", "--config", str(cfg_path)]) == 0
    capsys.readouterr()
    # calibrated_hn training demands the calibrate step in between.
    assert main(["train", "--config", str(cfg_path)]) == 1
    assert "run the calibrate command first" in capsys.readouterr().err

    assert main(["report", "--out", str(tmp_path / "empty")]) == 1
    assert "run other commands first" in capsys.readouterr().err


def test_gen_without_manifest_fails(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "o"),
                               "gen": {"backend": "random_verb"}}))
    assert main(["gen", "--config", str(cfg)]) == 1
    assert "no input corpus" in capsys.readouterr().err


def test_train_baseline_variant_needs_no_generation(tmp_path, capsys):
    manifest_path = tmp_path / "manifest.jsonl"
    write_corpus(manifest_path)
    out = tmp_path / "run"
    cfg_path = write_config(tmp_path / "cfg.json", manifest_path, out)
    assert main(["train", "--config", str(cfg_path), "--loss-variant", "none"]) == 0
    assert (out / "checkpoints" / "checkpoint_final.bin").exists()
    capsys.readouterr()


def test_flag_overrides_reach_the_artifacts(tmp_path, capsys):
    manifest_path = tmp_path / "manifest.jsonl"
    write_corpus(manifest_path)
    out = tmp_path / "run"
    cfg_path = write_config(tmp_path / "cfg.json", manifest_path, out)
    assert main(["train", "--config", str(cfg_path), "--loss-variant", "none",
                 "--epochs", "2", "--seed", "11"]) == 0
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["train"]["epochs"] == 2
    assert echoed["seed"] == 11
    assert echoed["loss"]["negative_variant"] == "none"
    rows = (out / "metrics.jsonl").read_text().splitlines()
    assert len(rows) == 2
    capsys.readouterr()


def test_gen_transcript_cache_round(tmp_path, capsys):
    """Second generation run against a warm cache never touches the client."""
    manifest_path = tmp_path / "manifest.jsonl"
    manifest = DatasetManifest(
        [VideoRecord("v0", "train"), VideoRecord("v1", "train")],
        [CaptionRecord("v0", "a person eating in the park"),
         CaptionRecord("v1", "a person running in the park")],
        [])
    save_manifest(manifest, manifest_path)
    transcript = tmp_path / "transcript.jsonl"
    with open(transcript, "w") as fh:
        fh.write(json.dumps({
            "input": "a person eating in the park",
            "candidates": ["1. a person cooking in the park\n2. a person walking in the park"],
        }) + "\n")
        fh.write(json.dumps({
            "input": "a person running in the park",
            "candidates": ["1. a person swimming in the park"],
        }) + "\n")
    cache_dir = tmp_path / "cache"

    def cfg_for(out):
        return write_config(
            tmp_path / f"cfg_{out.name}.json", manifest_path, out,
            gen={"backend": "llm_completion", "transcript": str(transcript),
                 "cache_dir": str(cache_dir), "candidates_per_caption": 3},
        )

    out_a = tmp_path / "run_a"
    assert main(["gen", "--config", str(cfg_for(out_a))]) == 0
    report_a = json.loads((out_a / "gen_report.json").read_text())
    assert report_a["cache"] == {"hits": 0, "misses": 2}
    assert report_a["network_calls"] == 0

    out_b = tmp_path / "run_b"
    assert main(["gen", "--config", str(cfg_for(out_b))]) == 0
    report_b = json.loads((out_b / "gen_report.json").read_text())
    assert report_b["cache"] == {"hits": 2, "misses": 0}
    assert report_b["network_calls"] == 0
    assert (out_a / "manifest_generated.jsonl").read_bytes() == \
        (out_b / "manifest_generated.jsonl").read_bytes()
    capsys.readouterr()


def test_gen_t5_cloze_stub_and_slot_mismatch(tmp_path, capsys):
    manifest_path = tmp_path / "manifest.jsonl"
    manifest = DatasetManifest(
        [VideoRecord("v0", "train")],
        [CaptionRecord("v0", "a person eating and drinking at home")],
        [])
    save_manifest(manifest, manifest_path)
    masked = "a person [MASK] and [MASK] at home"

    good = tmp_path / "fills.jsonl"
    good.write_text(json.dumps({
        "text_with_masks": masked,
        "fills": [["cooking", "walking"], ["reading", "sleeping"]],
    }) + "\n")
    out = tmp_path / "run"
    cfg_path = write_config(tmp_path / "cfg.json", manifest_path, out,
                            gen={"backend": "t5_cloze", "fill_transcript": str(good)})
    assert main(["gen", "--config", str(cfg_path)]) == 0
    report = json.loads((out / "gen_report.json").read_text())
    assert report["generated"]["hard_negative"] == 2

    bad = tmp_path / "bad_fills.jsonl"
    bad.write_text(json.dumps({"text_with_masks": masked, "fills": [["cooking"]]}) + "\n")
    cfg_bad = write_config(tmp_path / "cfg_bad.json", manifest_path, tmp_path / "run_bad",
                           gen={"backend": "t5_cloze", "fill_transcript": str(bad)})
    assert main(["gen", "--config", str(cfg_bad)]) == 2
    assert "runtime failure" in capsys.readouterr().err


def test_gen_llm_completion_needs_transcript_or_endpoint(tmp_path, capsys):
    manifest_path = tmp_path / "manifest.jsonl"
    write_corpus(manifest_path)
    cfg_path = write_config(tmp_path / "cfg.json", manifest_path, tmp_path / "run")
    assert main(["gen", "--config", str(cfg_path)]) == 1
    assert "gen.transcript or gen.endpoint" in capsys.readouterr().err


def test_missing_transcript_file_is_a_runtime_failure(tmp_path, capsys):
    manifest_path = tmp_path / "manifest.jsonl"
    write_corpus(manifest_path)
    cfg_path = write_config(
        tmp_path / "cfg.json", manifest_path, tmp_path / "run",
        gen={"transcript": str(tmp_path / "nope.jsonl")})
    assert main(["gen", "--config", str(cfg_path)]) == 2
    assert "runtime failure" in capsys.readouterr().err
