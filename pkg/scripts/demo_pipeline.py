#!/usr/bin/env python3
"""Walk the full artifact flow on a small synthetic corpus.

Writes a 12-video crossed corpus (three scenes, four actions each) plus a
retrieval task, then drives gen -> calibrate -> train -> eval -> report
through the command-line entry points. Generation uses the offline
random_verb backend with the manifest lexicon, so the hard negatives swap
in sibling verbs from the corpus itself and survive calibration. Every
artifact the commands leave behind ends up under --out.
"""

import argparse
import json
import sys
from pathlib import Path

from verbfocus.cli import main as cli_main
from verbfocus.corpus import (CaptionRecord, DatasetManifest, VerbPhrase,
                              VideoRecord, save_manifest)

SCENES = [
    ("in the park", ["eating", "running", "walking", "dancing"]),
    ("near the lake", ["swimming", "fishing", "rowing", "diving"]),
    ("at home", ["cooking", "sleeping", "reading", "cleaning"]),
]


def write_inputs(data_dir: Path, out_dir: Path):
    videos, captions = [], []
    for scene, verbs in SCENES:
        for verb in verbs:
            vid = f"demo{len(videos):02d}"
            videos.append(VideoRecord(vid, "train"))
            captions.append(CaptionRecord(
                vid, f"a person {verb} {scene}", (VerbPhrase(verb),)))
    manifest_path = data_dir / "manifest.jsonl"
    save_manifest(DatasetManifest(videos, captions, []), manifest_path)

    pairs_path = data_dir / "retrieval_pairs.jsonl"
    with open(pairs_path, "w", encoding="utf-8") as fh:
        for cap in captions:
            fh.write(json.dumps({"record": "pair", "video_id": cap.video_id,
                                 "text": cap.text}) + "\n")

    cfg = {
        "manifest": str(manifest_path),
        "out": str(out_dir),
        "gen": {"backend": "random_verb", "lexicon": "manifest",
                "candidates_per_caption": 3},
        "loss": {"sigma": 0.05},
        "encoder": {"dim": 16},
        "train": {"batch_size": 4, "epochs": 40},
        "eval": {"retrieval_pairs": str(pairs_path)},
    }
    cfg_path = data_dir / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    return cfg_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    out_dir = Path(args.out)
    data_dir = out_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = write_inputs(data_dir, out_dir)
    for command in ("gen", "calibrate", "train", "eval", "report"):
        print(f"== {command} ==")
        code = cli_main([command, "--config", str(cfg_path),
                         "--seed", str(args.seed)])
        if code:
            return code
        print()
    print(f"summary: {out_dir / 'summary.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
