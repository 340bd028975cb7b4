"""Subcommand front-end wiring the pipeline end to end.

One JSON config file covers every stage; flags override the file, and the
effective merged config is echoed into the output directory so any run can
be reproduced from its artifacts alone. Each command writes only inside the
output directory. Exit codes: 0 success, 1 validation error, 2 runtime
failure.

Pipeline artifacts inside the output directory:

  manifest_generated.jsonl    gen        corpus plus generations
  manifest_calibrated.jsonl   calibrate  generations with kept flags set
  checkpoints/                train      training checkpoints
  metrics.jsonl               train      one record per epoch
  eval_report.json            eval       metrics for the configured tasks
  experiment_<name>/          experiment seeded scenario results
  summary.json                report     merged view of the above
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .calibration import calibrate_filter
from .clients import (CachedCompletionClient, CachedFillMaskClient,
                      ClientError, CompletionClientConfig, HttpCompletionClient,
                      HttpFillMaskClient, HttpTransport, StubCompletionClient,
                      StubFillMaskClient)
from .corpus import CorpusError, load_manifest, save_manifest
from .encoders import EncoderConfig
from .evaluation import (EvalError, build_verb_split, eval_multiple_choice,
                         eval_pair_ap, eval_retrieval, eval_zero_shot,
                         load_classification_task, load_mc_items,
                         load_retrieval_pairs, load_scored_pairs,
                         subset_resample_protocol, write_confusion_csv)
from .experiments import (EXPERIMENT_NAMES, run_attraction_point,
                          run_ratio_law, run_shortcut)
from .lexicon import LexiconResources
from .losses import LossConfig
from .textgen import GenBackendConfig, TextGenError, generate_for_manifest
from .trainer import (TrainConfig, TrainerError, load_train_checkpoint,
                      train_loop)


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "manifest": None,
    "out": "runs/default",
    "seed": 0,
    "gen": {
        "backend": "llm_completion",
        "kinds": ["hard_negative"],
        "candidates_per_caption": 10,
        "top_k_fill": 50,
        "include_exemplars": True,
        "extractor": "rule_tagger",
        "lexicon": "default",
        "transcript": None,
        "fill_transcript": None,
        "endpoint": "",
        "auth_env": "VERBFOCUS_API_TOKEN",
        "cache_dir": None,
        "timeout": 30.0,
        "max_retries": 3,
    },
    "loss": {
        "sigma": 5e-3,
        "lambda1": 2.0,
        "lambda2": 1.0,
        "lambda3": 1.0,
        "negative_variant": "calibrated_hn",
        "nce_mode": "standard",
        "alpha": 1.0,
        "beta": 0.1,
        "normalize_by_uniform": True,
        "verb_phrase_direction": "v2t_only",
    },
    "encoder": {
        "dim": 32,
        "init_scale": None,
        "freeze_video": False,
        "freeze_text": False,
    },
    "train": {
        "input": None,
        "batch_size": 256,
        "epochs": 100,
        "learning_rate": 0.05,
        "weight_decay": 1e-2,
        "n_hard_max": 5,
        "checkpoint_every": 0,
    },
    "eval": {
        "checkpoint": None,
        "mc_items": None,
        "retrieval_pairs": None,
        "classification": None,
        "pair_ap": None,
        "ks": [1, 5, 10],
        "verb_split": False,
        "subset_m": None,
        "subset_repeats": 3,
    },
    "experiment": {
        "name": "ratio_law",
        "epochs": None,
        "batch_size": None,
    },
}


def _check_keys(data: dict, schema: dict, prefix: str = "") -> None:
    for key, value in data.items():
        if key not in schema:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if isinstance(schema[key], dict) and isinstance(value, dict):
            _check_keys(value, schema[key], f"{prefix}{key}.")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    _check_keys(data, DEFAULTS)
    return _deep_merge(DEFAULTS, data)


def apply_flags(cfg: dict, args: argparse.Namespace) -> dict:
    if args.out is not None:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.backend is not None:
        cfg["gen"]["backend"] = args.backend
    if args.loss_variant is not None:
        cfg["loss"]["negative_variant"] = args.loss_variant
    if args.nce_mode is not None:
        cfg["loss"]["nce_mode"] = args.nce_mode
    if args.n_hard is not None:
        cfg["train"]["n_hard_max"] = args.n_hard
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
        cfg["experiment"]["epochs"] = args.epochs
    if args.no_exemplars:
        cfg["gen"]["include_exemplars"] = False
    if args.freeze_video:
        cfg["encoder"]["freeze_video"] = True
    if args.freeze_text:
        cfg["encoder"]["freeze_text"] = True
    return cfg


def make_train_config(cfg: dict) -> TrainConfig:
    try:
        loss = LossConfig(**cfg["loss"])
        encoder = EncoderConfig(seed=cfg["seed"], **cfg["encoder"])
        t = dict(cfg["train"])
        t.pop("input", None)
        return TrainConfig(seed=cfg["seed"], loss=loss, encoder=encoder, **t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: Path) -> None:
    (out / "config.json").write_text(
        json.dumps(cfg, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _require_manifest(cfg: dict):
    path = cfg["manifest"]
    if not path:
        raise ConfigError("no input corpus: set `manifest` in the config or file")
    if not Path(path).exists():
        raise ConfigError(f"manifest not found: {path}")
    return load_manifest(path)


def _build_resources(cfg: dict, manifest):
    choice = cfg["gen"]["lexicon"]
    if choice == "default":
        return LexiconResources.default()
    if choice == "manifest":
        return LexiconResources.from_manifest(manifest)
    raise ConfigError(f"gen.lexicon must be 'default' or 'manifest', got {choice!r}")


def _build_client(cfg: dict):
    """Completion or fill-mask client per the generation backend, or None."""
    gen = cfg["gen"]
    backend = gen["backend"]
    wants_completion = backend == "llm_completion" or gen["extractor"] == "llm_completion"
    ccfg = CompletionClientConfig(
        endpoint=gen["endpoint"], auth_env=gen["auth_env"], timeout=gen["timeout"],
        max_retries=gen["max_retries"], cache_dir=gen["cache_dir"])
    transport = None
    if backend == "t5_cloze":
        if gen["fill_transcript"]:
            client = StubFillMaskClient.from_file(gen["fill_transcript"])
        elif gen["endpoint"]:
            transport = HttpTransport(ccfg)
            client = HttpFillMaskClient(ccfg, transport)
        else:
            raise ConfigError(
                "t5_cloze needs gen.fill_transcript or gen.endpoint")
        if gen["cache_dir"]:
            client = CachedFillMaskClient(client, gen["cache_dir"])
        return client, transport
    if wants_completion:
        if gen["transcript"]:
            client = StubCompletionClient.from_file(gen["transcript"])
        elif gen["endpoint"]:
            transport = HttpTransport(ccfg)
            client = HttpCompletionClient(ccfg, transport)
        else:
            raise ConfigError(
                "llm_completion needs gen.transcript or gen.endpoint")
        if gen["cache_dir"]:
            client = CachedCompletionClient(client, gen["cache_dir"])
        return client, transport
    return None, None


def cmd_gen(cfg: dict) -> int:
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    manifest = _require_manifest(cfg)
    gen = cfg["gen"]
    resources = _build_resources(cfg, manifest)
    client, transport = _build_client(cfg)
    gcfg = GenBackendConfig(
        backend=gen["backend"],
        candidates_per_caption=gen["candidates_per_caption"],
        top_k_fill=gen["top_k_fill"],
        seed=cfg["seed"],
        include_exemplars=gen["include_exemplars"],
    )
    before = len(manifest.generations)
    result = generate_for_manifest(
        manifest, gcfg, resources, client,
        kinds=tuple(gen["kinds"]), extractor=gen["extractor"])
    save_manifest(result, out / "manifest_generated.jsonl")
    counts = {}
    for g in result.generations[before:]:
        counts[g.kind] = counts.get(g.kind, 0) + 1
    report = {
        "input_captions": len(manifest.captions),
        "generated": counts,
        "backend": gen["backend"],
        "network_calls": transport.network_calls if transport else 0,
    }
    if hasattr(client, "hits"):
        report["cache"] = {"hits": client.hits, "misses": client.misses}
    (out / "gen_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"generated {sum(counts.values())} caption(s) -> {out / 'manifest_generated.jsonl'}")
    print(f"network calls: {report['network_calls']}")
    return 0


def cmd_calibrate(cfg: dict) -> int:
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    gen_path = out / "manifest_generated.jsonl"
    if gen_path.exists():
        manifest = load_manifest(gen_path)
    elif cfg["manifest"] and Path(cfg["manifest"]).exists():
        manifest = load_manifest(cfg["manifest"])
    else:
        raise ConfigError(
            f"{gen_path} not found; run the gen command first")
    if not any(g.kind == "hard_negative" for g in manifest.generations):
        raise ConfigError(
            "manifest has no generated hard negatives; run the gen command first")
    filtered, report = calibrate_filter(manifest)
    save_manifest(filtered, out / "manifest_calibrated.jsonl")
    (out / "calibration_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
    print(report.render(top_k=10))
    print(f"wrote {out / 'manifest_calibrated.jsonl'}")
    return 0


def _resolve_train_input(cfg: dict, out: Path):
    explicit = cfg["train"]["input"]
    if explicit:
        if not Path(explicit).exists():
            raise ConfigError(f"train.input not found: {explicit}")
        return load_manifest(explicit)
    variant = cfg["loss"]["negative_variant"]
    cal_path = out / "manifest_calibrated.jsonl"
    gen_path = out / "manifest_generated.jsonl"
    if variant == "calibrated_hn":
        if cal_path.exists():
            return load_manifest(cal_path)
        if gen_path.exists():
            raise ConfigError(
                f"{cal_path} not found; run the calibrate command first")
    if variant == "hn_uncalibrated":
        for p in (cal_path, gen_path):
            if p.exists():
                return load_manifest(p)
        raise ConfigError(
            f"{gen_path} not found; run the gen command first")
    for p in (cal_path, gen_path):
        if p.exists():
            return load_manifest(p)
    return _require_manifest(cfg)


def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    manifest = _resolve_train_input(cfg, out)
    tcfg = make_train_config(cfg)
    if tcfg.loss.negative_variant in ("hn_uncalibrated", "calibrated_hn"):
        if not any(g.kind == "hard_negative" and g.kept for g in manifest.generations):
            raise ConfigError(
                "no kept hard negatives in the training manifest; "
                "run the gen and calibrate commands first")
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    state, metrics = train_loop(
        manifest, tcfg, log_path=out / "metrics.jsonl", checkpoint_dir=str(ckpt_dir))
    final = metrics[-1] if metrics else {}
    print(f"trained {state.epoch} epoch(s), {state.step} step(s)")
    if final:
        print(f"final loss {final['total']:.6f} "
              f"(t2v {final['t2v']:.4f} chn {final['chn']:.4f} "
              f"verb {final['verb_phrase']:.4f})")
    print(f"checkpoint: {ckpt_dir / 'checkpoint_final.bin'}")
    return 0


def cmd_eval(cfg: dict) -> int:
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    ev = cfg["eval"]
    ckpt = ev["checkpoint"] or out / "checkpoints" / "checkpoint_final.bin"
    if not Path(ckpt).exists():
        raise ConfigError(f"checkpoint not found: {ckpt}; run the train command first")
    state, _tcfg = load_train_checkpoint(ckpt)
    enc = state.encoders
    report: dict = {}
    if ev["mc_items"]:
        items = load_mc_items(ev["mc_items"])
        report["multiple_choice"] = eval_multiple_choice(enc, items).to_dict()
    if ev["retrieval_pairs"]:
        pairs = load_retrieval_pairs(ev["retrieval_pairs"])
        report["retrieval"] = eval_retrieval(enc, pairs, ks=tuple(ev["ks"]))
    if ev["classification"]:
        task = load_classification_task(ev["classification"])
        zs = eval_zero_shot(enc, task)
        report["zero_shot"] = zs.to_dict()
        write_confusion_csv(out / "confusion.csv", zs, task.labels)
        split = task.verb_split
        if ev["verb_split"] and split is None:
            split = build_verb_split(task.labels)
        if split:
            report["verb_split"] = eval_zero_shot(enc, task, class_subset=split).to_dict()
        if ev["subset_m"]:
            report["subset_resample"] = subset_resample_protocol(
                enc, task, m=ev["subset_m"], repeats=ev["subset_repeats"],
                seed=cfg["seed"])
    if ev["pair_ap"]:
        report["pair_ap"] = eval_pair_ap(enc, load_scored_pairs(ev["pair_ap"]))
    if not report:
        raise ConfigError("no eval tasks configured: set eval.mc_items, "
                          "eval.retrieval_pairs, eval.classification, or eval.pair_ap")
    (out / "eval_report.json").write_text(
        json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    for task_name, metrics in report.items():
        if isinstance(metrics, dict):
            keys = [k for k in ("accuracy", "top1", "top5", "average") if k in metrics]
            shown = {k: metrics[k] for k in keys} if keys else ""
            print(f"{task_name}: {shown if shown else 'written'}")
        else:
            print(f"{task_name}: {metrics}")
    print(f"wrote {out / 'eval_report.json'}")
    return 0


def cmd_report(cfg: dict) -> int:
    out = _out_dir(cfg)
    summary: dict = {}
    for name in ("gen_report", "calibration_report", "eval_report"):
        path = out / f"{name}.json"
        if path.exists():
            summary[name] = json.loads(path.read_text(encoding="utf-8"))
    metrics_path = out / "metrics.jsonl"
    if metrics_path.exists():
        rows = [json.loads(line) for line in
                metrics_path.read_text(encoding="utf-8").splitlines() if line]
        if rows:
            summary["train"] = {"epochs": len(rows), "first": rows[0], "last": rows[-1]}
    for exp_dir in sorted(out.glob("experiment_*")):
        result = exp_dir / "result.json"
        if result.exists():
            summary[exp_dir.name] = json.loads(result.read_text(encoding="utf-8"))
    if not summary:
        raise ConfigError(f"nothing to report in {out}; run other commands first")
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"sections: {', '.join(sorted(summary))}")
    print(f"wrote {out / 'summary.json'}")
    return 0


def cmd_experiment(cfg: dict, name: str) -> int:
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    exp_dir = out / f"experiment_{name}"
    exp_dir.mkdir(exist_ok=True)
    seed = cfg["seed"]
    epochs = cfg["experiment"]["epochs"]
    batch = cfg["experiment"]["batch_size"]
    if name == "ratio_law":
        kwargs = {"seed": seed}
        if epochs:
            kwargs["epochs"] = epochs
        if batch:
            kwargs["batch_size"] = batch
        result = run_ratio_law(**kwargs)
        worst = max(result.max_rel_err.values())
        print(f"ratio law: max relative deviation {worst:.3e} over "
              f"{len(result.per_variant['baseline'])} concepts, "
              f"{result.epochs} epochs, B={result.batch_size}")
        for variant, err in sorted(result.max_rel_err.items()):
            print(f"  {variant}: max rel err {err:.3e}")
    elif name == "attraction_point":
        dirs = (str(exp_dir / "uncalibrated"), str(exp_dir / "calibrated"))
        for d in dirs:
            Path(d).mkdir(exist_ok=True)
        kwargs = {"seed": seed, "checkpoint_dirs": dirs}
        if epochs:
            kwargs["epochs"] = epochs
        if batch:
            kwargs["batch_size"] = batch
        result = run_attraction_point(**kwargs)
        print(f"attraction point: magnet {result.magnet_label!r}")
        print(f"  uncalibrated magnet share ratio "
              f"{result.magnet_share_ratio_uncalibrated:.2f}x prevalence")
        print(f"  calibrated max share ratio "
              f"{result.max_share_ratio_calibrated:.2f}x prevalence")
        print(f"  group macro accuracy: uncalibrated "
              f"{result.group_macro_uncalibrated:.3f} vs calibrated "
              f"{result.group_macro_calibrated:.3f}")
    elif name == "shortcut":
        dirs = (str(exp_dir / "baseline"), str(exp_dir / "vfc"))
        for d in dirs:
            Path(d).mkdir(exist_ok=True)
        kwargs = {"seed": seed, "checkpoint_dirs": dirs}
        if epochs:
            kwargs["epochs"] = epochs
        if batch:
            kwargs["batch_size"] = batch
        result = run_shortcut(**kwargs)
        print(f"shortcut: verb-hard MC baseline {result.baseline_verb_mc:.3f} "
              f"vs VFC {result.vfc_verb_mc:.3f}")
        print(f"  context MC baseline {result.baseline_noun_mc:.3f} "
              f"vs VFC {result.vfc_noun_mc:.3f}")
    else:
        raise ConfigError(f"unknown experiment {name!r}")
    (exp_dir / "result.json").write_text(
        json.dumps(result.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
    print(f"wrote {exp_dir / 'result.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory for all artifacts")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--backend", choices=("llm_completion", "t5_cloze",
                                              "random_verb", "antonym_verb"),
                        help="generation backend")
    common.add_argument("--loss-variant", dest="loss_variant",
                        choices=("none", "hn_uncalibrated", "calibrated_hn"))
    common.add_argument("--nce-mode", dest="nce_mode",
                        choices=("standard", "hardneg_nce"))
    common.add_argument("--n-hard", dest="n_hard", type=int,
                        help="max sampled hard negatives per item")
    common.add_argument("--epochs", type=int)
    common.add_argument("--no-exemplars", dest="no_exemplars", action="store_true",
                        help="render prompts without in-context exemplars")
    common.add_argument("--freeze-video", dest="freeze_video", action="store_true")
    common.add_argument("--freeze-text", dest="freeze_text", action="store_true")

    parser = argparse.ArgumentParser(
        prog="verbfocus",
        description="verb-focused contrastive training pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate captions and phrases")
    sub.add_parser("calibrate", parents=[common], help="filter generated negatives")
    sub.add_parser("train", parents=[common], help="train the dual encoders")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    sub.add_parser("report", parents=[common], help="merge run artifacts")
    pexp = sub.add_parser("experiment", parents=[common],
                          help="run a packaged seeded experiment")
    pexp.add_argument("name", choices=EXPERIMENT_NAMES)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.config), args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "report":
            return cmd_report(cfg)
        if args.command == "experiment":
            return cmd_experiment(cfg, args.name)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, CorpusError, EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TextGenError, TrainerError, ClientError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
