"""Command-line entry point.

Subcommands: gen-corpus, pretrain, finetune, eval, sweep, inspect-masks,
export-similarity. A JSON run-config file is the source of truth for the
training commands; command-line flags override it, and the effective
config is written next to every run's outputs so any run is reproducible
from its output directory alone.

Conventions: human-readable text goes to stderr, machine-readable JSON to
stdout or files. Exit codes: 0 success, 1 runtime or I/O failure, 2 usage
error. SCMM_SEED provides a global default seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import corpus as corpus_mod
from . import masking
from . import metrics as metrics_mod
from . import network as net
from . import objectives as obj
from . import training
from .errors import ConfigurationError, ScmmError

SWEEP_PARAMS = ("r", "mu", "metric", "alpha", "tau_s", "tau_c", "batch_size")


def _default_seed():
    raw = os.environ.get("SCMM_SEED", "").strip()
    if not raw:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"SCMM_SEED must be an integer, got {raw!r}") from None


def _say(message):
    print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# run-config handling
# ---------------------------------------------------------------------------

_MASK_KEYS = {"strategy", "ratio", "threshold", "seed"}
_SOFTCL_KEYS = {"metric", "alpha", "sharpness", "temperature", "mode"}
_PRETRAIN_KEYS = {
    "epochs", "batch_size", "learning_rate", "weight_decay", "seed",
    "use_contrastive", "use_reconstruction",
    "aggregate_include_masked", "aggregate_anchor_masked", "mask", "softcl",
}
_FINETUNE_KEYS = {
    "epochs", "batch_size", "learning_rate", "weight_decay",
    "probe_mode", "label_fraction", "seed",
}
_NETWORK_KEYS = {
    "channel_count", "band_count", "class_count", "encoder",
    "embedding_dim", "projection_dim", "classifier_hidden",
}
_TOP_KEYS = {
    "pretrain_corpus", "finetune_corpus", "alignment",
    "finetune_trials_per_session", "split_seed",
    "network", "pretrain", "finetune",
}


def _check_keys(doc, allowed, where):
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys {unknown} in {where}")


def load_run_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    doc = json.loads(path.read_text())
    _check_keys(doc, _TOP_KEYS, "run config")
    _check_keys(doc.get("pretrain", {}), _PRETRAIN_KEYS, "pretrain section")
    _check_keys(doc.get("pretrain", {}).get("mask", {}), _MASK_KEYS, "pretrain.mask")
    _check_keys(doc.get("pretrain", {}).get("softcl", {}), _SOFTCL_KEYS, "pretrain.softcl")
    _check_keys(doc.get("finetune", {}), _FINETUNE_KEYS, "finetune section")
    _check_keys(doc.get("network", {}), _NETWORK_KEYS, "network section")
    if doc.get("alignment", "auto") not in ("auto", "drop_extra", "zero_fill"):
        raise ConfigurationError(f"unknown alignment policy {doc.get('alignment')!r}")
    return doc


def build_pretrain_config(doc: dict, seed=None) -> training.PretrainConfig:
    section = dict(doc.get("pretrain", {}))
    mask = masking.MaskConfig(**section.pop("mask", {}))
    softcl = obj.SoftCLConfig(**section.pop("softcl", {}))
    if seed is not None:
        section["seed"] = seed
    section.setdefault("seed", _default_seed())
    return training.PretrainConfig(mask=mask, softcl=softcl, **section)


def build_finetune_config(doc: dict, seed=None, label_fraction=None, probe_mode=None):
    section = dict(doc.get("finetune", {}))
    if seed is not None:
        section["seed"] = seed
    if label_fraction is not None:
        section["label_fraction"] = label_fraction
    if probe_mode is not None:
        section["probe_mode"] = probe_mode
    section.setdefault("seed", _default_seed())
    return training.FinetuneConfig(**section)


def build_network_config(doc: dict, manifest) -> net.NetworkConfig:
    section = dict(doc.get("network", {}))
    if "encoder" in section:
        section["encoder"] = tuple(net.ConvStage(**s) for s in section["encoder"])
    section.setdefault("channel_count", manifest.channel_count)
    section.setdefault("band_count", manifest.band_count)
    section.setdefault("class_count", len(manifest.class_names))
    return net.NetworkConfig(**section)


def _effective_config(doc, pretrain_config=None, finetune_config=None, network_config=None):
    out = dict(doc)
    if pretrain_config is not None:
        out["pretrain"] = asdict(pretrain_config)
    if finetune_config is not None:
        out["finetune"] = asdict(finetune_config)
    if network_config is not None:
        out["network"] = network_config.to_dict()
    return out


def _write_effective_config(out_dir, doc):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _alignment_policy(doc):
    policy = doc.get("alignment", "auto")
    return None if policy == "auto" else policy


def _load_aligned_pretrain_samples(doc):
    pre_dir = doc["pretrain_corpus"]
    manifest = corpus_mod.load_manifest(pre_dir)
    samples = corpus_mod.load_samples(pre_dir)
    channel_names = manifest.channel_names
    if doc.get("finetune_corpus"):
        fine_manifest = corpus_mod.load_manifest(doc["finetune_corpus"])
        samples = training.align_corpus(samples, manifest.channel_names,
                                        fine_manifest.channel_names,
                                        policy=_alignment_policy(doc))
        channel_names = fine_manifest.channel_names
        manifest = fine_manifest
    return samples, manifest, channel_names


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    if args.channels < 1 or args.bands < 1:
        raise ConfigurationError("--channels and --bands must be positive")
    if args.classes < 1:
        raise ConfigurationError("--classes must be positive")
    seed = args.seed if args.seed is not None else _default_seed()
    manifest = corpus_mod.generate_corpus(
        args.out,
        corpus_id=args.corpus_id or Path(args.out).name,
        subjects=args.subjects,
        sessions_per_subject=args.sessions,
        trials_per_session=args.trials,
        segments_per_trial=args.segments,
        channel_count=args.channels,
        band_count=args.bands,
        class_names=[f"class{i}" for i in range(args.classes)],
        window_seconds=args.window_seconds,
        profile=corpus_mod.ContinuityProfile(
            ar_coefficient=args.rho,
            class_separation=args.class_separation,
            noise_scale=args.noise_scale,
        ),
        seed=seed,
        template_seed=args.template_seed,
        mode="raw_signal" if args.raw_signal else "direct",
        sample_rate=args.sample_rate,
    )
    _say(f"wrote {len(manifest.sample_files)} samples to {args.out}")
    print(str(Path(args.out) / "manifest.json"))
    return 0


def cmd_pretrain(args) -> int:
    doc = load_run_config(args.config)
    if args.corpus:
        doc["pretrain_corpus"] = args.corpus
    if "pretrain_corpus" not in doc:
        raise ConfigurationError("run config needs a pretrain_corpus path")
    config = build_pretrain_config(doc, seed=args.seed)
    samples, target_manifest, _ = _load_aligned_pretrain_samples(doc)
    network_config = build_network_config(doc, target_manifest)
    _write_effective_config(args.out, _effective_config(doc, pretrain_config=config,
                                                        network_config=network_config))
    _say(f"pre-training on {len(samples)} samples for {config.epochs} epochs")
    _, log = training.pretrain(samples, config, network_config, out_dir=args.out)
    _say(f"final loss {log.records[-1]['loss_total']:.4f}; "
         f"checkpoint in {args.out}")
    print(str(Path(args.out) / "checkpoint.scmmckpt"))
    return 0


def cmd_finetune(args) -> int:
    doc = load_run_config(args.config)
    if "finetune_corpus" not in doc:
        raise ConfigurationError("run config needs a finetune_corpus path")
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    fine_dir = doc["finetune_corpus"]
    manifest = corpus_mod.load_manifest(fine_dir)
    config = build_finetune_config(doc, seed=args.seed,
                                   label_fraction=args.label_fraction,
                                   probe_mode=args.probe_mode)
    store = net.load_checkpoint(checkpoint)
    trials = doc.get("finetune_trials_per_session")
    if trials is None:
        raise ConfigurationError("run config needs finetune_trials_per_session")
    split_seed = doc.get("split_seed", config.seed)
    _write_effective_config(args.out, _effective_config(doc, finetune_config=config,
                                                        network_config=store.config))

    finetune_refs, test_refs = corpus_mod.leave_trials_out_split(manifest, trials, split_seed)
    if config.label_fraction < 1.0:
        finetune_refs = corpus_mod.subsample_labeled(
            finetune_refs, config.label_fraction, config.seed
        )
    per_subject = []
    out_dir = Path(args.out)
    for subject in range(manifest.subjects):
        ft = [r for r in finetune_refs if r.subject == subject]
        te = [r for r in test_refs if r.subject == subject]
        if not ft or not te:
            raise ConfigurationError(f"subject {subject} has an empty fine-tune or test side")
        tuned, _ = training.finetune(
            store, corpus_mod.load_samples(fine_dir, ft), config,
            out_dir=out_dir / f"subject{subject:02d}",
        )
        batch = training.evaluate(tuned, corpus_mod.load_samples(fine_dir, te))
        scores = metrics_mod.classification_metrics(batch)
        scores["auroc"] = metrics_mod.auroc(batch)
        scores["auprc"] = metrics_mod.auprc(batch)
        _say(f"subject {subject}: accuracy {scores['accuracy']:.3f}")
        scores["subject"] = subject
        per_subject.append(scores)

    summary = metrics_mod.aggregate_subjects(
        [{k: v for k, v in row.items() if k != "subject"} for row in per_subject]
    )
    report = {"subjects": per_subject, "mean_std_percent": summary}
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    manifest = corpus_mod.load_manifest(args.corpus)
    store = net.load_checkpoint(checkpoint)
    if args.finetune_trials is None:
        test_refs = list(manifest.sample_files)
    else:
        _, test_refs = corpus_mod.leave_trials_out_split(
            manifest, args.finetune_trials, args.split_seed
        )
    per_subject = []
    for subject in range(manifest.subjects):
        te = [r for r in test_refs if r.subject == subject]
        batch = training.evaluate(store, corpus_mod.load_samples(args.corpus, te))
        scores = metrics_mod.classification_metrics(batch)
        scores["auroc"] = metrics_mod.auroc(batch)
        scores["auprc"] = metrics_mod.auprc(batch)
        scores["subject"] = subject
        per_subject.append(scores)
    summary = metrics_mod.aggregate_subjects(
        [{k: v for k, v in row.items() if k != "subject"} for row in per_subject]
    )
    report = {"subjects": per_subject, "mean_std_percent": summary}
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, sort_keys=True))
    return 0


def _apply_sweep_value(doc, param, raw):
    doc = json.loads(json.dumps(doc))  # deep copy
    pre = doc.setdefault("pretrain", {})
    if param == "r":
        pre.setdefault("mask", {})["ratio"] = float(raw)
    elif param == "mu":
        pre.setdefault("mask", {})["threshold"] = float(raw)
    elif param == "metric":
        pre.setdefault("softcl", {})["metric"] = raw
    elif param == "alpha":
        pre.setdefault("softcl", {})["alpha"] = float(raw)
    elif param == "tau_s":
        pre.setdefault("softcl", {})["sharpness"] = float(raw)
    elif param == "tau_c":
        pre.setdefault("softcl", {})["temperature"] = float(raw)
    elif param == "batch_size":
        pre["batch_size"] = int(raw)
    else:
        raise ConfigurationError(f"unknown sweep parameter {param!r}")
    return doc


def _run_cross_corpus(doc, out_dir, seed=None):
    pretrain_config = build_pretrain_config(doc, seed=seed)
    finetune_config = build_finetune_config(doc, seed=seed)
    fine_manifest = corpus_mod.load_manifest(doc["finetune_corpus"])
    network_config = build_network_config(doc, fine_manifest)
    trials = doc.get("finetune_trials_per_session")
    if trials is None:
        raise ConfigurationError("run config needs finetune_trials_per_session")
    _write_effective_config(out_dir, _effective_config(
        doc, pretrain_config=pretrain_config, finetune_config=finetune_config,
        network_config=network_config,
    ))
    policy = _alignment_policy(doc)
    alignment = None
    if policy is not None:
        pre_manifest = corpus_mod.load_manifest(doc["pretrain_corpus"])
        alignment = corpus_mod.ChannelAlignment(
            pre_manifest.channel_names, fine_manifest.channel_names, policy
        )
    return training.cross_corpus_run(
        doc["pretrain_corpus"],
        doc["finetune_corpus"],
        pretrain_config,
        finetune_config,
        finetune_trials_per_session=trials,
        network_config=network_config,
        split_seed=doc.get("split_seed"),
        alignment=alignment,
        out_dir=out_dir,
    )


def cmd_sweep(args) -> int:
    doc = load_run_config(args.config)
    if args.param not in SWEEP_PARAMS:
        raise ConfigurationError(
            f"unknown sweep parameter {args.param!r}; choose from {SWEEP_PARAMS}"
        )
    values = [v for v in (args.values or "").split(",") if v != ""]
    if not values:
        raise ConfigurationError("--values must list at least one value")
    if "pretrain_corpus" not in doc or "finetune_corpus" not in doc:
        raise ConfigurationError("sweep needs pretrain_corpus and finetune_corpus")

    out_root = Path(args.out)
    runs = [
        (raw, _apply_sweep_value(doc, args.param, raw), out_root / f"{args.param}_{raw}")
        for raw in values
    ]
    if args.parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [
                pool.submit(_run_cross_corpus, run_doc, run_dir, args.seed)
                for _, run_doc, run_dir in runs
            ]
            reports = [f.result() for f in futures]
    else:
        reports = []
        for raw, run_doc, run_dir in runs:
            _say(f"sweep {args.param}={raw}")
            reports.append(_run_cross_corpus(run_doc, run_dir, seed=args.seed))
    table = [
        {"param": args.param, "value": raw, "mean_std_percent": report["mean_std_percent"]}
        for (raw, _, _), report in zip(runs, reports)
    ]
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "sweep.json").write_text(json.dumps(table, indent=2, sort_keys=True))
    print(json.dumps(table, sort_keys=True))
    return 0


def cmd_inspect_masks(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    config = masking.MaskConfig(strategy=args.strategy, ratio=args.ratio,
                                threshold=args.mu, seed=seed)
    stats = {"strategy": args.strategy, "ratio": args.ratio, "threshold": args.mu,
             "plans": []}
    strategy_counts = {"random": 0, "channel": 0}
    masked_total = 0
    for index in range(args.count):
        plan = masking.draw_mask(config, args.channels, args.bands,
                                 np.random.SeedSequence([seed, index]))
        for row, strat in zip(plan.mask, plan.per_channel_strategy):
            tag = "C" if strat == "channel" else "R"
            cells = "".join("#" if kept else "." for kept in row)
            _say(f"{tag} |{cells}|")
        _say("")
        strategy_counts["channel"] += sum(
            1 for s in plan.per_channel_strategy if s == "channel"
        )
        strategy_counts["random"] += sum(
            1 for s in plan.per_channel_strategy if s == "random"
        )
        masked_total += int((plan.mask == 0).sum())
        stats["plans"].append({
            "index": index,
            "masked_fraction": plan.masked_fraction,
            "channel_strategy_fraction": float(np.mean(
                [s == "channel" for s in plan.per_channel_strategy]
            )),
        })
    cells = args.count * args.channels * args.bands
    stats["masked_fraction"] = masked_total / cells
    total_rows = strategy_counts["random"] + strategy_counts["channel"]
    stats["channel_strategy_fraction"] = strategy_counts["channel"] / total_rows
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_export_similarity(args) -> int:
    manifest = corpus_mod.load_manifest(args.corpus)
    seed = args.seed if args.seed is not None else _default_seed()
    refs = manifest.sample_files
    if args.batch_size < 2:
        raise ConfigurationError("--batch-size must be >= 2")
    if args.batch_size > len(refs):
        raise ConfigurationError(
            f"--batch-size {args.batch_size} exceeds corpus size {len(refs)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6578]))
    picked = [refs[i] for i in rng.choice(len(refs), size=args.batch_size, replace=False)]
    samples = corpus_mod.load_samples(args.corpus, picked)
    values = np.stack([m.values for m in samples])

    softcl = obj.SoftCLConfig(alpha=args.alpha, sharpness=args.tau_s,
                              temperature=args.tau_c, metric=args.metric)
    distances = obj.normalized_distance(values, softcl.metric)
    weights = obj.soft_assignments(distances, softcl.alpha, softcl.sharpness)

    flat = values.reshape(len(values), -1)
    unit = flat / (np.linalg.norm(flat, axis=1, keepdims=True) + 1e-300)
    cosine = unit @ unit.T

    if args.checkpoint:
        store = net.load_checkpoint(args.checkpoint)
    else:
        network_config = net.NetworkConfig(
            channel_count=manifest.channel_count,
            band_count=manifest.band_count,
            class_count=len(manifest.class_names),
        )
        store = net.init_parameters(network_config, seed)
    mask_config = masking.MaskConfig(seed=seed)
    masked = training.masked_views(values, mask_config, seed, 0, 0)
    with ad.no_grad():
        joint_h = net.encode(store, np.concatenate([values, masked], axis=0))
        joint_z = net.project(store, joint_h)
        emb = obj.BatchEmbeddings.from_joint(joint_z, joint_h, len(values))
        _, aggregation = obj.aggregate(emb, softcl.temperature)

    doc = {
        "batch": [{"subject": r.subject, "session": r.session, "trial": r.trial,
                   "segment": r.segment, "label": r.label} for r in picked],
        "normalized_distance": distances.tolist(),
        "soft_assignments": weights.tolist(),
        "cosine_similarity": cosine.tolist(),
        "aggregation_weights": aggregation.tolist(),
    }
    text = json.dumps(doc, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
        _say(f"wrote similarity export to {args.out}")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scmm",
        description="soft contrastive masked modeling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--corpus-id", default=None)
    gen.add_argument("--subjects", type=int, default=15)
    gen.add_argument("--sessions", type=int, default=3)
    gen.add_argument("--trials", type=int, default=15)
    gen.add_argument("--segments", type=int, default=16)
    gen.add_argument("--channels", type=int, default=62)
    gen.add_argument("--bands", type=int, default=5)
    gen.add_argument("--classes", type=int, default=3)
    gen.add_argument("--rho", type=float, default=0.9)
    gen.add_argument("--class-separation", type=float, default=1.0)
    gen.add_argument("--noise-scale", type=float, default=0.5)
    gen.add_argument("--window-seconds", type=float, default=1.0)
    gen.add_argument("--sample-rate", type=float, default=200.0)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--template-seed", type=int, default=None)
    gen.add_argument("--raw-signal", action="store_true")
    gen.set_defaults(func=cmd_gen_corpus)

    pre = sub.add_parser("pretrain", help="self-supervised pre-training")
    pre.add_argument("--config", required=True)
    pre.add_argument("--out", required=True)
    pre.add_argument("--corpus", default=None, help="override pretrain corpus path")
    pre.add_argument("--seed", type=int, default=None)
    pre.set_defaults(func=cmd_pretrain)

    fine = sub.add_parser("finetune", help="per-subject fine-tuning and testing")
    fine.add_argument("--config", required=True)
    fine.add_argument("--checkpoint", required=True)
    fine.add_argument("--out", required=True)
    fine.add_argument("--seed", type=int, default=None)
    fine.add_argument("--label-fraction", type=float, default=None)
    fine.add_argument("--probe-mode", choices=("joint", "linear_probe"), default=None)
    fine.set_defaults(func=cmd_finetune)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a corpus test split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--split-seed", type=int, default=0)
    ev.add_argument("--finetune-trials", type=int, default=None,
                    help="trials per session reserved for fine-tuning; when given, "
                         "only the held-out test side is evaluated")
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    sweep = sub.add_parser("sweep", help="run the pipeline over hyperparameter values")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--parallel", type=int, default=1,
                       help="run up to N sweep values concurrently")
    sweep.set_defaults(func=cmd_sweep)

    inspect = sub.add_parser("inspect-masks", help="render masks and strategy stats")
    inspect.add_argument("--strategy", choices=masking.STRATEGIES, default="hybrid")
    inspect.add_argument("--channels", type=int, default=16)
    inspect.add_argument("--bands", type=int, default=5)
    inspect.add_argument("--ratio", type=float, default=0.5)
    inspect.add_argument("--mu", type=float, default=0.1)
    inspect.add_argument("--count", type=int, default=1)
    inspect.add_argument("--seed", type=int, default=None)
    inspect.set_defaults(func=cmd_inspect_masks)

    export = sub.add_parser("export-similarity",
                            help="emit pairwise weights for a sampled batch as JSON")
    export.add_argument("--corpus", required=True)
    export.add_argument("--batch-size", type=int, default=16)
    export.add_argument("--seed", type=int, default=None)
    export.add_argument("--checkpoint", default=None)
    export.add_argument("--metric", choices=obj.METRICS, default="cosine_negative")
    export.add_argument("--alpha", type=float, default=0.5)
    export.add_argument("--tau-s", type=float, default=0.05)
    export.add_argument("--tau-c", type=float, default=0.5)
    export.add_argument("--out", default=None)
    export.set_defaults(func=cmd_export_similarity)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        _say(f"error: {exc}")
        return 2
    except (FileNotFoundError, OSError, ScmmError) as exc:
        _say(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
