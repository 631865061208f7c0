"""Command-line workflow: gen-data, train, build-store, predict, eval,
ablate, gradcheck.

Configuration is one JSON file with optional sections "dataset", "encoder",
"train", and "inference"; every key has a default (see docs/formats.md for
the schema), so `{}` is a valid config. Each command records a manifest
(config snapshot, seed, artifact paths, timestamps) next to its outputs, and
commands are deterministic given their config and seed.

Exit codes: 0 success, 2 missing file, 3 malformed config or data file,
4 dimension mismatch, 1 anything else.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import datastore as ds
from .data import (
    DataFormatError,
    DatasetConfig,
    frequency_groups,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
)
from .encoder import CheckpointError, EncoderConfig, init_state, load_checkpoint, save_checkpoint
from .gradcheck import gradient_check, run_gradcheck_suite
from .inference import InferenceConfig, predict
from .losses import CONTRASTIVE_VARIANTS
from .metrics import confusion, group_report, hamming_loss, macro_prf, micro_prf
from .training import TrainConfig, Trainer

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_FILE = 2
EXIT_FORMAT = 3
EXIT_DIMENSION = 4


class ConfigError(ValueError):
    """Raised for config files with unknown keys or bad values."""


class DimensionMismatchError(ValueError):
    """Raised when artifacts disagree on dimensions."""


def _dataclass_from_dict(cls, payload: dict, context: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}; known keys are {sorted(known)}")
    try:
        obj = cls(**payload)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc
    try:
        obj.validate()
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc
    return obj


def load_config(path: str | None):
    """Parse the JSON config into (DatasetConfig, encoder section dict,
    TrainConfig, InferenceConfig). The encoder section stays a dict because
    input_dim and num_classes come from the dataset at train time."""
    raw = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(raw) - {"dataset", "encoder", "train", "inference"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    dataset_cfg = _dataclass_from_dict(DatasetConfig, raw.get("dataset", {}), f"{path}:dataset")
    train_cfg = _dataclass_from_dict(TrainConfig, raw.get("train", {}), f"{path}:train")
    infer_cfg = _dataclass_from_dict(InferenceConfig, raw.get("inference", {}), f"{path}:inference")
    encoder_section = raw.get("encoder", {})
    allowed = {"hidden_dim", "embed_dim", "activation", "dropout_rate"}
    unknown = set(encoder_section) - allowed
    if unknown:
        raise ConfigError(f"{path}:encoder: unknown keys {sorted(unknown)}; known keys are {sorted(allowed)}")
    return dataset_cfg, encoder_section, train_cfg, infer_cfg


def _encoder_config(section: dict, input_dim: int, num_classes: int) -> EncoderConfig:
    cfg = EncoderConfig(
        input_dim=input_dim,
        hidden_dim=int(section.get("hidden_dim", 24)),
        embed_dim=int(section.get("embed_dim", 12)),
        num_classes=num_classes,
        activation=section.get("activation", "tanh"),
        dropout_rate=float(section.get("dropout_rate", 0.1)),
    )
    cfg.validate()
    return cfg


def write_manifest(out_dir: Path, command: str, config_snapshot: dict, seed, artifacts: dict):
    manifest = {
        "command": command,
        "seed": seed,
        "config": config_snapshot,
        "artifacts": {name: str(p) for name, p in artifacts.items()},
        "created_unix": time.time(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"manifest-{command}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _config_snapshot(*cfgs, **extra):
    snap = {}
    for cfg in cfgs:
        snap[type(cfg).__name__] = dataclasses.asdict(cfg)
    snap.update(extra)
    return snap


def _load_split(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    return load_jsonl(path)


# -- commands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    dataset_cfg, _, _, _ = load_config(args.config)
    if args.seed is not None:
        dataset_cfg.seed = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, valid, test = generate_synthetic(dataset_cfg)
    artifacts = {}
    for name, samples in (("train", train), ("valid", valid), ("test", test)):
        path = out_dir / f"{name}.jsonl"
        save_jsonl(samples, path, dataset_cfg.num_classes, dataset_cfg.vocab_size)
        artifacts[name] = path
    write_manifest(out_dir, "gen-data", _config_snapshot(dataset_cfg), dataset_cfg.seed, artifacts)
    print(f"wrote {len(train)}/{len(valid)}/{len(test)} samples to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    _, encoder_section, train_cfg, _ = load_config(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    data_dir = Path(args.data)
    train_samples, num_classes, vocab_size = _load_split(data_dir / "train.jsonl")
    valid_path = data_dir / "valid.jsonl"
    valid_samples = _load_split(valid_path)[0] if valid_path.exists() else []

    encoder_cfg = _encoder_config(encoder_section, input_dim=vocab_size, num_classes=num_classes)
    state = init_state(encoder_cfg, seed=train_cfg.seed)
    trainer = Trainer(train_samples, valid_samples, state, train_cfg)
    trainer.run()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.json"
    history_path = out_dir / "history.jsonl"
    save_checkpoint(trainer.best_state(), ckpt_path)
    with open(history_path, "w", encoding="utf-8") as fh:
        for record in trainer.history:
            fh.write(json.dumps(record) + "\n")
    write_manifest(
        out_dir,
        "train",
        _config_snapshot(encoder_cfg, train_cfg),
        train_cfg.seed,
        {"checkpoint": ckpt_path, "history": history_path},
    )
    last_f1 = next(
        (r["valid_micro_f1"] for r in reversed(trainer.history) if "valid_micro_f1" in r), None
    )
    best_f1 = trainer.best_validation_f1
    print(
        f"trained {trainer.iteration} iterations; best valid micro-F1 "
        f"{best_f1 if best_f1 is not None else float('nan'):.4f} "
        f"(last {last_f1 if last_f1 is not None else float('nan'):.4f}); saved {ckpt_path}"
    )
    return EXIT_OK


def cmd_build_store(args) -> int:
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    state = load_checkpoint(args.checkpoint)
    train_samples, num_classes, vocab_size = _load_split(Path(args.train_file))
    if vocab_size != state.config.input_dim or num_classes != state.config.num_classes:
        raise DimensionMismatchError(
            f"dataset (vocab={vocab_size}, C={num_classes}) does not match checkpoint "
            f"(input_dim={state.config.input_dim}, C={state.config.num_classes})"
        )
    store = ds.build(state, train_samples, fraction=args.fraction)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ds.save(store, out_path)
    write_manifest(
        out_path.parent,
        "build-store",
        {"checkpoint": str(args.checkpoint), "train_file": str(args.train_file), "fraction": args.fraction},
        None,
        {"datastore": out_path},
    )
    print(f"built datastore with {store.count} entries (d={store.dim}, C={store.num_classes}) at {out_path}")
    return EXIT_OK


def _predict_records(state, store, samples, infer_cfg):
    for sample in samples:
        bundle = predict(state, store, sample, infer_cfg)
        yield {
            "id": sample.sample_id,
            "y_clf": bundle.y_clf.tolist(),
            "y_knn": bundle.y_knn.tolist(),
            "lambda": bundle.lam,
            "y_final": bundle.y_final.tolist(),
            "y_pred": bundle.decisions(infer_cfg.decision_threshold).tolist(),
            "neighbors": [
                {"index": n.index, "similarity": n.similarity} for n in bundle.neighbors
            ],
        }


def cmd_predict(args) -> int:
    _, _, _, infer_cfg = load_config(args.config)
    if args.mode is not None:
        infer_cfg.mode = args.mode
        infer_cfg.validate()
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    state = load_checkpoint(args.checkpoint)
    store = None
    if args.store is not None:
        if not Path(args.store).exists():
            raise FileNotFoundError(f"datastore not found: {args.store}")
        store = ds.load(args.store)
        if store.dim != state.config.embed_dim or store.num_classes != state.config.num_classes:
            raise DimensionMismatchError(
                f"datastore (d={store.dim}, C={store.num_classes}) does not match checkpoint "
                f"(embed_dim={state.config.embed_dim}, C={state.config.num_classes})"
            )
    elif infer_cfg.mode != "classifier_only":
        raise ConfigError(f"mode {infer_cfg.mode!r} requires --store")
    samples, num_classes, vocab_size = _load_split(Path(args.test_file))
    if vocab_size != state.config.input_dim or num_classes != state.config.num_classes:
        raise DimensionMismatchError(
            f"dataset (vocab={vocab_size}, C={num_classes}) does not match checkpoint "
            f"(input_dim={state.config.input_dim}, C={state.config.num_classes})"
        )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for record in _predict_records(state, store, samples, infer_cfg):
            fh.write(json.dumps(record) + "\n")
    write_manifest(
        out_path.parent,
        "predict",
        _config_snapshot(infer_cfg, checkpoint=str(args.checkpoint), store=str(args.store)),
        None,
        {"predictions": out_path},
    )
    print(f"wrote {len(samples)} predictions ({infer_cfg.mode}) to {out_path}")
    return EXIT_OK


def _read_predictions(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"predictions file not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: malformed record ({exc})") from exc
    return records


def _metrics_report(gold_rows, pred_rows, groups=None):
    counts = confusion(gold_rows, pred_rows)
    micro = micro_prf(counts)
    macro = macro_prf(counts)
    report = {
        "micro_precision": micro[0],
        "micro_recall": micro[1],
        "micro_f1": micro[2],
        "macro_precision": macro[0],
        "macro_recall": macro[1],
        "macro_f1": macro[2],
        "hamming_loss": hamming_loss(gold_rows, pred_rows),
        "num_samples": int(np.asarray(gold_rows).shape[0]),
    }
    if groups is not None:
        report["groups"] = {
            str(g): rec for g, rec in group_report(counts, groups).items()
        }
    return report


def _format_report(report: dict) -> str:
    lines = [
        f"{'metric':<18} {'value':>8}",
        f"{'-' * 18} {'-' * 8}",
    ]
    for key in ("micro_precision", "micro_recall", "micro_f1", "macro_precision", "macro_recall", "macro_f1", "hamming_loss"):
        lines.append(f"{key:<18} {report[key]:>8.4f}")
    if "groups" in report:
        lines.append("")
        lines.append(f"{'group':<8} {'labels':>7} {'micro-F1':>9} {'defined':>8}")
        for g, rec in report["groups"].items():
            lines.append(f"{g:<8} {len(rec['labels']):>7} {rec['f1']:>9.4f} {str(rec['defined']):>8}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    records = _read_predictions(Path(args.predictions))
    gold_samples, num_classes, _ = _load_split(Path(args.gold))
    if len(records) != len(gold_samples):
        raise DataFormatError(
            f"predictions ({len(records)}) and gold ({len(gold_samples)}) disagree on sample count"
        )
    pred_rows = []
    for i, rec in enumerate(records):
        row = rec.get("y_pred")
        if row is None or len(row) != num_classes:
            raise DataFormatError(f"{args.predictions}: record {i}: bad y_pred of width != C")
        if rec.get("id") and gold_samples[i].sample_id and rec["id"] != gold_samples[i].sample_id:
            raise DataFormatError(
                f"record {i}: prediction id {rec['id']!r} != gold id {gold_samples[i].sample_id!r}"
            )
        pred_rows.append(row)
    gold_rows = np.stack([s.labels for s in gold_samples])

    groups = None
    if args.num_groups:
        source = Path(args.groups_from) if args.groups_from else Path(args.gold)
        group_samples, _, _ = _load_split(source)
        groups = frequency_groups(group_samples, num_groups=args.num_groups)
    report = _metrics_report(gold_rows, np.asarray(pred_rows, dtype=np.int8), groups)
    print(_format_report(report))
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        print(f"wrote metrics to {out_path}")
    return EXIT_OK


def _eval_mode(state, store, samples, infer_cfg, mode=None, **overrides):
    cfg = dataclasses.replace(infer_cfg, **({"mode": mode} if mode else {}), **overrides)
    gold = np.stack([s.labels for s in samples])
    pred = np.stack(
        [predict(state, store, s, cfg).decisions(cfg.decision_threshold) for s in samples]
    )
    counts = confusion(gold, pred)
    return micro_prf(counts)[2], macro_prf(counts)[2]


def cmd_ablate(args) -> int:
    _, encoder_section, train_cfg, infer_cfg = load_config(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    data_dir = Path(args.data)
    train_samples, num_classes, vocab_size = _load_split(data_dir / "train.jsonl")
    valid_samples = _load_split(data_dir / "valid.jsonl")[0] if (data_dir / "valid.jsonl").exists() else []
    test_samples, _, _ = _load_split(data_dir / "test.jsonl")
    encoder_cfg = _encoder_config(encoder_section, input_dim=vocab_size, num_classes=num_classes)

    rows = []

    def add_row(section, name, micro, macro):
        rows.append({"section": section, "name": name, "micro_f1": micro, "macro_f1": macro})

    # one model per contrastive variant, each evaluated end to end
    states = {}
    for variant in CONTRASTIVE_VARIANTS:
        cfg_v = dataclasses.replace(train_cfg, variant=variant)
        state = init_state(encoder_cfg, seed=cfg_v.seed)
        trainer = Trainer(train_samples, valid_samples, state, cfg_v)
        trainer.run()
        states[variant] = trainer.best_state()

    base_state = states[train_cfg.variant]
    base_store = ds.build(base_state, train_samples)
    for mode in ("classifier_only", "knn_only", "denn", "fixed_lambda"):
        micro, macro = _eval_mode(base_state, base_store, test_samples, infer_cfg, mode=mode)
        add_row("mode", mode, micro, macro)
    for variant in CONTRASTIVE_VARIANTS:
        store = base_store if variant == train_cfg.variant else ds.build(states[variant], train_samples)
        micro, macro = _eval_mode(states[variant], store, test_samples, infer_cfg, mode="denn")
        add_row("variant", variant, micro, macro)
    for k in args.k_values or []:
        micro, macro = _eval_mode(base_state, base_store, test_samples, infer_cfg, mode="denn", k=k)
        add_row("sweep_k", str(k), micro, macro)
    for gamma in args.gamma_values or []:
        micro, macro = _eval_mode(base_state, base_store, test_samples, infer_cfg, mode="denn", gamma=gamma)
        add_row("sweep_gamma", str(gamma), micro, macro)
    for fraction in args.store_fractions or []:
        store = ds.build(base_state, train_samples, fraction=fraction)
        micro, macro = _eval_mode(base_state, store, test_samples, infer_cfg, mode="denn")
        add_row("sweep_store_fraction", str(fraction), micro, macro)

    print(f"{'section':<22} {'name':<16} {'micro-F1':>9} {'macro-F1':>9}")
    print(f"{'-' * 22} {'-' * 16} {'-' * 9} {'-' * 9}")
    for row in rows:
        print(f"{row['section']:<22} {row['name']:<16} {row['micro_f1']:>9.4f} {row['macro_f1']:>9.4f}")

    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        table_path = out_dir / "ablation.jsonl"
        with open(table_path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        write_manifest(
            out_dir,
            "ablate",
            _config_snapshot(encoder_cfg, train_cfg, infer_cfg),
            train_cfg.seed,
            {"table": table_path},
        )
        print(f"wrote ablation table to {table_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.dims:
        try:
            input_dim, hidden_dim, embed_dim, num_classes, batch = (int(x) for x in args.dims.split(","))
        except ValueError as exc:
            raise ConfigError(f"--dims must be 'input,hidden,embed,classes,batch', got {args.dims!r}") from exc
        from .data import Sample  # local import to keep the command self-contained

        rng = np.random.default_rng(seed)
        config = EncoderConfig(input_dim, hidden_dim, embed_dim, num_classes, dropout_rate=0.1)
        state = init_state(config, seed=seed)
        samples = []
        for i in range(batch):
            nnz = max(1, input_dim // 3)
            idx = rng.choice(input_dim, size=nnz, replace=False)
            labels = np.zeros(num_classes, dtype=np.int8)
            labels[rng.integers(num_classes)] = 1
            samples.append(
                Sample({int(j): float(v) for j, v in zip(idx, rng.uniform(0.5, 2.0, nnz))}, labels, f"s{i}")
            )
        views = samples + samples
        masks = [
            (rng.random(hidden_dim) >= 0.1).astype(np.float64) / 0.9 for _ in views
        ]
        reports = [gradient_check(state, views, masks, alpha=0.1, tau1=0.05, step=args.step)]
    else:
        reports = run_gradcheck_suite(num_configs=args.configs, seed=seed, step=args.step)
    worst = 0.0
    all_passed = True
    for i, report in enumerate(reports):
        status = "pass" if report.passed else "FAIL"
        print(
            f"config {i:>3}: {status}  max_rel_error={report.max_rel_error:.3e} "
            f"worst={report.worst_param} params={report.num_params}"
        )
        worst = max(worst, report.max_rel_error)
        all_passed = all_passed and report.passed
    print(f"{'PASS' if all_passed else 'FAIL'}: {len(reports)} configurations, max relative error {worst:.3e}")
    return EXIT_OK if all_passed else EXIT_ERROR


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="knnmlc",
        description="Multi-label classification with contrastive training and kNN-augmented inference.",
    )
    parser.add_argument("--config", default=None, help="JSON config file (all sections optional)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory for train/valid/test.jsonl")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="directory holding train.jsonl (and valid.jsonl)")
    p.add_argument("--out", required=True, help="output directory for model.json and history.jsonl")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-store", help="embed the training set into a datastore")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train-file", required=True)
    p.add_argument("--out", required=True, help="datastore output path")
    p.add_argument("--fraction", type=float, default=1.0, help="leading fraction of the training set")
    p.set_defaults(func=cmd_build_store)

    p = sub.add_parser("predict", help="write per-sample prediction records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--store", default=None)
    p.add_argument("--test-file", required=True)
    p.add_argument("--mode", default=None, choices=["denn", "classifier_only", "knn_only", "fixed_lambda"])
    p.add_argument("--out", required=True, help="predictions output path (.jsonl)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--num-groups", type=int, default=0, help="add a per-frequency-group report")
    p.add_argument("--groups-from", default=None, help="dataset whose frequencies define the groups (default: gold)")
    p.add_argument("--out", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare inference modes and contrastive variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--k-values", type=int, nargs="*", default=None)
    p.add_argument("--gamma-values", type=float, nargs="*", default=None)
    p.add_argument("--store-fractions", type=float, nargs="*", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--configs", type=int, default=20, help="number of random configurations")
    p.add_argument("--dims", default=None, help="fixed dims 'input,hidden,embed,classes,batch'")
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, DataFormatError, CheckpointError, ds.DatastoreFormatError) as exc:
        print(f"error: bad input format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DimensionMismatchError as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
