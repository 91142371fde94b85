"""Command-line entry point: ingest, train-teacher, distill, evaluate, synth-data."""
from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime
from pathlib import Path

from . import evaluation, models, synth
from .config import RunConfig, config_hash, config_text, load_config_file, make_run_config
from .datasets import ParseError, parse_dataset, write_vocab
from .distill import pretrain, two_stage_distill
from .numerics import seeded_rng
from .semantic import FileProvider, RemoteProvider, StubProvider, save_head

ENDPOINT_ENV = "TKGDISTILL_ENDPOINT"
TOKEN_ENV = "TKGDISTILL_TOKEN"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _make_run_dir(base, name: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(base)
    run_dir = base / f"{name}-{stamp}"
    n = 0
    while run_dir.exists():
        n += 1
        run_dir = base / f"{name}-{stamp}-{n}"
    run_dir.mkdir(parents=True)
    return run_dir


def _write_config(run_dir: Path, cfg: RunConfig) -> None:
    (run_dir / "config.txt").write_text(config_text(cfg), encoding="utf-8")


def _write_log(run_dir: Path, records: list[dict]) -> None:
    with open(run_dir / "training_log.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _dataset_path(cfg: RunConfig) -> Path:
    path = Path(cfg.data_dir)
    if cfg.dataset and (path / cfg.dataset).is_dir():
        path = path / cfg.dataset
    return path


def _load_data(cfg: RunConfig):
    return parse_dataset(_dataset_path(cfg), format=cfg.format)


def build_provider(cfg: RunConfig, vocab=None):
    spec = cfg.provider
    if spec == "stub":
        return StubProvider(cfg.provider_dim)
    if spec.startswith("file:"):
        return FileProvider(spec[len("file:") :], vocab)
    if spec == "remote" or spec.startswith("remote:"):
        endpoint = spec[len("remote:") :] if ":" in spec else os.environ.get(ENDPOINT_ENV, "")
        if not endpoint:
            raise ValueError(f"remote provider needs remote:URL or ${ENDPOINT_ENV}")
        return RemoteProvider(endpoint, token=os.environ.get(TOKEN_ENV))
    raise ValueError(f"unknown provider spec {spec!r}")


def _eval_and_write(run_dir: Path, cfg: RunConfig, params, store, method: str, csv: bool = False):
    scorer = evaluation.EmbeddingScorer(params)
    reports = evaluation.evaluate(scorer, store, cfg.setting, "test", workers=cfg.workers)
    payloads = [
        evaluation.report_payload(
            rep, params.kind, method, cfg.dataset or Path(cfg.data_dir).name or "dataset",
            cfg.seed, config_hash(cfg),
        )
        for rep in reports.values()
    ]
    evaluation.write_metrics_json(run_dir / "metrics.json", payloads)
    if csv:
        evaluation.write_metrics_csv(run_dir / "metrics.csv", payloads)
    return payloads


def _add_config_flags(sub: argparse.ArgumentParser, names: list[str]) -> None:
    flag_types = {"int": int, "float": float, "str": str}
    from dataclasses import fields as dc_fields

    for f in dc_fields(RunConfig):
        if f.name not in names:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            sub.add_argument(flag, type=lambda s: s.lower() in ("true", "1", "yes"),
                             default=None, metavar="BOOL", help=f"default: {f.default}")
        else:
            sub.add_argument(flag, type=flag_types.get(f.type, str), default=None,
                             help=f"default: {f.default}")


COMMON = ["data_dir", "dataset", "format", "seed", "output_dir", "workers"]
TRAIN = COMMON + ["model_kind", "batch_size", "epochs", "learning_rate", "negatives", "valid_every"]
DISTILL = TRAIN + [
    "teacher_dim", "student_dim", "stage1_epochs", "stage2_epochs", "provider", "provider_dim",
    "alpha", "beta", "delta", "temperature", "method", "l2_uses_alpha",
    "use_relation_path_loss", "fitnet_weight", "rkd_weight", "rkd_max_points",
]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tkgdistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset and print its counts")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--dir", dest="data_dir", default=None, help="dataset directory")
    p.add_argument("--export-vocab", default=None, help="write entities.tsv/relations.tsv here")
    _add_config_flags(p, ["dataset", "format"])

    p = sub.add_parser("train-teacher", help="pretrain a model and checkpoint it")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--dim", type=int, default=None, help="embedding dimension (default: teacher_dim)")
    p.add_argument("--csv", action="store_true", help="also write metrics.csv")
    _add_config_flags(p, TRAIN)

    p = sub.add_parser("distill", help="train a student against a frozen teacher")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--teacher", default=None, help="teacher checkpoint (.npz)")
    p.add_argument("--csv", action="store_true", help="also write metrics.csv")
    _add_config_flags(p, DISTILL)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint with ranking metrics")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--checkpoint", required=True, help="model checkpoint (.npz)")
    p.add_argument("--method", dest="method_label", default="none",
                   help="method label recorded in the metrics output")
    p.add_argument("--csv", action="store_true", help="also write metrics.csv")
    _add_config_flags(p, COMMON + ["setting"])

    p = sub.add_parser("synth-data", help="generate the seeded synthetic dataset")
    p.add_argument("--out", required=True, help="output directory for the split files")
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--relations", type=int, default=8)
    p.add_argument("--time-bins", type=int, default=40)
    p.add_argument("--period", type=int, default=8)
    p.add_argument("--facts-per-slot", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    return parser


def _resolve_config(args) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    from dataclasses import fields as dc_fields

    overrides = {}
    for f in dc_fields(RunConfig):
        if hasattr(args, f.name):
            overrides[f.name] = getattr(args, f.name)
    return make_run_config(file_values, overrides)


def _cmd_ingest(args) -> int:
    cfg = _resolve_config(args)
    vocab, store = _load_data(cfg)
    print(
        f"entities={vocab.n_entities} relations={vocab.n_relations} "
        f"time_bins={vocab.n_time_bins} train={len(store.train)} "
        f"valid={len(store.valid)} test={len(store.test)}"
    )
    if args.export_vocab:
        write_vocab(vocab, args.export_vocab)
    return EXIT_OK


def _cmd_train_teacher(args) -> int:
    cfg = _resolve_config(args)
    dim = args.dim if args.dim is not None else cfg.teacher_dim
    vocab, store = _load_data(cfg)
    rng = seeded_rng(cfg.seed)
    params = models.init_params(
        cfg.model_kind, vocab.n_entities, vocab.n_relations, vocab.n_time_bins, dim, rng
    )
    log = pretrain(
        params, vocab, store, cfg.epochs, rng,
        batch_size=cfg.batch_size, negatives=cfg.negatives,
        learning_rate=cfg.learning_rate, valid_every=cfg.valid_every,
    )
    run_dir = _make_run_dir(cfg.output_dir, "train-teacher")
    _write_config(run_dir, cfg)
    _write_log(run_dir, log)
    models.save_checkpoint(run_dir / "teacher.npz", params, {"dataset": cfg.dataset, "role": "teacher"})
    _eval_and_write(run_dir, cfg, params, store, method="pretrain", csv=args.csv)
    print(f"run dir: {run_dir}")
    return EXIT_OK


def _cmd_distill(args) -> int:
    cfg = _resolve_config(args)
    vocab, store = _load_data(cfg)
    dconfig = cfg.distill_config()
    teacher = None
    if args.teacher:
        teacher, _ = models.load_checkpoint(args.teacher)
        if teacher.entity_emb.shape[0] != vocab.n_entities:
            raise ValueError(
                f"teacher checkpoint has {teacher.entity_emb.shape[0]} entities, "
                f"dataset has {vocab.n_entities}"
            )
    elif dconfig.method != "none":
        raise ValueError(f"method {dconfig.method!r} requires --teacher")
    rng = seeded_rng(cfg.seed)
    student = models.init_params(
        cfg.model_kind, vocab.n_entities, vocab.n_relations, vocab.n_time_bins, cfg.student_dim, rng
    )
    provider = build_provider(cfg, vocab) if dconfig.method == "ours" else None
    run_dir = _make_run_dir(cfg.output_dir, "distill")
    _write_config(run_dir, cfg)
    result = two_stage_distill(
        teacher, student, provider, vocab, store, dconfig, rng,
        batch_size=cfg.batch_size, negatives=cfg.negatives,
        learning_rate=cfg.learning_rate, checkpoint_dir=run_dir,
        valid_every=cfg.valid_every,
    )
    _write_log(run_dir, result.log)
    models.save_checkpoint(
        run_dir / "student.npz", result.student,
        {"dataset": cfg.dataset, "role": "student", "method": dconfig.method},
    )
    if result.head is not None:
        save_head(run_dir / "head.npz", result.head)
    _eval_and_write(run_dir, cfg, result.student, store, method=dconfig.method, csv=args.csv)
    print(f"run dir: {run_dir}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    vocab, store = _load_data(cfg)
    params, _ = models.load_checkpoint(args.checkpoint)
    if params.entity_emb.shape[0] != vocab.n_entities:
        raise ValueError(
            f"checkpoint has {params.entity_emb.shape[0]} entities, dataset has {vocab.n_entities}"
        )
    run_dir = _make_run_dir(cfg.output_dir, "evaluate")
    _write_config(run_dir, cfg)
    payloads = _eval_and_write(run_dir, cfg, params, store, method=args.method_label, csv=args.csv)
    for p in payloads:
        print(
            f"{p['setting']}: mr={p['mr']:.2f} mrr={p['mrr']:.2f} "
            f"hits1={p['hits1']:.2f} hits3={p['hits3']:.2f} hits10={p['hits10']:.2f}"
        )
    print(f"run dir: {run_dir}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    counts = synth.generate_synthetic_dataset(
        args.out,
        n_entities=args.entities,
        n_relations=args.relations,
        n_time_bins=args.time_bins,
        period=args.period,
        facts_per_slot=args.facts_per_slot,
        seed=args.seed,
    )
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


_COMMANDS = {
    "ingest": _cmd_ingest,
    "train-teacher": _cmd_train_teacher,
    "distill": _cmd_distill,
    "evaluate": _cmd_evaluate,
    "synth-data": _cmd_synth,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValueError as err:
        if isinstance(err, ParseError):
            print(f"error: {err}", file=sys.stderr)
            return EXIT_FAILURE
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, LookupError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
