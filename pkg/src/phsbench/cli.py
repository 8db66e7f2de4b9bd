"""Command line entry point and the commands behind it.

    phsbench pretrain --config exp.yaml [--seed N]
    phsbench finetune --config exp.yaml [--seed N] [--jobs N]
    phsbench evaluate (--predictions preds.jsonl | --published-grid)
    phsbench report --baseline BERT [--format md|csv] [--pin RUN_ID ...]
    phsbench registry list|validate

Runs are recorded under ``$PHSBENCH_HOME`` (default ``~/.phsbench``).
Exit codes: 0 success, 1 usage, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import (
    DataError,
    DatasetDescriptor,
    InfeasibleStratification,
    LabeledExample,
    RegistryError,
    ingest,
    load_registry,
    lookup,
    make_plan,
    validate_registry,
)
from .encoder import CheckpointMismatch, EncoderConfig, load_checkpoint, save_checkpoint
from .evalkit import (
    PUBLISHED_MODELS,
    EvalReport,
    FoldResult,
    aggregate,
    build_comparison_table,
    delta_mp,
    load_published_grid,
)
from .finetune import (
    ClassifierHead,
    build_classifier,
    finetune,
    make_schedule,
    predict,
    save_classifier,
    schedule_dict,
    write_epoch_metrics,
)
from .normalizer import CorpusStats, iter_posts, normalize_corpus, normalize_text
from .pretrain import NothingMaskable, PairingError, TrainingError, prepare_model, run_pretraining, write_trajectory
from .runs import INCOMPLETE, ExperimentConfig, RunRecord, RunStore, derive_seed
from .tokenizer import WordPieceTokenizer, build_vocab

log = logging.getLogger("phsbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3
MAJORITY = "majority"

DATA_ERRORS = (DataError, RegistryError, InfeasibleStratification, PairingError, NothingMaskable,
               FileNotFoundError, KeyError, CheckpointMismatch, ValueError)
TRAINING_ERRORS = (TrainingError, RuntimeError, AssertionError)


class StageError(Exception):
    """A command failed; ``stage`` names where, ``exit_code`` says how to exit."""

    def __init__(self, stage: str, cause: BaseException | str, exit_code: int | None = None):
        self.stage = stage
        self.cause = cause
        if exit_code is None:
            exit_code = EXIT_TRAINING if isinstance(cause, TRAINING_ERRORS) and not isinstance(cause, DATA_ERRORS) else EXIT_DATA
        self.exit_code = exit_code
        super().__init__(f"[{stage}] {cause}")


class _Stages:
    """Tracks the current stage so failures carry its name."""

    def __init__(self):
        self.name = "setup"

    def __call__(self, name: str) -> "_Stages":
        self.name = name
        return self


# --- pretrain -------------------------------------------------------------

def cmd_pretrain(config: ExperimentConfig, store: RunStore) -> RunRecord:
    """Normalize the corpus, continue pretraining, save checkpoint and trajectory."""
    section = config.pretrain
    corpus = section.get("corpus")
    if not corpus or not Path(corpus).exists():
        raise StageError("normalize", FileNotFoundError(f"pretraining corpus not found: {corpus!r}"))

    rec = RunRecord.start("pretrain", config.hash, config.seed)
    run_dir = store.run_dir(rec.run_id)
    marker = run_dir / INCOMPLETE
    marker.write_text("pretrain\n")
    stage = _Stages()
    try:
        stage("normalize")
        read_stats = CorpusStats()
        posts, stats = normalize_corpus(iter_posts(corpus, read_stats), config.normalization_config())
        stats.skipped += read_stats.skipped
        with open(run_dir / "normalized.jsonl", "w", encoding="utf-8") as fh:
            for p in posts:
                fh.write(json.dumps(p.to_record(None), ensure_ascii=False) + "\n")

        stage("tokenizer")
        if section.get("vocab"):
            tokenizer = WordPieceTokenizer.from_file(section["vocab"])
        else:
            tokenizer = WordPieceTokenizer(build_vocab((p.text for p in posts), int(section.get("vocab_size", 2000))))

        stage("model")
        pcfg = config.pretrain_config()
        enc = dict(section.get("encoder") or {})
        enc.setdefault("max_position", pcfg.max_seq_len)
        toy = EncoderConfig(vocab_size=tokenizer.vocab_size, **enc)
        model = prepare_model(tokenizer, pcfg, toy)

        stage("train")
        model, trajectory = run_pretraining(posts, model, tokenizer, pcfg, int(section.get("steps", 0)))

        stage("save")
        ckpt = save_checkpoint(model, run_dir / "checkpoint")
        tokenizer.save(ckpt / "vocab.txt")
        traj_path = run_dir / "trajectory.csv"
        write_trajectory(trajectory, traj_path)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage.name, exc) from exc

    mlm = [r.mlm_loss for r in trajectory]
    rec.artifacts = [str(ckpt), str(traj_path), str(run_dir / "normalized.jsonl")]
    rec.metrics = {
        "trajectory": str(traj_path),
        "steps": len(trajectory),
        "corpus": stats.to_dict(),
        "mlm_first20": float(np.mean(mlm[:20])) if mlm else None,
        "mlm_last20": float(np.mean(mlm[-20:])) if mlm else None,
    }
    marker.unlink()
    store.append(rec.finish())
    return rec


# --- finetune -------------------------------------------------------------

def resolve_checkpoint(config: ExperimentConfig, store: RunStore) -> Path:
    ref = config.finetune.get("checkpoint", "latest")
    if ref == "latest":
        run = store.latest("pretrain")
        if run is None:
            raise StageError("checkpoint", FileNotFoundError("no completed pretrain run in the store"))
        ref = run.artifacts[0]
    path = Path(ref)
    if not (path / "encoder.json").exists() or not (path / "vocab.txt").exists():
        raise StageError("checkpoint", FileNotFoundError(f"{path} is not a checkpoint (needs encoder.json, vocab.txt)"))
    return path


def _data_digest(examples: Sequence[LabeledExample]) -> str:
    h = hashlib.sha256()
    for e in examples:
        h.update(json.dumps([e.id, e.text, e.label, e.group_key, e.split]).encode("utf-8"))
    return h.hexdigest()


def majority_label(labels: Sequence[int]) -> int:
    counts = Counter(labels)
    return min(counts, key=lambda y: (-counts[y], y))


def _finetune_dataset(
    config: ExperimentConfig, store: RunStore, descriptor: DatasetDescriptor, checkpoint: Path
) -> list[RunRecord]:
    section = config.finetune
    ds = descriptor.id
    rec = RunRecord.start("finetune", config.hash, config.seed, dataset_id=ds)
    run_dir = store.run_dir(rec.run_id)
    marker = run_dir / INCOMPLETE
    marker.write_text(f"finetune {ds}\n")
    stage = _Stages()
    try:
        stage("ingest")
        examples = ingest(descriptor, section.get("data_root"), strict=bool(section.get("strict", False)))
        if section.get("normalize_inputs", True):
            ncfg = config.normalization_config()
            examples = [LabeledExample(e.id, normalize_text(e.text, ncfg)[0], e.label, e.group_key, e.split)
                        for e in examples]
        stage("split")
        plan = make_plan(descriptor, examples, derive_seed(config.seed, ds))
        plan.check(e.id for e in examples)
        (run_dir / "split_plan.json").write_text(plan.to_json())

        stage("load")
        tokenizer = WordPieceTokenizer.from_file(checkpoint / "vocab.txt")
        base = load_checkpoint(checkpoint, vocab_size=tokenizer.vocab_size).encoder
        head = ClassifierHead(tuple(section["head"]) if section.get("head") is not None else None)
        by_id = {e.id: e for e in examples}

        folds, majority_folds = [], []
        for i, fold in enumerate(plan.folds):
            stage(f"fold {i}")
            fcfg = config.finetune_config(seed=derive_seed(config.seed, ds, i))
            model = build_classifier(copy.deepcopy(base), tokenizer, descriptor.num_classes, head, fcfg.max_seq_len)
            schedule = make_schedule(fold, examples, fcfg, **config.schedule)
            model, history = finetune(model, fold, examples, fcfg, schedule)
            test = sorted(fold[1])
            gold = [by_id[j].label for j in test]
            pred = predict(model, [by_id[j].text for j in test]).argmax(axis=1).tolist()
            folds.append(FoldResult.from_predictions(ds, config.model_id, i, gold, pred, descriptor.num_classes))
            maj = majority_label([by_id[j].label for j in fold[0]])
            majority_folds.append(
                FoldResult.from_predictions(ds, MAJORITY, i, gold, [maj] * len(gold), descriptor.num_classes))
            fold_dir = run_dir / f"fold{i}"
            save_classifier(model, fold_dir, {
                "config": config.to_dict(),
                "finetune": fcfg.__dict__,
                "schedule": schedule_dict(schedule),
                "seed": fcfg.seed,
                "data_sha256": _data_digest(examples),
                "checkpoint": str(checkpoint),
            })
            write_epoch_metrics(history, fold_dir / "epochs.csv")
        stage("aggregate")
        report = aggregate(folds)
    except Exception as exc:
        err = StageError(stage.name, exc)
        log.error("%s: %s", ds, err)
        rec.metrics = {"exit_code": err.exit_code}
        store.append(rec.finish("failed", str(err)))
        return [rec]

    rec.artifacts = [str(run_dir)]
    rec.metrics = {"report": report.to_record()}
    marker.unlink()
    store.append(rec.finish())
    out = [rec]
    if section.get("majority_baseline", False):
        mrec = RunRecord.start("finetune", config.hash, config.seed, dataset_id=ds)
        mrec.metrics = {"report": aggregate(majority_folds).to_record()}
        store.append(mrec.finish())
        out.append(mrec)
    return out


def cmd_finetune(config: ExperimentConfig, store: RunStore, jobs: int = 1) -> list[RunRecord]:
    """Fine-tune and evaluate every configured dataset; failures stay per-dataset."""
    if not config.dataset_ids:
        raise StageError("config", ValueError("no dataset_ids configured"))
    try:
        registry = config.registry()
        descriptors = [lookup(registry, d) for d in config.dataset_ids]
    except Exception as exc:
        raise StageError("registry", exc) from exc
    checkpoint = resolve_checkpoint(config, store)
    run = lambda d: _finetune_dataset(config, store, d, checkpoint)  # noqa: E731
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, descriptors))
    else:
        results = [run(d) for d in descriptors]
    return [r for batch in results for r in batch]


# --- evaluate -------------------------------------------------------------

def cmd_evaluate(store: RunStore, predictions: str | Path | None = None, published_grid: bool = False,
                 registry_path: str | None = None, seed: int = 0) -> list[RunRecord]:
    """Turn external predictions (or the published result grid) into stored EvalReports.

    Prediction records: ``{dataset_id, model_id, fold_index, gold: [...], pred: [...],
    num_classes?}``; ``num_classes`` falls back to the registry.
    """
    registry = load_registry(registry_path)
    reports: list[EvalReport] = []
    if published_grid:
        for row in load_published_grid():
            if row.is_average:
                continue
            k = registry[row.dataset].k if row.dataset in registry else 1
            for model, score in row.scores.items():
                reports.append(EvalReport(row.dataset, model, score, 0.0, k))
    if predictions is not None:
        grouped: dict[tuple[str, str], list[FoldResult]] = defaultdict(list)
        with open(predictions, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                r = json.loads(line)
                ds = r["dataset_id"]
                n = r.get("num_classes") or (registry[ds].num_classes if ds in registry else None)
                if n is None:
                    raise DataError(f"{predictions}:{lineno}: num_classes unknown for dataset {ds!r}")
                grouped[(ds, r["model_id"])].append(
                    FoldResult.from_predictions(ds, r["model_id"], int(r.get("fold_index", 0)), r["gold"], r["pred"], n))
        reports.extend(aggregate(sorted(f, key=lambda x: x.fold_index)) for f in grouped.values())
    if not reports:
        raise StageError("evaluate", ValueError("nothing to evaluate"), EXIT_USAGE)
    chash = hashlib.sha256(f"{predictions}|{published_grid}".encode()).hexdigest()
    out = []
    for rep in reports:
        rec = RunRecord.start("evaluate", chash, seed, dataset_id=rep.dataset_id)
        rec.metrics = {"report": rep.to_record()}
        store.append(rec.finish())
        out.append(rec)
    return out


# --- report ---------------------------------------------------------------

def cmd_report(
    store: RunStore,
    baseline_id: str,
    output_format: str = "md",
    registry_path: str | None = None,
    pin: Sequence[str] = (),
    output: str | Path | None = None,
) -> str:
    """Comparison table over the latest report per (dataset, model)."""
    reports = store.latest_reports(dict.fromkeys(pin, True))
    if not reports:
        raise StageError("report", DataError(f"no evaluation reports in store {store.root}"))
    registry = load_registry(registry_path)
    seen_ds = list(dict.fromkeys(r.dataset_id for r in reports))
    dataset_order = [d for d in registry if d in seen_ds] + [d for d in seen_ds if d not in registry]
    families = {d: registry[d].task_family for d in seen_ds if d in registry}
    seen_models = list(dict.fromkeys(r.model_id for r in reports))
    model_order = [m for m in PUBLISHED_MODELS if m in seen_models] + [m for m in seen_models if m not in PUBLISHED_MODELS]
    base = {r.dataset_id: r.mean_f1 for r in reports if r.model_id == baseline_id}
    for r in reports:
        if r.dataset_id in base and base[r.dataset_id] > 0:
            r.delta_mp[baseline_id] = delta_mp(r.mean_f1, base[r.dataset_id])
    try:
        table = build_comparison_table(reports, baseline_id, families, model_order, dataset_order)
    except ValueError as exc:
        raise StageError("report", exc) from exc
    text = table.render(output_format)
    for w in table.warnings:
        log.warning(w)
    if output is not None:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8")
    return text


# --- registry -------------------------------------------------------------

def cmd_registry_list(registry_path: str | None = None) -> str:
    reg = load_registry(registry_path)
    lines = [f"{'id':<22} {'family':<18} {'platform':<8} {'samples':>7} {'unit':<7} {'classes':>7}  strategy"]
    for d in reg.values():
        lines.append(f"{d.id:<22} {d.task_family:<18} {d.platform:<8} {d.num_samples:>7} {d.unit:<7} "
                     f"{d.num_classes:>7}  {d.split_strategy}")
    return "\n".join(lines)


def cmd_registry_validate(registry_path: str | None = None) -> tuple[bool, str]:
    reg = load_registry(registry_path)
    problems = validate_registry(reg)
    if problems:
        return False, "\n".join(f"mismatch: {p}" for p in problems)
    sources = {d.source_dataset or d.id for d in reg.values()}
    families = {d.task_family for d in reg.values()}
    return True, (f"ok: {len(reg)} rows, {len(sources)} datasets, {len(families)} task families; "
                  f"sample counts, class counts and split strategies match the reference statistics")


# --- argument parsing -----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="phsbench", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in ("pretrain", "finetune"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        if name == "finetune":
            s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("evaluate")
    s.add_argument("--predictions")
    s.add_argument("--published-grid", action="store_true", help="import the bundled published F1 grid")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("report")
    s.add_argument("--baseline", required=True)
    s.add_argument("--format", choices=("md", "csv"), default="md")
    s.add_argument("--config")
    s.add_argument("--pin", action="append", default=[], metavar="RUN_ID")
    s.add_argument("--output")

    s = sub.add_parser("registry")
    s.add_argument("action", choices=("list", "validate"))
    s.add_argument("--config")
    return p


def _load_config(path: str | None, seed: int | None = None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        return ExperimentConfig.load(path).with_seed(seed)
    except (OSError, ValueError) as exc:
        raise StageError("config", exc, EXIT_USAGE) from exc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _load_config(getattr(args, "config", None), getattr(args, "seed", None))
        if args.command == "pretrain":
            rec = cmd_pretrain(config, RunStore())
            print(f"{rec.run_id} pretrain ok  checkpoint={rec.artifacts[0]}")
            return EXIT_OK
        if args.command == "finetune":
            recs = cmd_finetune(config, RunStore(), jobs=args.jobs)
            code = EXIT_OK
            for r in recs:
                if r.status == "ok":
                    rep = r.report
                    print(f"{r.run_id} {r.dataset_id} {rep.model_id} F1={rep.mean_f1:.2f}±{rep.std_f1:.2f} "
                          f"({rep.fold_count} folds)")
                else:
                    print(f"{r.run_id} {r.dataset_id} FAILED {r.error}", file=sys.stderr)
                    code = max(code, r.metrics.get("exit_code", EXIT_DATA))
            return code
        if args.command == "evaluate":
            if not (args.predictions or args.published_grid):
                raise StageError("evaluate", ValueError("give --predictions or --published-grid"), EXIT_USAGE)
            recs = cmd_evaluate(RunStore(), args.predictions, args.published_grid, config.registry_path, args.seed)
            print(f"stored {len(recs)} reports")
            return EXIT_OK
        if args.command == "report":
            print(cmd_report(RunStore(), args.baseline, args.format, config.registry_path, args.pin, args.output), end="")
            return EXIT_OK
        if args.action == "list":
            print(cmd_registry_list(config.registry_path))
            return EXIT_OK
        ok, msg = cmd_registry_validate(config.registry_path)
        print(msg)
        return EXIT_OK if ok else EXIT_DATA
    except StageError as exc:
        print(f"phsbench: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DATA_ERRORS as exc:
        print(f"phsbench: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TRAINING_ERRORS as exc:
        print(f"phsbench: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
