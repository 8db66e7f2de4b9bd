"""Dataset registry, ingestion and train/test split construction."""

from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .normalizer import PLATFORMS

log = logging.getLogger(__name__)

TASK_FAMILIES = (
    "suicide",
    "stress",
    "health_mention",
    "vaccine_sentiment",
    "covid",
    "depression",
    "other_health",
)
UNITS = ("post", "user", "sms", "claim", "review")
SPLIT_STRATEGIES = ("official", "stratified_5fold")


class RegistryError(ValueError):
    pass


class DataError(ValueError):
    pass


class InfeasibleStratification(ValueError):
    pass


@dataclass(frozen=True)
class DatasetDescriptor:
    id: str
    task_family: str
    platform: str
    unit: str
    num_samples: int
    num_classes: int
    split_strategy: str
    label_names: tuple
    data_path: str | Mapping[str, str] | None = None
    source_dataset: str | None = None
    label_variants: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        for name, value, allowed in (
            ("task_family", self.task_family, TASK_FAMILIES),
            ("platform", self.platform, PLATFORMS),
            ("unit", self.unit, UNITS),
            ("split_strategy", self.split_strategy, SPLIT_STRATEGIES),
        ):
            if value not in allowed:
                raise RegistryError(f"{self.id}: unknown {name} {value!r}")
        if self.num_samples < 1:
            raise RegistryError(f"{self.id}: num_samples must be positive")
        if self.num_classes < 2:
            raise RegistryError(f"{self.id}: num_classes must be >= 2")
        if len(self.label_names) != self.num_classes:
            raise RegistryError(
                f"{self.id}: {len(self.label_names)} label_names but num_classes={self.num_classes}"
            )
        if len(set(self.label_names)) != len(self.label_names):
            raise RegistryError(f"{self.id}: duplicate label_names")

    @property
    def k(self) -> int:
        return 5 if self.split_strategy == "stratified_5fold" else 1

    def with_variant(self, name: str) -> "DatasetDescriptor":
        """Same dataset under an alternative label set (e.g. RHMD ``merged_3``)."""
        labels = tuple(self.label_variants[name])
        return replace(self, label_names=labels, num_classes=len(labels), label_variants={})

    def resolve_paths(self, data_root: str | Path | None = None) -> dict[str, Path]:
        """Map split name (``all``, ``train``, ``test``) to an absolute path."""
        if self.data_path is None:
            raise DataError(f"{self.id}: no data_path configured")
        root = Path(data_root or os.environ.get("PHSBENCH_DATA", "."))
        paths = self.data_path if isinstance(self.data_path, Mapping) else {"all": self.data_path}
        return {k: root / os.path.expandvars(v) for k, v in paths.items()}


@dataclass(frozen=True)
class LabeledExample:
    id: str
    text: str
    label: int
    group_key: str | None = None
    split: str | None = None


@dataclass(frozen=True)
class SplitPlan:
    dataset_id: str
    seed: int
    folds: tuple  # of (train_ids: frozenset, test_ids: frozenset)

    def to_json(self) -> str:
        return json.dumps(
            {
                "dataset_id": self.dataset_id,
                "seed": self.seed,
                "folds": [
                    {"train": sorted(tr), "test": sorted(te)} for tr, te in self.folds
                ],
            },
            sort_keys=True,
        )

    def check(self, universe: Iterable[str] | None = None) -> None:
        """Raise if a fold leaks test ids into train (or, for CV plans, test sets overlap)."""
        seen: set[str] = set()
        for i, (tr, te) in enumerate(self.folds):
            if tr & te:
                raise AssertionError(f"fold {i}: train/test overlap {sorted(tr & te)[:5]}")
            if len(self.folds) > 1 and seen & te:
                raise AssertionError(f"fold {i}: test set overlaps an earlier fold")
            seen |= te
        if universe is not None and len(self.folds) > 1 and seen != set(universe):
            raise AssertionError("test folds do not cover the example universe")


# --- registry -------------------------------------------------------------

def _descriptor_from_record(rec: Mapping, row: int) -> DatasetDescriptor:
    try:
        data_path = rec.get("data_path")
        return DatasetDescriptor(
            id=str(rec["id"]),
            task_family=rec["task_family"],
            platform=rec["platform"],
            unit=rec["unit"],
            num_samples=int(rec["num_samples"]),
            num_classes=int(rec["num_classes"]),
            split_strategy=rec["split_strategy"],
            label_names=tuple(str(x) for x in rec["label_names"]),
            data_path=dict(data_path) if isinstance(data_path, Mapping) else data_path,
            source_dataset=rec.get("source_dataset", rec["id"]),
            label_variants={k: tuple(v) for k, v in (rec.get("label_variants") or {}).items()},
        )
    except KeyError as exc:
        raise RegistryError(f"registry row {row}: missing field {exc}") from exc
    except RegistryError as exc:
        raise RegistryError(f"registry row {row}: {exc}") from exc


def load_registry(path: str | Path | None = None) -> dict[str, DatasetDescriptor]:
    """Load descriptors keyed by id; ``path=None`` loads the bundled registry."""
    if path is None:
        text = resources.files("phsbench.data").joinpath("registry.yaml").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    doc = yaml.safe_load(text) or {}
    records = doc.get("datasets", doc) if isinstance(doc, dict) else doc
    registry: dict[str, DatasetDescriptor] = {}
    for row, rec in enumerate(records, 1):
        desc = _descriptor_from_record(rec, row)
        if desc.id in registry:
            raise RegistryError(f"registry row {row}: duplicate id {desc.id!r}")
        registry[desc.id] = desc
    return registry


def lookup(registry: Mapping[str, DatasetDescriptor], dataset_id: str) -> DatasetDescriptor:
    try:
        return registry[dataset_id]
    except KeyError:
        raise KeyError(f"dataset {dataset_id!r} not in registry") from None


_STATS_FAMILY = {
    "Suicide": "suicide",
    "Stress": "stress",
    "Health Mention": "health_mention",
    "Vaccine Sentiment": "vaccine_sentiment",
    "COVID Related": "covid",
    "Depression": "depression",
    "Other Health related": "other_health",
}
_STATS_PLATFORM = {
    "Reddit": "reddit",
    "Twitter": "twitter",
    "SMS-like": "sms",
    "News Websites": "news",
    "Amazon": "amazon",
}
_STATS_STRATEGY = {"Official Split": "official", "Stratified 5-Folds CV": "stratified_5fold"}


def load_reference_stats() -> list[dict]:
    """The bundled Table-1 transcription, one dict per row."""
    text = resources.files("phsbench.data").joinpath("dataset_stats.csv").read_text("utf-8")
    return list(csv.DictReader(text.splitlines()))


def validate_registry(registry: Mapping[str, DatasetDescriptor]) -> list[str]:
    """Compare a registry row-for-row against the bundled reference statistics; returns problems (empty == ok)."""
    problems: list[str] = []
    rows = load_reference_stats()
    expected_ids = [r["registry_id"] for r in rows]
    if sorted(expected_ids) != sorted(registry):
        missing = set(expected_ids) - set(registry)
        extra = set(registry) - set(expected_ids)
        problems.append(f"id mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for r in rows:
        d = registry.get(r["registry_id"])
        if d is None:
            continue
        count, unit_word = r["samples"].split()
        want = {
            "task_family": _STATS_FAMILY[r["task"]],
            "platform": _STATS_PLATFORM[r["platform"]],
            "num_samples": int(count),
            "num_classes": int(r["classes"]),
            "split_strategy": _STATS_STRATEGY[r["strategy"]],
        }
        for key, value in want.items():
            if getattr(d, key) != value:
                problems.append(f"{d.id}: {key}={getattr(d, key)!r}, reference says {value!r}")
        if (unit_word == "Users") != (d.unit == "user"):
            problems.append(f"{d.id}: unit={d.unit!r}, reference says {unit_word!r}")
    n_sources = len({d.source_dataset for d in registry.values()})
    if n_sources != 25:
        problems.append(f"{n_sources} distinct datasets, expected 25")
    families = {d.task_family for d in registry.values()}
    if len(families) != 7:
        problems.append(f"{len(families)} task families, expected 7")
    return problems


def registry_summary(registry: Mapping[str, DatasetDescriptor]) -> dict:
    return {
        "rows": len(registry),
        "datasets": len({d.source_dataset for d in registry.values()}),
        "task_families": dict(Counter(d.task_family for d in registry.values())),
    }


# --- ingestion ------------------------------------------------------------

def _read_records(path: Path, split: str | None) -> list[tuple[int, dict]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if split is not None:
                rec.setdefault("split", split)
            out.append((lineno, rec | {"_src": f"{path}:{lineno}"}))
    return out


def ingest(
    descriptor: DatasetDescriptor,
    data_root: str | Path | None = None,
    strict: bool = False,
    records: Sequence[Mapping] | None = None,
) -> list[LabeledExample]:
    """Read a dataset's JSONL file(s) into LabeledExamples.

    Records are ``{id, text, label, group_key?, split?}``; ``label`` is one of
    ``descriptor.label_names``. For user-level datasets the posts of one user
    are concatenated in source order into a single example. ``records`` may be
    passed directly instead of reading ``data_path``.

    A count mismatch against ``descriptor.num_samples`` is a warning, or a
    DataError when ``strict``.
    """
    if records is None:
        raw: list[tuple[int, dict]] = []
        for split, path in descriptor.resolve_paths(data_root).items():
            if not path.exists():
                raise DataError(f"{descriptor.id}: data file {path} not found")
            raw.extend(_read_records(path, None if split == "all" else split))
    else:
        raw = [(i, dict(r) | {"_src": f"record {i}"}) for i, r in enumerate(records, 1)]

    label_index = {name: i for i, name in enumerate(descriptor.label_names)}
    examples: list[LabeledExample] = []
    for _, rec in raw:
        where = rec["_src"]
        try:
            ex_id, text, label = str(rec["id"]), rec["text"], rec["label"]
        except KeyError as exc:
            raise DataError(f"{where}: missing field {exc}") from exc
        if str(label) not in label_index:
            raise DataError(f"{where}: unknown label {label!r} (expected one of {list(label_index)})")
        split = rec.get("split")
        if split not in (None, "train", "test"):
            raise DataError(f"{where}: split must be train or test, got {split!r}")
        group = rec.get("group_key")
        if descriptor.unit == "user" and group is None:
            raise DataError(f"{where}: user-level dataset record without group_key")
        examples.append(LabeledExample(ex_id, text, label_index[str(label)], group, split))

    if descriptor.unit == "user":
        examples = _group_by_user(examples, descriptor.id)
    elif descriptor.split_strategy != "official":
        dupes = [i for i, c in Counter(e.id for e in examples).items() if c > 1]
        if dupes:
            raise DataError(f"{descriptor.id}: duplicate ids {dupes[:5]}")

    delta = len(examples) - descriptor.num_samples
    if delta:
        msg = (
            f"{descriptor.id}: ingested {len(examples)} examples, registry says "
            f"{descriptor.num_samples} (delta {delta:+d})"
        )
        if strict:
            raise DataError(msg)
        log.warning(msg)
    return examples


def _group_by_user(examples: list[LabeledExample], dataset_id: str) -> list[LabeledExample]:
    texts: dict[str, list[str]] = defaultdict(list)
    labels: dict[str, int] = {}
    splits: dict[str, str | None] = {}
    for ex in examples:
        key = ex.group_key
        if key in labels and labels[key] != ex.label:
            raise DataError(f"{dataset_id}: user {key!r} has conflicting labels")
        if key in splits and splits[key] != ex.split:
            raise DataError(f"{dataset_id}: user {key!r} spans train and test")
        labels[key] = ex.label
        splits[key] = ex.split
        texts[key].append(ex.text)
    return [
        LabeledExample(key, " ".join(texts[key]), labels[key], key, splits[key])
        for key in texts  # dict order == first appearance
    ]


# --- splits ---------------------------------------------------------------

def _units(examples: Sequence[LabeledExample]) -> tuple[dict[str, list[str]], dict[str, int]]:
    """Group example ids into stratification units (group_key, else the example)."""
    members: dict[str, list[str]] = defaultdict(list)
    unit_label: dict[str, int] = {}
    for ex in examples:
        unit = ex.group_key if ex.group_key is not None else ex.id
        if unit in unit_label and unit_label[unit] != ex.label:
            raise DataError(f"group {unit!r} mixes labels {unit_label[unit]} and {ex.label}")
        unit_label[unit] = ex.label
        members[unit].append(ex.id)
    return members, unit_label


def stratified_kfold(examples: Sequence[LabeledExample], k: int = 5, seed: int = 0,
                     dataset_id: str = "") -> SplitPlan:
    """Seeded stratified k-fold over examples, or over groups when ``group_key`` is set.

    Units of each class are shuffled and dealt round-robin into folds. The
    dealing position carries over between classes, so folds are balanced in
    total size as well as per class.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if len({ex.id for ex in examples}) != len(examples):
        raise DataError("duplicate example ids")
    members, unit_label = _units(examples)
    by_class: dict[int, list[str]] = defaultdict(list)
    for unit, label in unit_label.items():
        by_class[label].append(unit)
    for label, units in sorted(by_class.items()):
        if len(units) < k:
            raise InfeasibleStratification(
                f"class {label} has {len(units)} units, fewer than k={k}"
            )

    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    cursor = 0
    for label in sorted(by_class):
        units = sorted(by_class[label])
        for j in rng.permutation(len(units)):
            fold_of[units[j]] = cursor % k
            cursor += 1

    test_sets: list[set[str]] = [set() for _ in range(k)]
    for unit, f in fold_of.items():
        test_sets[f].update(members[unit])
    universe = frozenset(ex.id for ex in examples)
    folds = tuple((universe - frozenset(t), frozenset(t)) for t in test_sets)
    return SplitPlan(dataset_id, seed, folds)


def official_split(descriptor: DatasetDescriptor, examples: Sequence[LabeledExample]) -> SplitPlan:
    """One fold mirroring the train/test membership recorded on the examples."""
    if descriptor.split_strategy != "official":
        raise ValueError(f"{descriptor.id} uses {descriptor.split_strategy}, not an official split")
    train: set[str] = set()
    test: set[str] = set()
    for ex in examples:
        if ex.split == "train":
            train.add(ex.id)
        elif ex.split == "test":
            test.add(ex.id)
        else:
            raise DataError(f"{descriptor.id}: example {ex.id!r} has no split membership")
    both = train & test
    if both:
        raise DataError(f"{descriptor.id}: example {sorted(both)[0]!r} is in both train and test")
    return SplitPlan(descriptor.id, 0, ((frozenset(train), frozenset(test)),))


def make_plan(descriptor: DatasetDescriptor, examples: Sequence[LabeledExample], seed: int) -> SplitPlan:
    if descriptor.split_strategy == "official":
        return official_split(descriptor, examples)
    return stratified_kfold(examples, k=5, seed=seed, dataset_id=descriptor.id)


def holdout(ids: Sequence[str], labels: Sequence[int], fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Carve a per-class ``fraction`` dev set out of training ids.

    Classes with a single member stay entirely in train.
    """
    if not 0 <= fraction < 0.5:
        raise ValueError("dev fraction must be in [0, 0.5)")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = defaultdict(list)
    for i, y in zip(ids, labels):
        by_class[y].append(i)
    train, dev = [], []
    for y in sorted(by_class):
        members = sorted(by_class[y])
        order = [members[j] for j in rng.permutation(len(members))]
        n_dev = int(round(fraction * len(members))) if len(members) > 1 else 0
        dev.extend(order[:n_dev])
        train.extend(order[n_dev:])
    return train, dev
