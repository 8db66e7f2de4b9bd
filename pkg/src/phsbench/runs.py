"""Experiment configs and the append-only run store."""

from __future__ import annotations

import dataclasses
import fcntl
import hashlib
import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Mapping

import yaml

from .corpus import RegistryError, load_registry
from .evalkit import EvalReport
from .finetune import FineTuneConfig
from .normalizer import NormalizationConfig
from .pretrain import PretrainConfig

STORE_FILE = "runs.jsonl"
INCOMPLETE = "INCOMPLETE"


def store_root(path: str | Path | None = None) -> Path:
    if path is not None:
        return Path(path)
    return Path(os.environ.get("PHSBENCH_HOME", Path.home() / ".phsbench"))


def config_hash(resolved: Mapping) -> str:
    """sha256 of the canonical JSON form; insensitive to key order."""
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def derive_seed(master: int, *parts: Any) -> int:
    """Independent 31-bit seed for a (dataset, fold, ...) job."""
    key = ":".join(str(p) for p in (master, *parts))
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:4], "big") >> 1


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


@dataclass
class RunRecord:
    run_id: str
    command: str
    config_hash: str
    seed: int
    started: str
    ended: str | None = None
    status: str = "ok"
    dataset_id: str | None = None
    artifacts: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    error: str | None = None

    @classmethod
    def start(cls, command: str, chash: str, seed: int, dataset_id: str | None = None) -> "RunRecord":
        run_id = f"{datetime.now(timezone.utc):%Y%m%dT%H%M%S}-{uuid.uuid4().hex[:8]}"
        return cls(run_id, command, chash, seed, _now(), dataset_id=dataset_id)

    def finish(self, status: str = "ok", error: str | None = None) -> "RunRecord":
        self.ended = _now()
        self.status = status
        self.error = error
        return self

    @property
    def report(self) -> EvalReport | None:
        rec = self.metrics.get("report")
        return EvalReport.from_record(rec) if rec else None


class RunStore:
    """Append-only JSONL of RunRecords plus per-run artifact directories.

    Appends are serialized by a process-local lock and an advisory file lock,
    so concurrent workers and concurrent processes never interleave lines.
    """

    def __init__(self, root: str | Path | None = None):
        self.root = store_root(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.path = self.root / STORE_FILE
        self._lock = threading.Lock()

    def run_dir(self, run_id: str) -> Path:
        d = self.root / "runs" / run_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    def append(self, record: RunRecord) -> None:
        line = json.dumps(dataclasses.asdict(record), sort_keys=True, default=str) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                fh.write(line)
                fh.flush()
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def __iter__(self) -> Iterator[RunRecord]:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield RunRecord(**json.loads(line))

    def records(self) -> list[RunRecord]:
        return list(self)

    def latest(self, command: str, status: str = "ok") -> RunRecord | None:
        found = None
        for r in self:
            if r.command == command and r.status == status:
                found = r
        return found

    def latest_reports(self, pin: Mapping[str, str] | None = None) -> list[EvalReport]:
        """Latest successful report per (dataset, model); ``pin`` maps run_id -> required.

        A pinned run's report replaces whatever is latest for its (dataset, model).
        """
        latest: dict[tuple[str, str], EvalReport] = {}
        pinned: dict[tuple[str, str], EvalReport] = {}
        wanted = set(pin or ())
        for r in self:
            rep = r.report
            if rep is None or r.status != "ok":
                continue
            key = (rep.dataset_id, rep.model_id)
            latest[key] = rep
            if r.run_id in wanted:
                pinned[key] = rep
                wanted.discard(r.run_id)
        if wanted:
            raise KeyError(f"pinned run ids not found in store: {sorted(wanted)}")
        latest.update(pinned)
        return list(latest.values())


# --- experiment configs ---------------------------------------------------

def _expand(value: Any) -> Any:
    if isinstance(value, str):
        return os.path.expandvars(value)
    if isinstance(value, Mapping):
        return {k: _expand(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_expand(v) for v in value]
    return value


def _pick(cls, section: Mapping) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in section.items() if k in names}


@dataclass
class ExperimentConfig:
    """Everything one invocation needs; loaded from YAML with ``$VAR`` expansion.

    Sections ``normalizer``, ``pretrain``, ``finetune`` and ``schedule`` map
    onto the corresponding config objects; extra keys in ``pretrain``
    (``corpus``, ``steps``, ``vocab``, ``vocab_size``, ``encoder``) and
    ``finetune`` (``checkpoint``, ``head``, ``normalize_inputs``,
    ``majority_baseline``, ``data_root``, ``strict``) drive the commands.
    """

    model_id: str = "model"
    seed: int = 0
    dataset_ids: list = field(default_factory=list)
    registry_path: str | None = None
    output_dir: str | None = None
    normalizer: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        data = _expand(dict(data))
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, Mapping):
            raise ValueError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def registry(self):
        return load_registry(self.registry_path)

    def validate(self) -> None:
        """Check dataset ids against the registry and build every sub-config."""
        reg = self.registry()
        missing = [d for d in self.dataset_ids if d not in reg]
        if missing:
            raise RegistryError(f"dataset ids not in registry: {missing}")
        self.normalization_config()
        self.pretrain_config()
        self.finetune_config()

    def normalization_config(self) -> NormalizationConfig:
        return NormalizationConfig(**_pick(NormalizationConfig, self.normalizer))

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(**{**_pick(PretrainConfig, self.pretrain), "seed": self.seed})

    def finetune_config(self, seed: int | None = None) -> FineTuneConfig:
        return FineTuneConfig(**{**_pick(FineTuneConfig, self.finetune), "seed": self.seed if seed is None else seed})
