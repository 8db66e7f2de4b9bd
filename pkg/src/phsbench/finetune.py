"""Classifier construction, one-cycle schedule and the fine-tuning loop."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import LabeledExample, holdout
from .evalkit import confusion, f1_scores
from .tokenizer import WordPieceTokenizer


class DegenerateTrainingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OneCycleSchedule:
    """Triangular one-cycle policy with a terminal anneal.

    lr climbs linearly from ``max_lr/div_factor`` to ``max_lr`` at the peak,
    then falls to ``max_lr/(div_factor*final_div)`` at ``total_steps``.
    Momentum mirrors it between ``momentum_high`` and ``momentum_low``.
    """

    total_steps: int
    max_lr: float = 2e-5
    div_factor: float = 25.0
    final_div: float = 100.0
    momentum_high: float = 0.95
    momentum_low: float = 0.85
    peak_fraction: float = 0.5

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0 < self.peak_fraction < 1:
            raise ValueError("peak_fraction must be in (0, 1)")
        if not self.momentum_low < self.momentum_high:
            raise ValueError("momentum_low must be below momentum_high")
        if min(self.max_lr, self.div_factor, self.final_div) <= 0:
            raise ValueError("max_lr, div_factor and final_div must be positive")

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def final_lr(self) -> float:
        return self.max_lr / (self.div_factor * self.final_div)

    @property
    def peak_step(self) -> float:
        return self.peak_fraction * self.total_steps

    def lr_at(self, step: int | float) -> tuple[float, float]:
        return lr_at(self, step)


def lr_at(schedule: OneCycleSchedule, step: int | float) -> tuple[float, float]:
    """``(learning_rate, momentum)`` at ``step`` in ``[0, total_steps]``."""
    s = schedule
    if not 0 <= step <= s.total_steps:
        raise ValueError(f"step {step} outside [0, {s.total_steps}]")
    peak = s.peak_step
    hi, lo = s.momentum_high, s.momentum_low
    if step < peak:
        t = step / peak
        lr = s.initial_lr + (s.max_lr - s.initial_lr) * t
        mom = hi - (hi - lo) * t
    else:
        t = (step - peak) / (s.total_steps - peak)
        lr = s.max_lr - (s.max_lr - s.final_lr) * t
        mom = lo + (hi - lo) * t
    # pin the knots so the extremes are exact
    if step == 0:
        return s.initial_lr, hi
    if step == peak:
        return s.max_lr, lo
    if step == s.total_steps:
        return s.final_lr, hi
    return lr, min(max(mom, lo), hi)


@dataclass(frozen=True)
class ClassifierHead:
    hidden_dims: tuple | None = None  # None -> one hidden layer of encoder width

    def build(self, width: int, num_classes: int) -> nn.Sequential:
        dims = list(self.hidden_dims) if self.hidden_dims is not None else [width]
        layers: list[nn.Module] = []
        prev = width
        for d in dims:
            layers += [nn.Linear(prev, d), nn.Tanh()]
            prev = d
        layers.append(nn.Linear(prev, num_classes))
        return nn.Sequential(*layers)


@dataclass(frozen=True)
class FineTuneConfig:
    epochs: int = 3
    batch_size: int = 16
    max_seq_len: int = 128
    seed: int = 0
    dev_fraction: float = 0.1
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 <= self.dev_fraction < 0.5:
            raise ValueError("dev_fraction must be in [0, 0.5)")


class SequenceClassifier(nn.Module):
    """Encoder -> last-layer ``[CLS]`` state -> tanh MLP -> logits."""

    def __init__(self, encoder: nn.Module, tokenizer: WordPieceTokenizer, num_classes: int,
                 head: ClassifierHead | None = None, max_seq_len: int = 128):
        super().__init__()
        self.encoder = encoder
        self.tokenizer = tokenizer
        self.num_classes = num_classes
        self.max_seq_len = min(max_seq_len, encoder.config.max_position)
        self.head = (head or ClassifierHead()).build(encoder.width, num_classes)

    def features(self, input_ids, attention_mask):
        hidden = self.encoder(input_ids, attention_mask)
        return hidden[:, self.encoder.cls_position]

    def forward(self, input_ids, attention_mask):
        return self.head(self.features(input_ids, attention_mask))

    def collate(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        encoded = [self.tokenizer.encode_pair(t, None, self.max_seq_len)[0] for t in texts]
        n = max(len(e) for e in encoded)
        ids = torch.full((len(encoded), n), self.tokenizer.pad_id, dtype=torch.long)
        mask = torch.zeros((len(encoded), n), dtype=torch.long)
        for i, e in enumerate(encoded):
            ids[i, : len(e)] = torch.tensor(e)
            mask[i, : len(e)] = 1
        return ids, mask

    def logits(self, texts: Sequence[str]) -> torch.Tensor:
        return self(*self.collate(texts))


def build_classifier(encoder: nn.Module, tokenizer: WordPieceTokenizer, num_classes: int,
                     head: ClassifierHead | None = None, max_seq_len: int = 128) -> SequenceClassifier:
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if getattr(encoder, "cls_position", None) is None:
        raise TypeError(f"{type(encoder).__name__} has no CLS position convention")
    return SequenceClassifier(encoder, tokenizer, num_classes, head, max_seq_len)


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    return math.ceil(n_train / batch_size)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_loss: float | None
    dev_macro_f1: float | None
    dev_accuracy: float | None


@dataclass
class FineTuneResult:
    train_ids: list = field(default_factory=list)
    dev_ids: list = field(default_factory=list)
    seen_ids: set = field(default_factory=set)
    metrics: list = field(default_factory=list)


def split_train_dev(fold, examples: Sequence[LabeledExample], config: FineTuneConfig):
    train_ids, test_ids = fold
    by_id = {e.id: e for e in examples}
    pool = sorted(i for i in train_ids if i not in test_ids)
    tr, dev = holdout(pool, [by_id[i].label for i in pool], config.dev_fraction, config.seed)
    return tr, dev


def make_schedule(fold, examples: Sequence[LabeledExample], config: FineTuneConfig, **kwargs) -> OneCycleSchedule:
    """A schedule whose total_steps matches what ``finetune`` will run."""
    tr, _ = split_train_dev(fold, examples, config)
    total = config.epochs * steps_per_epoch(len(tr), config.batch_size)
    return OneCycleSchedule(total_steps=max(total, 1), **kwargs)


def finetune(
    model: SequenceClassifier,
    fold: tuple,
    examples: Sequence[LabeledExample],
    config: FineTuneConfig,
    schedule: OneCycleSchedule,
) -> tuple[SequenceClassifier, list[EpochMetrics]]:
    """Adam with per-step lr and beta1 taken from the one-cycle schedule.

    Dev examples are carved from the fold's train ids; test ids never reach
    the optimizer (asserted).
    """
    train_ids, test_ids = fold
    test_ids = frozenset(test_ids)
    if config.epochs == 0:
        return model, []
    by_id = {e.id: e for e in examples}
    tr, dev = split_train_dev(fold, examples, config)
    if not tr:
        raise ValueError("empty train split")
    expected = config.epochs * steps_per_epoch(len(tr), config.batch_size)
    if schedule.total_steps != expected:
        raise ValueError(
            f"schedule.total_steps={schedule.total_steps} but {config.epochs} epochs x "
            f"{steps_per_epoch(len(tr), config.batch_size)} batches = {expected}"
        )
    present = {by_id[i].label for i in tr}
    if len(present) == 1:
        warnings.warn("train split holds a single class; training is degenerate", DegenerateTrainingWarning)
    elif len(present) < model.num_classes:
        missing = sorted(set(range(model.num_classes)) - present)
        warnings.warn(f"classes {missing} absent from train split", DegenerateTrainingWarning)

    if config.freeze_encoder:
        for p in model.encoder.parameters():
            p.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    lr0, mom0 = lr_at(schedule, 0)
    optimizer = torch.optim.Adam(params, lr=lr0, betas=(mom0, 0.999))

    torch.manual_seed(config.seed)
    rng = np.random.default_rng([config.seed, 2])
    seen: set[str] = set()
    history: list[EpochMetrics] = []
    step = 0
    for epoch in range(config.epochs):
        model.train()
        order = [tr[j] for j in rng.permutation(len(tr))]
        losses = []
        for b in range(0, len(order), config.batch_size):
            batch_ids = order[b : b + config.batch_size]
            lr, mom = lr_at(schedule, step)
            for group in optimizer.param_groups:
                group["lr"] = lr
                group["betas"] = (mom, group["betas"][1])
            logits = model.logits([by_id[i].text for i in batch_ids])
            target = torch.tensor([by_id[i].label for i in batch_ids])
            loss = F.cross_entropy(logits, target)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            seen.update(batch_ids)
            losses.append(loss.item())
            step += 1
        history.append(_epoch_metrics(model, epoch, float(np.mean(losses)), [by_id[i] for i in dev]))
    if seen & test_ids:
        raise AssertionError(f"test ids reached the optimizer: {sorted(seen & test_ids)[:5]}")
    model.eval()
    model.last_run = FineTuneResult(tr, dev, seen, history)
    return model, history


def _epoch_metrics(model, epoch, train_loss, dev: Sequence[LabeledExample]) -> EpochMetrics:
    if not dev:
        return EpochMetrics(epoch, train_loss, None, None, None)
    probs = predict(model, [e.text for e in dev])
    gold = [e.label for e in dev]
    pred = probs.argmax(axis=1).tolist()
    _, macro, micro = f1_scores(confusion(gold, pred, model.num_classes))
    dev_loss = float(-np.mean(np.log(np.clip(probs[np.arange(len(gold)), gold], 1e-12, None))))
    return EpochMetrics(epoch, train_loss, dev_loss, macro, micro)


@torch.no_grad()
def predict(model: SequenceClassifier, texts: Sequence[str], batch_size: int = 64) -> np.ndarray:
    """Class probabilities, one row per text."""
    if not texts:
        return np.zeros((0, model.num_classes))
    was_training = model.training
    model.eval()
    out = []
    for b in range(0, len(texts), batch_size):
        logits = model.logits(list(texts[b : b + batch_size])).double()
        out.append(torch.softmax(logits, dim=-1).numpy())
    model.train(was_training)
    return np.concatenate(out)


def write_epoch_metrics(history: Sequence[EpochMetrics], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "dev_loss", "dev_macro_f1", "dev_accuracy"])
        for m in history:
            w.writerow([m.epoch, m.train_loss, m.dev_loss, m.dev_macro_f1, m.dev_accuracy])


def save_classifier(model: SequenceClassifier, run_dir: str | Path, metadata: dict) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), run_dir / "classifier.pt")
    (run_dir / "metadata.json").write_text(json.dumps(metadata, indent=2, sort_keys=True, default=str))
    return run_dir


def schedule_dict(schedule: OneCycleSchedule) -> dict:
    return asdict(schedule)
