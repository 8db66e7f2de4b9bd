"""MLM + NSP batch construction and continued pretraining."""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .encoder import CheckpointMismatch, EncoderConfig, PretrainingModel, load_checkpoint
from .normalizer import NormalizedPost
from .tokenizer import WordPieceTokenizer

log = logging.getLogger(__name__)

IGNORE = -100
IS_NEXT, NOT_NEXT = 0, 1


class PairingError(ValueError):
    pass


class NothingMaskable(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    mask_rate: float = 0.15
    mask_token_frac: float = 0.80
    random_token_frac: float = 0.10
    keep_frac: float = 0.10
    nsp_positive_rate: float = 0.5
    use_nsp: bool = True
    batch_size: int = 8
    max_seq_len: int = 128
    learning_rate: float = 2e-5
    init_checkpoint: str | None = None
    random_init: bool = False
    seed: int = 0

    def __post_init__(self):
        if not math.isclose(self.mask_token_frac + self.random_token_frac + self.keep_frac, 1.0):
            raise ValueError("mask/random/keep fractions must sum to 1")
        if not 0 < self.mask_rate < 1:
            raise ValueError("mask_rate must be in (0, 1)")
        if not 0 <= self.nsp_positive_rate <= 1:
            raise ValueError("nsp_positive_rate must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_seq_len < 4:
            raise ValueError("max_seq_len must be >= 4")


# --- NSP pairing ----------------------------------------------------------

_SENT_END_RE = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENT_END_RE.split(text.strip()) if s]


def build_nsp_pairs(
    documents: Sequence[NormalizedPost | str], config: PretrainConfig
) -> list[tuple[str, str, bool]]:
    """``(segment_a, segment_b, is_next)`` triples, one per segment that has a successor.

    A segment's successor is the next sentence of its document; for a
    single-sentence document it is the first sentence of the next document.
    With probability ``nsp_positive_rate`` the pair keeps the successor,
    otherwise segment_b is drawn uniformly from every other segment.
    """
    texts = [d.text if isinstance(d, NormalizedPost) else d for d in documents]
    if len(texts) < 2:
        raise PairingError(f"need at least 2 documents to build NSP pairs, got {len(texts)}")
    segments: list[str] = []
    doc_of: list[int] = []
    doc_len: list[int] = []
    for i, text in enumerate(texts):
        sents = split_sentences(text)
        segments.extend(sents)
        doc_of.extend([i] * len(sents))
        doc_len.append(len(sents))
    if len(segments) < 2:
        raise PairingError("corpus has fewer than 2 segments")

    rng = np.random.default_rng(config.seed)
    pairs = []
    for j in range(len(segments) - 1):
        same_doc = doc_of[j + 1] == doc_of[j]
        if not same_doc and doc_len[doc_of[j]] > 1:
            continue  # last sentence of a multi-sentence document
        if rng.random() < config.nsp_positive_rate:
            pairs.append((segments[j], segments[j + 1], True))
        else:
            # uniform over all segments except the true successor
            r = int(rng.integers(len(segments) - 1))
            r = r + 1 if r >= j + 1 else r
            pairs.append((segments[j], segments[r], False))
    if not pairs:
        raise PairingError("no segment has a successor")
    return pairs


# --- MLM masking ----------------------------------------------------------

@dataclass
class MaskedRow:
    input_ids: np.ndarray
    mlm_labels: np.ndarray
    token_type_ids: np.ndarray
    selected: np.ndarray  # positions chosen for prediction
    action: np.ndarray  # per selected position: 0 mask, 1 random, 2 keep


def n_to_mask(n_maskable: int, rate: float) -> int:
    return max(1, int(math.floor(rate * n_maskable + 0.5)))


def apply_mlm_mask(
    token_ids: Sequence[int],
    tokenizer: WordPieceTokenizer,
    config: PretrainConfig,
    rng: np.random.Generator,
    token_type_ids: Sequence[int] | None = None,
) -> MaskedRow:
    """Select ``max(1, round(mask_rate * n))`` non-special positions and perturb them.

    Each selected position becomes ``[MASK]``, a uniformly drawn non-special
    token, or stays unchanged with probabilities mask_token_frac /
    random_token_frac / keep_frac. Labels carry the original id at selected
    positions and ``IGNORE`` elsewhere.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    special = np.isin(ids, list(tokenizer.special_ids))
    maskable = np.flatnonzero(~special)
    if maskable.size == 0:
        raise NothingMaskable("sequence has no maskable (non-special) tokens")
    k = n_to_mask(maskable.size, config.mask_rate)
    selected = np.sort(rng.choice(maskable, size=k, replace=False))

    u = rng.random(k)
    action = np.where(
        u < config.mask_token_frac, 0, np.where(u < config.mask_token_frac + config.random_token_frac, 1, 2)
    )
    labels = np.full_like(ids, IGNORE)
    labels[selected] = ids[selected]
    out = ids.copy()
    out[selected[action == 0]] = tokenizer.mask_id
    n_random = int((action == 1).sum())
    if n_random:
        out[selected[action == 1]] = rng.choice(tokenizer.non_special_ids, size=n_random)
    types = np.zeros_like(ids) if token_type_ids is None else np.asarray(token_type_ids, dtype=np.int64)
    return MaskedRow(out, labels, types, selected, action)


@dataclass
class MaskedBatch:
    input_ids: torch.Tensor
    token_type_ids: torch.Tensor
    attention_mask: torch.Tensor
    mlm_labels: torch.Tensor
    nsp_labels: torch.Tensor


def make_batch(
    pairs: Sequence[tuple[str, str, bool]],
    tokenizer: WordPieceTokenizer,
    config: PretrainConfig,
    stream: Sequence[int],
) -> MaskedBatch:
    """Encode, mask and pad NSP pairs.

    ``stream`` identifies the RNG stream per row (e.g. ``(seed, step, row)``)
    so rows can be built independently and reproducibly.
    """
    rows = []
    for r, (a, b, is_next) in enumerate(pairs):
        ids, types = tokenizer.encode_pair(a, b if config.use_nsp else None, config.max_seq_len)
        rng = np.random.default_rng([*stream, r])
        rows.append((apply_mlm_mask(ids, tokenizer, config, rng, types), is_next))
    n = max(len(row.input_ids) for row, _ in rows)
    shape = (len(rows), n)
    input_ids = np.full(shape, tokenizer.pad_id, dtype=np.int64)
    types = np.zeros(shape, dtype=np.int64)
    attn = np.zeros(shape, dtype=np.int64)
    labels = np.full(shape, IGNORE, dtype=np.int64)
    for i, (row, _) in enumerate(rows):
        m = len(row.input_ids)
        input_ids[i, :m] = row.input_ids
        types[i, :m] = row.token_type_ids
        attn[i, :m] = 1
        labels[i, :m] = row.mlm_labels
    nsp = np.array([IS_NEXT if nxt else NOT_NEXT for _, nxt in rows], dtype=np.int64)
    return MaskedBatch(
        torch.from_numpy(input_ids),
        torch.from_numpy(types),
        torch.from_numpy(attn),
        torch.from_numpy(labels),
        torch.from_numpy(nsp),
    )


# --- training -------------------------------------------------------------

def prepare_model(
    tokenizer: WordPieceTokenizer, config: PretrainConfig, toy: EncoderConfig | None = None
) -> PretrainingModel:
    """Start from ``config.init_checkpoint``; random init only when ``config.random_init`` is set."""
    if config.init_checkpoint:
        return load_checkpoint(config.init_checkpoint, vocab_size=tokenizer.vocab_size)
    if not config.random_init:
        raise ValueError("no init_checkpoint given; set random_init=True to train from scratch")
    toy = toy or EncoderConfig(vocab_size=tokenizer.vocab_size, max_position=config.max_seq_len)
    if toy.vocab_size != tokenizer.vocab_size:
        raise CheckpointMismatch(
            f"tokenizer vocab_size={tokenizer.vocab_size} but encoder config has {toy.vocab_size}"
        )
    torch.manual_seed(config.seed)
    return PretrainingModel(toy)


@dataclass
class LossRecord:
    step: int
    mlm_loss: float
    nsp_loss: float
    total: float


def run_pretraining(
    corpus: Sequence[NormalizedPost | str],
    model: PretrainingModel,
    tokenizer: WordPieceTokenizer,
    config: PretrainConfig,
    steps: int,
) -> tuple[PretrainingModel, list[LossRecord]]:
    """Adam (fixed lr) on summed MLM + NSP cross-entropy for ``steps`` steps.

    Raises TrainingError on a non-finite loss, naming the step.
    """
    table = model.encoder.tok.num_embeddings
    if table != tokenizer.vocab_size:
        raise CheckpointMismatch(
            f"tokenizer vocab_size={tokenizer.vocab_size} but encoder embedding table has {table} rows"
        )
    if steps <= 0:
        return model, []
    pairs = [
        p for p in build_nsp_pairs(corpus, config) if tokenizer.encode(p[0]) or tokenizer.encode(p[1])
    ]
    if not pairs:
        raise PairingError("every NSP pair is empty after tokenization")
    torch.manual_seed(config.seed)
    order_rng = np.random.default_rng([config.seed, 1])
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    model.train()
    trajectory: list[LossRecord] = []
    for step in range(steps):
        idx = order_rng.choice(len(pairs), size=min(config.batch_size, len(pairs)), replace=False)
        batch = make_batch([pairs[i] for i in idx], tokenizer, config, (config.seed, step))
        mlm_logits, nsp_logits = model(batch.input_ids, batch.attention_mask, batch.token_type_ids)
        mlm_loss = F.cross_entropy(
            mlm_logits.reshape(-1, mlm_logits.shape[-1]), batch.mlm_labels.reshape(-1), ignore_index=IGNORE
        )
        nsp_loss = F.cross_entropy(nsp_logits, batch.nsp_labels) if config.use_nsp else mlm_loss.new_zeros(())
        loss = mlm_loss + nsp_loss
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss.item()} at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        trajectory.append(LossRecord(step, mlm_loss.item(), nsp_loss.item(), loss.item()))
    model.eval()
    return model, trajectory


def write_trajectory(trajectory: Sequence[LossRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mlm_loss", "nsp_loss", "total"])
        for r in trajectory:
            w.writerow([r.step, f"{r.mlm_loss:.6f}", f"{r.nsp_loss:.6f}", f"{r.total:.6f}"])
