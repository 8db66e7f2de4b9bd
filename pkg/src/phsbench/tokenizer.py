"""Uncased WordPiece tokenizer.

Vocabulary files use the BERT ``vocab.txt`` layout (one token per line, line
number == id), so a released vocabulary can be dropped in. ``build_vocab``
derives a small vocabulary from a corpus for desk-scale runs.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)

_SPECIAL_RE = re.compile("(" + "|".join(re.escape(t) for t in SPECIAL_TOKENS) + ")")


def _is_punct(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def _strip_accents(text: str) -> str:
    return "".join(c for c in unicodedata.normalize("NFD", text) if unicodedata.category(c) != "Mn")


def basic_tokenize(text: str) -> list[str]:
    """Lowercase, strip accents, split on whitespace and punctuation.

    Special tokens (``[CLS]`` etc.) pass through unchanged.
    """
    out: list[str] = []
    for chunk in _SPECIAL_RE.split(text):
        if not chunk:
            continue
        if chunk in SPECIAL_TOKENS:
            out.append(chunk)
            continue
        chunk = _strip_accents(chunk.lower())
        for word in chunk.split():
            buf = ""
            for ch in word:
                if _is_punct(ch):
                    if buf:
                        out.append(buf)
                        buf = ""
                    out.append(ch)
                elif unicodedata.category(ch) in ("Cc", "Cf") or ch == "�":
                    continue
                else:
                    buf += ch
            if buf:
                out.append(buf)
    return out


class WordPieceTokenizer:
    """Greedy longest-match-first WordPiece over a fixed vocabulary."""

    def __init__(self, vocab: Sequence[str], max_chars_per_word: int = 100):
        missing = [t for t in SPECIAL_TOKENS if t not in vocab]
        if missing:
            raise ValueError(f"vocabulary lacks special tokens {missing}")
        if len(set(vocab)) != len(vocab):
            raise ValueError("vocabulary has duplicate entries")
        self.vocab = list(vocab)
        self.token_to_id = {t: i for i, t in enumerate(self.vocab)}
        self.max_chars_per_word = max_chars_per_word
        self.pad_id = self.token_to_id[PAD]
        self.unk_id = self.token_to_id[UNK]
        self.cls_id = self.token_to_id[CLS]
        self.sep_id = self.token_to_id[SEP]
        self.mask_id = self.token_to_id[MASK]
        self.special_ids = frozenset(self.token_to_id[t] for t in SPECIAL_TOKENS)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @cached_property
    def non_special_ids(self) -> list[int]:
        return [i for i in range(self.vocab_size) if i not in self.special_ids]

    @classmethod
    def from_file(cls, path: str | Path) -> "WordPieceTokenizer":
        lines = Path(path).read_text("utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.vocab) + "\n", encoding="utf-8")

    def _wordpiece(self, word: str) -> list[int]:
        if word in self.token_to_id:
            return [self.token_to_id[word]]
        if len(word) > self.max_chars_per_word:
            return [self.unk_id]
        ids: list[int] = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while start < end:
                piece = word[start:end] if start == 0 else "##" + word[start:end]
                if piece in self.token_to_id:
                    found = self.token_to_id[piece]
                    break
                end -= 1
            if found is None:
                return [self.unk_id]
            ids.append(found)
            start = end
        return ids

    def tokenize(self, text: str) -> list[str]:
        return [self.vocab[i] for i in self.encode(text)]

    def encode(self, text: str) -> list[int]:
        """Token ids without added special tokens."""
        ids: list[int] = []
        for word in basic_tokenize(text):
            ids.extend(self._wordpiece(word))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        words: list[str] = []
        for i in ids:
            tok = self.vocab[int(i)]
            if tok.startswith("##") and words:
                words[-1] += tok[2:]
            else:
                words.append(tok)
        return " ".join(words)

    def encode_pair(
        self, a: str | Sequence[int], b: str | Sequence[int] | None = None, max_len: int = 128
    ) -> tuple[list[int], list[int]]:
        """``[CLS] a [SEP] (b [SEP])`` truncated longest-first to ``max_len``.

        Returns ``(input_ids, token_type_ids)``.
        """
        ids_a = list(self.encode(a) if isinstance(a, str) else a)
        ids_b = None if b is None else list(self.encode(b) if isinstance(b, str) else b)
        budget = max_len - (3 if ids_b is not None else 2)
        if budget < 0:
            raise ValueError(f"max_len={max_len} too small for special tokens")
        if ids_b is None:
            ids_a = ids_a[:budget]
        else:
            while len(ids_a) + len(ids_b) > budget:
                if len(ids_a) >= len(ids_b):
                    ids_a.pop()
                else:
                    ids_b.pop()
        input_ids = [self.cls_id, *ids_a, self.sep_id]
        types = [0] * len(input_ids)
        if ids_b is not None:
            input_ids += [*ids_b, self.sep_id]
            types += [1] * (len(ids_b) + 1)
        return input_ids, types


def build_vocab(texts: Iterable[str], vocab_size: int = 2000, min_freq: int = 1) -> list[str]:
    """Small WordPiece vocabulary: specials, every character (plain and ``##``), then frequent words.

    Any word spelled with characters seen in ``texts`` can be segmented, so
    ``[UNK]`` appears only for unseen characters. Whole words fill the
    remaining budget by frequency.
    """
    word_counts: Counter[str] = Counter()
    for text in texts:
        word_counts.update(basic_tokenize(text))
    for tok in SPECIAL_TOKENS:
        word_counts.pop(tok, None)
    chars = sorted({ch for w in word_counts for ch in w})
    vocab = list(SPECIAL_TOKENS)
    vocab += chars
    vocab += ["##" + ch for ch in chars]
    if len(vocab) > vocab_size:
        raise ValueError(f"vocab_size={vocab_size} cannot hold {len(vocab)} special/character entries")
    seen = set(vocab)
    for word, count in sorted(word_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(vocab) >= vocab_size or count < min_freq:
            break
        if word not in seen:
            vocab.append(word)
            seen.add(word)
    return vocab
