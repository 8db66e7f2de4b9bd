"""Social-media text normalization.

The pipeline runs in a fixed order:

1. strip leading retweet markers (``RT `` and ``RT @handle:``)
2. URLs -> ``HTTP-URL``
3. ``@handle`` mentions -> ``@USER``
4. emoji -> `` <name phrase> `` from the bundled emoji table
5. whitespace collapse + trim
6. truncate to ``char_limit`` characters, backing off to a word boundary

Case is preserved; lowercasing belongs to the (uncased) tokenizer. Every step
is chosen so that ``normalize`` is idempotent.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

PLATFORMS = ("twitter", "reddit", "sms", "news", "amazon", "other")

TRANSFORMS = (
    "retweet_stripped",
    "url_replaced",
    "user_replaced",
    "emoji_replaced",
    "truncated",
    "whitespace_collapsed",
)

# Lookbehinds are ASCII-only on purpose: a preceding emoji such as U+2139 is a
# unicode word character, and replacing it later would expose a new match.
URL_RE = re.compile(r"(?i:https?://)\S+|(?<![A-Za-z0-9_.])(?i:t\.co)/\S*")
MENTION_RE = re.compile(r"(?<![A-Za-z0-9_])@\w+")
_RETWEET_RE = re.compile(r"\s*RT")
_RETWEET_HANDLE_RE = re.compile(r"\s+@\w+:")
_WS_RE = re.compile(r"\s+")

EMOJI_TABLE_FILE = "emoji_table.tsv"


def load_emoji_table(path: str | Path | None = None) -> dict[str, str]:
    """Read a ``codepoints<TAB>name phrase`` file into ``{emoji: name}``.

    ``path=None`` loads the bundled table. Lines starting with ``#`` are
    comments. Codepoints are space-separated hex values.
    """
    if path is None:
        text = resources.files("phsbench.data").joinpath(EMOJI_TABLE_FILE).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    table: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            codepoints, phrase = line.split("\t")
            key = "".join(chr(int(cp, 16)) for cp in codepoints.split())
        except ValueError as exc:
            raise ValueError(f"emoji table line {lineno}: malformed row {line!r}") from exc
        table[key] = phrase.strip()
    return table


@lru_cache(maxsize=1)
def default_emoji_table() -> Mapping[str, str]:
    return load_emoji_table()


class _EmojiReplacer:
    """Leftmost-longest replacement of table keys.

    A single alternation regex over ~5k keys is slow, so candidate positions
    are found with a character class of possible first characters and the
    longest key starting there wins.
    """

    def __init__(self, table: Mapping[str, str]):
        by_first: dict[str, list[str]] = {}
        for key in table:
            by_first.setdefault(key[0], []).append(key)
        for keys in by_first.values():
            keys.sort(key=len, reverse=True)
        self.table = dict(table)
        self.by_first = by_first
        chars = "".join(sorted(by_first))
        self.first_re = re.compile("[" + re.escape(chars) + "]") if chars else None

    def __call__(self, text: str) -> tuple[str, int]:
        if self.first_re is None:
            return text, 0
        out: list[str] = []
        pos = 0
        n_replaced = 0
        search = self.first_re.search
        while True:
            m = search(text, pos)
            if m is None:
                break
            start = m.start()
            for key in self.by_first[text[start]]:
                if text.startswith(key, start):
                    out.append(text[pos:start])
                    out.append(" " + self.table[key] + " ")
                    pos = start + len(key)
                    n_replaced += 1
                    break
            else:
                out.append(text[pos:start + 1])
                pos = start + 1
        if not n_replaced:
            return text, 0
        out.append(text[pos:])
        return "".join(out), n_replaced

    def key_at(self, text: str, pos: int = 0) -> bool:
        if pos >= len(text):
            return False
        return any(text.startswith(k, pos) for k in self.by_first.get(text[pos], ()))


@dataclass(frozen=True)
class NormalizationConfig:
    url_placeholder: str = "HTTP-URL"
    user_placeholder: str = "@USER"
    char_limit: int = 200
    emoji_table: Mapping[str, str] | None = None
    strip_retweet: bool = True

    def __post_init__(self):
        if self.char_limit < 1:
            raise ValueError(f"char_limit must be >= 1, got {self.char_limit}")
        if URL_RE.search(self.url_placeholder):
            raise ValueError(f"url_placeholder {self.url_placeholder!r} matches the URL pattern")
        if self.emoji_table is not None:
            _check_emoji_table(self.emoji_table)
        # the mention pattern must map the placeholder onto itself
        if MENTION_RE.sub(self.user_placeholder, self.user_placeholder) != self.user_placeholder:
            raise ValueError(f"user_placeholder {self.user_placeholder!r} is not a fixed point")
        if len(self.user_placeholder) > self.char_limit:
            raise ValueError("user_placeholder longer than char_limit")

    @property
    def table(self) -> Mapping[str, str]:
        return default_emoji_table() if self.emoji_table is None else self.emoji_table

    def to_dict(self) -> dict:
        """Serializable view; a custom emoji table is summarized by size."""
        return {
            "url_placeholder": self.url_placeholder,
            "user_placeholder": self.user_placeholder,
            "char_limit": self.char_limit,
            "emoji_table": "bundled" if self.emoji_table is None else f"custom:{len(self.emoji_table)}",
            "strip_retweet": self.strip_retweet,
        }


def _check_emoji_table(table: Mapping[str, str]) -> None:
    if any(not key for key in table):
        raise ValueError("emoji table contains an empty key")
    replacer = _EmojiReplacer(table)
    for phrase in table.values():
        if replacer(phrase)[1]:
            raise ValueError(f"emoji name {phrase!r} contains an emoji codepoint")
        if URL_RE.search(phrase) or MENTION_RE.search(phrase):
            raise ValueError(f"emoji name {phrase!r} contains a URL or mention")


@lru_cache(maxsize=1)
def _default_replacer() -> _EmojiReplacer:
    return _EmojiReplacer(default_emoji_table())


def _emoji_replacer(config: NormalizationConfig) -> _EmojiReplacer:
    if config.emoji_table is None:
        return _default_replacer()
    replacer = config.__dict__.get("_replacer")
    if replacer is None:
        replacer = _EmojiReplacer(config.emoji_table)
        object.__setattr__(config, "_replacer", replacer)
    return replacer


@dataclass(frozen=True)
class RawPost:
    id: str
    text: str
    platform: str = "twitter"

    def __post_init__(self):
        if self.platform not in PLATFORMS:
            raise ValueError(f"unknown platform {self.platform!r}")


@dataclass(frozen=True)
class NormalizedPost:
    id: str
    text: str
    transforms_applied: frozenset = frozenset()

    def to_record(self, platform: str | None = None) -> dict:
        rec = {"id": self.id, "text": self.text}
        if platform is not None:
            rec["platform"] = platform
        rec["transforms_applied"] = sorted(self.transforms_applied)
        return rec


def _truncate(text: str, limit: int, user_placeholder: str) -> str:
    if len(text) <= limit:
        return text
    if text[limit] == " ":
        return text[:limit]
    head = text[:limit]
    cut = head.rfind(" ")
    if cut > 0:
        return head[:cut]
    # hard cut inside a single long word; never leave a clipped placeholder
    # behind or the next pass would re-expand it
    for m in MENTION_RE.finditer(head):
        if m.group() != user_placeholder and m.start() > 0:
            return head[: m.start()]
    return head


def _retweet_prefix_len(text: str, replacer: _EmojiReplacer) -> int:
    """Length of a leading ``RT`` / ``RT @handle:`` marker, 0 if none.

    The marker must be followed by whitespace, end of text, or an emoji (which
    later becomes a space-delimited name, so ``RT😷`` counts as a marker while
    ``RT-PCR`` does not).
    """
    m = _RETWEET_RE.match(text)
    if m is None:
        return 0
    ends = [m.end()]
    h = _RETWEET_HANDLE_RE.match(text, m.end())
    if h is not None:
        ends.insert(0, h.end())
    for end in ends:
        if end == len(text) or text[end].isspace() or replacer.key_at(text, end):
            rest = text[end:]
            return len(text) - len(rest.lstrip())
    return 0


def normalize_text(text: str, config: NormalizationConfig | None = None) -> tuple[str, frozenset]:
    """Normalize one string; returns ``(text, transforms_applied)``."""
    config = config or NormalizationConfig()
    applied: set[str] = set()
    if not text:
        return "", frozenset()

    replacer = _emoji_replacer(config)
    if config.strip_retweet:
        while (cut := _retweet_prefix_len(text, replacer)) > 0:
            text = text[cut:]
            applied.add("retweet_stripped")

    text, n = URL_RE.subn(config.url_placeholder, text)
    if n:
        applied.add("url_replaced")

    def _user(m: re.Match) -> str:
        if m.group() != config.user_placeholder:
            applied.add("user_replaced")
        return config.user_placeholder

    text = MENTION_RE.sub(_user, text)

    text, n = replacer(text)
    if n:
        applied.add("emoji_replaced")

    collapsed = _WS_RE.sub(" ", text).strip()
    if collapsed != text:
        applied.add("whitespace_collapsed")
    text = collapsed

    truncated = _truncate(text, config.char_limit, config.user_placeholder)
    if truncated != text:
        applied.add("truncated")
    return truncated, frozenset(applied)


def normalize(post: RawPost, config: NormalizationConfig | None = None) -> NormalizedPost:
    text, applied = normalize_text(post.text, config)
    return NormalizedPost(id=post.id, text=text, transforms_applied=applied)


@dataclass
class CorpusStats:
    posts: int = 0
    skipped: int = 0
    transform_counts: dict = field(default_factory=lambda: dict.fromkeys(TRANSFORMS, 0))
    total_chars: int = 0

    @property
    def mean_length(self) -> float:
        return self.total_chars / self.posts if self.posts else 0.0

    def __getattr__(self, name):
        # stats.url_replaced etc.
        counts = self.__dict__.get("transform_counts")
        if counts is not None and name in counts:
            return counts[name]
        raise AttributeError(name)

    def to_dict(self) -> dict:
        return {
            "posts": self.posts,
            "skipped": self.skipped,
            "mean_length": self.mean_length,
            **self.transform_counts,
        }


def normalize_corpus(
    posts: Iterable[RawPost], config: NormalizationConfig | None = None
) -> tuple[list[NormalizedPost], CorpusStats]:
    """Order-preserving ``normalize`` over a corpus.

    A post whose text arrives as undecodable bytes is skipped and counted in
    ``stats.skipped``; the rest of the stream is unaffected.
    """
    config = config or NormalizationConfig()
    stats = CorpusStats()
    out: list[NormalizedPost] = []
    for post in posts:
        text = post.text
        if isinstance(text, bytes):
            try:
                text = text.decode("utf-8")
            except UnicodeDecodeError:
                stats.skipped += 1
                continue
            post = RawPost(post.id, text, post.platform)
        norm = normalize(post, config)
        out.append(norm)
        stats.posts += 1
        stats.total_chars += len(norm.text)
        for t in norm.transforms_applied:
            stats.transform_counts[t] += 1
    return out, stats


def iter_posts(path: str | Path, stats: CorpusStats | None = None) -> Iterator[RawPost]:
    """Yield RawPosts from a JSONL file of ``{id, text, platform}`` records.

    Lines that fail to decode or parse are skipped and counted on ``stats``.
    """
    with open(path, "rb") as fh:
        for raw in fh:
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw.decode("utf-8"))
                if not isinstance(rec["text"], str):
                    raise TypeError("text is not a string")
                yield RawPost(str(rec["id"]), rec["text"], rec.get("platform", "other"))
            except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError):
                if stats is not None:
                    stats.skipped += 1


def normalize_file(
    in_path: str | Path, out_path: str | Path, config: NormalizationConfig | None = None
) -> CorpusStats:
    """JSONL in, JSONL out (input fields plus ``transforms_applied``)."""
    read_stats = CorpusStats()
    posts = list(iter_posts(in_path, read_stats))
    normalized, stats = normalize_corpus(posts, config)
    stats.skipped += read_stats.skipped
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for raw, norm in zip(posts, normalized):
            fh.write(json.dumps(norm.to_record(raw.platform), ensure_ascii=False) + "\n")
    return stats
