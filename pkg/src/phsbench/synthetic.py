"""Synthetic corpora for desk-scale runs and tests.

The generators draw from one shared lexicon so that a tokenizer built on the
pretraining posts also covers the classification data.
"""

from __future__ import annotations

import numpy as np

from .corpus import LabeledExample
from .normalizer import RawPost

SUBJECTS = ["i", "my mom", "my friend", "our team", "my brother", "she", "he", "everyone here", "my doctor", "the nurse"]
SYMPTOMS = ["flu", "fever", "cough", "headache", "anxiety", "stress", "insomnia", "migraine", "allergies", "covid"]
VERBS = ["got", "caught", "has", "is fighting", "finally beat", "is worried about", "keeps talking about", "read about"]
TAILS = ["today", "again", "this week", "all night", "since monday", "after work", "at school", "lol"]
OPENERS = ["honestly", "ugh", "so", "well", "wow", "update", "fyi", "ok"]
EMOJI = ["😷", "🤒", "😢", "💉", "🙏", "😴", "🤧", "❤️"]

# separable classification data: one keyword bank per class, shared filler
CLASS_KEYWORDS = [
    ["vaccine", "shot", "booster", "clinic", "appointment", "dose"],
    ["stress", "anxiety", "deadline", "panic", "overwhelmed", "exhausted"],
    ["fever", "cough", "flu", "sick", "sneezing", "chills"],
]
FILLER = ["today", "really", "just", "my", "the", "so", "and", "again", "this", "week", "feel", "got"]


def synthetic_posts(n: int, seed: int = 0) -> list[RawPost]:
    """Tweet-like posts with retweets, mentions, URLs, emoji and multi-sentence bodies."""
    rng = np.random.default_rng(seed)
    pick = lambda xs: xs[int(rng.integers(len(xs)))]  # noqa: E731
    posts = []
    for i in range(n):
        n_sent = 1 if rng.random() < 0.6 else int(rng.integers(2, 4))
        sents = []
        for _ in range(n_sent):
            s = f"{pick(SUBJECTS)} {pick(VERBS)} {pick(SYMPTOMS)} {pick(TAILS)}"
            if rng.random() < 0.3:
                s = f"{pick(OPENERS)} {s}"
            sents.append(s + pick([".", "!", "?"]))
        if rng.random() < 0.5:
            kw = CLASS_KEYWORDS[int(rng.integers(3))]
            sents.append(" ".join(pick(FILLER) if rng.random() < 0.4 else pick(kw) for _ in range(6)) + ".")
        text = " ".join(sents)
        if rng.random() < 0.3:
            text += f" {pick(EMOJI)}"
        if rng.random() < 0.3:
            text = f"@user{int(rng.integers(1000))} {text}"
        if rng.random() < 0.2:
            text += f" https://t.co/{int(rng.integers(10**6)):x}"
        if rng.random() < 0.15:
            text = f"RT @news{int(rng.integers(50))}: {text}"
        posts.append(RawPost(f"p{i:05d}", text, "twitter"))
    return posts


def separable_dataset(n: int = 300, num_classes: int = 3, seed: int = 0, words: int = 8) -> list[LabeledExample]:
    """Balanced labeled texts; each text mixes filler with keywords of its class only."""
    if num_classes > len(CLASS_KEYWORDS):
        raise ValueError(f"at most {len(CLASS_KEYWORDS)} classes available")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = i % num_classes
        bank = CLASS_KEYWORDS[label]
        toks = [
            bank[int(rng.integers(len(bank)))] if rng.random() < 0.5 else FILLER[int(rng.integers(len(FILLER)))]
            for _ in range(words)
        ]
        toks[int(rng.integers(words))] = bank[int(rng.integers(len(bank)))]  # at least one keyword
        out.append(LabeledExample(f"s{i:04d}", " ".join(toks), label))
    return out


SEPARABLE_LABELS = ["vaccination", "stress", "illness"]

TOY_EXPERIMENT = {
    "model_id": "toy-encoder",
    "seed": 0,
    "dataset_ids": ["separable"],
    "registry_path": "registry.yaml",
    "pretrain": {
        "corpus": "corpus.jsonl",
        "steps": 200,
        "vocab_size": 1000,
        "batch_size": 16,
        "max_seq_len": 64,
        "learning_rate": 1e-3,
        "random_init": True,
        "encoder": {"hidden": 64, "layers": 2, "heads": 2, "intermediate": 256},
    },
    "finetune": {
        "checkpoint": "latest",
        "epochs": 3,
        "batch_size": 16,
        "max_seq_len": 64,
        "majority_baseline": True,
    },
    "schedule": {"max_lr": 2e-3},
}


def write_toy_workspace(root, n_posts: int = 2000, n_examples: int = 300, seed: int = 0):
    """Write a corpus, a labeled dataset, a one-entry registry and an experiment config.

    Relative paths in the written config are made absolute so the config works
    from any working directory. Returns the config path.
    """
    import json
    from pathlib import Path

    import yaml

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for p in synthetic_posts(n_posts, seed):
            fh.write(json.dumps({"id": p.id, "text": p.text, "platform": p.platform}, ensure_ascii=False) + "\n")
    with open(root / "separable.jsonl", "w", encoding="utf-8") as fh:
        for e in separable_dataset(n_examples, seed=seed):
            fh.write(json.dumps({"id": e.id, "text": e.text, "label": SEPARABLE_LABELS[e.label]}) + "\n")
    registry = {"version": 1, "datasets": [{
        "id": "separable",
        "source_dataset": "separable",
        "task_family": "other_health",
        "platform": "other",
        "unit": "post",
        "num_samples": n_examples,
        "num_classes": 3,
        "split_strategy": "stratified_5fold",
        "label_names": SEPARABLE_LABELS,
        "data_path": str(root / "separable.jsonl"),
    }]}
    (root / "registry.yaml").write_text(yaml.safe_dump(registry, sort_keys=False))
    cfg = json.loads(json.dumps(TOY_EXPERIMENT))
    cfg["registry_path"] = str(root / "registry.yaml")
    cfg["pretrain"]["corpus"] = str(root / "corpus.jsonl")
    path = root / "experiment.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return path
