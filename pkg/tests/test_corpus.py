import json
import logging
import random
from collections import Counter

import pytest

from phsbench.corpus import (
    DataError,
    DatasetDescriptor,
    InfeasibleStratification,
    LabeledExample,
    RegistryError,
    holdout,
    ingest,
    load_reference_stats,
    load_registry,
    lookup,
    make_plan,
    official_split,
    registry_summary,
    stratified_kfold,
    validate_registry,
)


@pytest.fixture(scope="module")
def registry():
    return load_registry()


def desc(**kw):
    base = dict(id="toy", task_family="other_health", platform="twitter", unit="post", num_samples=3,
                num_classes=2, split_strategy="stratified_5fold", label_names=("pos", "neg"), data_path="toy.jsonl")
    base.update(kw)
    return DatasetDescriptor(**base)


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


# --- registry -------------------------------------------------------------

def test_lookup_dreaddit(registry):
    d = lookup(registry, "Dreaddit")
    assert (d.platform, d.num_samples, d.unit, d.num_classes, d.split_strategy) == ("reddit", 3553, "post", 2, "official")


def test_lookup_rssd(registry):
    d = lookup(registry, "R-SSD")
    assert (d.platform, d.num_samples, d.unit, d.num_classes, d.split_strategy) == (
        "reddit", 500, "user", 5, "stratified_5fold")


def test_lookup_missing(registry):
    with pytest.raises(KeyError, match="missing-id"):
        lookup(registry, "missing-id")


def test_registry_matches_reference_statistics(registry):
    assert validate_registry(registry) == []
    assert len(load_reference_stats()) == len(registry)


def test_registry_family_counts(registry):
    summary = registry_summary(registry)
    fam = Counter(d.task_family for d in registry.values())
    assert fam == {"suicide": 1, "stress": 2, "health_mention": 4, "vaccine_sentiment": 2,
                   "covid": 5, "depression": 6, "other_health": 6}
    assert len({d.source_dataset for d in registry.values()}) == 25
    assert summary


def test_phm_listed_twice_from_one_source(registry):
    phm = [d for d in registry.values() if d.source_dataset == "PHM"]
    assert sorted(d.num_classes for d in phm) == [2, 4]


def test_smm4h_t1_count(registry):
    assert lookup(registry, "SMM4H T1").num_samples == 14954


def test_rhmd_variant(registry):
    d = lookup(registry, "RHMD")
    assert d.num_classes == 4
    merged = d.with_variant("merged_3")
    assert merged.num_classes == 3 and len(merged.label_names) == 3


def test_validate_flags_drift(registry):
    changed = dict(registry)
    d = changed["Dreaddit"]
    changed["Dreaddit"] = DatasetDescriptor(**{**d.__dict__, "num_samples": 3554})
    problems = validate_registry(changed)
    assert any("Dreaddit" in p and "num_samples" in p for p in problems)


def test_registry_errors(tmp_path):
    f = tmp_path / "r.yaml"
    rec = dict(id="a", source_dataset="a", task_family="stress", platform="reddit", unit="post", num_samples=5,
               num_classes=2, split_strategy="official", label_names=["x", "y"], data_path="a.jsonl")
    import yaml
    f.write_text(yaml.safe_dump({"version": 1, "datasets": [rec, rec]}))
    with pytest.raises(RegistryError, match="duplicate"):
        load_registry(f)
    f.write_text(yaml.safe_dump({"version": 1, "datasets": [{**rec, "num_classes": 3}]}))
    with pytest.raises(RegistryError, match="num_classes"):
        load_registry(f)
    f.write_text(yaml.safe_dump({"version": 1, "datasets": [{**rec, "task_family": "sports"}]}))
    with pytest.raises(RegistryError, match="sports"):
        load_registry(f)


def test_descriptor_invariants():
    with pytest.raises(RegistryError):
        desc(label_names=("a", "a"))
    with pytest.raises(RegistryError):
        desc(num_classes=1, label_names=("a",))


# --- ingestion ------------------------------------------------------------

def test_ingest_maps_labels_in_order(tmp_path):
    write_jsonl(tmp_path / "toy.jsonl", [
        {"id": "1", "text": "a", "label": "pos"},
        {"id": "2", "text": "b", "label": "neg"},
        {"id": "3", "text": "c", "label": "pos"},
    ])
    ex = ingest(desc(), data_root=tmp_path)
    assert [e.label for e in ex] == [0, 1, 0]


def test_ingest_user_level_concatenates(tmp_path):
    write_jsonl(tmp_path / "toy.jsonl", [
        {"id": "p1", "text": "first", "label": "pos", "group_key": "u1"},
        {"id": "p2", "text": "second", "label": "neg", "group_key": "u2"},
        {"id": "p3", "text": "third", "label": "pos", "group_key": "u1"},
        {"id": "p4", "text": "fourth", "label": "pos", "group_key": "u1"},
    ])
    ex = ingest(desc(unit="user", num_samples=2), data_root=tmp_path)
    u1 = next(e for e in ex if e.group_key == "u1")
    assert u1.text == "first third fourth" and u1.label == 0 and len(ex) == 2


def test_ingest_unknown_label_names_line(tmp_path):
    write_jsonl(tmp_path / "toy.jsonl", [{"id": "1", "text": "a", "label": "pos"},
                                         {"id": "2", "text": "b", "label": "maybe"}])
    with pytest.raises(DataError, match=r"toy.jsonl:2.*maybe"):
        ingest(desc(), data_root=tmp_path)


def test_ingest_count_mismatch_warns_or_raises(tmp_path, caplog):
    write_jsonl(tmp_path / "toy.jsonl", [{"id": "1", "text": "a", "label": "pos"}])
    with caplog.at_level(logging.WARNING):
        ingest(desc(), data_root=tmp_path)
    assert "delta -2" in caplog.text
    with pytest.raises(DataError, match="delta -2"):
        ingest(desc(), data_root=tmp_path, strict=True)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        ingest(desc(), data_root=tmp_path)


def test_ingest_user_conflicting_labels():
    recs = [{"id": "1", "text": "a", "label": "pos", "group_key": "u"},
            {"id": "2", "text": "b", "label": "neg", "group_key": "u"}]
    with pytest.raises(DataError, match="conflicting"):
        ingest(desc(unit="user", num_samples=1), records=recs)


# --- splits ---------------------------------------------------------------

def examples(labels, groups=None):
    return [LabeledExample(f"e{i:03d}", "t", y, None if groups is None else groups[i]) for i, y in enumerate(labels)]


def fold_class_counts(plan, exs):
    label = {e.id: e.label for e in exs}
    return [Counter(label[i] for i in te) for _, te in plan.folds]


def test_kfold_perfectly_divisible():
    exs = examples([0] * 5 + [1] * 5)
    plan = stratified_kfold(exs, k=5, seed=0)
    assert all(c == {0: 1, 1: 1} for c in fold_class_counts(plan, exs))


def test_kfold_seven_five():
    exs = examples([0] * 7 + [1] * 5)
    plan = stratified_kfold(exs, k=5, seed=3)
    counts = fold_class_counts(plan, exs)
    assert sorted(c[0] for c in counts) == [1, 1, 1, 2, 2]
    assert [c[1] for c in counts] == [1, 1, 1, 1, 1]


def test_kfold_infeasible_names_class():
    with pytest.raises(InfeasibleStratification, match="class 0"):
        stratified_kfold(examples([0] * 4), k=5)


def test_kfold_rejects_small_k():
    with pytest.raises(ValueError):
        stratified_kfold(examples([0, 1]), k=1)


def test_kfold_groups_stay_together():
    labels = [0] * 12 + [1] * 12
    groups = [f"u{i // 2}" for i in range(24)]
    exs = examples(labels, groups)
    plan = stratified_kfold(exs, k=5, seed=1)
    group_of = {e.id: e.group_key for e in exs}
    for tr, te in plan.folds:
        assert not ({group_of[i] for i in tr} & {group_of[i] for i in te})


def test_kfold_seed_determinism_and_sensitivity():
    exs = examples([i % 3 for i in range(60)])
    assert stratified_kfold(exs, 5, 7).to_json() == stratified_kfold(exs, 5, 7).to_json()
    assert stratified_kfold(exs, 5, 7).to_json() != stratified_kfold(exs, 5, 8).to_json()


def check_plan(plan, exs, k):
    """Brute-force checks: partition, per-class balance, group integrity."""
    universe = {e.id for e in exs}
    tests = [te for _, te in plan.folds]
    assert len(tests) == k
    assert set().union(*tests) == universe
    assert sum(len(t) for t in tests) == len(universe)
    for tr, te in plan.folds:
        assert not tr & te and tr | te == universe
    unit_label = {}
    unit_fold = {}
    for f, te in enumerate(tests):
        for e in exs:
            if e.id in te:
                u = e.group_key or e.id
                assert unit_fold.setdefault(u, f) == f
                unit_label[u] = e.label
    per_class = Counter(unit_label.values())
    for f in range(k):
        counts = Counter(unit_label[u] for u, g in unit_fold.items() if g == f)
        for c, n in per_class.items():
            assert n // k <= counts[c] <= -(-n // k)


def random_dataset(rng):
    n_classes = rng.randint(2, 6)
    grouped = rng.random() < 0.3
    units = []
    for c in range(n_classes):
        units += [c] * rng.randint(5, 500 // n_classes)
    rng.shuffle(units)
    exs = []
    for u, c in enumerate(units):
        for j in range(rng.randint(1, 3) if grouped else 1):
            exs.append(LabeledExample(f"x{len(exs)}", "t", c, f"g{u}" if grouped else None))
    return exs


def test_kfold_property_sample():
    rng = random.Random(0)
    for i in range(100):
        exs = random_dataset(rng)
        plan = stratified_kfold(exs, 5, seed=i)
        check_plan(plan, exs, 5)


def test_official_split_passthrough():
    exs = [LabeledExample(f"t{i}", "x", i % 2, split="train") for i in range(8)]
    exs += [LabeledExample(f"s{i}", "x", i % 2, split="test") for i in range(2)]
    plan = official_split(desc(split_strategy="official"), exs)
    (tr, te), = plan.folds
    assert (len(tr), len(te)) == (8, 2)


def test_official_split_overlap_names_id(tmp_path):
    d = desc(split_strategy="official", data_path={"train": "tr.jsonl", "test": "te.jsonl"}, num_samples=3)
    write_jsonl(tmp_path / "tr.jsonl", [{"id": "a", "text": "x", "label": "pos"},
                                        {"id": "dup", "text": "y", "label": "neg"}])
    write_jsonl(tmp_path / "te.jsonl", [{"id": "dup", "text": "y", "label": "neg"}])
    exs = ingest(d, data_root=tmp_path)
    with pytest.raises(DataError, match="'dup'"):
        official_split(d, exs)


def test_make_plan_dispatch(tmp_path):
    exs = examples([0] * 5 + [1] * 5)
    assert len(make_plan(desc(), exs, 0).folds) == 5


def test_holdout_fraction_per_class():
    ids = [f"i{j}" for j in range(100)]
    labels = [j % 2 for j in range(100)]
    tr, dev = holdout(ids, labels, 0.1, seed=0)
    assert len(dev) == 10 and not set(tr) & set(dev) and set(tr) | set(dev) == set(ids)
    assert Counter(labels[int(i[1:])] for i in dev) == {0: 5, 1: 5}
