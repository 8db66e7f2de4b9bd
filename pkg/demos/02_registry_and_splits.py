"""The dataset registry and how folds are built.

The bundled registry describes every benchmark dataset: its task family,
platform, label set and evaluation protocol. Datasets without an official
train/test split are evaluated with seeded stratified 5-fold
cross-validation. User-level datasets are split by user, so one person's
posts never land on both sides of a fold.
"""

from collections import Counter

from phsbench import LabeledExample, load_registry, lookup, stratified_kfold
from phsbench.corpus import registry_summary
from phsbench.synthetic import separable_dataset

registry = load_registry()
summary = registry_summary(registry)
print(f"{summary['rows']} registry rows describing {summary['datasets']} source datasets")
for family, n in summary["task_families"].items():
    print(f"  {family:<18} {n}")

rhmd = lookup(registry, "RHMD")
print(f"\nRHMD: {rhmd.platform}, {rhmd.num_classes} classes {rhmd.label_names}, k={rhmd.k}")
merged = rhmd.with_variant("merged_3")
print(f"  merged_3 variant: {merged.label_names}")

# Stratified folds keep each class's share close to its share overall.
examples = separable_dataset(300, num_classes=3, seed=0)
plan = stratified_kfold(examples, k=5, seed=42, dataset_id="toy")
plan.check({e.id for e in examples})
label = {e.id: e.label for e in examples}
print("\nPer-fold test label counts (100 examples per class overall)")
for i, (train, test) in enumerate(plan.folds):
    print(f"  fold {i}: train {len(train):>3}, test {len(test):>2}, labels {sorted(Counter(label[t] for t in test).items())}")

# Same seed, same plan. A different seed gives a different plan.
assert stratified_kfold(examples, 5, 42).folds == plan.folds
assert stratified_kfold(examples, 5, 43).folds != plan.folds

# Grouped data: each user's posts stay together.
users = [LabeledExample(f"p{i}", "text", (i // 3) % 2, group_key=f"user{i // 3}") for i in range(60)]
grouped = stratified_kfold(users, k=5, seed=0)
owner = {e.id: e.group_key for e in users}
for train, test in grouped.folds:
    assert not {owner[i] for i in train} & {owner[i] for i in test}
print("\nGrouped split: no user appears on both sides of any fold")
