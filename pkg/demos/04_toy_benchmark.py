"""The full benchmark loop at toy scale.

This writes a small workspace (a synthetic pretraining corpus, an easy
three-class dataset, a registry and an experiment config). It then runs
the same three commands as the CLI: continued pretraining, 5-fold
fine-tuning and the comparison report. The model is a tiny CPU encoder, so
the whole run takes seconds. Scores are against a majority-class baseline.
"""

import os
import tempfile
import time
from pathlib import Path

root = Path(tempfile.mkdtemp(prefix="phsbench-demo-"))
os.environ["PHSBENCH_HOME"] = str(root / "store")

from phsbench.cli import cmd_finetune, cmd_pretrain, cmd_report  # noqa: E402
from phsbench.runs import ExperimentConfig, RunStore  # noqa: E402
from phsbench.synthetic import write_toy_workspace  # noqa: E402

config = ExperimentConfig.load(write_toy_workspace(root / "workspace"))
store = RunStore()
print(f"workspace and run store under {root}\n")

t0 = time.perf_counter()
pre = cmd_pretrain(config, store)
print(f"pretrain  {pre.run_id}: {pre.metrics['steps']} steps, "
      f"MLM loss {pre.metrics['mlm_first20']:.2f} -> {pre.metrics['mlm_last20']:.2f} "
      f"(mean of first / last 20 steps), {time.perf_counter() - t0:.0f} s")

t0 = time.perf_counter()
for rec in cmd_finetune(config, store):
    rep = rec.report
    folds = ", ".join(f"{f.macro_f1:.3f}" for f in rep.folds)
    print(f"finetune  {rep.model_id:<12} macro-F1 {rep.mean_f1:6.2f} ± {rep.std_f1:5.2f}  folds [{folds}]")
print(f"          ({time.perf_counter() - t0:.0f} s)\n")

print(cmd_report(store, "majority", "md", config.registry_path))
print(f"\nEvery run is recorded in {store.root / 'runs.jsonl'}")
