import csv
import json
import warnings

import numpy as np
import pytest
import torch

from _helpers import head_gradient_check, one_cycle_oracle
from phsbench.corpus import LabeledExample, stratified_kfold
from phsbench.encoder import Encoder, EncoderConfig
from phsbench.finetune import (
    ClassifierHead,
    DegenerateTrainingWarning,
    FineTuneConfig,
    OneCycleSchedule,
    build_classifier,
    finetune,
    lr_at,
    make_schedule,
    predict,
    save_classifier,
    steps_per_epoch,
    write_epoch_metrics,
)
from phsbench.synthetic import separable_dataset


def tiny_encoder(tok, seed=0):
    torch.manual_seed(seed)
    return Encoder(EncoderConfig(tok.vocab_size, hidden=16, layers=1, heads=2, intermediate=32, max_position=64))


@pytest.fixture
def clf(toy_tokenizer):
    return build_classifier(tiny_encoder(toy_tokenizer), toy_tokenizer, 3, max_seq_len=32)


# --- schedule -------------------------------------------------------------

def test_schedule_documented_points():
    s = OneCycleSchedule(total_steps=1000)
    assert lr_at(s, 0) == (2e-5 / 25, 0.95)
    assert lr_at(s, 500) == (2e-5, 0.85)
    lr, mom = lr_at(s, 250)
    assert lr == pytest.approx(1.04e-5, abs=1e-15) and mom == pytest.approx(0.90, abs=1e-12)
    assert lr_at(s, 1000) == (2e-5 / 2500, 0.95)


def test_schedule_matches_closed_form():
    s = OneCycleSchedule(total_steps=997, max_lr=3e-4, peak_fraction=0.3)
    for step in range(0, 998, 7):
        want = one_cycle_oracle(step, 997, max_lr=3e-4, peak_fraction=0.3)
        got = lr_at(s, step)
        assert abs(got[0] - want[0]) <= 1e-12 and abs(got[1] - want[1]) <= 1e-12


def test_schedule_shape():
    s = OneCycleSchedule(total_steps=200)
    vals = [lr_at(s, t) for t in range(201)]
    lrs = [v[0] for v in vals]
    moms = [v[1] for v in vals]
    assert max(lrs) == 2e-5 and lrs.index(max(lrs)) == 100
    assert min(moms) == 0.85 and max(moms) == 0.95 and moms[0] == moms[-1] == 0.95
    assert all(np.diff(lrs[:101]) > 0) and all(np.diff(moms[:101]) < 0)
    assert all(np.diff(lrs[100:]) < 0) and all(np.diff(moms[100:]) > 0)


def test_schedule_errors():
    s = OneCycleSchedule(total_steps=10)
    with pytest.raises(ValueError):
        lr_at(s, -1)
    with pytest.raises(ValueError):
        lr_at(s, 11)
    with pytest.raises(ValueError):
        OneCycleSchedule(total_steps=10, momentum_low=0.95, momentum_high=0.85)
    with pytest.raises(ValueError):
        OneCycleSchedule(total_steps=10, peak_fraction=1.0)
    with pytest.raises(ValueError):
        OneCycleSchedule(total_steps=0)


# --- classifier -----------------------------------------------------------

def test_logits_shape_and_probabilities(clf):
    texts = ["i got the flu", "so stressed", "vaccine today", "cough cough"]
    assert clf.logits(texts).shape == (4, 3)
    probs = predict(clf, texts)
    assert probs.shape == (4, 3) and np.allclose(probs.sum(axis=1), 1, atol=1e-6)


def test_zero_head_gives_uniform(clf):
    with torch.no_grad():
        for p in clf.head.parameters():
            p.zero_()
    assert np.allclose(predict(clf, ["anything at all"]), 1 / 3, atol=1e-12)


def test_head_is_tanh_mlp(toy_tokenizer):
    model = build_classifier(tiny_encoder(toy_tokenizer), toy_tokenizer, 2, ClassifierHead((8, 4)))
    kinds = [type(m).__name__ for m in model.head]
    assert kinds == ["Linear", "Tanh", "Linear", "Tanh", "Linear"]
    default = build_classifier(tiny_encoder(toy_tokenizer), toy_tokenizer, 2)
    assert default.head[0].out_features == 16


def test_build_classifier_errors(toy_tokenizer):
    with pytest.raises(ValueError):
        build_classifier(tiny_encoder(toy_tokenizer), toy_tokenizer, 1)

    class NoCls(torch.nn.Module):
        pass

    with pytest.raises(TypeError, match="CLS"):
        build_classifier(NoCls(), toy_tokenizer, 2)


def test_predict_empty_single_and_duplicates(clf):
    assert predict(clf, []).shape == (0, 3)
    one = predict(clf, ["fever"])
    assert one.shape == (1, 3) and abs(one.sum() - 1) <= 1e-6
    two = predict(clf, ["same text", "same text"])
    assert np.array_equal(two[0], two[1])


def test_head_gradient_matches_finite_differences(toy_tokenizer):
    model = build_classifier(tiny_encoder(toy_tokenizer, seed=3), toy_tokenizer, 3, max_seq_len=32)
    data = separable_dataset(8, seed=4)
    assert head_gradient_check(model, [e.text for e in data], [e.label for e in data]) <= 1e-4


# --- training loop --------------------------------------------------------

@pytest.fixture(scope="module")
def data():
    return separable_dataset(60, seed=1)


def first_fold(data):
    return stratified_kfold(data, 5, seed=0).folds[0]


def test_epochs_zero_is_identity(clf, data):
    before = {k: v.clone() for k, v in clf.state_dict().items()}
    cfg = FineTuneConfig(epochs=0)
    _, hist = finetune(clf, first_fold(data), data, cfg, OneCycleSchedule(1))
    assert hist == [] and all(torch.equal(before[k], v) for k, v in clf.state_dict().items())


def test_schedule_length_must_match(clf, data):
    with pytest.raises(ValueError, match="total_steps"):
        finetune(clf, first_fold(data), data, FineTuneConfig(epochs=1), OneCycleSchedule(5))


def test_steps_contract(data):
    cfg = FineTuneConfig(epochs=2, batch_size=7, dev_fraction=0.1)
    s = make_schedule(first_fold(data), data, cfg)
    # 48 train ids, 10% per class to dev -> 3 classes x 16 -> 2 each -> 42 left
    assert s.total_steps == 2 * steps_per_epoch(42, 7) == 12


def test_finetune_records_metrics_and_hygiene(clf, data):
    fold = first_fold(data)
    cfg = FineTuneConfig(epochs=2, batch_size=8, max_seq_len=32)
    model, hist = finetune(clf, fold, data, cfg, make_schedule(fold, data, cfg, max_lr=1e-3))
    assert len(hist) == 2 and all(m.dev_macro_f1 is not None for m in hist)
    run = model.last_run
    assert not run.seen_ids & fold[1]
    assert run.seen_ids == set(run.train_ids) and not set(run.dev_ids) & run.seen_ids


def test_single_class_warns(clf):
    data = [LabeledExample(f"x{i}", "flu fever", 0) for i in range(10)]
    fold = (frozenset(e.id for e in data[:8]), frozenset(e.id for e in data[8:]))
    cfg = FineTuneConfig(epochs=1, dev_fraction=0.0)
    with pytest.warns(DegenerateTrainingWarning):
        model, _ = finetune(clf, fold, data, cfg, make_schedule(fold, data, cfg))
    assert model is clf


def test_empty_train_split(clf):
    data = [LabeledExample("a", "t", 0)]
    with pytest.raises(ValueError, match="empty"):
        finetune(clf, (frozenset(), frozenset({"a"})), data, FineTuneConfig(epochs=1), OneCycleSchedule(1))


def test_config_validation():
    with pytest.raises(ValueError):
        FineTuneConfig(dev_fraction=0.5)
    with pytest.raises(ValueError):
        FineTuneConfig(batch_size=0)


def test_artifacts(clf, tmp_path):
    from phsbench.finetune import EpochMetrics

    write_epoch_metrics([EpochMetrics(0, 1.0, 0.9, 0.5, 0.6)], tmp_path / "e.csv")
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ["epoch", "train_loss", "dev_loss", "dev_macro_f1", "dev_accuracy"]
    d = save_classifier(clf, tmp_path / "run", {"seed": 1})
    assert json.loads((d / "metadata.json").read_text())["seed"] == 1
    assert (d / "classifier.pt").exists()
