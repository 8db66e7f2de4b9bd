import csv
import math

import numpy as np
import pytest
import torch

from phsbench.encoder import CheckpointMismatch, EncoderConfig, PretrainingModel, load_checkpoint, save_checkpoint
from phsbench.normalizer import NormalizedPost
from phsbench.pretrain import (
    IGNORE,
    IS_NEXT,
    NOT_NEXT,
    NothingMaskable,
    PairingError,
    PretrainConfig,
    TrainingError,
    apply_mlm_mask,
    build_nsp_pairs,
    make_batch,
    n_to_mask,
    prepare_model,
    run_pretraining,
    split_sentences,
    write_trajectory,
)


def toy_model(tok, seed=0):
    torch.manual_seed(seed)
    return PretrainingModel(EncoderConfig(tok.vocab_size, hidden=32, layers=1, heads=2, intermediate=64, max_position=64))


# --- NSP pairing ----------------------------------------------------------

def test_split_sentences():
    assert split_sentences("One. Two! Three? four") == ["One.", "Two!", "Three?", "four"]
    assert split_sentences("v1.2 is out") == ["v1.2 is out"]
    assert split_sentences("no terminal punctuation") == ["no terminal punctuation"]


def test_two_single_sentence_posts_always_positive():
    pairs = build_nsp_pairs([NormalizedPost("a", "first post"), NormalizedPost("b", "second post")],
                            PretrainConfig(nsp_positive_rate=1.0))
    assert pairs == [("first post", "second post", True)]


def test_single_document_cannot_pair():
    with pytest.raises(PairingError):
        build_nsp_pairs(["only one. document here."], PretrainConfig())
    with pytest.raises(PairingError):
        build_nsp_pairs(["", ""], PretrainConfig())


def test_positive_rate_monte_carlo():
    docs = [f"post number {i}" for i in range(10_001)]
    pairs = build_nsp_pairs(docs, PretrainConfig(seed=3))
    assert len(pairs) == 10_000
    frac = np.mean([p[2] for p in pairs])
    assert abs(frac - 0.5) <= 0.02


def test_negatives_never_true_successor():
    docs = [f"s{i}" for i in range(500)]
    for a, b, is_next in build_nsp_pairs(docs, PretrainConfig(seed=1, nsp_positive_rate=0.0)):
        assert not is_next and int(b[1:]) != int(a[1:]) + 1


def test_multi_sentence_documents_pair_within():
    docs = ["A one. A two. A three.", "B solo", "C solo"]
    pairs = build_nsp_pairs(docs, PretrainConfig(nsp_positive_rate=1.0))
    assert pairs == [("A one.", "A two.", True), ("A two.", "A three.", True), ("B solo", "C solo", True)]


def test_pairing_deterministic():
    docs = [f"d{i}. more {i}." for i in range(50)]
    assert build_nsp_pairs(docs, PretrainConfig(seed=5)) == build_nsp_pairs(docs, PretrainConfig(seed=5))


# --- masking --------------------------------------------------------------

def test_mask_count_rule():
    assert n_to_mask(100, 0.15) == 15
    assert n_to_mask(1, 0.15) == 1
    assert n_to_mask(10, 0.15) == 2  # 1.5 rounds half up
    assert n_to_mask(3, 0.15) == 1


def test_exactly_fifteen_of_hundred(toy_tokenizer):
    tok = toy_tokenizer
    ids = [tok.cls_id] + tok.non_special_ids[:100] + [tok.sep_id]
    row = apply_mlm_mask(ids, tok, PretrainConfig(), np.random.default_rng(0))
    assert (row.mlm_labels != IGNORE).sum() == 15


def test_all_special_is_nothing_maskable(toy_tokenizer):
    tok = toy_tokenizer
    with pytest.raises(NothingMaskable):
        apply_mlm_mask([tok.cls_id, tok.sep_id], tok, PretrainConfig(), np.random.default_rng(0))


def test_mask_label_consistency(toy_tokenizer):
    tok = toy_tokenizer
    rng = np.random.default_rng(1)
    for _ in range(200):
        body = list(rng.choice(tok.non_special_ids, size=int(rng.integers(1, 40))))
        ids = np.array([tok.cls_id, *body, tok.sep_id, tok.pad_id, tok.pad_id])
        row = apply_mlm_mask(ids, tok, PretrainConfig(), rng)
        labeled = np.flatnonzero(row.mlm_labels != IGNORE)
        assert np.array_equal(labeled, row.selected)
        assert np.array_equal(row.mlm_labels[labeled], ids[labeled])
        assert not np.isin(ids[labeled], list(tok.special_ids)).any()
        untouched = np.setdiff1d(np.arange(len(ids)), labeled)
        assert np.array_equal(row.input_ids[untouched], ids[untouched])
        masked = labeled[row.action == 0]
        assert (row.input_ids[masked] == tok.mask_id).all()
        kept = labeled[row.action == 2]
        assert np.array_equal(row.input_ids[kept], ids[kept])
        randomized = labeled[row.action == 1]
        assert not np.isin(row.input_ids[randomized], list(tok.special_ids)).any()


def test_rewrite_fractions_monte_carlo(toy_tokenizer):
    tok = toy_tokenizer
    rng = np.random.default_rng(2)
    actions = []
    ids = [tok.cls_id, *tok.non_special_ids[:200], tok.sep_id]
    while sum(len(a) for a in actions) < 100_000:
        actions.append(apply_mlm_mask(ids, tok, PretrainConfig(), rng).action)
    a = np.concatenate(actions)
    for code, want in ((0, 0.8), (1, 0.1), (2, 0.1)):
        assert abs(np.mean(a == code) - want) <= 0.01


def test_mask_fraction_config_validation():
    with pytest.raises(ValueError):
        PretrainConfig(mask_token_frac=0.7)
    with pytest.raises(ValueError):
        PretrainConfig(mask_rate=0)
    with pytest.raises(ValueError):
        PretrainConfig(batch_size=0)


def test_make_batch_shapes_and_masks(toy_tokenizer):
    tok = toy_tokenizer
    pairs = [("i got the flu.", "my mom has a cough.", True), ("so tired", "fever again today lol", False)]
    b = make_batch(pairs, tok, PretrainConfig(max_seq_len=32), (0, 0))
    assert b.input_ids.shape == b.mlm_labels.shape == b.attention_mask.shape
    assert b.nsp_labels.tolist() == [IS_NEXT, NOT_NEXT]
    pad = b.input_ids == tok.pad_id
    assert ((b.attention_mask == 0) == pad).all()
    special = torch.isin(b.input_ids, torch.tensor([tok.cls_id, tok.sep_id, tok.pad_id]))
    assert (b.mlm_labels[special] == IGNORE).all()
    assert ((b.mlm_labels != IGNORE).sum(dim=1) >= 1).all()


def test_make_batch_deterministic(toy_tokenizer):
    pairs = [("a cough.", "a fever.", True)] * 4
    b1 = make_batch(pairs, toy_tokenizer, PretrainConfig(), (7, 3))
    b2 = make_batch(pairs, toy_tokenizer, PretrainConfig(), (7, 3))
    assert torch.equal(b1.input_ids, b2.input_ids) and torch.equal(b1.mlm_labels, b2.mlm_labels)


# --- training -------------------------------------------------------------

CORPUS = [f"my friend got the flu {i}. then a fever!" for i in range(30)] + ["i caught covid", "so tired today"]


def test_zero_steps_leaves_weights_bitwise(toy_tokenizer):
    model = toy_model(toy_tokenizer)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    model, traj = run_pretraining(CORPUS, model, toy_tokenizer, PretrainConfig(), 0)
    assert traj == []
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_vocab_mismatch_names_both_sizes(toy_tokenizer):
    torch.manual_seed(0)
    other = PretrainingModel(EncoderConfig(toy_tokenizer.vocab_size + 3, hidden=16, layers=1, heads=2, intermediate=32))
    with pytest.raises(CheckpointMismatch, match=rf"{toy_tokenizer.vocab_size}.*{toy_tokenizer.vocab_size + 3}"):
        run_pretraining(CORPUS, other, toy_tokenizer, PretrainConfig(), 1)


def test_checkpoint_roundtrip_and_mismatch(toy_tokenizer, tmp_path):
    model = toy_model(toy_tokenizer)
    save_checkpoint(model, tmp_path / "ck")
    again = load_checkpoint(tmp_path / "ck", vocab_size=toy_tokenizer.vocab_size)
    assert all(torch.equal(a, b) for a, b in zip(model.state_dict().values(), again.state_dict().values()))
    with pytest.raises(CheckpointMismatch, match=rf"vocab_size=5.*{toy_tokenizer.vocab_size} rows"):
        load_checkpoint(tmp_path / "ck", vocab_size=5)


def test_prepare_model_requires_explicit_random_init(toy_tokenizer, tmp_path):
    with pytest.raises(ValueError, match="random_init"):
        prepare_model(toy_tokenizer, PretrainConfig())
    model = prepare_model(toy_tokenizer, PretrainConfig(random_init=True, max_seq_len=64),
                          EncoderConfig(toy_tokenizer.vocab_size, hidden=16, layers=1, heads=2, intermediate=32))
    save_checkpoint(model, tmp_path / "ck")
    loaded = prepare_model(toy_tokenizer, PretrainConfig(init_checkpoint=str(tmp_path / "ck")))
    assert torch.equal(loaded.encoder.tok.weight, model.encoder.tok.weight)


def test_non_finite_loss_names_step(toy_tokenizer):
    model = toy_model(toy_tokenizer)
    with torch.no_grad():
        model.encoder.tok.weight.fill_(math.nan)
    with pytest.raises(TrainingError, match="step 0"):
        run_pretraining(CORPUS, model, toy_tokenizer, PretrainConfig(), 3)


def test_short_run_trajectory(toy_tokenizer, tmp_path):
    model = toy_model(toy_tokenizer)
    cfg = PretrainConfig(learning_rate=1e-3, batch_size=8, max_seq_len=32)
    model, traj = run_pretraining(CORPUS, model, toy_tokenizer, cfg, 30)
    assert len(traj) == 30 and all(math.isfinite(r.total) for r in traj)
    assert np.mean([r.mlm_loss for r in traj[-5:]]) < np.mean([r.mlm_loss for r in traj[:5]])
    out = tmp_path / "traj.csv"
    write_trajectory(traj, out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["step", "mlm_loss", "nsp_loss", "total"] and len(rows) == 31


def test_nsp_can_be_disabled(toy_tokenizer):
    model = toy_model(toy_tokenizer)
    _, traj = run_pretraining(CORPUS, model, toy_tokenizer, PretrainConfig(use_nsp=False, max_seq_len=32), 2)
    assert all(r.nsp_loss == 0.0 for r in traj)
