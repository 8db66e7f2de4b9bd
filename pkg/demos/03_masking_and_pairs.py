"""Building one continued-pretraining batch.

Pretraining pairs text segments for next-sentence prediction (half true
successors, half random segments) and masks 15% of the non-special tokens.
Of the masked positions, 80% become [MASK], 10% a random token and 10% stay
as they were. The model must recover the original token at each of them.
"""

import numpy as np

from phsbench import PretrainConfig, WordPieceTokenizer, build_nsp_pairs, build_vocab, normalize_corpus
from phsbench.pretrain import IGNORE, apply_mlm_mask, make_batch
from phsbench.synthetic import synthetic_posts

posts, _ = normalize_corpus(synthetic_posts(500, seed=3))
tok = WordPieceTokenizer(build_vocab((p.text for p in posts), vocab_size=500))
config = PretrainConfig(seed=0, max_seq_len=48)

pairs = build_nsp_pairs(posts, config)
print(f"{len(pairs)} segment pairs, {np.mean([p[2] for p in pairs]):.1%} are true successors")
for a, b, is_next in pairs[:3]:
    print(f"  [{'next' if is_next else 'random'}] {a!r} | {b!r}")

# Masking a single sequence, shown token by token.
ids, types = tok.encode_pair(pairs[0][0], pairs[0][1], max_len=config.max_seq_len)
row = apply_mlm_mask(ids, tok, config, np.random.default_rng(0), types)
names = {0: "[MASK]", 1: "random", 2: "kept"}
print(f"\n{len(ids)} tokens, {len(row.selected)} selected for prediction")
for pos, act in zip(row.selected, row.action):
    print(f"  position {pos:>2}: {tok.vocab[ids[pos]]!r:<12} -> {tok.vocab[row.input_ids[pos]]!r:<12} ({names[act]})")

# A padded batch. Labels are IGNORE everywhere except the selected positions.
batch = make_batch(pairs[:16], tok, config, stream=(0, 0))
labeled = (batch.mlm_labels != IGNORE).sum().item()
real = batch.attention_mask.sum().item() - 3 * len(batch.input_ids)
print(f"\nBatch {tuple(batch.input_ids.shape)}: {labeled} labeled of ~{real} maskable tokens "
      f"({labeled / real:.1%}), NSP labels {batch.nsp_labels.tolist()}")
