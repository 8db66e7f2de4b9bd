"""BERT-style encoder backend (torch).

Small enough to train on a CPU at toy scale, same layout as BERT: token +
position + segment embeddings, post-LN transformer layers, ``[CLS]`` at
position 0, MLM head tied to the token embeddings, NSP head on a tanh pooler.

Checkpoints are directories holding ``encoder.json`` (architecture) and
``weights.pt`` (state dict of a ``PretrainingModel``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

CONFIG_FILE = "encoder.json"
WEIGHTS_FILE = "weights.pt"


class CheckpointMismatch(ValueError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    intermediate: int = 256
    max_position: int = 128
    type_vocab: int = 2
    dropout: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class Encoder(nn.Module):
    cls_position = 0

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.tok = nn.Embedding(config.vocab_size, config.hidden)
        self.pos = nn.Embedding(config.max_position, config.hidden)
        self.seg = nn.Embedding(config.type_vocab, config.hidden)
        self.emb_norm = nn.LayerNorm(config.hidden, eps=1e-12)
        self.emb_drop = nn.Dropout(config.dropout)
        layer = nn.TransformerEncoderLayer(
            config.hidden,
            config.heads,
            config.intermediate,
            config.dropout,
            activation="gelu",
            batch_first=True,
        )
        self.layers = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        self.apply(_init_weights)

    @property
    def width(self) -> int:
        return self.config.hidden

    def forward(self, input_ids, attention_mask=None, token_type_ids=None):
        """Last-layer hidden states, shape (batch, seq, hidden)."""
        b, n = input_ids.shape
        if n > self.config.max_position:
            raise ValueError(f"sequence length {n} exceeds max_position {self.config.max_position}")
        positions = torch.arange(n, device=input_ids.device).unsqueeze(0)
        if token_type_ids is None:
            token_type_ids = torch.zeros_like(input_ids)
        x = self.tok(input_ids) + self.pos(positions) + self.seg(token_type_ids)
        x = self.emb_drop(self.emb_norm(x))
        pad_mask = None if attention_mask is None else attention_mask == 0
        return self.layers(x, src_key_padding_mask=pad_mask)


def _init_weights(module):
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.normal_(module.weight, std=0.02)
    if isinstance(module, nn.Linear) and module.bias is not None:
        nn.init.zeros_(module.bias)


class PretrainingModel(nn.Module):
    """Encoder plus MLM and NSP heads; ``forward`` returns both logits."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.encoder = Encoder(config)
        h = config.hidden
        self.mlm_transform = nn.Sequential(nn.Linear(h, h), nn.GELU(), nn.LayerNorm(h, eps=1e-12))
        self.mlm_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.pooler = nn.Sequential(nn.Linear(h, h), nn.Tanh())
        self.nsp = nn.Linear(h, 2)
        for m in (self.mlm_transform, self.pooler, self.nsp):
            m.apply(_init_weights)

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    def forward(self, input_ids, attention_mask=None, token_type_ids=None):
        hidden = self.encoder(input_ids, attention_mask, token_type_ids)
        mlm_logits = self.mlm_transform(hidden) @ self.encoder.tok.weight.T + self.mlm_bias
        nsp_logits = self.nsp(self.pooler(hidden[:, self.encoder.cls_position]))
        return mlm_logits, nsp_logits


def save_checkpoint(model: PretrainingModel, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / CONFIG_FILE).write_text(json.dumps(asdict(model.config), indent=2), encoding="utf-8")
    torch.save(model.state_dict(), path / WEIGHTS_FILE)
    return path


def read_checkpoint_config(path: str | Path) -> EncoderConfig:
    cfg_file = Path(path) / CONFIG_FILE
    if not cfg_file.exists():
        raise FileNotFoundError(f"no {CONFIG_FILE} in checkpoint {path}")
    return EncoderConfig.from_dict(json.loads(cfg_file.read_text("utf-8")))


def load_checkpoint(path: str | Path, vocab_size: int | None = None) -> PretrainingModel:
    """Rebuild a PretrainingModel from a checkpoint directory.

    ``vocab_size`` (the tokenizer's) must match the checkpoint's embedding
    table when given.
    """
    config = read_checkpoint_config(path)
    state = torch.load(Path(path) / WEIGHTS_FILE, map_location="cpu", weights_only=True)
    table = state["encoder.tok.weight"].shape[0]
    if vocab_size is not None and table != vocab_size:
        raise CheckpointMismatch(
            f"tokenizer vocab_size={vocab_size} but checkpoint embedding table has {table} rows"
        )
    model = PretrainingModel(config)
    model.load_state_dict(state)
    return model
