"""Embedding extraction: frozen pretrained transformer, pooled final
hidden states, one vector per description key."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import read_descriptions, write_embedding_file

# model family -> (default weights id, published hidden size)
MODEL_REGISTRY: dict[str, tuple[str, int]] = {
    "llama-3b": ("openlm-research/open_llama_3b", 4096),
    "gpt2": ("gpt2", 768),
    "bert": ("bert-base-uncased", 768),
}

POOLING_MODES = ("mean", "last-token")


class ModelUnavailableError(RuntimeError):
    """Named model weights are not available locally."""


@dataclass
class ExtractorConfig:
    model: str = "bert"
    pooling: str = "mean"
    max_length: int = 512
    batch_size: int = 8
    device: str = "cpu"
    local_dir: str | None = None  # load weights/tokenizer from a directory

    def __post_init__(self):
        if self.model not in MODEL_REGISTRY:
            raise ValueError(f"unknown model {self.model!r}; expected one of {sorted(MODEL_REGISTRY)}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling {self.pooling!r}; expected one of {POOLING_MODES}")
        if self.max_length < 8:
            raise ValueError("max_length must be >= 8")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def hidden_size(self) -> int:
        return MODEL_REGISTRY[self.model][1]


def load_model(cfg: ExtractorConfig):
    """Tokenizer and frozen model, from the local directory or the local
    cache of the named checkpoint. Verifies the hidden size against the
    family's published value."""
    import torch
    from transformers import AutoModel, AutoTokenizer

    source = cfg.local_dir or MODEL_REGISTRY[cfg.model][0]
    try:
        tokenizer = AutoTokenizer.from_pretrained(source)
        model = AutoModel.from_pretrained(source)
    except Exception as exc:
        raise ModelUnavailableError(
            f"model weights for {cfg.model!r} not available locally ({source}): {exc}"
        ) from None
    if tokenizer.pad_token is None:
        tokenizer.pad_token = tokenizer.eos_token or tokenizer.unk_token
    hidden = int(model.config.hidden_size)
    if hidden != cfg.hidden_size:
        raise ValueError(
            f"loaded model has hidden size {hidden}, but the {cfg.model} family "
            f"publishes {cfg.hidden_size}"
        )
    model.eval()
    model.to(cfg.device)
    for p in model.parameters():
        p.requires_grad_(False)
    return tokenizer, model


def _pool(hidden, attention_mask, mode: str):
    import torch

    mask = attention_mask.unsqueeze(-1).to(hidden.dtype)
    if mode == "mean":
        return (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
    last = attention_mask.sum(dim=1) - 1  # index of the final non-padding token
    return hidden[torch.arange(hidden.shape[0]), last]


def extract(descriptions_path: str | Path, out_path: str | Path, cfg: ExtractorConfig) -> dict:
    """Embed every unique description and write the LTSE table.

    Returns a summary dict (count, dim, truncated count, output path).
    """
    import torch

    pairs = read_descriptions(descriptions_path)
    if not pairs:
        raise ValueError(f"{descriptions_path}: no descriptions to embed")
    tokenizer, model = load_model(cfg)

    entries: dict[str, np.ndarray] = {}
    truncated = 0
    with torch.no_grad():
        for lo in range(0, len(pairs), cfg.batch_size):
            batch = pairs[lo : lo + cfg.batch_size]
            texts = [text for _, text in batch]
            lengths = [len(tokenizer.encode(t)) for t in texts]
            truncated += sum(1 for n in lengths if n > cfg.max_length)
            enc = tokenizer(
                texts,
                padding=True,
                truncation=True,
                max_length=cfg.max_length,
                return_tensors="pt",
            ).to(cfg.device)
            hidden = model(**enc).last_hidden_state
            pooled = _pool(hidden, enc["attention_mask"], cfg.pooling)
            vectors = pooled.cpu().double().numpy()
            for (key, _), vec in zip(batch, vectors):
                entries[key] = vec
    if truncated:
        print(f"warning: truncated {truncated} over-length descriptions", file=sys.stderr)

    write_embedding_file(entries, cfg.hidden_size, out_path)
    return {
        "count": len(entries),
        "dim": cfg.hidden_size,
        "truncated": truncated,
        "path": str(out_path),
    }
