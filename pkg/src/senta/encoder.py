"""QA-style input encoding and the small trainable transformer encoder.

Inputs are laid out as ``[CLS] aspect [SEP] sentence [SEP]`` with the aspect
acting as the question; the pooled representation is the final hidden state
at position 0.  The encoder is written so padding positions provably cannot
leak into the pooled output: padding keys are masked out of every attention
softmax and all other sublayers act per position.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import AspectTooLongError, DimensionError
from .tokenizer import WordTokenizer, tokenize

DEFAULT_MAX_LEN = 64  # encoder length budget


@dataclass(frozen=True)
class EncodedInput:
    """Token ids plus segment ids and attention mask, padded to max_len."""

    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.token_ids) == len(self.segment_ids) == len(self.attention_mask)):
            raise DimensionError("token/segment/mask lengths disagree")

    @property
    def length(self) -> int:
        return sum(self.attention_mask)


def encode_qa(
    aspect: str,
    sentence: str,
    tokenizer: WordTokenizer,
    max_len: int = DEFAULT_MAX_LEN,
    use_segment_ids: bool = True,
) -> EncodedInput:
    """Build the ``[CLS] aspect [SEP] sentence [SEP]`` layout.

    The sentence is truncated from the right to fit the budget; the aspect is
    never truncated.  Segment 0 covers the aspect and its delimiters,
    segment 1 the sentence and the closing separator.
    """
    aspect_tokens = tokenize(aspect)
    if max_len < len(aspect_tokens) + 4:
        raise AspectTooLongError(
            f"aspect needs {len(aspect_tokens) + 4} positions, budget is {max_len}"
        )
    sentence_tokens = tokenize(sentence)
    budget = max_len - 3 - len(aspect_tokens)
    sentence_tokens = sentence_tokens[:budget]

    ids = (
        [tokenizer.cls_id]
        + tokenizer.encode_tokens(aspect_tokens)
        + [tokenizer.sep_id]
        + tokenizer.encode_tokens(sentence_tokens)
        + [tokenizer.sep_id]
    )
    seg0 = len(aspect_tokens) + 2
    segments = [0] * seg0 + [1] * (len(ids) - seg0)
    if not use_segment_ids:
        segments = [0] * len(ids)
    mask = [1] * len(ids)

    pad = max_len - len(ids)
    ids += [tokenizer.pad_id] * pad
    segments += [0] * pad
    mask += [0] * pad
    return EncodedInput(tuple(ids), tuple(segments), tuple(mask))


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = DEFAULT_MAX_LEN
    dropout: float = 0.0
    use_segment_ids: bool = True

    def __post_init__(self) -> None:
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EncoderOutput:
    pooled: np.ndarray
    per_token: np.ndarray | None = None


class _Block(nn.Module):
    """Pre-norm transformer block with explicit masked attention."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.dim // cfg.heads
        self.ln_attn = nn.LayerNorm(cfg.dim)
        self.qkv = nn.Linear(cfg.dim, 3 * cfg.dim)
        self.attn_out = nn.Linear(cfg.dim, cfg.dim)
        self.ln_ffn = nn.LayerNorm(cfg.dim)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.dim),
        )
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, key_pad: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.ln_attn(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        attn = F.softmax(scores, dim=-1)
        attn = self.dropout(attn)
        ctx = (attn @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.dropout(self.attn_out(ctx))
        x = x + self.dropout(self.ffn(self.ln_ffn(x)))
        return x


class TextEncoder(nn.Module):
    """Token/position/segment embeddings plus a small transformer stack.

    pooled output = final-layer hidden state at position 0.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.token_emb = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.dim)
        self.seg_emb = nn.Embedding(2, cfg.dim)
        self.emb_ln = nn.LayerNorm(cfg.dim)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.final_ln = nn.LayerNorm(cfg.dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        token_ids: torch.Tensor,
        segment_ids: torch.Tensor,
        attention_mask: torch.Tensor,
    ) -> torch.Tensor:
        """Returns per-token hidden states of shape (batch, time, dim)."""
        b, t = token_ids.shape
        if t > self.cfg.max_len:
            raise DimensionError(f"sequence length {t} exceeds max_len {self.cfg.max_len}")
        if int(token_ids.max()) >= self.cfg.vocab_size:
            raise ValueError("token id outside the vocabulary")
        pos = torch.arange(t, device=token_ids.device).unsqueeze(0).expand(b, t)
        x = self.token_emb(token_ids) + self.pos_emb(pos) + self.seg_emb(segment_ids)
        x = self.dropout(self.emb_ln(x))
        key_pad = attention_mask == 0
        for block in self.blocks:
            x = block(x, key_pad)
        return self.final_ln(x)

    def pooled(self, token_ids, segment_ids, attention_mask) -> torch.Tensor:
        return self.forward(token_ids, segment_ids, attention_mask)[:, 0]


def stack_batch(
    batch: Sequence[EncodedInput],
    device: torch.device | str = "cpu",
    trim: bool = True,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack encoded inputs into tensors, optionally trimming shared padding."""
    lengths = {len(e.token_ids) for e in batch}
    if len(lengths) != 1:
        raise DimensionError(f"ragged batch: lengths {sorted(lengths)}")
    keep = max(e.length for e in batch) if trim else lengths.pop()
    ids = torch.tensor([e.token_ids[:keep] for e in batch], dtype=torch.long, device=device)
    segs = torch.tensor([e.segment_ids[:keep] for e in batch], dtype=torch.long, device=device)
    mask = torch.tensor([e.attention_mask[:keep] for e in batch], dtype=torch.long, device=device)
    return ids, segs, mask


def run_encoder(
    model: TextEncoder,
    batch: Sequence[EncodedInput],
    with_per_token: bool = False,
) -> list[EncoderOutput]:
    """Deterministic inference pass over a batch."""
    if not batch:
        return []
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            ids, segs, mask = stack_batch(batch)
            hidden = model(ids, segs, mask)
    finally:
        model.train(was_training)
    pooled = hidden[:, 0].cpu().numpy()
    per_token = hidden.cpu().numpy() if with_per_token else None
    return [
        EncoderOutput(
            pooled=pooled[i].copy(),
            per_token=per_token[i].copy() if per_token is not None else None,
        )
        for i in range(len(batch))
    ]
