"""Serializable model bundles: encoder + classifier head + metadata.

A bundle is a directory:

    params.bin   versioned binary container; header carries kind, encoder
                 config, class order and the training log
    vocab.txt    tokenizer vocabulary, one token per line

Bundles of kind ``senta`` additionally embed the frozen artifacts they need
at inference time: ``bank.bin`` (the class-mean feature bank) and a nested
``confounder/`` bundle supplying the mixture weights.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch
import torch.nn as nn

from .corpus import POLARITIES
from .encoder import EncoderConfig, TextEncoder
from .tokenizer import WordTokenizer

if TYPE_CHECKING:  # circular at runtime: adjustment imports ModelBundle
    from .adjustment import FeatureBank

PLAIN = "plain"
SENTA = "senta"


@dataclass
class ModelBundle:
    """A trained (or freshly initialized) classifier with its tokenizer."""

    kind: str
    encoder_config: EncoderConfig
    tokenizer: WordTokenizer
    encoder: TextEncoder
    head: nn.Linear
    class_order: tuple[str, ...] = POLARITIES
    meta: dict = field(default_factory=dict)
    bank: "FeatureBank | None" = None
    confounder: "ModelBundle | None" = None

    def __post_init__(self) -> None:
        if self.kind not in (PLAIN, SENTA):
            raise ValueError(f"unknown bundle kind {self.kind!r}")
        if self.kind == SENTA and (self.bank is None or self.confounder is None):
            raise ValueError("senta bundles embed their bank and confounder")

    @property
    def hidden_dim(self) -> int:
        return self.encoder_config.dim

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {
            f"encoder.{k}": v.detach().cpu().numpy()
            for k, v in self.encoder.state_dict().items()
        }
        arrays.update(
            {
                f"head.{k}": v.detach().cpu().numpy()
                for k, v in self.head.state_dict().items()
            }
        )
        return arrays

    def content_id(self) -> str:
        """Stable content hash over parameters, vocabulary and structure."""
        digest = hashlib.sha256()
        digest.update(repr(self.encoder_config).encode())
        digest.update(",".join(self.class_order).encode())
        digest.update("\n".join(self.tokenizer.vocab).encode())
        for name in sorted(arrays := self.state_arrays()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(arrays[name]).tobytes())
        return digest.hexdigest()

    def save(self, path: str | Path) -> Path:
        from .serialize import write_blob

        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "kind": self.kind,
            "encoder_config": self.encoder_config.to_dict(),
            "class_order": list(self.class_order),
            "meta": self.meta,
        }
        write_blob(path / "params.bin", meta, self.state_arrays())
        self.tokenizer.save(path / "vocab.txt")
        if self.kind == SENTA:
            self.bank.save(path / "bank.bin")
            self.confounder.save(path / "confounder")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        from .serialize import read_blob

        path = Path(path)
        meta, arrays = read_blob(path / "params.bin")
        tokenizer = WordTokenizer.load(path / "vocab.txt")
        cfg = EncoderConfig(**meta["encoder_config"])
        encoder = TextEncoder(cfg)
        enc_state = {
            k[len("encoder."):]: torch.from_numpy(v)
            for k, v in arrays.items()
            if k.startswith("encoder.")
        }
        encoder.load_state_dict(enc_state, strict=True)
        head_w = arrays["head.weight"]
        head = nn.Linear(head_w.shape[1], head_w.shape[0])
        head.load_state_dict(
            {"weight": torch.from_numpy(head_w), "bias": torch.from_numpy(arrays["head.bias"])}
        )
        bank = confounder = None
        if meta["kind"] == SENTA:
            from .adjustment import FeatureBank

            bank = FeatureBank.load(path / "bank.bin")
            confounder = cls.load(path / "confounder")
        return cls(
            kind=meta["kind"],
            encoder_config=cfg,
            tokenizer=tokenizer,
            encoder=encoder,
            head=head,
            class_order=tuple(meta["class_order"]),
            meta=meta["meta"],
            bank=bank,
            confounder=confounder,
        )
