"""Stage one: train the confounding classifier on the original distribution.

The confounding model is the toy encoder plus a linear head over the pooled
hidden state.  It is expected to score well on original-distribution data
while leaning on whatever correlations it finds, including the non-target
sentiment; stage two consumes its class probabilities and hidden features.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .bundles import PLAIN, ModelBundle
from .corpus import POLARITIES, Instance
from .encoder import EncodedInput, EncoderConfig, TextEncoder, encode_qa, stack_batch
from .errors import ConfigError, DegenerateDataError, VocabularyMismatchError
from .tokenizer import WordTokenizer
from .training import FitSettings, fit

logger = logging.getLogger(__name__)

CLASS_INDEX = {p: i for i, p in enumerate(POLARITIES)}


@dataclass(frozen=True)
class ModelConfig:
    """Encoder size plus optimizer settings for one training run.

    Defaults: the 2-layer/64-dim toy encoder, Adam at 1e-3, length budget 64.
    A pretrained-backbone adapter would bring its own tokenizer and use a
    much smaller learning rate (2e-5 is the usual choice).
    """

    dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 64
    dropout: float = 0.0
    use_segment_ids: bool = True
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            dim=self.dim,
            layers=self.layers,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            max_len=self.max_len,
            dropout=self.dropout,
            use_segment_ids=self.use_segment_ids,
        )

    def fit_settings(self) -> FitSettings:
        return FitSettings(
            seed=self.seed,
            lr=self.lr,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
        )


@dataclass(frozen=True)
class ConfounderOutput:
    """Class probabilities and the pooled hidden vector for one instance."""

    probs: np.ndarray
    hidden: np.ndarray


def check_class_coverage(instances: Sequence[Instance]) -> Counter:
    counts = Counter(i.polarity for i in instances)
    present = sum(1 for p in POLARITIES if counts.get(p, 0) > 0)
    if present < 2:
        raise DegenerateDataError(
            f"training data covers {present} polarity class(es); need at least 2"
        )
    if present < len(POLARITIES):
        missing = [p for p in POLARITIES if counts.get(p, 0) == 0]
        logger.warning("training data has no %s instances", ", ".join(missing))
    return counts


def encode_instances(
    instances: Sequence[Instance], tokenizer: WordTokenizer, config: ModelConfig
) -> list[EncodedInput]:
    return [
        encode_qa(i.aspect, i.sentence, tokenizer, config.max_len, config.use_segment_ids)
        for i in instances
    ]


def labels_tensor(instances: Sequence[Instance]) -> torch.Tensor:
    return torch.tensor([CLASS_INDEX[i.polarity] for i in instances], dtype=torch.long)


def _batched_logits(
    encoder: TextEncoder,
    head: nn.Linear,
    encoded: Sequence[EncodedInput],
    batch_size: int = 128,
) -> np.ndarray:
    was_training = encoder.training
    encoder.eval()
    head.eval()
    rows = []
    try:
        with torch.no_grad():
            for lo in range(0, len(encoded), batch_size):
                ids, segs, mask = stack_batch(encoded[lo : lo + batch_size])
                rows.append(head(encoder.pooled(ids, segs, mask)).cpu().numpy())
    finally:
        encoder.train(was_training)
        head.train(was_training)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, head.out_features))


def accuracy_of(logits: np.ndarray, instances: Sequence[Instance]) -> float:
    gold = np.array([CLASS_INDEX[i.polarity] for i in instances])
    return float(np.mean(np.argmax(logits, axis=1) == gold))


def train_confounder(
    train: Sequence[Instance],
    dev: Sequence[Instance],
    config: ModelConfig = ModelConfig(),
) -> ModelBundle:
    """Cross-entropy training of the stage-one model; epoch picked on dev."""
    if not train:
        raise ConfigError("empty training set")
    if config.max_epochs > 0 and not dev:
        raise ConfigError("dev split required for epoch selection")
    class_counts = check_class_coverage(train)

    tokenizer = WordTokenizer.from_texts(
        [i.sentence for i in train] + [i.aspect for i in train]
    )
    torch.manual_seed(config.seed)
    encoder = TextEncoder(config.encoder_config(len(tokenizer)))
    head = nn.Linear(config.dim, len(POLARITIES))

    train_enc = encode_instances(train, tokenizer, config)
    dev_enc = encode_instances(dev, tokenizer, config)
    y_train = labels_tensor(train)

    def batch_loss(idx: list[int]) -> torch.Tensor:
        ids, segs, mask = stack_batch([train_enc[i] for i in idx])
        logits = head(encoder.pooled(ids, segs, mask))
        return F.cross_entropy(logits, y_train[idx])

    def dev_accuracy() -> float:
        return accuracy_of(_batched_logits(encoder, head, dev_enc), dev)

    fit_log = fit([encoder, head], batch_loss, dev_accuracy, len(train), config.fit_settings())
    meta = {
        "task": "confounder",
        "seed": config.seed,
        "config": asdict(config),
        "train_size": len(train),
        "dev_size": len(dev),
        "class_counts": {p: class_counts.get(p, 0) for p in POLARITIES},
        "fit": fit_log,
    }
    return ModelBundle(
        kind=PLAIN,
        encoder_config=config.encoder_config(len(tokenizer)),
        tokenizer=tokenizer,
        encoder=encoder,
        head=head,
        meta=meta,
    )


def _check_tokenizer(bundle: ModelBundle, tokenizer: WordTokenizer | None) -> WordTokenizer:
    if tokenizer is None:
        return bundle.tokenizer
    if tokenizer.content_hash() != bundle.tokenizer.content_hash():
        raise VocabularyMismatchError(
            "supplied tokenizer vocabulary differs from the bundle's"
        )
    return tokenizer


def confounder_infer(
    bundle: ModelBundle,
    instances: Sequence[Instance],
    tokenizer: WordTokenizer | None = None,
    batch_size: int = 128,
) -> list[ConfounderOutput]:
    """Frozen-bundle inference: softmax probabilities plus pooled hiddens."""
    tok = _check_tokenizer(bundle, tokenizer)
    config_like = ModelConfig(
        dim=bundle.encoder_config.dim,
        max_len=bundle.encoder_config.max_len,
        use_segment_ids=bundle.encoder_config.use_segment_ids,
    )
    encoded = encode_instances(instances, tok, config_like)
    outputs: list[ConfounderOutput] = []
    was_training = bundle.encoder.training
    bundle.encoder.eval()
    try:
        with torch.no_grad():
            for lo in range(0, len(encoded), batch_size):
                ids, segs, mask = stack_batch(encoded[lo : lo + batch_size])
                hidden = bundle.encoder.pooled(ids, segs, mask)
                probs = F.softmax(bundle.head(hidden), dim=-1)
                for h, p in zip(hidden.cpu().numpy(), probs.cpu().numpy()):
                    outputs.append(ConfounderOutput(probs=p.copy(), hidden=h.copy()))
    finally:
        bundle.encoder.train(was_training)
    return outputs


def plain_logits(bundle: ModelBundle, instances: Sequence[Instance]) -> np.ndarray:
    """Logits of a plain bundle over instances (inference mode)."""
    config_like = ModelConfig(
        max_len=bundle.encoder_config.max_len,
        use_segment_ids=bundle.encoder_config.use_segment_ids,
    )
    encoded = encode_instances(instances, bundle.tokenizer, config_like)
    return _batched_logits(bundle.encoder, bundle.head, encoded)
