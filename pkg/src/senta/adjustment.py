"""Stage two: class-mean feature bank, adjusted representations, training.

The trained confounding model is frozen and decomposed into per-class mean
hidden features.  For every input the frozen model's class probabilities
weight those means into a mixture vector, which is concatenated onto the
main encoder's pooled state before the final classifier:

    mixture   = sum_i alpha_i * mean_i          (alpha = frozen model's probs)
    adjusted  = concat(main_hidden, mixture)

The mixture is a convex combination of the bank means, so each coordinate
stays inside the per-coordinate range of the means.  An optional 1/m scale
exists for faithfulness experiments; the learned head absorbs the constant,
so the default leaves it off.

The soft-label distillation baseline lives here too: same frozen teacher,
but its temperature-softened probabilities supervise a plain student instead
of entering the representation.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .bundles import PLAIN, SENTA, ModelBundle
from .confounder import (
    CLASS_INDEX,
    ModelConfig,
    accuracy_of,
    check_class_coverage,
    confounder_infer,
    encode_instances,
    labels_tensor,
    plain_logits,
)
from .corpus import POLARITIES, Instance
from .encoder import TextEncoder, stack_batch
from .errors import BankMismatchError, ConfigError, DimensionError, EmptyClassError
from .serialize import read_blob, write_blob
from .training import fit

logger = logging.getLogger(__name__)

SCALE_MODES = ("none", "one-over-m")


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """Per-class mean hidden vectors of a trained confounding model."""

    means: np.ndarray  # (m, d) float64
    counts: tuple[int, ...]
    source_bundle_id: str
    class_order: tuple[str, ...] = POLARITIES

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=np.float64)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if means.ndim != 2 or means.shape[0] != len(self.class_order):
            raise DimensionError(
                f"means must be ({len(self.class_order)}, d), got {means.shape}"
            )
        if len(self.counts) != len(self.class_order):
            raise DimensionError("one count per class required")
        if any(c < 1 for c in self.counts):
            raise ValueError("every class count must be at least 1")
        if not np.isfinite(means).all():
            raise ValueError("bank means must be finite")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def content_id(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.means.astype("<f8").tobytes())
        digest.update(repr(self.counts).encode())
        digest.update(self.source_bundle_id.encode())
        digest.update(",".join(self.class_order).encode())
        return digest.hexdigest()

    def save(self, path: str | Path) -> None:
        meta = {
            "counts": list(self.counts),
            "source_bundle_id": self.source_bundle_id,
            "class_order": list(self.class_order),
        }
        write_blob(path, meta, {"means": self.means})

    @classmethod
    def load(cls, path: str | Path) -> "FeatureBank":
        meta, arrays = read_blob(path)
        return cls(
            means=arrays["means"],
            counts=tuple(meta["counts"]),
            source_bundle_id=meta["source_bundle_id"],
            class_order=tuple(meta["class_order"]),
        )


def class_means(
    hidden: np.ndarray, labels: Sequence[int], n_classes: int = len(POLARITIES)
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Arithmetic per-class means of hidden vectors, accumulated in float64."""
    hidden = np.asarray(hidden)
    labels = np.asarray(labels)
    if hidden.ndim != 2 or hidden.shape[0] != labels.shape[0]:
        raise DimensionError("hidden must be (n, d) with one label per row")
    means = np.zeros((n_classes, hidden.shape[1]), dtype=np.float64)
    counts = []
    for c in range(n_classes):
        mask = labels == c
        counts.append(int(mask.sum()))
        if counts[-1]:
            means[c] = hidden[mask].mean(axis=0, dtype=np.float64)
    return means, tuple(counts)


def build_feature_bank(bundle: ModelBundle, train: Sequence[Instance]) -> FeatureBank:
    """Freeze the stage-one model's class-level features from training data."""
    outputs = confounder_infer(bundle, train)
    hidden = np.stack([o.hidden for o in outputs])
    labels = np.array([CLASS_INDEX[i.polarity] for i in train])
    means, counts = class_means(hidden, labels)
    for cls_name, count in zip(POLARITIES, counts):
        if count == 0:
            raise EmptyClassError(f"no {cls_name!r} instances to average")
    return FeatureBank(
        means=means, counts=counts, source_bundle_id=bundle.content_id()
    )


def compute_alpha(bundle: ModelBundle, instance: Instance) -> np.ndarray:
    """Mixture weights for one input: the frozen model's class probabilities."""
    (output,) = confounder_infer(bundle, [instance])
    return output.probs.astype(np.float64)


@dataclass(frozen=True, eq=False)
class AdjustedRepresentation:
    """Main hidden state, confounder mixture, and their concatenation."""

    h_main: np.ndarray
    h_confound: np.ndarray
    h_adjust: np.ndarray
    alpha: np.ndarray

    def __post_init__(self) -> None:
        if self.h_adjust.shape[0] != self.h_main.shape[0] + self.h_confound.shape[0]:
            raise DimensionError("h_adjust must concatenate h_main and h_confound")
        if not np.all(self.alpha >= -1e-9):
            raise ValueError("alpha entries must be non-negative")
        if abs(float(self.alpha.sum()) - 1.0) > 1e-6:
            raise ValueError("alpha must sum to 1")


def adjust(
    h_main: np.ndarray,
    alpha: np.ndarray,
    bank: FeatureBank,
    scale_mode: str = "none",
) -> AdjustedRepresentation:
    """Weight the bank means by alpha and concatenate onto the main hidden."""
    if scale_mode not in SCALE_MODES:
        raise ConfigError(f"scale_mode must be one of {SCALE_MODES}, got {scale_mode!r}")
    h_main = np.asarray(h_main, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if h_main.ndim != 1:
        raise DimensionError(f"h_main must be a vector, got shape {h_main.shape}")
    if alpha.shape != (len(bank.class_order),):
        raise DimensionError(
            f"alpha must have shape ({len(bank.class_order)},), got {alpha.shape}"
        )
    h_confound = alpha @ bank.means
    if scale_mode == "one-over-m":
        h_confound = h_confound / len(bank.class_order)
    return AdjustedRepresentation(
        h_main=h_main,
        h_confound=h_confound,
        h_adjust=np.concatenate([h_main, h_confound]),
        alpha=alpha,
    )


def _mixtures(
    confounder: ModelBundle,
    bank: FeatureBank,
    instances: Sequence[Instance],
    scale_mode: str,
) -> torch.Tensor:
    """Frozen per-instance mixture vectors, precomputed once as a constant."""
    alphas = np.stack(
        [o.probs for o in confounder_infer(confounder, instances)]
    ).astype(np.float64)
    mixed = alphas @ bank.means
    if scale_mode == "one-over-m":
        mixed = mixed / len(bank.class_order)
    return torch.from_numpy(mixed.astype(np.float32))


def train_senta(
    confounder_bundle: ModelBundle,
    bank: FeatureBank,
    train: Sequence[Instance],
    dev: Sequence[Instance],
    config: ModelConfig = ModelConfig(),
    scale_mode: str = "none",
    share_init: bool = False,
) -> ModelBundle:
    """Train the interventional model over adjusted representations.

    The confounding bundle stays frozen throughout: its probabilities and the
    bank mixture are precomputed as constants, so no gradient can reach it.
    """
    if scale_mode not in SCALE_MODES:
        raise ConfigError(f"scale_mode must be one of {SCALE_MODES}, got {scale_mode!r}")
    if not train:
        raise ConfigError("empty training set")
    if config.max_epochs > 0 and not dev:
        raise ConfigError("dev split required for epoch selection")
    if bank.dim != confounder_bundle.hidden_dim:
        raise BankMismatchError(
            f"bank dimension {bank.dim} != confounder hidden dimension "
            f"{confounder_bundle.hidden_dim}"
        )
    confounder_id = confounder_bundle.content_id()
    if bank.source_bundle_id != confounder_id:
        raise BankMismatchError("bank was built from a different confounder bundle")
    check_class_coverage(train)

    tokenizer = confounder_bundle.tokenizer
    hc_train = _mixtures(confounder_bundle, bank, train, scale_mode)
    hc_dev = _mixtures(confounder_bundle, bank, dev, scale_mode)

    torch.manual_seed(config.seed)
    encoder = TextEncoder(config.encoder_config(len(tokenizer)))
    if share_init:
        encoder.load_state_dict(confounder_bundle.encoder.state_dict())
    head = nn.Linear(config.dim + bank.dim, len(POLARITIES))

    train_enc = encode_instances(train, tokenizer, config)
    dev_enc = encode_instances(dev, tokenizer, config)
    y_train = labels_tensor(train)

    def batch_loss(idx: list[int]) -> torch.Tensor:
        ids, segs, mask = stack_batch([train_enc[i] for i in idx])
        pooled = encoder.pooled(ids, segs, mask)
        logits = head(torch.cat([pooled, hc_train[idx]], dim=1))
        return F.cross_entropy(logits, y_train[idx])

    def dev_accuracy() -> float:
        return accuracy_of(
            _adjusted_logits(encoder, head, dev_enc, hc_dev), dev
        )

    fit_log = fit([encoder, head], batch_loss, dev_accuracy, len(train), config.fit_settings())
    meta = {
        "task": "senta",
        "seed": config.seed,
        "config": asdict(config),
        "scale_mode": scale_mode,
        "share_init": share_init,
        "bank_id": bank.content_id(),
        "confounder_id": confounder_id,
        "train_size": len(train),
        "dev_size": len(dev),
        "fit": fit_log,
    }
    return ModelBundle(
        kind=SENTA,
        encoder_config=config.encoder_config(len(tokenizer)),
        tokenizer=tokenizer,
        encoder=encoder,
        head=head,
        meta=meta,
        bank=bank,
        confounder=confounder_bundle,
    )


def _adjusted_logits(encoder, head, encoded, mixtures, batch_size: int = 128) -> np.ndarray:
    was_training = encoder.training
    encoder.eval()
    rows = []
    try:
        with torch.no_grad():
            for lo in range(0, len(encoded), batch_size):
                ids, segs, mask = stack_batch(encoded[lo : lo + batch_size])
                pooled = encoder.pooled(ids, segs, mask)
                rows.append(
                    head(torch.cat([pooled, mixtures[lo : lo + batch_size]], dim=1))
                    .cpu()
                    .numpy()
                )
    finally:
        encoder.train(was_training)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, head.out_features))


def senta_logits(bundle: ModelBundle, instances: Sequence[Instance]) -> np.ndarray:
    """Inference logits of a stage-two bundle (uses its embedded artifacts)."""
    if bundle.kind != SENTA:
        raise ValueError("senta_logits needs a senta bundle")
    mixtures = _mixtures(
        bundle.confounder, bundle.bank, instances, bundle.meta.get("scale_mode", "none")
    )
    encoded = encode_instances(
        instances,
        bundle.tokenizer,
        ModelConfig(
            max_len=bundle.encoder_config.max_len,
            use_segment_ids=bundle.encoder_config.use_segment_ids,
        ),
    )
    return _adjusted_logits(bundle.encoder, bundle.head, encoded, mixtures)


def bundle_logits(bundle: ModelBundle, instances: Sequence[Instance]) -> np.ndarray:
    return senta_logits(bundle, instances) if bundle.kind == SENTA else plain_logits(bundle, instances)


def predict(bundle: ModelBundle, instances: Sequence[Instance]) -> list[str]:
    """Polarity predictions; ties break toward the lowest class index."""
    logits = bundle_logits(bundle, instances)
    return [bundle.class_order[i] for i in np.argmax(logits, axis=1)]


# ---------------------------------------------------------------------------
# Distillation baseline
# ---------------------------------------------------------------------------

def distill_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    labels: torch.Tensor,
    temperature: float,
    weight: float,
) -> torch.Tensor:
    """Hard-label cross-entropy blended with temperature-softened KL.

        (1 - weight) * CE(labels, student)
      +      weight  * T^2 * KL(teacher_T || student_T)
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if not 0.0 <= weight <= 1.0:
        raise ConfigError(f"weight must be in [0, 1], got {weight}")
    ce = F.cross_entropy(student_logits, labels)
    log_p_student = F.log_softmax(student_logits / temperature, dim=-1)
    log_p_teacher = F.log_softmax(teacher_logits / temperature, dim=-1)
    kl = (log_p_teacher.exp() * (log_p_teacher - log_p_student)).sum(dim=-1).mean()
    return (1.0 - weight) * ce + weight * temperature**2 * kl


def train_distill(
    teacher_bundle: ModelBundle,
    train: Sequence[Instance],
    dev: Sequence[Instance],
    config: ModelConfig = ModelConfig(),
    temperature: float = 2.0,
    weight: float = 0.5,
) -> ModelBundle:
    """Train a plain student against the frozen teacher's softened outputs."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if not 0.0 <= weight <= 1.0:
        raise ConfigError(f"weight must be in [0, 1], got {weight}")
    if not train:
        raise ConfigError("empty training set")
    if config.max_epochs > 0 and not dev:
        raise ConfigError("dev split required for epoch selection")
    check_class_coverage(train)

    tokenizer = teacher_bundle.tokenizer
    teacher_train = torch.from_numpy(
        plain_logits(teacher_bundle, train).astype(np.float32)
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
        return distill_loss(logits, teacher_train[idx], y_train[idx], temperature, weight)

    def dev_accuracy() -> float:
        from .confounder import _batched_logits

        return accuracy_of(_batched_logits(encoder, head, dev_enc), dev)

    fit_log = fit([encoder, head], batch_loss, dev_accuracy, len(train), config.fit_settings())
    meta = {
        "task": "distill",
        "seed": config.seed,
        "config": asdict(config),
        "temperature": temperature,
        "weight": weight,
        "teacher_id": teacher_bundle.content_id(),
        "train_size": len(train),
        "dev_size": len(dev),
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
