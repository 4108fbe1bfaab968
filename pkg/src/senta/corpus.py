"""Corpus model: instances, parsers, and the synthetic multi-aspect generator.

An :class:`Instance` is one (sentence, aspect, polarity) example.  Instances
come from the SemEval-2014 XML distribution, from ARTS-style structured
record files, from the internal canonical JSONL format, or from the
synthetic generator used for desk-scale experiments.
"""
from __future__ import annotations

import json
import logging
import random
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .errors import ConfigError, FieldMapError, MalformedInputError, SchemaError

logger = logging.getLogger(__name__)

#: Fixed class order shared by every model and report in the package.
POLARITIES = ("positive", "negative", "neutral")

SOURCES = (
    "original",
    "revtgt",
    "revnon",
    "adddiff",
    "synthetic-ori",
    "synthetic-revnon",
)

REVNON_SOURCES = ("revnon", "synthetic-revnon")


@dataclass(frozen=True)
class Instance:
    """One labeled (sentence, aspect) pair with provenance."""

    id: str
    sentence: str
    aspect: str
    polarity: str
    source: str = "original"
    aspect_span: tuple[int, int] | None = None
    parent_id: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("instance id must be non-empty")
        if self.polarity not in POLARITIES:
            raise ValueError(f"unknown polarity {self.polarity!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.aspect_span is not None:
            lo, hi = self.aspect_span
            span_text = self.sentence[lo:hi]
            if span_text != self.aspect:
                if span_text.lower() == self.aspect.lower():
                    logger.debug(
                        "case-insensitive span match for %s: %r vs %r",
                        self.id, span_text, self.aspect,
                    )
                else:
                    raise ValueError(
                        f"aspect span {self.aspect_span} of {self.id!r} reads "
                        f"{span_text!r}, not {self.aspect!r}"
                    )


@dataclass(frozen=True)
class SplitStats:
    """Per-class instance counts for one split."""

    counts: Mapping[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(self.counts.get(p, 0) for p in POLARITIES)


def split_stats(instances: Iterable[Instance]) -> SplitStats:
    counter = Counter(i.polarity for i in instances)
    return SplitStats(counts={p: counter.get(p, 0) for p in POLARITIES})


def recover_span(sentence: str, aspect: str) -> tuple[int, int] | None:
    """First case-insensitive occurrence of ``aspect`` in ``sentence``."""
    lo = sentence.lower().find(aspect.lower())
    if lo < 0:
        return None
    if sentence.lower().count(aspect.lower()) > 1:
        logger.debug("ambiguous aspect %r, using first occurrence", aspect)
    return (lo, lo + len(aspect))


def _check_unique_ids(instances: Sequence[Instance]) -> None:
    seen: set[str] = set()
    for inst in instances:
        if inst.id in seen:
            raise SchemaError(f"duplicate instance id {inst.id!r}")
        seen.add(inst.id)


# ---------------------------------------------------------------------------
# SemEval-2014 XML
# ---------------------------------------------------------------------------

def parse_semeval_xml(data: bytes | IO[bytes]) -> list[Instance]:
    """Parse the SemEval-2014 ABSA XML schema into instances.

    One instance per aspectTerm, id ``<sentenceId>:<index>`` where the index
    counts aspectTerm elements within the sentence.  Terms labeled
    ``conflict`` are dropped (the pipeline is three-class); the exclusion
    count is logged.
    """
    raw = data if isinstance(data, bytes) else data.read()
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        line, col = exc.position
        raise MalformedInputError(f"bad XML at line {line}, column {col}: {exc}") from exc

    instances: list[Instance] = []
    dropped_conflict = 0
    for sentence_el in root.iter("sentence"):
        sid = sentence_el.get("id")
        if sid is None:
            raise SchemaError("sentence element without id attribute")
        text_el = sentence_el.find("text")
        if text_el is None or text_el.text is None:
            raise SchemaError(f"sentence {sid!r} has no text element")
        sentence = text_el.text
        for k, term_el in enumerate(sentence_el.iter("aspectTerm")):
            term = term_el.get("term")
            polarity = term_el.get("polarity")
            if term is None or polarity is None:
                raise SchemaError(
                    f"aspectTerm in sentence {sid!r} lacks term/polarity attributes"
                )
            if polarity == "conflict":
                dropped_conflict += 1
                continue
            if polarity not in POLARITIES:
                raise SchemaError(
                    f"sentence {sid!r}: unknown polarity {polarity!r}"
                )
            span = _semeval_span(sentence, term, term_el.get("from"), term_el.get("to"), sid)
            instances.append(
                Instance(
                    id=f"{sid}:{k}",
                    sentence=sentence,
                    aspect=term,
                    polarity=polarity,
                    source="original",
                    aspect_span=span,
                )
            )
    if dropped_conflict:
        logger.info("dropped %d 'conflict' aspect terms", dropped_conflict)
    _check_unique_ids(instances)
    return instances


def _semeval_span(
    sentence: str, term: str, from_attr: str | None, to_attr: str | None, sid: str
) -> tuple[int, int] | None:
    if from_attr is not None and to_attr is not None:
        try:
            lo, hi = int(from_attr), int(to_attr)
        except ValueError as exc:
            raise SchemaError(f"sentence {sid!r}: non-integer span offsets") from exc
        if 0 <= lo < hi <= len(sentence) and sentence[lo:hi].lower() == term.lower():
            return (lo, hi)
        logger.warning(
            "sentence %s: span %d..%d does not read %r, recovering by search",
            sid, lo, hi, term,
        )
    return recover_span(sentence, term)


# ---------------------------------------------------------------------------
# ARTS structured records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldMap:
    """Field names and id-suffix conventions for ARTS-style record files.

    The record schema is configuration on purpose: only the dataset URL is
    fixed upstream, not the file layout.  ``suffix_sources`` maps a trailing
    ``_<tag>`` id suffix to a perturbation-strategy source; records whose id
    carries no known suffix keep source ``original``.  When ``source`` names
    a record field, an explicit per-record strategy wins over the suffix.
    """

    id: str = "id"
    sentence: str = "sentence"
    aspect: str = "term"
    polarity: str = "polarity"
    from_char: str = "from"
    to_char: str = "to"
    source: str | None = None
    suffix_sources: Mapping[str, str] = field(
        default_factory=lambda: {"0": "revtgt", "1": "revnon", "2": "adddiff"}
    )

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, object]) -> "FieldMap":
        known = {f.name for f in fields(cls)}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown field map keys: {sorted(unknown)}")
        return cls(**cfg)  # type: ignore[arg-type]


def _iter_records(raw: bytes) -> list[Mapping[str, object]]:
    text = raw.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        records = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MalformedInputError(
                    f"neither a JSON document nor JSON lines (line {lineno}: {exc})"
                ) from exc
        return records
    if isinstance(doc, list):
        return doc
    if isinstance(doc, dict):
        # Mapping of id -> record; push the key into the record when absent.
        out = []
        for key, rec in doc.items():
            if isinstance(rec, dict) and "id" not in rec:
                rec = {**rec, "id": key}
            out.append(rec)
        return out
    raise MalformedInputError("top-level JSON value must be an object or array")


def parse_arts(data: bytes | IO[bytes], field_map: FieldMap | None = None) -> list[Instance]:
    """Parse an ARTS-style structured record file into instances."""
    fm = field_map or FieldMap()
    raw = data if isinstance(data, bytes) else data.read()
    instances: list[Instance] = []
    for rec in _iter_records(raw):
        if not isinstance(rec, dict):
            raise MalformedInputError(f"record is not an object: {rec!r}")

        def get(name: str) -> object:
            if name not in rec:
                raise FieldMapError(f"record {rec.get(fm.id, '?')!r} has no field {name!r}")
            return rec[name]

        rid = str(get(fm.id))
        sentence = str(get(fm.sentence))
        aspect = str(get(fm.aspect))
        polarity = str(get(fm.polarity))
        if polarity == "conflict":
            logger.info("dropping 'conflict' record %s", rid)
            continue
        if polarity not in POLARITIES:
            raise SchemaError(f"record {rid!r}: unknown polarity {polarity!r}")

        source, parent_id = _infer_source(rid, rec, fm)
        span = None
        if fm.from_char in rec and fm.to_char in rec:
            lo, hi = int(rec[fm.from_char]), int(rec[fm.to_char])  # type: ignore[arg-type]
            if 0 <= lo < hi <= len(sentence) and sentence[lo:hi].lower() == aspect.lower():
                span = (lo, hi)
        if span is None:
            span = recover_span(sentence, aspect)
        instances.append(
            Instance(
                id=rid,
                sentence=sentence,
                aspect=aspect,
                polarity=polarity,
                source=source,
                aspect_span=span,
                parent_id=parent_id,
            )
        )
    _check_unique_ids(instances)
    return instances


def _infer_source(rid: str, rec: Mapping[str, object], fm: FieldMap) -> tuple[str, str | None]:
    if fm.source is not None and fm.source in rec:
        src = str(rec[fm.source])
        if src not in SOURCES:
            raise SchemaError(f"record {rid!r}: unknown source {src!r}")
        stem, _, _ = rid.rpartition("_")
        return src, stem or None
    stem, sep, tag = rid.rpartition("_")
    if sep and tag in fm.suffix_sources:
        src = fm.suffix_sources[tag]
        if src not in SOURCES:
            raise ConfigError(f"suffix convention maps {tag!r} to unknown source {src!r}")
        return src, stem
    return "original", None


def select_revnon(instances: Sequence[Instance]) -> list[Instance]:
    """Instances produced by the strategy that flips non-target sentiments."""
    return [i for i in instances if i.source in REVNON_SOURCES]


# ---------------------------------------------------------------------------
# Canonical line-delimited format
# ---------------------------------------------------------------------------

_CANONICAL_KEYS = ("id", "sentence", "aspect", "aspectSpan", "polarity", "source", "parentId")


def instance_to_record(inst: Instance) -> dict:
    return {
        "id": inst.id,
        "sentence": inst.sentence,
        "aspect": inst.aspect,
        "aspectSpan": list(inst.aspect_span) if inst.aspect_span else None,
        "polarity": inst.polarity,
        "source": inst.source,
        "parentId": inst.parent_id,
    }


def instance_from_record(rec: Mapping[str, object]) -> Instance:
    missing = [k for k in _CANONICAL_KEYS if k not in rec]
    if missing:
        raise SchemaError(f"canonical record missing keys {missing}")
    span = rec["aspectSpan"]
    return Instance(
        id=str(rec["id"]),
        sentence=str(rec["sentence"]),
        aspect=str(rec["aspect"]),
        polarity=str(rec["polarity"]),
        source=str(rec["source"]),
        aspect_span=tuple(span) if span else None,  # type: ignore[arg-type]
        parent_id=None if rec["parentId"] is None else str(rec["parentId"]),
    )


def write_canonical(instances: Iterable[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_record(inst), ensure_ascii=False))
            fh.write("\n")


def read_canonical(path: str | Path) -> list[Instance]:
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedInputError(f"line {lineno}: {exc}") from exc
            instances.append(instance_from_record(rec))
    _check_unique_ids(instances)
    return instances


def carve_dev(
    instances: Sequence[Instance], seed: int, fraction: float = 0.1
) -> tuple[list[Instance], list[Instance]]:
    """Seeded train/dev split (epoch selection must not touch any test set)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"dev fraction must be in (0,1), got {fraction}")
    order = list(instances)
    random.Random(seed).shuffle(order)
    n_dev = max(1, round(len(order) * fraction))
    return order[n_dev:], order[:n_dev]


# ---------------------------------------------------------------------------
# Synthetic multi-aspect corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    """Sentence template with aspect/adjective slots.

    ``text`` uses ``{a0}``/``{j0}``… placeholders; ``plural`` flags which
    aspect slots take plural nouns so the verb agrees.
    """

    text: str
    plural: tuple[bool, ...]

    @property
    def num_slots(self) -> int:
        return len(self.plural)


# Clause bodies keep aspect/adjective slots at the same token offsets across
# templates and the leading phrases jitter those offsets by a few positions:
# regular enough that a small from-scratch encoder can learn to read the
# target clause, varied enough that it cannot fall back on one position.
_PREFIXES = ("", "overall , ", "i think ", "honestly , ", "to be fair , ")
_BODIES = (
    ("the {a0} is {j0} and the {a1} is {j1} .", (False, False)),
    ("the {a0} is {j0} but the {a1} are {j1} .", (False, True)),
    ("the {a0} are {j0} while the {a1} is {j1} .", (True, False)),
    ("the {a0} is {j0} , the {a1} is {j1} and the {a2} is {j2} .", (False, False, False)),
    ("the {a0} is {j0} , the {a1} are {j1} and the {a2} is {j2} .", (False, True, False)),
)

DEFAULT_TEMPLATES = tuple(
    Template(prefix + text, plural) for prefix in _PREFIXES for text, plural in _BODIES
)

DEFAULT_ASPECTS_SINGULAR = (
    "pizza", "pasta", "service", "decor", "menu", "wine", "dessert", "soup",
    "salad", "ambience", "bread", "coffee", "keyboard", "screen", "battery",
    "price", "location", "music", "lighting", "steak",
)

DEFAULT_ASPECTS_PLURAL = (
    "waiters", "drinks", "speakers", "portions", "appetizers", "fans", "keys",
    "desserts",
)

# Some adjectives are deliberately shared between a polar lexicon and the
# neutral one ("fine" can be praise or a shrug): the surrounding clauses are
# then genuinely informative about the target's polarity, which is exactly
# the confound the adjustment stage is meant to control for.
DEFAULT_ADJECTIVES: Mapping[str, tuple[str, ...]] = {
    "positive": (
        "good", "great", "tasty", "friendly", "lovely", "superb",
        "fine", "interesting", "decent",
    ),
    "negative": (
        "bad", "awful", "bland", "rude", "slow", "dreadful",
        "rough", "odd", "uneven",
    ),
    "neutral": (
        "okay", "average", "typical", "plain",
        "fine", "interesting", "decent", "rough", "odd", "uneven",
    ),
}


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings for the desk-scale corpus.

    ``agree_prob`` is the probability that a non-target aspect shares the
    target's polarity in train/original data; this is what manufactures the
    spurious correlation the adjustment stage is supposed to defuse.
    ``target_slot`` picks which aspect of the sentence each instance labels:
    ``random`` draws a slot per instance, ``first`` always targets the
    first-mentioned aspect (the desk-scale experiment uses ``first`` so the
    causal feature stays learnable by the from-scratch toy encoder).
    """

    train_size: int = 2000
    test_size: int = 400
    agree_prob: float = 0.85
    target_slot: str = "first"
    aspects_singular: tuple[str, ...] = DEFAULT_ASPECTS_SINGULAR
    aspects_plural: tuple[str, ...] = DEFAULT_ASPECTS_PLURAL
    adjectives: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_ADJECTIVES)
    )
    templates: tuple[Template, ...] = DEFAULT_TEMPLATES


@dataclass(frozen=True)
class SyntheticCorpus:
    train: list[Instance]
    ori_test: list[Instance]
    revnon_test: list[Instance]


@dataclass(frozen=True)
class _Draw:
    template: Template
    aspects: tuple[str, ...]
    polarities: tuple[str, ...]
    adjectives: tuple[str, ...]
    target_slot: int

    def render(self) -> str:
        values: dict[str, str] = {}
        for i, (a, j) in enumerate(zip(self.aspects, self.adjectives)):
            values[f"a{i}"] = a
            values[f"j{i}"] = j
        return self.template.text.format(**values)


def _validate_synth_config(cfg: SynthConfig) -> None:
    if cfg.target_slot not in ("random", "first"):
        raise ConfigError(f"target_slot must be 'random' or 'first', got {cfg.target_slot!r}")
    for pol in POLARITIES:
        if not cfg.adjectives.get(pol):
            raise ConfigError(f"empty adjective lexicon for {pol!r}")
    # Positive and negative lexicons must not overlap: flipping a non-target
    # slot swaps between them and must always change the surface token.
    # Overlap with the neutral lexicon is allowed (ambiguous words are what
    # makes the non-target context informative in the first place).
    clash = set(cfg.adjectives["positive"]) & set(cfg.adjectives["negative"])
    if clash:
        raise ConfigError(
            f"adjectives {sorted(clash)} appear in both positive and negative lexicons"
        )
    for pol in ("positive", "negative"):
        if len(set(cfg.adjectives[pol])) < 2:
            raise ConfigError(f"{pol} lexicon needs at least two distinct adjectives")
    if not cfg.aspects_singular and not cfg.aspects_plural:
        raise ConfigError("no aspect vocabulary")
    if not cfg.templates:
        raise ConfigError("no sentence templates")
    for t in cfg.templates:
        if t.num_slots < 2:
            raise ConfigError(f"template {t.text!r} needs at least two aspect slots")
        if any(p for p in t.plural) and not cfg.aspects_plural:
            raise ConfigError("template uses plural slots but no plural aspects given")


def _draw_sentence(rng: random.Random, cfg: SynthConfig) -> _Draw:
    template = rng.choice(cfg.templates)
    aspects: list[str] = []
    for plural in template.plural:
        pool = cfg.aspects_plural if plural else cfg.aspects_singular
        choice = rng.choice(pool)
        while choice in aspects:
            choice = rng.choice(pool)
        aspects.append(choice)
    target_slot = 0 if cfg.target_slot == "first" else rng.randrange(template.num_slots)
    target_pol = rng.choice(POLARITIES)
    pols = []
    for i in range(template.num_slots):
        if i == target_slot or rng.random() < cfg.agree_prob:
            pols.append(target_pol)
        else:
            pols.append(rng.choice(POLARITIES))
    adjs = tuple(rng.choice(cfg.adjectives[p]) for p in pols)
    return _Draw(template, tuple(aspects), tuple(pols), adjs, target_slot)


def _flip_polarity(pol: str, rng: random.Random) -> str:
    if pol == "positive":
        return "negative"
    if pol == "negative":
        return "positive"
    return rng.choice(("positive", "negative"))


def _revnon_counterpart(draw: _Draw, rng: random.Random, cfg: SynthConfig) -> _Draw:
    pols = list(draw.polarities)
    adjs = list(draw.adjectives)
    for i in range(draw.template.num_slots):
        if i == draw.target_slot:
            continue
        pols[i] = _flip_polarity(pols[i], rng)
        # The perturbed sentence must differ from its parent, so never keep
        # the same surface token (possible when lexicons share words).
        candidates = [a for a in cfg.adjectives[pols[i]] if a != adjs[i]]
        if not candidates:
            raise ConfigError(
                f"cannot flip {adjs[i]!r} to {pols[i]}: no alternative adjective"
            )
        adjs[i] = rng.choice(candidates)
    return replace(draw, polarities=tuple(pols), adjectives=tuple(adjs))


def _to_instance(draw: _Draw, inst_id: str, source: str, parent_id: str | None) -> Instance:
    sentence = draw.render()
    aspect = draw.aspects[draw.target_slot]
    return Instance(
        id=inst_id,
        sentence=sentence,
        aspect=aspect,
        polarity=draw.polarities[draw.target_slot],
        source=source,
        aspect_span=recover_span(sentence, aspect),
        parent_id=parent_id,
    )


def generate_synthetic(cfg: SynthConfig, seed: int) -> SyntheticCorpus:
    """Deterministic synthetic corpus: train split plus a paired ori/revnon test.

    Every revnon test instance is its ori parent with each non-target
    adjective replaced by one of opposite polarity; the target clause and
    label are untouched.
    """
    _validate_synth_config(cfg)
    rng = random.Random(seed)
    train = [
        _to_instance(_draw_sentence(rng, cfg), f"syn-train-{i:05d}", "synthetic-ori", None)
        for i in range(cfg.train_size)
    ]
    ori_test: list[Instance] = []
    revnon_test: list[Instance] = []
    for i in range(cfg.test_size):
        draw = _draw_sentence(rng, cfg)
        ori_id = f"syn-ori-{i:05d}"
        ori_test.append(_to_instance(draw, ori_id, "synthetic-ori", None))
        flipped = _revnon_counterpart(draw, rng, cfg)
        revnon_test.append(_to_instance(flipped, f"{ori_id}_rn", "synthetic-revnon", ori_id))
    return SyntheticCorpus(train=train, ori_test=ori_test, revnon_test=revnon_test)
