"""End-to-end pipeline: data, two-stage training, evaluation, manifest.

A run is fully determined by its resolved configuration and seed.  The
artifact directory contains the frozen config, the trained bundles, the
feature bank, per-split prediction files, the report in both formats with
its figures, and a manifest of content hashes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .adjustment import build_feature_bank, predict, train_distill, train_senta
from .bundles import ModelBundle
from .confounder import ModelConfig, train_confounder
from .corpus import (
    Instance,
    SynthConfig,
    Template,
    carve_dev,
    generate_synthetic,
    read_canonical,
    select_revnon,
    write_canonical,
)
from .errors import ConfigError
from .evalharness import (
    PredictionRecord,
    evaluate,
    render_report,
    write_predictions,
)
from .figures import render_figures

logger = logging.getLogger(__name__)

KNOWN_MODELS = ("confounder", "senta", "distill")


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"  # "synthetic" | "canonical"
    synthetic: SynthConfig = field(default_factory=SynthConfig)
    train_path: str | None = None
    ori_path: str | None = None
    change_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("synthetic", "canonical"):
            raise ConfigError(f"unknown data kind {self.kind!r}")
        if self.kind == "canonical":
            missing = [
                name
                for name, val in (
                    ("train", self.train_path),
                    ("ori_test", self.ori_path),
                    ("change_test", self.change_path),
                )
                if not val
            ]
            if missing:
                raise ConfigError(f"canonical data config missing paths: {missing}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    models: tuple[str, ...] = KNOWN_MODELS
    dev_fraction: float = 0.1
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    scale_mode: str = "none"
    share_init: bool = False
    distill_temperature: float = 2.0
    distill_weight: float = 0.5

    def __post_init__(self) -> None:
        unknown = set(self.models) - set(KNOWN_MODELS)
        if unknown:
            raise ConfigError(f"unknown models {sorted(unknown)}")
        if "confounder" not in self.models:
            raise ConfigError("the confounder baseline is required (stage one)")

    def resolved(self) -> dict:
        # Normalized through JSON so the frozen copy equals what reparsing
        # the file yields (tuples become lists).
        return json.loads(json.dumps(asdict(self), sort_keys=True))

    def content_hash(self) -> str:
        payload = json.dumps(self.resolved(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix in (".toml", ".tml"):
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    if path.suffix == ".json":
        return json.loads(raw.decode("utf-8"))
    raise ConfigError(f"config files must be .toml or .json, got {path.suffix!r}")


def config_from_mapping(doc: Mapping) -> RunConfig:
    """Build a RunConfig from the documented config-file schema."""
    doc = dict(doc)
    run = dict(doc.pop("run", {}))
    data = dict(doc.pop("data", {}))
    encoder = dict(doc.pop("encoder", {}))
    train = dict(doc.pop("train", {}))
    adjust = dict(doc.pop("adjust", {}))
    distill = dict(doc.pop("distill", {}))
    if doc:
        raise ConfigError(f"unknown config sections: {sorted(doc)}")

    synth_doc = dict(data.pop("synthetic", {}))
    if "templates" in synth_doc:
        synth_doc["templates"] = tuple(
            Template(text=t["text"], plural=tuple(bool(p) for p in t["plural"]))
            for t in synth_doc["templates"]
        )
    for key in ("aspects_singular", "aspects_plural"):
        if key in synth_doc:
            synth_doc[key] = tuple(synth_doc[key])
    if "adjectives" in synth_doc:
        synth_doc["adjectives"] = {k: tuple(v) for k, v in synth_doc["adjectives"].items()}
    try:
        synth = SynthConfig(**synth_doc)
    except TypeError as exc:
        raise ConfigError(f"bad [data.synthetic] section: {exc}") from exc
    try:
        data_cfg = DataConfig(
            kind=data.pop("kind", "synthetic"),
            synthetic=synth,
            train_path=data.pop("train", None),
            ori_path=data.pop("ori_test", None),
            change_path=data.pop("change_test", None),
        )
    except TypeError as exc:
        raise ConfigError(f"bad [data] section: {exc}") from exc
    if data:
        raise ConfigError(f"unknown [data] keys: {sorted(data)}")

    seed = run.pop("seed", 7)
    try:
        model_cfg = ModelConfig(seed=seed, **encoder, **train)
    except TypeError as exc:
        raise ConfigError(f"bad [encoder]/[train] section: {exc}") from exc

    models = tuple(run.pop("models", list(KNOWN_MODELS)))
    dev_fraction = run.pop("dev_fraction", 0.1)
    scale_mode = adjust.pop("scale_mode", "none")
    share_init = adjust.pop("share_init", False)
    temperature = distill.pop("temperature", 2.0)
    weight = distill.pop("weight", 0.5)
    for section, leftovers in (("run", run), ("adjust", adjust), ("distill", distill)):
        if leftovers:
            raise ConfigError(f"unknown [{section}] keys: {sorted(leftovers)}")
    return RunConfig(
        seed=seed,
        models=models,
        dev_fraction=dev_fraction,
        data=data_cfg,
        model=model_cfg,
        scale_mode=scale_mode,
        share_init=share_init,
        distill_temperature=temperature,
        distill_weight=weight,
    )


def load_data(cfg: RunConfig) -> tuple[list[Instance], list[Instance], list[Instance]]:
    """Resolve a run's (train, ori test, change test) instance lists."""
    if cfg.data.kind == "synthetic":
        corpus = generate_synthetic(cfg.data.synthetic, cfg.seed)
        return corpus.train, corpus.ori_test, corpus.revnon_test
    train = read_canonical(cfg.data.train_path)
    ori = read_canonical(cfg.data.ori_path)
    change = read_canonical(cfg.data.change_path)
    return train, ori, change


def _predict_records(
    bundle: ModelBundle, name: str, instances: Sequence[Instance]
) -> list[PredictionRecord]:
    return [
        PredictionRecord(inst.id, inst.polarity, pred, name)
        for inst, pred in zip(instances, predict(bundle, instances))
    ]


def run_pipeline(cfg: RunConfig, out_dir: str | Path) -> Path:
    """Execute stage one, stage two, and the evaluation; return the artifact dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(cfg.resolved(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    train_all, ori_test, change_test = load_data(cfg)
    if cfg.data.kind == "synthetic":
        write_canonical(train_all, out / "train.jsonl")
        write_canonical(ori_test, out / "ori_test.jsonl")
        write_canonical(change_test, out / "change_test.jsonl")
    train, dev = carve_dev(train_all, cfg.seed, cfg.dev_fraction)
    logger.info("data: %d train / %d dev / %d ori / %d change",
                len(train), len(dev), len(ori_test), len(change_test))

    model_cfg = replace(cfg.model, seed=cfg.seed)
    bundles: dict[str, ModelBundle] = {}

    conf = train_confounder(train, dev, model_cfg)
    conf.save(out / "confounder")
    bundles["confounder"] = conf
    logger.info("confounder trained: best dev %.4f", conf.meta["fit"].get("best_dev_accuracy") or 0.0)

    bank = build_feature_bank(conf, train)
    bank.save(out / "bank.bin")

    if "senta" in cfg.models:
        senta = train_senta(
            conf, bank, train, dev, model_cfg,
            scale_mode=cfg.scale_mode, share_init=cfg.share_init,
        )
        senta.save(out / "senta")
        bundles["senta"] = senta
    if "distill" in cfg.models:
        student = train_distill(
            conf, train, dev, model_cfg,
            temperature=cfg.distill_temperature, weight=cfg.distill_weight,
        )
        student.save(out / "distill")
        bundles["distill"] = student

    splits: dict[str, list[str]] = {
        "ori": [i.id for i in ori_test],
        "change": [i.id for i in change_test],
    }
    revnon = select_revnon(change_test)
    if revnon:
        splits["revnon"] = [i.id for i in revnon]
    eval_instances = list(ori_test) + list(change_test)

    predictions: list[PredictionRecord] = []
    for name in KNOWN_MODELS:
        if name not in bundles:
            continue
        records = _predict_records(bundles[name], name, eval_instances)
        write_predictions(records, out / f"predictions_{name}.jsonl")
        predictions.extend(records)

    report = evaluate(
        predictions,
        eval_instances,
        splits=splits,
        drop_pairs=[("ori", "change")],
        models=[m for m in KNOWN_MODELS if m in bundles],
    )
    (out / "report.txt").write_bytes(render_report(report, "text"))
    (out / "report.jsonl").write_bytes(render_report(report, "structured"))
    render_figures(report, out, stem="report")

    _write_manifest(out, cfg)
    return out


def _write_manifest(out: Path, cfg: RunConfig) -> None:
    files = {}
    for path in sorted(out.rglob("*")):
        if path.is_dir() or path.name == "manifest.json":
            continue
        files[str(path.relative_to(out))] = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = {
        "seed": cfg.seed,
        "config_hash": cfg.content_hash(),
        "files": files,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_manifest(out_dir: str | Path) -> dict:
    return json.loads((Path(out_dir) / "manifest.json").read_text(encoding="utf-8"))
