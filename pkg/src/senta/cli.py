"""Command-line interface.

Subcommands wire the pipeline stages together:

    data ingest|stats|synth      corpora in and out of the canonical format
    causal check                 backdoor-criterion checker on an edge list
    train confounder|senta|distill
    bank build                   class-mean feature bank from a trained model
    eval run|revnon|cases|report accuracy tables, drops, case marks, figures
    run                          the full pipeline into an artifact directory

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .adjustment import FeatureBank, build_feature_bank, predict, train_distill, train_senta
from .bundles import ModelBundle
from .causal import BackdoorQuery, parse_edge_list, satisfies_backdoor
from .confounder import train_confounder
from .corpus import (
    FieldMap,
    carve_dev,
    generate_synthetic,
    parse_arts,
    parse_semeval_xml,
    read_canonical,
    select_revnon,
    split_stats,
    write_canonical,
)
from .errors import ConfigError, SentaError
from .evalharness import (
    PredictionRecord,
    case_table,
    evaluate,
    evaluate_revnon,
    read_predictions,
    render_report,
    write_predictions,
)
from .figures import render_figures
from .pipeline import RunConfig, config_from_mapping, load_config_file, run_pipeline

logger = logging.getLogger("senta")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@cli.group()
def data() -> None:
    """Ingest, inspect, and generate corpora."""


def _read_instances(path: Path, fmt: str, field_map_path: Path | None):
    if fmt == "semeval":
        return parse_semeval_xml(path.read_bytes())
    if fmt == "arts":
        fm = FieldMap()
        if field_map_path is not None:
            fm = FieldMap.from_mapping(json.loads(field_map_path.read_text()))
        return parse_arts(path.read_bytes(), fm)
    return read_canonical(path)


@data.command("ingest")
@click.option("--format", "fmt", type=click.Choice(["semeval", "arts", "canonical"]),
              required=True)
@click.option("--in", "in_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--field-map", "field_map_path", type=click.Path(exists=True, path_type=Path),
              default=None, help="JSON field map for ARTS-style records.")
@click.option("--expect-revnon", type=int, default=None,
              help="Fail unless exactly this many ingested instances are "
                   "revnon-tagged (validates the field map's suffix convention).")
def data_ingest(fmt: str, in_path: Path, out_path: Path, field_map_path: Path | None,
                expect_revnon: int | None) -> None:
    """Convert a dataset file to the canonical line-delimited format."""
    instances = _read_instances(in_path, fmt, field_map_path)
    if expect_revnon is not None:
        got = len(select_revnon(instances))
        if got != expect_revnon:
            raise ConfigError(
                f"field map yields {got} revnon instances, expected {expect_revnon}; "
                "check the suffix convention"
            )
    write_canonical(instances, out_path)
    click.echo(f"wrote {len(instances)} instances to {out_path}")


@data.command("stats")
@click.option("--format", "fmt", type=click.Choice(["semeval", "arts", "canonical"]),
              default="canonical", show_default=True)
@click.option("--in", "in_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--field-map", "field_map_path", type=click.Path(exists=True, path_type=Path),
              default=None)
def data_stats(fmt: str, in_path: Path, field_map_path: Path | None) -> None:
    """Per-class instance counts of a dataset file."""
    instances = _read_instances(in_path, fmt, field_map_path)
    stats = split_stats(instances)
    for polarity, count in stats.counts.items():
        click.echo(f"{polarity:10s} {count}")
    click.echo(f"{'total':10s} {stats.total}")


@data.command("synth")
@click.option("--seed", type=int, required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              default=None, help="Run config supplying [data.synthetic].")
def data_synth(seed: int, out_dir: Path, config_path: Path | None) -> None:
    """Generate the seeded synthetic corpus (train / ori / revnon)."""
    cfg = RunConfig()
    if config_path is not None:
        cfg = config_from_mapping(load_config_file(config_path))
    corpus = generate_synthetic(cfg.data.synthetic, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_canonical(corpus.train, out_dir / "train.jsonl")
    write_canonical(corpus.ori_test, out_dir / "ori_test.jsonl")
    write_canonical(corpus.revnon_test, out_dir / "revnon_test.jsonl")
    click.echo(
        f"wrote {len(corpus.train)} train / {len(corpus.ori_test)} ori / "
        f"{len(corpus.revnon_test)} revnon instances to {out_dir}"
    )


# ---------------------------------------------------------------------------
# causal
# ---------------------------------------------------------------------------

@cli.group()
def causal() -> None:
    """Backdoor-criterion checks on causal DAGs."""


@causal.command("check")
@click.option("--graph", "graph_path", type=click.Path(exists=True, path_type=Path),
              required=True, help="Edge list: one 'A -> B' per line, # comments.")
@click.option("--treatment", required=True)
@click.option("--outcome", required=True)
@click.option("--adjust", "adjust_csv", default="",
              help="Comma-separated adjustment set (may be empty).")
def causal_check(graph_path: Path, treatment: str, outcome: str, adjust_csv: str) -> None:
    """Decide whether the adjustment set satisfies the backdoor criterion."""
    dag = parse_edge_list(graph_path.read_text(encoding="utf-8"))
    adjustment = frozenset(s.strip() for s in adjust_csv.split(",") if s.strip())
    try:
        query = BackdoorQuery(treatment, outcome, adjustment)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = satisfies_backdoor(dag, query)
    set_text = "{" + ", ".join(sorted(adjustment)) + "}"
    if result.holds:
        click.echo(f"backdoor criterion holds for {set_text}")
    else:
        click.echo(f"backdoor criterion violated for {set_text}: {result.reason}")


# ---------------------------------------------------------------------------
# train / bank
# ---------------------------------------------------------------------------

def _load_run_config(config_path: Path, seed: int | None) -> RunConfig:
    cfg = config_from_mapping(load_config_file(config_path))
    if seed is not None:
        cfg = replace(cfg, seed=seed, model=replace(cfg.model, seed=seed))
    return cfg


def _training_data(cfg: RunConfig):
    from .pipeline import load_data

    train_all, _, _ = load_data(cfg)
    return carve_dev(train_all, cfg.seed, cfg.dev_fraction)


@cli.group()
def train() -> None:
    """Train the pipeline's models."""


@train.command("confounder")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def train_confounder_cmd(config_path: Path, out_path: Path, seed: int | None) -> None:
    """Stage one: the plain classifier on the original distribution."""
    cfg = _load_run_config(config_path, seed)
    tr, dev = _training_data(cfg)
    bundle = train_confounder(tr, dev, replace(cfg.model, seed=cfg.seed))
    bundle.save(out_path)
    best = bundle.meta["fit"].get("best_dev_accuracy")
    click.echo(f"saved confounder bundle to {out_path} (best dev accuracy: {best})")


@train.command("senta")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--confounder", "confounder_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--bank", "bank_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--share-init", is_flag=True, default=False,
              help="Initialize the main encoder from the confounder's weights.")
def train_senta_cmd(config_path, confounder_path, bank_path, out_path, seed, share_init) -> None:
    """Stage two: the interventional model over adjusted representations."""
    cfg = _load_run_config(config_path, seed)
    tr, dev = _training_data(cfg)
    conf = ModelBundle.load(confounder_path)
    bank = FeatureBank.load(bank_path)
    bundle = train_senta(
        conf, bank, tr, dev, replace(cfg.model, seed=cfg.seed),
        scale_mode=cfg.scale_mode, share_init=share_init or cfg.share_init,
    )
    bundle.save(out_path)
    click.echo(f"saved senta bundle to {out_path}")


@train.command("distill")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--teacher", "teacher_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None)
def train_distill_cmd(config_path, teacher_path, out_path, seed) -> None:
    """Soft-label distillation baseline from a frozen teacher."""
    cfg = _load_run_config(config_path, seed)
    tr, dev = _training_data(cfg)
    teacher = ModelBundle.load(teacher_path)
    bundle = train_distill(
        teacher, tr, dev, replace(cfg.model, seed=cfg.seed),
        temperature=cfg.distill_temperature, weight=cfg.distill_weight,
    )
    bundle.save(out_path)
    click.echo(f"saved distilled bundle to {out_path}")


@cli.group()
def bank() -> None:
    """Class-mean feature banks."""


@bank.command("build")
@click.option("--confounder", "confounder_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, path_type=Path),
              required=True, help="Canonical instances to average.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
def bank_build(confounder_path: Path, data_path: Path, out_path: Path) -> None:
    """Average the trained model's hidden features per class."""
    bundle = ModelBundle.load(confounder_path)
    instances = read_canonical(data_path)
    fb = build_feature_bank(bundle, instances)
    fb.save(out_path)
    click.echo(f"saved bank ({fb.means.shape[0]}x{fb.dim}, counts {fb.counts}) to {out_path}")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@cli.group("eval")
def eval_group() -> None:
    """Score predictions and render reports."""


def _parse_named(values: tuple[str, ...], what: str) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for item in values:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--{what} must look like name=path, got {item!r}")
        out[name] = Path(path)
    return out


def _parse_pairs(values: tuple[str, ...]) -> list[tuple[str, str]]:
    pairs = []
    for item in values:
        ori, sep, change = item.partition(":")
        if not sep or not ori or not change:
            raise ConfigError(f"--pair must look like ori:change, got {item!r}")
        pairs.append((ori, change))
    return pairs


@eval_group.command("run")
@click.option("--model", "models", multiple=True, required=True,
              help="name=bundle-dir; repeatable.")
@click.option("--split", "splits", multiple=True, required=True,
              help="name=canonical.jsonl; repeatable.")
@click.option("--pair", "pairs", multiple=True, help="ori:change; repeatable.")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--figures/--no-figures", "want_figures", default=True, show_default=True)
def eval_run(models, splits, pairs, out_dir: Path, want_figures: bool) -> None:
    """Run model bundles over splits, then score and report."""
    model_paths = _parse_named(models, "model")
    split_paths = _parse_named(splits, "split")
    drop_pairs = _parse_pairs(pairs)
    out_dir.mkdir(parents=True, exist_ok=True)

    split_instances = {name: read_canonical(path) for name, path in split_paths.items()}
    all_instances = {i.id: i for insts in split_instances.values() for i in insts}
    instances = list(all_instances.values())

    predictions: list[PredictionRecord] = []
    for name, path in model_paths.items():
        bundle = ModelBundle.load(path)
        records = [
            PredictionRecord(inst.id, inst.polarity, pred, name)
            for inst, pred in zip(instances, predict(bundle, instances))
        ]
        write_predictions(records, out_dir / f"predictions_{name}.jsonl")
        predictions.extend(records)

    report = evaluate(
        predictions,
        instances,
        splits={name: [i.id for i in insts] for name, insts in split_instances.items()},
        drop_pairs=drop_pairs,
        models=list(model_paths),
    )
    (out_dir / "report.txt").write_bytes(render_report(report, "text"))
    (out_dir / "report.jsonl").write_bytes(render_report(report, "structured"))
    if want_figures:
        render_figures(report, out_dir, stem="report")
    click.echo(render_report(report, "text").decode("utf-8"), nl=False)


@eval_group.command("revnon")
@click.option("--predictions", "prediction_paths", multiple=True, required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--instances", "instance_paths", multiple=True, required=True,
              type=click.Path(exists=True, path_type=Path))
def eval_revnon(prediction_paths, instance_paths) -> None:
    """Accuracy over the flipped-non-target subset only."""
    predictions = [p for path in prediction_paths for p in read_predictions(path)]
    instances = [i for path in instance_paths for i in read_canonical(path)]
    report = evaluate_revnon(predictions, instances)
    click.echo(render_report(report, "text").decode("utf-8"), nl=False)


@eval_group.command("cases")
@click.option("--ids", "ids_path", type=click.Path(exists=True, path_type=Path),
              required=True, help="One case id per line.")
@click.option("--predictions", "prediction_paths", multiple=True, required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--instances", "instance_paths", multiple=True,
              type=click.Path(exists=True, path_type=Path))
def eval_cases(ids_path: Path, prediction_paths, instance_paths) -> None:
    """Per-case correct/incorrect marks for each model."""
    case_ids = [ln.strip() for ln in ids_path.read_text().splitlines() if ln.strip()]
    predictions = [p for path in prediction_paths for p in read_predictions(path)]
    instances = [i for path in instance_paths for i in read_canonical(path)] or None
    table = case_table(predictions, case_ids, instances)
    header = ["method"] + list(table.case_ids)
    click.echo("  ".join(header))
    for model, row in zip(table.models, table.marks):
        marks = ["✓" if ok else "✗" for ok in row]
        click.echo("  ".join([model] + marks))


@eval_group.command("report")
@click.option("--predictions", "prediction_paths", multiple=True, required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--split", "splits", multiple=True, required=True,
              help="name=canonical.jsonl; repeatable.")
@click.option("--pair", "pairs", multiple=True, help="ori:change; repeatable.")
@click.option("--format", "fmt", type=click.Choice(["text", "structured"]),
              default="text", show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Write the report here (figures land beside it).")
@click.option("--figures/--no-figures", "want_figures", default=True, show_default=True)
def eval_report(prediction_paths, splits, pairs, fmt, out_path, want_figures) -> None:
    """Render an accuracy/drop report from prediction files."""
    split_paths = _parse_named(splits, "split")
    split_instances = {name: read_canonical(path) for name, path in split_paths.items()}
    instances = list({i.id: i for insts in split_instances.values() for i in insts}.values())
    predictions = [p for path in prediction_paths for p in read_predictions(path)]
    report = evaluate(
        predictions,
        instances,
        splits={name: [i.id for i in insts] for name, insts in split_instances.items()},
        drop_pairs=_parse_pairs(pairs),
    )
    payload = render_report(report, fmt)
    if out_path is None:
        click.echo(payload.decode("utf-8"), nl=False)
    else:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(payload)
        click.echo(f"wrote {out_path}")
        if want_figures:
            for fig in render_figures(report, out_path.parent, stem=out_path.stem):
                click.echo(f"wrote {fig}")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

@cli.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Artifact directory (default: under SENTA_CACHE_DIR or ./runs).")
def run_cmd(config_path: Path, seed: int | None, out_path: Path | None) -> None:
    """Full pipeline: data, stage one, bank, stage two, baselines, report."""
    cfg = _load_run_config(config_path, seed)
    if out_path is None:
        cache = Path(os.environ.get("SENTA_CACHE_DIR", "runs"))
        out_path = cache / f"run-{cfg.content_hash()[:12]}-seed{cfg.seed}"
    artifact_dir = run_pipeline(cfg, out_path)
    click.echo(f"artifacts in {artifact_dir}")
    click.echo((artifact_dir / "report.txt").read_text(encoding="utf-8"), nl=False)


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        sys.exit(2)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except SentaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
