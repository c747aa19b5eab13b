"""CLI interface for sega using Click."""

import json
import logging
import sys
from pathlib import Path

import click
from dotenv import load_dotenv

from sega import __version__
from sega.config import RunConfig, load_config
from sega.embeddings.providers import make_provider, write_embedding_file
from sega.errors import ConfigError, SegaError
from sega.graph.io import load_dataset
from sega.graph.synth import SynthConfig, synth_generate
from sega.preferences.analysis import prompt_similarity
from sega.preferences.cache import PreferenceCache
from sega.preferences.oracle import load_profiles, pseudo_label_for
from sega.prompts.pseudo_label_prompts import TEMPLATES
from sega.training.export import (
    embeddings_from_checkpoint,
    export_embeddings,
    select_users,
)
from sega.training.finetune import CHECKPOINT_FILE, evaluate_checkpoint
from sega.utils.file_manager import find_latest_run
from sega.workflows.prefs import preferences_path, run_prefs
from sega.workflows.train import RUN_MANIFEST, run_train

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
ABLATIONS = ("no_list", "no_pretrain")


class SegaGroup(click.Group):
    """Click group that reports usage errors with exit code 1."""

    def main(self, *args, standalone_mode: bool = True, **kwargs):
        if not standalone_mode:
            return super().main(*args, standalone_mode=False, **kwargs)
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.UsageError as e:
            e.show()
            sys.exit(1)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)
        sys.exit(rv if isinstance(rv, int) else 0)


def fail(e: SegaError) -> None:
    """Print ``e`` in red and exit with its code."""
    click.echo(click.style(f"❌ Error: {e}", fg="red"), err=True)
    sys.exit(e.exit_code)


def latest_checkpoint() -> Path:
    """Fine-tuning checkpoint of the most recent numbered run."""
    run_dir = find_latest_run()
    if run_dir is None or not (run_dir / CHECKPOINT_FILE).exists():
        raise ConfigError("no --checkpoint given and no fine-tuned run under runs/")
    return run_dir / CHECKPOINT_FILE


def run_options(f):
    """Options shared by the commands that train or load a model."""
    options = [
        click.option(
            "--dataset", type=click.Path(path_type=Path), help="Dataset directory."
        ),
        click.option("--config", "config_path", type=click.Path(path_type=Path),
                     help="JSON run configuration."),
        click.option("--seed", type=int, help="Run seed."),
        click.option(
            "--out", type=click.Path(path_type=Path), help="Output directory."
        ),
        click.option("--text-backend", type=click.Choice(["stub", "file", "http"])),
        click.option("--text-embeddings", type=click.Path(path_type=Path),
                     help="SEGAEMB1 file for the text provider."),
        click.option("--prompt-backend", type=click.Choice(["stub", "file", "http"])),
        click.option("--prompt-embeddings", type=click.Path(path_type=Path),
                     help="SEGAEMB1 file for the prompt provider."),
        click.option("--prefs", "prefs_path", type=click.Path(path_type=Path),
                     help="Preference cache (default: <dataset>/prefs.jsonl)."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def training_options(f):
    """Options that only matter to the training commands."""
    options = [
        click.option("--template", type=click.Choice(sorted(TEMPLATES))),
        click.option("--objective", type=click.Choice(["contrastive", "multilabel"])),
        click.option("--prompt-encoder", type=click.Choice(["prompt", "text"])),
        click.option("--ablation", "ablations", multiple=True,
                     type=click.Choice(ABLATIONS)),
        click.option("--pretrain-epochs", type=int),
        click.option("--finetune-epochs", type=int),
        click.option("--init-checkpoint", type=click.Path(path_type=Path),
                     help="Pre-training checkpoint for fine-tuning."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def resolve_config(
    config_path: Path | None = None,
    dataset: Path | None = None,
    seed: int | None = None,
    out: Path | None = None,
    text_backend: str | None = None,
    text_embeddings: Path | None = None,
    prompt_backend: str | None = None,
    prompt_embeddings: Path | None = None,
    prefs_path: Path | None = None,
    template: str | None = None,
    objective: str | None = None,
    prompt_encoder: str | None = None,
    ablations: tuple[str, ...] = (),
    pretrain_epochs: int | None = None,
    finetune_epochs: int | None = None,
    init_checkpoint: Path | None = None,
) -> RunConfig:
    """Merge command-line flags over the optional JSON config file."""
    overrides = {
        "dataset": dataset,
        "seed": seed,
        "out": out,
        "text_provider": {"backend": text_backend, "path": text_embeddings},
        "prompt_provider": {"backend": prompt_backend, "path": prompt_embeddings},
        "pretrain": {
            "template": template,
            "objective": objective,
            "prompt_encoder": prompt_encoder,
            "epochs": pretrain_epochs,
            "prefs_path": prefs_path,
        },
        "finetune": {"epochs": finetune_epochs, "init_checkpoint": init_checkpoint},
        "ablation": {name: True for name in ablations},
    }
    return load_config(config_path, overrides)


@click.group(cls=SegaGroup)
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
def cli(verbose: bool):
    """Sega - preference-aware pre-training for bot and troll detection.

    Builds a user/list graph, extracts topic-emotion preferences, pre-trains
    the graph encoder against pseudo-label sentences and fine-tunes a
    normal / bot / troll classifier.
    """
    load_dotenv()
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT
    )
    for noisy in ("httpx", "httpcore", "anthropic"):
        logging.getLogger(noisy).setLevel(logging.WARNING)


@cli.command()
@click.option("--out", type=click.Path(path_type=Path), required=True,
              help="Dataset directory to create.")
@click.option("--seed", type=int, help="Generator seed (default 7).")
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              help="JSON generator settings.")
def synth(out: Path, seed: int | None, config_path: Path | None):
    """Generate a synthetic dataset with planted preference pairs.

    Example:
        sega synth --seed 7 --out data/synth7
    """
    click.echo(click.style("🧪 Generating synthetic dataset...", fg="blue"))
    try:
        settings = {}
        if config_path is not None:
            try:
                settings = json.loads(config_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read synth config {config_path}: {e}") from e
            if not isinstance(settings, dict):
                raise ConfigError(
                    f"synth config {config_path} must be a JSON object"
                )
        if seed is not None:
            settings["seed"] = seed
        try:
            config = SynthConfig.model_validate(settings)
        except ValueError as e:
            raise ConfigError(f"invalid synth config: {e}") from e
        directory = synth_generate(config, out)
        stats = load_dataset(directory).stats()
    except SegaError as e:
        fail(e)

    click.echo(click.style("✅ Dataset generated!", fg="green"))
    click.echo(f"Location: {directory}")
    click.echo(f"Nodes: {stats['users']} users, {stats['lists']} lists")


@cli.command()
@run_options
@click.option("--llm-backend", type=click.Choice(["none", "http", "anthropic"]))
def prefs(llm_backend: str | None, **flags):
    """Extract topic-emotion pairs for every user with posts.

    Cached users are never sent to the LLM again; a complete cache makes this
    a no-op.

    Example:
        sega prefs --dataset data/synth7 --llm-backend anthropic
    """
    click.echo(click.style("💬 Extracting preferences...", fg="blue"))
    try:
        config = resolve_config(**flags)
        if llm_backend is not None:
            config = config.model_copy(
                update={"llm": config.llm.model_copy(update={"backend": llm_backend})}
            )
        result = run_prefs(config)
    except SegaError as e:
        fail(e)

    if result.get("error"):
        fail(result["exception"] or SegaError(result["error"]))

    click.echo(click.style("✅ Preference cache complete!", fg="green"))
    click.echo(f"Location: {result['cache_path']}")
    click.echo(
        f"Users: {len(result['profiles'])} "
        f"({result['cached_before']} cached before, {result['extracted']} LLM calls)"
    )


def _train(stages: tuple[str, ...], resume_from: Path | None, flags: dict) -> None:
    try:
        config = resolve_config(**flags)
        result = run_train(config, stages, resume_from)
    except SegaError as e:
        fail(e)

    if result.get("error"):
        fail(result["exception"] or SegaError(result["error"]))

    click.echo(click.style("✅ Training run complete!", fg="green"))
    click.echo(f"Stages: {', '.join(result['executed']) or 'none'}")
    click.echo(f"Location: {result['run_dir']}/{RUN_MANIFEST}")
    tuned = result.get("finetune_result")
    if tuned is not None:
        click.echo(
            f"{tuned.eval_split.capitalize()} macro-F1: {tuned.metrics.macro_f1:.4f} "
            f"(best epoch {tuned.best_epoch})"
        )


@cli.command()
@run_options
@training_options
@click.option("--resume", "resume_from", type=click.Path(path_type=Path),
              help="Pre-training checkpoint to continue from.")
def pretrain(resume_from: Path | None, **flags):
    """Pre-train the encoder on pseudo-label sentences.

    Example:
        sega pretrain --dataset data/synth7 --template short
    """
    click.echo(click.style("🏋️  Pre-training encoder...", fg="blue"))
    _train(("pretrain",), resume_from, flags)


@cli.command()
@run_options
@training_options
def finetune(**flags):
    """Fine-tune the detector, optionally from a pre-training checkpoint.

    Example:
        sega finetune --dataset data/synth7 --init-checkpoint runs/001-x/pretrain.ckpt
    """
    click.echo(click.style("🎯 Fine-tuning detector...", fg="blue"))
    _train(("finetune",), None, flags)


@cli.command()
@run_options
@training_options
def train(**flags):
    """Pre-train then fine-tune in one run.

    Example:
        sega train --dataset data/synth7 --ablation no_list
    """
    click.echo(click.style("🚀 Running pre-training and fine-tuning...", fg="blue"))
    _train(("pretrain", "finetune"), None, flags)


@cli.command(name="eval")
@run_options
@click.option("--checkpoint", type=click.Path(path_type=Path),
              help="Fine-tuning checkpoint (default: latest run).")
@click.option("--split", type=click.Choice(["train", "valid", "test"]), default="test")
def evaluate(checkpoint: Path | None, split: str, **flags):
    """Score a fine-tuned checkpoint on one dataset split.

    Example:
        sega eval --dataset data/synth7 --checkpoint runs/001-x/finetune.ckpt
    """
    click.echo(click.style("📊 Evaluating checkpoint...", fg="blue"))
    try:
        config = resolve_config(**flags)
        checkpoint = checkpoint or latest_checkpoint()
        provider = make_provider(config.text_provider)
        report = evaluate_checkpoint(config, checkpoint, provider, split)
        if config.out is not None:
            report.save(config.out / f"metrics_{split}.json")
    except SegaError as e:
        fail(e)

    click.echo(click.style("✅ Evaluation complete!", fg="green"))
    click.echo(json.dumps(report.to_dict(), indent=2))


@cli.command(name="export-emb")
@run_options
@click.option("--checkpoint", type=click.Path(path_type=Path),
              help="Pre-training or fine-tuning checkpoint (default: latest run).")
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), required=True,
              help="Embedding CSV to write.")
@click.option("--pca2", type=click.Path(path_type=Path),
              help="Also write a 2-D PCA projection here.")
@click.option("--filter", "expression",
              help="field=value over majority_pair, majority_topic, "
                   "majority_emotion or label.")
def export_emb(
    checkpoint: Path | None,
    csv_path: Path,
    pca2: Path | None,
    expression: str | None,
    **flags,
):
    """Export user embeddings, optionally filtered and PCA-projected.

    Example:
        sega export-emb --dataset data/synth7 --checkpoint runs/001-x/finetune.ckpt \\
            --csv emb.csv --pca2 pca.csv --filter "majority_emotion=anger"
    """
    click.echo(click.style("📤 Exporting user embeddings...", fg="blue"))
    try:
        config = resolve_config(**flags)
        checkpoint = checkpoint or latest_checkpoint()
        provider = make_provider(config.text_provider)
        graph, embeddings = embeddings_from_checkpoint(config, checkpoint, provider)
        profiles = {}
        if expression is not None and not expression.strip().startswith("label"):
            cache = PreferenceCache(preferences_path(config))
            profiles = load_profiles(cache, (u.id for u in graph.users))
        rows = select_users(graph, expression, profiles)
        written = export_embeddings(graph, embeddings, csv_path, rows, pca2)
    except SegaError as e:
        fail(e)

    click.echo(click.style(f"✅ Exported {len(rows)} users!", fg="green"))
    for path in written:
        click.echo(f"Location: {path}")


@cli.command()
@run_options
@click.option("--role", type=click.Choice(["text", "prompt"]), default="text",
              help="Which provider and which texts to materialise.")
@click.option("--file", "file_path", type=click.Path(path_type=Path), required=True,
              help="SEGAEMB1 file to write.")
def embed(role: str, file_path: Path, **flags):
    """Write a SEGAEMB1 file so later runs can use the file backend.

    The text role covers every description and tweet of the dataset; the
    prompt role covers the pseudo-labels of every template kind.

    Example:
        sega embed --dataset data/synth7 --role prompt --file prompt.emb
    """
    click.echo(click.style("🧮 Embedding texts...", fg="blue"))
    try:
        config = resolve_config(**flags)
        if config.dataset is None:
            raise ConfigError("no dataset configured")
        graph = load_dataset(config.dataset, config.model.max_tweets)
        if role == "text":
            provider = make_provider(config.text_provider)
            records = (*graph.users, *graph.lists)
            texts = [r.description for r in records]
            texts += [t for r in records for t in r.tweets]
        else:
            provider = make_provider(config.prompt_provider)
            cache = PreferenceCache(preferences_path(config))
            profiles = load_profiles(cache, (u.id for u in graph.users))
            texts = [
                pseudo_label_for(p, kind).text
                for p in profiles.values()
                if p
                for kind in sorted(TEMPLATES)
            ]
        path = write_embedding_file(file_path, texts, provider)
    except SegaError as e:
        fail(e)

    click.echo(click.style("✅ Embedding file written!", fg="green"))
    click.echo(f"Location: {path}")


@cli.command(name="prompt-sim")
@run_options
@click.option("--template", "templates", multiple=True,
              type=click.Choice(sorted(TEMPLATES)),
              help="Template kinds to compare (default: all).")
def prompt_sim(templates: tuple[str, ...], **flags):
    """Report how similar distinct pseudo-label embeddings are.

    Prints the minimum and quartiles of pairwise cosine similarity per
    template kind, as one JSON object per line.

    Example:
        sega prompt-sim --dataset data/synth7 --template default --template short
    """
    click.echo(click.style("🔎 Comparing pseudo-label embeddings...", fg="blue"))
    try:
        config = resolve_config(**flags)
        provider = make_provider(config.prompt_provider)
        cache = PreferenceCache(preferences_path(config))
        profiles = load_profiles(cache)
        reports = [
            prompt_similarity(profiles.values(), kind, provider)
            for kind in (templates or sorted(TEMPLATES))
        ]
    except SegaError as e:
        fail(e)

    click.echo(click.style("✅ Similarity computed!", fg="green"))
    for report in reports:
        click.echo(json.dumps(report.to_dict()))


if __name__ == "__main__":
    cli()
