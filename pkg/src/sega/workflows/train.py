"""Train workflow - pre-training and fine-tuning pipeline using LangGraph."""

import logging
from pathlib import Path
from typing import Sequence, TypedDict

from langgraph.graph import END, START, StateGraph

from sega.config import RunConfig
from sega.embeddings.providers import EmbeddingProvider, make_provider
from sega.errors import ConfigError, SegaError
from sega.graph.io import load_dataset
from sega.graph.store import HeteroGraph
from sega.model.features import GraphInputs, prepare_inputs
from sega.preferences.cache import PreferenceCache
from sega.preferences.oracle import load_profiles
from sega.training.common import ablated_graph
from sega.training.finetune import FinetuneResult, finetune
from sega.training.pretrain import PretrainResult, pretrain
from sega.utils.file_manager import create_run_directory, save_json
from sega.workflows.prefs import preferences_path

logger = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune")
RUN_MANIFEST = "run.json"
CONFIG_FILE = "config.json"


class TrainState(TypedDict):
    """State for the train workflow."""

    config: RunConfig
    requested: tuple[str, ...]
    resume_from: Path | None
    run_dir: Path
    graph: HeteroGraph | None
    inputs: GraphInputs | None
    providers: dict[str, EmbeddingProvider]
    executed: list[str]
    pretrain_result: PretrainResult | None
    finetune_result: FinetuneResult | None
    error: str | None
    exception: SegaError | None


def run_slug(config: RunConfig) -> str:
    """Run directory name from objective, template and active ablations."""
    parts = [config.pretrain.objective, config.pretrain.template]
    parts += [name for name, on in config.ablation.model_dump().items() if on]
    return "-".join(parts)


def _fail(e: SegaError) -> dict:
    logger.error("%s", e)
    return {"error": str(e), "exception": e}


def prepare(state: TrainState) -> dict:
    """Load the dataset, apply ablations and encode raw node features.

    Args:
        state: Current workflow state

    Returns:
        Updated state with graph, inputs, providers and run directory
    """
    config = state["config"]
    try:
        if config.dataset is None:
            raise ConfigError("no dataset configured")
        if config.text_provider.dim != config.model.d_text:
            raise ConfigError(
                f"text provider width {config.text_provider.dim} does not match "
                f"model d_text {config.model.d_text}"
            )
        dataset = load_dataset(config.dataset, config.model.max_tweets)
        graph = ablated_graph(dataset, config)
        text = make_provider(config.text_provider)
        providers = {"text": text}
        if config.pretrain.prompt_encoder == "prompt":
            providers["prompt"] = make_provider(config.prompt_provider)
        else:
            providers["prompt"] = text
        inputs = prepare_inputs(graph, text)
    except SegaError as e:
        return _fail(e)

    if config.out is not None:
        run_dir = config.out
        run_dir.mkdir(parents=True, exist_ok=True)
    else:
        run_dir, _ = create_run_directory(run_slug(config))
    save_json(config.model_dump(mode="json"), run_dir / CONFIG_FILE)
    logger.info("run directory %s; graph %s", run_dir, graph.stats())
    return {
        "graph": graph,
        "inputs": inputs,
        "providers": providers,
        "run_dir": run_dir,
        "error": None,
    }


def run_pretraining(state: TrainState) -> dict:
    """Pre-train the encoder on the configured objective.

    Args:
        state: Current workflow state

    Returns:
        Updated state with the pre-training result
    """
    config = state["config"]
    try:
        cache = PreferenceCache(preferences_path(config))
        profiles = load_profiles(cache, (u.id for u in state["graph"].users))
        result = pretrain(
            config,
            state["graph"],
            state["inputs"],
            profiles,
            state["providers"]["prompt"],
            state["run_dir"],
            resume_from=state["resume_from"],
        )
    except SegaError as e:
        return _fail(e)
    return {"pretrain_result": result, "executed": state["executed"] + ["pretrain"]}


def run_finetuning(state: TrainState) -> dict:
    """Fine-tune from this run's pre-training checkpoint, or as configured.

    Args:
        state: Current workflow state

    Returns:
        Updated state with the fine-tuning result
    """
    config = state["config"]
    pretrained = state["pretrain_result"]
    init = pretrained.checkpoint if pretrained else config.finetune.init_checkpoint
    try:
        result = finetune(
            config, state["graph"], state["inputs"], state["run_dir"], init
        )
    except SegaError as e:
        return _fail(e)
    return {"finetune_result": result, "executed": state["executed"] + ["finetune"]}


def write_report(state: TrainState) -> dict:
    """Write the run manifest.

    Args:
        state: Current workflow state

    Returns:
        Empty update; the manifest is the side effect
    """
    config = state["config"]
    manifest = {
        "stages": state["executed"],
        "seed": config.seed,
        "config": config.model_dump(mode="json"),
    }
    pretrained, tuned = state["pretrain_result"], state["finetune_result"]
    if pretrained is not None:
        manifest["pretrain"] = {
            "checkpoint": pretrained.checkpoint.name,
            "anchors": pretrained.anchors,
            "losses": pretrained.losses,
        }
    if tuned is not None:
        manifest["finetune"] = {
            "checkpoint": tuned.checkpoint.name,
            "best_epoch": tuned.best_epoch,
            "best_valid_macro_f1": tuned.best_valid_f1,
            "eval_split": tuned.eval_split,
            "metrics": tuned.metrics.to_dict(),
        }
    save_json(manifest, state["run_dir"] / RUN_MANIFEST)
    return {}


def route_after_prepare(state: TrainState) -> str:
    """Pick the first stage to run, or END on error.

    Args:
        state: Current workflow state

    Returns:
        Next node name or END
    """
    if state.get("error"):
        return END
    config, requested = state["config"], state["requested"]
    if "pretrain" in requested and not config.ablation.no_pretrain:
        return "pretrain"
    if "pretrain" in requested:
        logger.info("pre-training disabled by the no_pretrain ablation")
    return "finetune" if "finetune" in requested else "report"


def route_after_pretrain(state: TrainState) -> str:
    """Continue to fine-tuning if requested.

    Args:
        state: Current workflow state

    Returns:
        Next node name or END
    """
    if state.get("error"):
        return END
    return "finetune" if "finetune" in state["requested"] else "report"


def should_continue(state: TrainState) -> str:
    """Determine if workflow should continue or end with error.

    Args:
        state: Current workflow state

    Returns:
        Next node name or END
    """
    if state.get("error"):
        return END
    return "report"


def build_train_workflow() -> StateGraph:
    """Build the train workflow graph.

    Returns:
        Compiled LangGraph workflow
    """
    workflow = StateGraph(TrainState)

    workflow.add_node("prepare", prepare)
    workflow.add_node("pretrain", run_pretraining)
    workflow.add_node("finetune", run_finetuning)
    workflow.add_node("report", write_report)

    workflow.add_edge(START, "prepare")
    workflow.add_conditional_edges(
        "prepare",
        route_after_prepare,
        {"pretrain": "pretrain", "finetune": "finetune", "report": "report", END: END},
    )
    workflow.add_conditional_edges(
        "pretrain",
        route_after_pretrain,
        {"finetune": "finetune", "report": "report", END: END},
    )
    workflow.add_conditional_edges(
        "finetune", should_continue, {"report": "report", END: END}
    )
    workflow.add_edge("report", END)

    return workflow.compile()


def run_train(
    config: RunConfig,
    stages: Sequence[str] = STAGES,
    resume_from: Path | None = None,
) -> TrainState:
    """Run the train workflow.

    Args:
        config: Resolved run configuration
        stages: Stages to run, a subset of ``STAGES``
        resume_from: Pre-training checkpoint to continue from

    Returns:
        Final workflow state
    """
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}")
    workflow = build_train_workflow()

    initial_state: TrainState = {
        "config": config,
        "requested": tuple(stages),
        "resume_from": resume_from,
        "run_dir": Path(),
        "graph": None,
        "inputs": None,
        "providers": {},
        "executed": [],
        "pretrain_result": None,
        "finetune_result": None,
        "error": None,
        "exception": None,
    }

    result = workflow.invoke(initial_state)
    for provider in {id(p): p for p in result.get("providers", {}).values()}.values():
        close = getattr(provider, "close", None)
        if close is not None:
            close()
    return result
