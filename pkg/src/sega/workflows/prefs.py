"""Prefs workflow - fill the topic-emotion preference cache using LangGraph."""

import logging
from pathlib import Path
from typing import TypedDict

from langgraph.graph import END, START, StateGraph

from sega.config import RunConfig
from sega.errors import ConfigError, SegaError
from sega.graph.io import load_dataset
from sega.graph.store import HeteroGraph
from sega.graph.synth import PREFS_FILE
from sega.preferences.cache import PreferenceCache
from sega.preferences.llm_client import make_llm_client
from sega.preferences.oracle import PreferenceProfile, extract_all

logger = logging.getLogger(__name__)


class PrefsState(TypedDict):
    """State for the prefs workflow."""

    config: RunConfig
    cache_path: Path
    graph: HeteroGraph | None
    profiles: dict[str, PreferenceProfile]
    cached_before: int
    extracted: int
    error: str | None
    exception: SegaError | None


def preferences_path(config: RunConfig) -> Path:
    """Configured cache file, defaulting to ``prefs.jsonl`` inside the dataset."""
    if config.pretrain.prefs_path is not None:
        return config.pretrain.prefs_path
    if config.dataset is None:
        raise ConfigError("no dataset configured")
    return config.dataset / PREFS_FILE


def _fail(e: SegaError) -> dict:
    logger.error("%s", e)
    return {"error": str(e), "exception": e}


def load_graph(state: PrefsState) -> dict:
    """Load and validate the dataset.

    Args:
        state: Current workflow state

    Returns:
        Updated state with the graph, or an error
    """
    config = state["config"]
    try:
        if config.dataset is None:
            raise ConfigError("no dataset configured")
        graph = load_dataset(config.dataset, config.model.max_tweets)
    except SegaError as e:
        return _fail(e)
    return {"graph": graph, "error": None}


def extract_preferences(state: PrefsState) -> dict:
    """Complete the cache for every user with posts.

    Args:
        state: Current workflow state

    Returns:
        Updated state with profiles by user id
    """
    if state.get("error"):
        return {}

    config = state["config"]
    try:
        cache = PreferenceCache(state["cache_path"])
        cached_before = len(cache)
        client = make_llm_client(config.llm)
        profiles = extract_all(
            state["graph"].users,
            client,
            cache,
            max_workers=config.llm.max_workers,
            posts_per_user=config.llm.posts_per_user,
        )
    except SegaError as e:
        return _fail(e)
    return {
        "profiles": profiles,
        "cached_before": cached_before,
        "extracted": client.calls if client is not None else 0,
    }


def should_continue(state: PrefsState) -> str:
    """Determine if workflow should continue or end with error.

    Args:
        state: Current workflow state

    Returns:
        Next node name or END
    """
    if state.get("error"):
        return END
    return "extract"


def build_prefs_workflow() -> StateGraph:
    """Build the prefs workflow graph.

    Returns:
        Compiled LangGraph workflow
    """
    workflow = StateGraph(PrefsState)

    workflow.add_node("load", load_graph)
    workflow.add_node("extract", extract_preferences)

    workflow.add_edge(START, "load")
    workflow.add_conditional_edges(
        "load", should_continue, {"extract": "extract", END: END}
    )
    workflow.add_edge("extract", END)

    return workflow.compile()


def run_prefs(config: RunConfig) -> PrefsState:
    """Run the prefs workflow.

    Args:
        config: Resolved run configuration

    Returns:
        Final workflow state
    """
    workflow = build_prefs_workflow()

    initial_state: PrefsState = {
        "config": config,
        "cache_path": preferences_path(config),
        "graph": None,
        "profiles": {},
        "cached_before": 0,
        "extracted": 0,
        "error": None,
        "exception": None,
    }

    return workflow.invoke(initial_state)
