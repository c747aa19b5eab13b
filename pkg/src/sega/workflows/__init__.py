"""LangGraph pipelines behind the CLI commands."""
