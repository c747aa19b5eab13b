"""Prompt templates: the LLM instruction prompt and pseudo-label sentences."""
