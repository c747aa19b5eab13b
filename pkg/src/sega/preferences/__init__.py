"""Topic-emotion preferences: taxonomy, LLM extraction, cache and pseudo-labels."""
