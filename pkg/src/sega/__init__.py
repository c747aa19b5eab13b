"""Sega - preference-aware pre-training for bot and troll detection."""

__version__ = "0.1.0"
